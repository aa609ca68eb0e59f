#include "cli.hpp"

#include "ask/error.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace ask::cli {
namespace {

namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("ask_cli_" + name)) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_args(std::vector<std::string> args) {
    args.insert(args.begin(), "ask");
    std::vector<char*> argv;
    for (std::string& a : args) argv.push_back(a.data());
    return run(static_cast<int>(argv.size()), argv.data());
}

TEST(Config, RoundTripsThroughJson) {
    ExperimentConfig c;
    c.train.rho = 0.35;
    c.train.loss_variant = LossVariant::Baseline;
    c.train.plan_scaling = PlanScaling::Literal;
    c.synthetic.noise_sigma = 0.45;
    c.diagnose.mode = "rdm";
    const ExperimentConfig back = overlay_config(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, UnknownAndMistypedKeysAreRejected) {
    try {
        overlay_config(nlohmann::json{{"learning_rat", 0.1}});
        ADD_FAILURE() << "unknown key accepted";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConfigError);
        EXPECT_NE(std::string(e.what()).find("learning_rat"), std::string::npos);
    }
    EXPECT_THROW(overlay_config(nlohmann::json{{"epochs", "ten"}}), Error);
    EXPECT_THROW(overlay_config(nlohmann::json{{"synthetic", {{"bogus", 1}}}}), Error);
}

TEST(Cli, UnknownConfigKeyExitsWithConfigError) {
    TempDir dir("badcfg");
    std::ofstream(dir.path() / "c.json") << R"({"rho": 0.2, "not_a_key": 1})";
    EXPECT_EQ(run_args({"--config", (dir.path() / "c.json").string(), "train"}), kConfigError);
}

TEST(Cli, OutOfRangeValueExitsWithConfigError) {
    TempDir dir("rho");
    std::ofstream(dir.path() / "c.json") << R"({"rho": 1.5})";
    EXPECT_EQ(run_args({"--config", (dir.path() / "c.json").string(), "--out", dir.path().string(), "train"}),
              kConfigError);
}

TEST(Cli, SelfTestPasses) { EXPECT_EQ(run_args({"--self-test"}), kOk); }

TEST(RecallJson, HasExactlySixKeys) {
    const Mat e = Mat::Identity(3, 3);
    const nlohmann::json j = nlohmann::json::parse(recall_json(e, e));
    EXPECT_EQ(j.size(), 6u);
    for (const char* k : {"t2a_r1", "t2a_r5", "t2a_r10", "a2t_r1", "a2t_r5", "a2t_r10"}) {
        ASSERT_TRUE(j.contains(k)) << k;
        EXPECT_EQ(j[k].get<double>(), 100.0);
    }
}

ExperimentConfig memorize_config(const fs::path& dir) {
    std::ofstream out(dir / "pairs.jsonl");
    const char* rows[] = {
        R"({"id": 7, "audio": [1, 0, 0, 0, 0.2, 0], "text": [0, 1, 0, 0, 0, 0.1]})",
        R"({"id": 8, "audio": [0, 1, 0, 0, 0, 0.3], "text": [0, 0, 1, 0, 0.2, 0]})",
        R"({"id": 9, "audio": [0, 0, 1, 0.1, 0, 0], "text": [0, 0, 0, 1, 0, 0]})",
        R"({"id": 10, "audio": [0, 0, 0, 1, 0, 0.4], "text": [1, 0, 0, 0, 0, 0.5]})",
    };
    for (const char* r : rows) out << r << '\n';
    out.close();
    ExperimentConfig c;
    c.corpus_path = (dir / "pairs.jsonl").string();
    c.output_dir = (dir / "out").string();
    c.split = "all";
    c.train.d_in = 6;
    c.train.d = 4;
    c.train.k = 1;
    c.train.n_c = 2;
    c.train.batch_size = 4;
    c.train.epochs = 150;
    c.train.learning_rate = 0.5;
    c.train.tau = 0.2;
    c.train.refresh_period = 0;
    c.train.loss_variant = LossVariant::Baseline;
    return c;
}

TEST(Cli, MemorizesFourPairs) {
    TempDir dir("memorize");
    const ExperimentConfig c = memorize_config(dir.path());
    ASSERT_EQ(cmd_train(c), kOk);
    ASSERT_EQ(cmd_eval(c), kOk);
    const nlohmann::json j = nlohmann::json::parse(slurp(fs::path(c.output_dir) / "eval.json"));
    EXPECT_EQ(j.size(), 6u);
    EXPECT_EQ(j["t2a_r1"].get<double>(), 100.0);
    EXPECT_EQ(j["a2t_r1"].get<double>(), 100.0);
}

TEST(Cli, TrainOutputsAreByteIdenticalAcrossRuns) {
    TempDir dir("rerun");
    ExperimentConfig c;
    c.train.epochs = 2;
    c.train.n_c = 16;
    c.output_dir = dir.path().string();
    const std::vector<std::string> files{"report.json", "metrics.csv", "weights.askw", "config.json"};
    ASSERT_EQ(cmd_train(c), kOk);
    std::vector<std::string> first;
    for (const std::string& f : files) first.push_back(slurp(dir.path() / f));
    ASSERT_EQ(cmd_train(c), kOk);
    for (std::size_t i = 0; i < files.size(); ++i) EXPECT_EQ(slurp(dir.path() / files[i]), first[i]) << files[i];
    const std::string csv = first[1];
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,loss_total,loss_t2a,loss_a2t,obi,rdm,refreshed");
}

TEST(Cli, WeightsRoundTrip) {
    TempDir dir("weights");
    Rng rng(3);
    const ToyEncoder a = ToyEncoder::random(4, 5, Side::Audio, rng);
    const ToyEncoder t = ToyEncoder::random(4, 5, Side::Text, rng);
    save_weights(dir.path() / "w.askw", a, t);
    const auto [a2, t2] = load_weights(dir.path() / "w.askw");
    EXPECT_LT((a2.W - a.W).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((t2.W - t.W).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(fs::file_size(dir.path() / "w.askw"), 16u + 2u * 20u * 4u);
}

TEST(Cli, BuildKbSidecar) {
    TempDir dir("kb");
    ExperimentConfig c;
    c.train.n_c = 16;
    c.output_dir = dir.path().string();
    ASSERT_EQ(cmd_build_kb(c), kOk);
    const nlohmann::json j = nlohmann::json::parse(slurp(dir.path() / "kb.json"));
    EXPECT_EQ(j["N_k"].get<int>(), 275);
    EXPECT_EQ(j["N_c"].get<int>(), 16);
    EXPECT_EQ(j["d"].get<int>(), 16);
    EXPECT_TRUE(j["warning"].is_null());
    const auto [fine, coarse] = load_snapshot(dir.path() / "kb.askb");
    EXPECT_EQ(fine.size(), 275u);
    EXPECT_EQ(coarse.size(), 16u);
}

TEST(Cli, DiagnoseBoundWritesSummary) {
    TempDir dir("bound");
    ExperimentConfig c;
    c.output_dir = dir.path().string();
    c.diagnose.trials = 200;
    ASSERT_EQ(cmd_diagnose(c), kOk);
    const nlohmann::json j = nlohmann::json::parse(slurp(dir.path() / "bound.json"));
    EXPECT_EQ(j["trials"].get<int>(), 200);
    EXPECT_EQ(j["satisfied"].get<int>(), 200);
    EXPECT_EQ(j["violated"].get<int>(), 0);
}

}  // namespace
}  // namespace ask::cli
