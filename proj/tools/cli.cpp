#include "cli.hpp"

#include "ask/diagnostics.hpp"
#include "ask/error.hpp"
#include "ask/report_io.hpp"
#include "ask/rng.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>

namespace ask::cli {

using nlohmann::json;

namespace {

const char* variant_name(LossVariant v) { return v == LossVariant::Baseline ? "baseline" : "ask"; }

LossVariant parse_variant(const std::string& s) {
    if (s == "baseline") return LossVariant::Baseline;
    if (s == "ask") return LossVariant::Ask;
    throw Error(ErrorCode::ConfigError, fmt::format("unknown loss variant '{}'", s));
}

const char* scaling_name(PlanScaling s) { return s == PlanScaling::Literal ? "literal" : "row_stochastic"; }

PlanScaling parse_scaling(const std::string& s) {
    if (s == "row_stochastic") return PlanScaling::RowStochastic;
    if (s == "literal") return PlanScaling::Literal;
    throw Error(ErrorCode::ConfigError, fmt::format("unknown plan scaling '{}'", s));
}

DriftModel parse_drift_model(const std::string& s) {
    if (s == "gaussian_walk") return DriftModel::GaussianWalk;
    if (s == "rotation_flow") return DriftModel::RotationFlow;
    throw Error(ErrorCode::ConfigError, fmt::format("unknown drift model '{}'", s));
}

void check_mode(const std::string& mode) {
    if (mode != "rdm" && mode != "obi" && mode != "bound") {
        throw Error(ErrorCode::ConfigError, fmt::format("unknown diagnose mode '{}'", mode));
    }
}

void check_split(const std::string& split) {
    if (split != "train" && split != "eval" && split != "all") {
        throw Error(ErrorCode::ConfigError, fmt::format("unknown split '{}'", split));
    }
}

// Typed field readers. nlohmann converts silently between numeric kinds, so
// the JSON kind is checked first.
class Fields {
public:
    Fields(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
        if (!obj_.is_object()) throw Error(ErrorCode::ConfigError, fmt::format("{} must be an object", where_));
    }

    void real(const char* key, double& out) {
        if (const json* v = take(key)) {
            if (!v->is_number()) fail(key, "a number");
            out = v->get<double>();
        }
    }
    template <class Int>
    void integer(const char* key, Int& out) {
        if (const json* v = take(key)) {
            if (!v->is_number_integer()) fail(key, "an integer");
            if (std::is_unsigned_v<Int> && !v->is_number_unsigned()) fail(key, "a non-negative integer");
            out = v->get<Int>();
        }
    }
    void boolean(const char* key, bool& out) {
        if (const json* v = take(key)) {
            if (!v->is_boolean()) fail(key, "a boolean");
            out = v->get<bool>();
        }
    }
    void string(const char* key, std::string& out) {
        if (const json* v = take(key)) {
            if (!v->is_string()) fail(key, "a string");
            out = v->get<std::string>();
        }
    }
    const json* object(const char* key) { return take(key); }

    void reject_unknown() const {
        for (const auto& [key, _] : obj_.items()) {
            if (!seen_.count(key)) throw Error(ErrorCode::ConfigError, fmt::format("unknown key '{}' in {}", key, where_));
        }
    }

private:
    const json* take(const char* key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }
    [[noreturn]] void fail(const char* key, const char* what) const {
        throw Error(ErrorCode::ConfigError, fmt::format("'{}' in {} must be {}", key, where_, what));
    }

    const json& obj_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

json to_json(const ExperimentConfig& c) {
    const TrainConfig& t = c.train;
    json j;
    j["d_in"] = t.d_in;
    j["d"] = t.d;
    j["k"] = t.k;
    j["n_c"] = t.n_c;
    j["rho"] = t.rho;
    j["beta"] = t.beta;
    j["lambda_f"] = t.lambda_f;
    j["lambda_c"] = t.lambda_c;
    j["refresh_period"] = t.refresh_period;
    j["tau"] = t.tau;
    j["epsilon"] = t.epsilon;
    j["sinkhorn_max_iters"] = t.sinkhorn_max_iters;
    j["sinkhorn_tol"] = t.sinkhorn_tol;
    j["learning_rate"] = t.learning_rate;
    j["lr_decay_every"] = t.lr_decay_every;
    j["lr_decay_factor"] = t.lr_decay_factor;
    j["epochs"] = t.epochs;
    j["batch_size"] = t.batch_size;
    j["seed"] = t.seed;
    j["renormalize_enhanced"] = t.renormalize_enhanced;
    j["self_exclude"] = t.self_exclude;
    j["loss_variant"] = variant_name(t.loss_variant);
    j["plan_scaling"] = scaling_name(t.plan_scaling);
    j["rdm_temperature"] = t.rdm_temperature;
    j["kmeans_max_iters"] = t.kmeans_max_iters;
    j["corpus_path"] = c.corpus_path;
    j["output_dir"] = c.output_dir;
    j["weights_path"] = c.weights_path;
    j["split"] = c.split;
    j["synthetic"] = {{"n_clusters", c.synthetic.n_clusters},   {"head_size", c.synthetic.head_size},
                      {"tail_size", c.synthetic.tail_size},     {"n_tail", c.synthetic.n_tail},
                      {"noise_sigma", c.synthetic.noise_sigma}, {"item_spread", c.synthetic.item_spread},
                      {"eval_every", c.synthetic.eval_every}};
    j["diagnose"] = {{"mode", c.diagnose.mode},
                     {"drift_model", c.diagnose.drift_model},
                     {"steps", c.diagnose.steps},
                     {"magnitude", c.diagnose.magnitude},
                     {"trials", c.diagnose.trials},
                     {"obi_batches", c.diagnose.obi_batches},
                     {"export_trace", c.diagnose.export_trace}};
    return j;
}

ExperimentConfig overlay_config(const json& doc, ExperimentConfig c) {
    Fields f(doc, "config");
    TrainConfig& t = c.train;
    f.integer("d_in", t.d_in);
    f.integer("d", t.d);
    f.integer("k", t.k);
    f.integer("n_c", t.n_c);
    f.real("rho", t.rho);
    f.real("beta", t.beta);
    f.real("lambda_f", t.lambda_f);
    f.real("lambda_c", t.lambda_c);
    f.integer("refresh_period", t.refresh_period);
    f.real("tau", t.tau);
    f.real("epsilon", t.epsilon);
    f.integer("sinkhorn_max_iters", t.sinkhorn_max_iters);
    f.real("sinkhorn_tol", t.sinkhorn_tol);
    f.real("learning_rate", t.learning_rate);
    f.integer("lr_decay_every", t.lr_decay_every);
    f.real("lr_decay_factor", t.lr_decay_factor);
    f.integer("epochs", t.epochs);
    f.integer("batch_size", t.batch_size);
    f.integer("seed", t.seed);
    f.boolean("renormalize_enhanced", t.renormalize_enhanced);
    f.boolean("self_exclude", t.self_exclude);
    std::string variant = variant_name(t.loss_variant);
    f.string("loss_variant", variant);
    t.loss_variant = parse_variant(variant);
    std::string scaling = scaling_name(t.plan_scaling);
    f.string("plan_scaling", scaling);
    t.plan_scaling = parse_scaling(scaling);
    f.real("rdm_temperature", t.rdm_temperature);
    f.integer("kmeans_max_iters", t.kmeans_max_iters);
    f.string("corpus_path", c.corpus_path);
    f.string("output_dir", c.output_dir);
    f.string("weights_path", c.weights_path);
    f.string("split", c.split);
    check_split(c.split);

    if (const json* syn = f.object("synthetic")) {
        Fields s(*syn, "synthetic");
        s.integer("n_clusters", c.synthetic.n_clusters);
        s.integer("head_size", c.synthetic.head_size);
        s.integer("tail_size", c.synthetic.tail_size);
        s.integer("n_tail", c.synthetic.n_tail);
        s.real("noise_sigma", c.synthetic.noise_sigma);
        s.real("item_spread", c.synthetic.item_spread);
        s.integer("eval_every", c.synthetic.eval_every);
        s.reject_unknown();
    }
    if (const json* diag = f.object("diagnose")) {
        Fields d(*diag, "diagnose");
        d.string("mode", c.diagnose.mode);
        d.string("drift_model", c.diagnose.drift_model);
        d.integer("steps", c.diagnose.steps);
        d.real("magnitude", c.diagnose.magnitude);
        d.integer("trials", c.diagnose.trials);
        d.integer("obi_batches", c.diagnose.obi_batches);
        d.boolean("export_trace", c.diagnose.export_trace);
        d.reject_unknown();
        check_mode(c.diagnose.mode);
        parse_drift_model(c.diagnose.drift_model);
    }
    f.reject_unknown();
    c.synthetic.d_in = t.d_in;
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw Error(ErrorCode::ConfigError, e.what());
    }
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("{}: {}", path.string(), e.what()));
    }
    return overlay_config(doc);
}

PairedFeatures read_jsonl_corpus(const std::filesystem::path& path, Eigen::Index d_in, std::vector<std::int64_t>* ids) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IOError, fmt::format("cannot open corpus {}", path.string()));
    std::vector<Vec> audio, text;
    std::vector<std::int64_t> id_list;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::IOError, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
        }
        const auto where = fmt::format("{}:{}", path.string(), line_no);
        if (!j.is_object() || j.size() != 3 || !j.contains("id") || !j.contains("audio") || !j.contains("text")) {
            throw Error(ErrorCode::IOError, fmt::format("{}: expected exactly {{id, audio, text}}", where));
        }
        if (!j["id"].is_number_integer()) throw Error(ErrorCode::IOError, fmt::format("{}: id must be an integer", where));
        auto vec = [&](const json& arr, const char* name) {
            if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != d_in) {
                throw Error(ErrorCode::IOError, fmt::format("{}: {} must be an array of {} numbers", where, name, d_in));
            }
            Vec v(d_in);
            for (Eigen::Index c = 0; c < d_in; ++c) {
                const json& x = arr[static_cast<std::size_t>(c)];
                if (!x.is_number()) throw Error(ErrorCode::IOError, fmt::format("{}: non-numeric {} entry", where, name));
                v[c] = x.get<double>();
            }
            return v;
        };
        id_list.push_back(j["id"].get<std::int64_t>());
        audio.push_back(vec(j["audio"], "audio"));
        text.push_back(vec(j["text"], "text"));
    }
    if (audio.empty()) throw Error(ErrorCode::EmptyCorpus, fmt::format("{} holds no pairs", path.string()));
    PairedFeatures out;
    out.audio.resize(static_cast<Eigen::Index>(audio.size()), d_in);
    out.text.resize(static_cast<Eigen::Index>(text.size()), d_in);
    for (std::size_t i = 0; i < audio.size(); ++i) {
        out.audio.row(static_cast<Eigen::Index>(i)) = audio[i].transpose();
        out.text.row(static_cast<Eigen::Index>(i)) = text[i].transpose();
    }
    if (ids) *ids = std::move(id_list);
    return out;
}

SyntheticCorpus load_corpus(const ExperimentConfig& config, std::vector<std::int64_t>* ids) {
    if (!config.corpus_path.empty()) {
        std::vector<std::int64_t> file_ids;
        PairedFeatures pairs = read_jsonl_corpus(config.corpus_path, config.train.d_in, &file_ids);
        if (ids) *ids = std::move(file_ids);
        return corpus_from_features(std::move(pairs), config.synthetic.eval_every);
    }
    CorpusSpec spec = config.synthetic;
    spec.d_in = config.train.d_in;
    SyntheticCorpus corpus = gen_synthetic_corpus(spec, derive_seed(config.train.seed, "corpus"));
    if (ids) {
        ids->resize(corpus.size());
        std::iota(ids->begin(), ids->end(), std::int64_t{0});
    }
    return corpus;
}

namespace {

json recall_to_json(const RecallTable& table) {
    json t2a = json::object(), a2t = json::object();
    for (std::size_t i = 0; i < table.ks.size(); ++i) {
        t2a[fmt::format("R@{}", table.ks[i])] = table.t2a[i];
        a2t[fmt::format("R@{}", table.ks[i])] = table.a2t[i];
    }
    return {{"t2a", t2a}, {"a2t", a2t}};
}

}  // namespace

std::string report_json(const TrainReport& report) {
    ExperimentConfig echo;
    echo.train = report.config;
    json j;
    json cfg = to_json(echo);
    for (const char* key : {"corpus_path", "output_dir", "weights_path", "split", "synthetic", "diagnose"}) cfg.erase(key);
    j["config"] = cfg;
    j["n_c_used"] = report.n_c_used;
    j["warnings"] = report.warnings;
    j["refresh_epochs"] = report.refresh_epochs;
    json epochs = json::array();
    for (const EpochMetrics& m : report.epochs) {
        json e;
        e["epoch"] = m.epoch;
        e["loss_total"] = m.loss_total;
        e["loss_t2a"] = m.loss_t2a;
        e["loss_a2t"] = m.loss_a2t;
        e["l_t2a"] = m.l_t2a;
        e["l_a2t"] = m.l_a2t;
        e["f_f_t2a"] = m.f_f_t2a;
        e["f_c_t2a"] = m.f_c_t2a;
        e["f_f_a2t"] = m.f_f_a2t;
        e["f_c_a2t"] = m.f_c_a2t;
        e["obi"] = m.obi;
        e["obi_max_batch"] = m.obi_max_batch;
        e["rdm"] = m.rdm;
        e["refreshed"] = m.refreshed;
        if (m.refreshed) {
            e["rdm_before_refresh"] = m.rdm_before_refresh;
            e["rdm_after_refresh"] = m.rdm_after_refresh;
        }
        e["steps"] = m.steps;
        epochs.push_back(std::move(e));
    }
    j["epochs"] = std::move(epochs);
    j["eval_recall"] = recall_to_json(report.eval_recall);
    j["train_recall"] = recall_to_json(report.train_recall);
    return j.dump(2) + "\n";
}

std::string metrics_csv(const TrainReport& report) {
    std::string csv = "epoch,loss_total,loss_t2a,loss_a2t,obi,rdm,refreshed\n";
    for (const EpochMetrics& m : report.epochs) {
        csv += fmt::format("{},{},{},{},{},{},{}\n", m.epoch, format_double(m.loss_total), format_double(m.loss_t2a),
                           format_double(m.loss_a2t), format_double(m.obi), format_double(m.rdm), m.refreshed ? 1 : 0);
    }
    return csv;
}

namespace {
constexpr std::uint32_t kWeightsVersion = 1;
}

void save_weights(const std::filesystem::path& path, const ToyEncoder& audio, const ToyEncoder& text) {
    if (audio.W.rows() != text.W.rows() || audio.W.cols() != text.W.cols()) {
        throw Error(ErrorCode::ShapeMismatch, "audio and text encoders differ in shape");
    }
    BinaryWriter w;
    w.put_bytes("ASKW");
    w.put_u32(kWeightsVersion);
    w.put_u32(static_cast<std::uint32_t>(audio.dim()));
    w.put_u32(static_cast<std::uint32_t>(audio.input_dim()));
    w.put_f32_block(audio.W);
    w.put_f32_block(text.W);
    write_file_atomic(path, w.buffer());
}

std::pair<ToyEncoder, ToyEncoder> load_weights(const std::filesystem::path& path) {
    BinaryReader r(read_file(path));
    if (r.get_bytes(4) != "ASKW") throw Error(ErrorCode::IOError, fmt::format("{} is not a weights file", path.string()));
    const std::uint32_t version = r.get_u32();
    if (version != kWeightsVersion) throw Error(ErrorCode::IOError, fmt::format("unsupported weights version {}", version));
    const auto d = static_cast<Eigen::Index>(r.get_u32());
    const auto d_in = static_cast<Eigen::Index>(r.get_u32());
    ToyEncoder audio{r.get_f32_block(d, d_in), Side::Audio};
    ToyEncoder text{r.get_f32_block(d, d_in), Side::Text};
    if (!r.at_end()) throw Error(ErrorCode::IOError, fmt::format("trailing bytes in {}", path.string()));
    return {std::move(audio), std::move(text)};
}

std::string recall_json(const Mat& audio_embs, const Mat& text_embs) {
    const auto n = static_cast<std::size_t>(audio_embs.rows());
    const std::vector<std::size_t> nominal{1, 5, 10};
    std::vector<std::size_t> ks;
    for (std::size_t k : nominal) ks.push_back(std::min(k, n));
    const RecallTable table = recall_at_k(audio_embs, text_embs, ks);
    std::string out = "{\n";
    for (std::size_t i = 0; i < nominal.size(); ++i) {
        out += fmt::format("  \"t2a_r{}\": {:.2f},\n", nominal[i], table.t2a[i]);
    }
    for (std::size_t i = 0; i < nominal.size(); ++i) {
        out += fmt::format("  \"a2t_r{}\": {:.2f}{}\n", nominal[i], table.a2t[i], i + 1 < nominal.size() ? "," : "");
    }
    out += "}\n";
    return out;
}

namespace {

std::filesystem::path out_path(const ExperimentConfig& c, const char* name) {
    return std::filesystem::path(c.output_dir) / name;
}

void echo_config(const ExperimentConfig& c) {
    write_file_atomic(out_path(c, "config.json"), to_json(c).dump(2) + "\n");
}

std::pair<ToyEncoder, ToyEncoder> encoders_for(const ExperimentConfig& c) {
    if (c.weights_path.empty()) return init_encoders(c.train);
    auto enc = load_weights(c.weights_path);
    if (enc.first.dim() != c.train.d || enc.first.input_dim() != c.train.d_in) {
        throw Error(ErrorCode::ConfigError, fmt::format("weights are {}x{} but the config asks for d={} d_in={}",
                                                        enc.first.dim(), enc.first.input_dim(), c.train.d, c.train.d_in));
    }
    return enc;
}

}  // namespace

int cmd_build_kb(const ExperimentConfig& c) {
    c.train.validate();
    std::vector<std::int64_t> ids;
    const SyntheticCorpus corpus = load_corpus(c, &ids);
    auto [audio, text] = encoders_for(c);
    std::string warning;
    const std::size_t n_c = clamp_clusters(c.train.n_c, corpus.size(), &warning);
    const FineKB fine = build_fine_kb(corpus.features, audio.as_encoder(), text.as_encoder(), 0, ids);
    const CoarseKB coarse = build_coarse_kb(fine, n_c, derive_seed(c.train.seed, "kmeans/0"), c.train.kmeans_max_iters);

    echo_config(c);
    save_snapshot(out_path(c, "kb.askb"), fine, coarse);
    json sidecar;
    sidecar["N_k"] = fine.size();
    sidecar["N_c"] = coarse.size();
    sidecar["d"] = fine.audio.cols();
    sidecar["built_at"] = fine.built_at_epoch;
    sidecar["warning"] = warning.empty() ? json(nullptr) : json(warning);
    write_file_atomic(out_path(c, "kb.json"), sidecar.dump(2) + "\n");
    fmt::print(stderr, "knowledge base: N_k={} N_c={} d={} -> {}\n", fine.size(), coarse.size(), fine.audio.cols(),
               out_path(c, "kb.askb").string());
    if (!warning.empty()) fmt::print(stderr, "warning: {}\n", warning);
    return kOk;
}

int cmd_train(const ExperimentConfig& c) {
    c.train.validate();
    const SyntheticCorpus corpus = load_corpus(c);
    const TrainReport report = train(c.train, corpus);
    echo_config(c);
    write_file_atomic(out_path(c, "report.json"), report_json(report));
    write_file_atomic(out_path(c, "metrics.csv"), metrics_csv(report));
    save_weights(out_path(c, "weights.askw"), report.audio_encoder, report.text_encoder);
    for (const std::string& w : report.warnings) fmt::print(stderr, "warning: {}\n", w);
    const EpochMetrics& last = report.epochs.back();
    fmt::print(stderr, "{} epochs, final loss {:.4f}, obi {:.4g}, train T2A R@1 {:.2f}\n", report.epochs.size(),
               last.loss_total, last.obi, report.train_recall.t2a_at(1));
    return kOk;
}

int cmd_eval(const ExperimentConfig& c) {
    ExperimentConfig resolved = c;
    if (resolved.weights_path.empty()) resolved.weights_path = out_path(c, "weights.askw").string();
    const SyntheticCorpus corpus = load_corpus(resolved);
    auto [audio, text] = encoders_for(resolved);
    std::vector<std::size_t> rows;
    if (resolved.split == "train") {
        rows = corpus.train;
    } else if (resolved.split == "eval") {
        rows = corpus.eval;
    } else {
        rows.resize(corpus.size());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    if (rows.empty()) throw Error(ErrorCode::EmptyBatch, fmt::format("split '{}' is empty", resolved.split));
    const PairedFeatures pool = corpus.subset(rows);
    const std::string out = recall_json(audio.encode_rows(pool.audio), text.encode_rows(pool.text));
    echo_config(resolved);
    write_file_atomic(out_path(resolved, "eval.json"), out);
    fmt::print("{}", out);
    return kOk;
}

namespace {

json obi_for_variant(const ExperimentConfig& c, const SyntheticCorpus& corpus, LossVariant variant) {
    const PairedFeatures source = corpus.subset(corpus.train);
    auto [audio, text] = encoders_for(c);
    std::vector<std::int64_t> ids(source.size());
    std::iota(ids.begin(), ids.end(), std::int64_t{0});
    const FineKB fine = build_fine_kb(source, audio.as_encoder(), text.as_encoder(), 0, ids);
    const std::size_t n_c = clamp_clusters(c.train.n_c, fine.size());
    const CoarseKB coarse = build_coarse_kb(fine, n_c, derive_seed(c.train.seed, "kmeans/0"), c.train.kmeans_max_iters);

    Rng rng = make_rng(c.train.seed, "obi");
    std::vector<std::size_t> order(source.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t b = std::min(c.train.batch_size, source.size());
    json per_batch = json::array();
    double acc = 0.0;
    for (std::size_t n = 0; n < c.diagnose.obi_batches; ++n) {
        std::shuffle(order.begin(), order.end(), rng);
        Batch batch;
        batch.audio.resize(static_cast<Eigen::Index>(b), fine.audio.cols());
        batch.text.resize(static_cast<Eigen::Index>(b), fine.text.cols());
        for (std::size_t i = 0; i < b; ++i) {
            batch.audio.row(static_cast<Eigen::Index>(i)) = fine.audio.row(static_cast<Eigen::Index>(order[i]));
            batch.text.row(static_cast<Eigen::Index>(i)) = fine.text.row(static_cast<Eigen::Index>(order[i]));
            batch.ids.push_back(ids[order[i]]);
        }
        const OBIReport r = obi(batch, fine, coarse, c.train.ask_config(), variant);
        per_batch.push_back(r.mean);
        acc += r.mean;
    }
    const double mean = c.diagnose.obi_batches > 0 ? acc / static_cast<double>(c.diagnose.obi_batches) : 0.0;
    return {{"obi_mean", mean}, {"per_batch", per_batch}};
}

}  // namespace

int cmd_diagnose(const ExperimentConfig& c) {
    check_mode(c.diagnose.mode);
    if (c.diagnose.mode == "bound") {
        const BoundTrialSummary s = run_bound_trials(c.diagnose.trials, derive_seed(c.train.seed, "bound"));
        json j{{"trials", s.trials}, {"satisfied", s.satisfied}, {"violated", s.trials - s.satisfied}, {"max_ratio", s.max_ratio}};
        echo_config(c);
        write_file_atomic(out_path(c, "bound.json"), j.dump(2) + "\n");
        fmt::print(stderr, "bound: {}/{} trials satisfied\n", s.satisfied, s.trials);
        return kOk;
    }
    c.train.validate();
    const SyntheticCorpus corpus = load_corpus(c);
    if (c.diagnose.mode == "obi") {
        json j;
        j["variants"][variant_name(c.train.loss_variant)] = obi_for_variant(c, corpus, c.train.loss_variant);
        echo_config(c);
        write_file_atomic(out_path(c, "obi.json"), j.dump(2) + "\n");
        fmt::print(stderr, "obi ({}): {}\n", variant_name(c.train.loss_variant),
                   format_double(j["variants"][variant_name(c.train.loss_variant)]["obi_mean"].get<double>()));
        return kOk;
    }

    auto [audio, text] = encoders_for(c);
    std::vector<EncoderSnapshot> snapshots;
    const std::vector<DriftStep> sweep =
        drift_simulation(audio, parse_drift_model(c.diagnose.drift_model), c.diagnose.steps, c.diagnose.magnitude,
                         corpus.features.audio, c.train.rdm_temperature, derive_seed(c.train.seed, "drift"),
                         c.diagnose.export_trace ? &snapshots : nullptr);
    json arr = json::array();
    for (const DriftStep& s : sweep) {
        arr.push_back({{"step", s.step}, {"rdm_mean", s.rdm.mean}, {"delta_k_mean", s.delta_k_mean}, {"bound_mean", s.bound_mean}});
    }
    echo_config(c);
    write_file_atomic(out_path(c, "rdm_sweep.json"), arr.dump(2) + "\n");
    if (c.diagnose.export_trace) {
        std::vector<std::int64_t> ids(corpus.size());
        std::iota(ids.begin(), ids.end(), std::int64_t{0});
        drift_trace_export(snapshots, corpus.features.audio, ids, out_path(c, "drift_trace.csv"));
    }
    fmt::print(stderr, "rdm: {} steps, final mean RDM {}\n", sweep.size(), format_double(sweep.back().rdm.mean));
    return kOk;
}

int self_test() {
    int failures = 0;
    auto report = [&](const char* name, bool ok, const std::string& detail) {
        fmt::print("{} {}: {}\n", ok ? "PASS" : "FAIL", name, detail);
        if (!ok) ++failures;
    };

    const BoundTrialSummary bound = run_bound_trials(1000, derive_seed(0, "bound"));
    report("bound", bound.satisfied == bound.trials, fmt::format("{}/{}", bound.satisfied, bound.trials));

    ExperimentConfig c;
    c.train.n_c = 16;
    const SyntheticCorpus corpus = load_corpus(c);
    c.diagnose.obi_batches = 2;
    const double base = obi_for_variant(c, corpus, LossVariant::Baseline)["obi_mean"].get<double>();
    report("obi baseline", base == 0.0, format_double(base));
    const double ask = obi_for_variant(c, corpus, LossVariant::Ask)["obi_mean"].get<double>();
    report("obi ask", ask > 0.0, format_double(ask));

    Rng rng = make_rng(0, "self-test");
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat s(8, 8);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = std::tanh(normal(rng));
    const TransportPlan plan = sinkhorn(s, SinkhornOptions{0.05, 5000, 1e-6});
    report("sinkhorn", plan.converged && marginal_violation(plan.Q) < 1e-6,
           fmt::format("violation {:.3g} after {} iterations", marginal_violation(plan.Q), plan.iterations_used));

    auto [audio, text] = init_encoders(c.train);
    const PairedFeatures source = corpus.subset(corpus.train);
    const FineKB fine = build_fine_kb(source, audio.as_encoder(), text.as_encoder(), 3);
    const Mat current = audio.encode_rows(source.audio);
    const double after = rdm(current, current, fine.audio, 1.0, 3, 3).mean;
    report("rdm reset", after <= 1e-9, format_double(after));

    return failures == 0 ? kOk : kSelfTestFailed;
}

int run(int argc, char** argv) {
    CLI::App app{"Knowledge-enhanced contrastive audio-text training at desk scale"};
    app.require_subcommand(0, 1);
    std::string config_path, out_dir, variant, mode, weights, split;
    std::optional<std::uint64_t> seed;
    bool run_self_test = false;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "root seed");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--variant", variant, "loss variant")->check(CLI::IsMember({"baseline", "ask"}));
    app.add_option("--weights", weights, "encoder weights file");
    app.add_option("--split", split, "evaluation split")->check(CLI::IsMember({"train", "eval", "all"}));
    app.add_flag("--self-test", run_self_test, "run built-in checks; exit 3 on failure");
    app.fallthrough();
    CLI::App* build_kb = app.add_subcommand("build-kb", "build and snapshot both knowledge bases");
    CLI::App* train_cmd = app.add_subcommand("train", "train both encoders");
    CLI::App* eval_cmd = app.add_subcommand("eval", "recall table for trained weights");
    CLI::App* diagnose = app.add_subcommand("diagnose", "rdm drift sweep, obi, or bound trials");
    diagnose->add_option("--mode", mode, "diagnostic")->check(CLI::IsMember({"rdm", "obi", "bound"}));
    for (CLI::App* sub : {build_kb, train_cmd, eval_cmd, diagnose}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (run_self_test) return self_test();
        ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        if (seed) c.train.seed = *seed;
        if (!out_dir.empty()) c.output_dir = out_dir;
        if (!variant.empty()) c.train.loss_variant = parse_variant(variant);
        if (!weights.empty()) c.weights_path = weights;
        if (!split.empty()) c.split = split;
        if (!mode.empty()) c.diagnose.mode = mode;
        c.synthetic.d_in = c.train.d_in;
        try {
            c.train.validate();
        } catch (const Error& e) {
            throw Error(ErrorCode::ConfigError, e.what());
        }

        if (*build_kb) return cmd_build_kb(c);
        if (*train_cmd) return cmd_train(c);
        if (*eval_cmd) return cmd_eval(c);
        if (*diagnose) return cmd_diagnose(c);
        fmt::print(stderr, "{}", app.help());
        return kConfigError;
    } catch (const Error& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return e.code() == ErrorCode::ConfigError ? kConfigError : kRuntimeError;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kRuntimeError;
    }
}

}  // namespace ask::cli
