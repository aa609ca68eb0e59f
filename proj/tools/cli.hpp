#pragma once

#include "ask/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace ask::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kRuntimeError = 2, kSelfTestFailed = 3 };

struct DiagnoseOptions {
    std::string mode = "bound";  // rdm | obi | bound
    std::string drift_model = "gaussian_walk";
    int steps = 20;
    double magnitude = 0.05;
    std::size_t trials = 1000;
    std::size_t obi_batches = 5;
    bool export_trace = true;
};

struct ExperimentConfig {
    TrainConfig train;
    std::string corpus_path;  // JSON lines; empty selects the synthetic generator
    CorpusSpec synthetic;     // d_in is taken from train.d_in
    std::string output_dir = "out";
    std::string weights_path;  // eval and optional encoder source for build-kb / diagnose
    std::string split = "eval";  // train | eval | all
    DiagnoseOptions diagnose;
};

nlohmann::json to_json(const ExperimentConfig& config);

/// Overlays `doc` on `base`. Unknown keys and wrongly typed values throw
/// Error(ConfigError).
ExperimentConfig overlay_config(const nlohmann::json& doc, ExperimentConfig base = {});

ExperimentConfig load_config(const std::filesystem::path& path);

/// Synthetic corpus from the "corpus" seed stream, or the JSON-lines file.
/// `ids` receives the per-pair ids (row positions for synthetic data).
SyntheticCorpus load_corpus(const ExperimentConfig& config, std::vector<std::int64_t>* ids = nullptr);

PairedFeatures read_jsonl_corpus(const std::filesystem::path& path, Eigen::Index d_in, std::vector<std::int64_t>* ids);

std::string report_json(const TrainReport& report);

/// epoch,loss_total,loss_t2a,loss_a2t,obi,rdm,refreshed
std::string metrics_csv(const TrainReport& report);

/// "ASKW", u32 version, u32 d, u32 d_in, then f32 row-major audio W and text W.
void save_weights(const std::filesystem::path& path, const ToyEncoder& audio, const ToyEncoder& text);
std::pair<ToyEncoder, ToyEncoder> load_weights(const std::filesystem::path& path);

/// Exactly six keys, percentages with two decimals. k values beyond the pool
/// size are evaluated at the pool size (every query hits).
std::string recall_json(const Mat& audio_embs, const Mat& text_embs);

int cmd_build_kb(const ExperimentConfig& config);
int cmd_train(const ExperimentConfig& config);
int cmd_eval(const ExperimentConfig& config);
int cmd_diagnose(const ExperimentConfig& config);
int self_test();

int run(int argc, char** argv);

}  // namespace ask::cli
