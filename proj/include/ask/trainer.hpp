#pragma once

#include "ask/encoder.hpp"
#include "ask/knowledge_base.hpp"
#include "ask/objective.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ask {

struct CorpusSpec {
    std::size_t n_clusters = 10;
    std::size_t head_size = 50;
    std::size_t tail_size = 5;
    std::size_t n_tail = 5;
    Eigen::Index d_in = 32;
    double noise_sigma = 0.3;
    double item_spread = 0.6;   // std-dev of per-item latent offsets around the cluster center
    std::size_t eval_every = 5;  // within each cluster, member positions p with p % eval_every == eval_every - 1 go to eval
};

/// Paired features drawn from a shared per-item latent, so item i's audio
/// and text always match each other. The last `n_tail` clusters are tail
/// clusters with `tail_size` members.
struct SyntheticCorpus {
    PairedFeatures features;
    std::vector<int> cluster_id;
    std::vector<bool> cluster_is_tail;  // per cluster
    std::vector<std::size_t> train;
    std::vector<std::size_t> eval;

    std::size_t size() const { return features.size(); }
    PairedFeatures subset(const std::vector<std::size_t>& indices) const;
};

SyntheticCorpus gen_synthetic_corpus(const CorpusSpec& spec, std::uint64_t seed);

/// Wraps externally supplied pairs (e.g. read from JSON lines) with the
/// same split rule as the synthetic generator, treating the file as one
/// cluster.
SyntheticCorpus corpus_from_features(PairedFeatures features, std::size_t eval_every = 5);

struct TrainConfig {
    Eigen::Index d_in = 32;
    Eigen::Index d = 16;
    std::size_t k = 10;
    std::size_t n_c = 512;
    double rho = 0.2;
    double beta = 0.2;
    double lambda_f = 0.2;
    double lambda_c = 0.3;
    int refresh_period = 15;  // 0 keeps the epoch-0 knowledge base for the whole run
    double tau = 0.07;
    double epsilon = 0.05;
    int sinkhorn_max_iters = 200;
    double sinkhorn_tol = 1e-6;
    double learning_rate = 0.05;
    int lr_decay_every = 0;  // 0 = constant learning rate
    double lr_decay_factor = 0.1;
    int epochs = 30;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    bool renormalize_enhanced = true;
    bool self_exclude = true;
    LossVariant loss_variant = LossVariant::Ask;
    PlanScaling plan_scaling = PlanScaling::RowStochastic;
    double rdm_temperature = 1.0;
    int kmeans_max_iters = 100;

    AskConfig ask_config() const;
    void validate() const;
};

struct RecallTable {
    std::vector<std::size_t> ks;
    std::vector<double> t2a;  // percentages
    std::vector<double> a2t;

    double t2a_at(std::size_t k) const;
    double a2t_at(std::size_t k) const;
};

/// Ground truth is index identity; ties in similarity rank the lower index first.
RecallTable recall_at_k(const Mat& audio_embs, const Mat& text_embs, const std::vector<std::size_t>& ks);

struct EpochMetrics {
    int epoch = 0;
    double loss_total = 0.0;
    double loss_t2a = 0.0;  // modulated directional loss (plain directional loss for the baseline)
    double loss_a2t = 0.0;
    double l_t2a = 0.0;
    double l_a2t = 0.0;
    double f_f_t2a = 0.0;
    double f_c_t2a = 0.0;
    double f_f_a2t = 0.0;
    double f_c_a2t = 0.0;
    double obi = 0.0;
    double obi_max_batch = 0.0;
    double rdm = 0.0;  // end of epoch, against the KB in use
    bool refreshed = false;
    double rdm_before_refresh = 0.0;
    double rdm_after_refresh = 0.0;
    std::size_t steps = 0;
};

struct TrainReport {
    TrainConfig config;
    std::size_t n_c_used = 0;
    std::vector<std::string> warnings;
    std::vector<EpochMetrics> epochs;
    std::vector<int> refresh_epochs;
    RecallTable eval_recall;
    RecallTable train_recall;
    ToyEncoder audio_encoder;
    ToyEncoder text_encoder;
};

TrainReport train(const TrainConfig& config, const SyntheticCorpus& corpus);

/// Initial encoders for a config; shared by train and by untrained evaluation.
std::pair<ToyEncoder, ToyEncoder> init_encoders(const TrainConfig& config);

}  // namespace ask
