#include "ask/trainer.hpp"

#include "ask/diagnostics.hpp"
#include "ask/error.hpp"
#include "ask/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ask {

PairedFeatures SyntheticCorpus::subset(const std::vector<std::size_t>& indices) const {
    PairedFeatures out;
    const auto n = static_cast<Eigen::Index>(indices.size());
    out.audio.resize(n, features.audio.cols());
    out.text.resize(n, features.text.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto src = static_cast<Eigen::Index>(indices[static_cast<std::size_t>(i)]);
        out.audio.row(i) = features.audio.row(src);
        out.text.row(i) = features.text.row(src);
    }
    return out;
}

namespace {

Mat gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
    }
    return m;
}

void assign_splits(SyntheticCorpus& corpus, std::size_t eval_every) {
    std::vector<std::size_t> position_in_cluster;
    std::vector<std::size_t> seen;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto c = static_cast<std::size_t>(corpus.cluster_id[i]);
        if (c >= seen.size()) seen.resize(c + 1, 0);
        const std::size_t p = seen[c]++;
        if (eval_every > 0 && p % eval_every == eval_every - 1) {
            corpus.eval.push_back(i);
        } else {
            corpus.train.push_back(i);
        }
    }
}

}  // namespace

SyntheticCorpus gen_synthetic_corpus(const CorpusSpec& spec, std::uint64_t seed) {
    if (spec.n_clusters < 1 || spec.head_size < 1 || spec.tail_size < 1 || spec.d_in < 1) {
        throw Error(ErrorCode::InvalidCounts, "cluster counts, sizes and d_in must be at least 1");
    }
    if (spec.n_tail > spec.n_clusters) {
        throw Error(ErrorCode::InvalidCounts, fmt::format("{} tail clusters out of {}", spec.n_tail, spec.n_clusters));
    }
    if (spec.n_tail > 0 && spec.n_tail < spec.n_clusters && spec.tail_size >= spec.head_size) {
        throw Error(ErrorCode::InvalidCounts, "tail clusters must be strictly smaller than head clusters");
    }
    if (!(spec.noise_sigma >= 0.0) || !(spec.item_spread >= 0.0)) {
        throw Error(ErrorCode::InvalidCounts, "noise levels must be non-negative");
    }

    Rng rng(seed);
    const Eigen::Index d_in = spec.d_in;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_in));
    const Mat centers = gaussian_matrix(static_cast<Eigen::Index>(spec.n_clusters), d_in, 1.0, rng);
    const Mat audio_mix = gaussian_matrix(d_in, d_in, inv_sqrt, rng);
    const Mat text_mix = gaussian_matrix(d_in, d_in, inv_sqrt, rng);

    SyntheticCorpus corpus;
    const std::size_t n_head = spec.n_clusters - spec.n_tail;
    const std::size_t total = n_head * spec.head_size + spec.n_tail * spec.tail_size;
    corpus.features.audio.resize(static_cast<Eigen::Index>(total), d_in);
    corpus.features.text.resize(static_cast<Eigen::Index>(total), d_in);
    corpus.cluster_is_tail.resize(spec.n_clusters);

    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < spec.n_clusters; ++c) {
        const bool tail = c >= n_head;
        corpus.cluster_is_tail[c] = tail;
        const std::size_t members = tail ? spec.tail_size : spec.head_size;
        for (std::size_t m = 0; m < members; ++m, ++row) {
            Vec latent = centers.row(static_cast<Eigen::Index>(c)).transpose();
            for (Eigen::Index j = 0; j < d_in; ++j) latent[j] += spec.item_spread * normal(rng);
            Vec a = latent;
            Vec t = latent;
            for (Eigen::Index j = 0; j < d_in; ++j) a[j] += spec.noise_sigma * normal(rng);
            for (Eigen::Index j = 0; j < d_in; ++j) t[j] += spec.noise_sigma * normal(rng);
            corpus.features.audio.row(row) = (audio_mix * a).transpose();
            corpus.features.text.row(row) = (text_mix * t).transpose();
            corpus.cluster_id.push_back(static_cast<int>(c));
        }
    }
    assign_splits(corpus, spec.eval_every);
    return corpus;
}

SyntheticCorpus corpus_from_features(PairedFeatures features, std::size_t eval_every) {
    if (features.size() == 0) throw Error(ErrorCode::EmptyCorpus, "corpus has no pairs");
    SyntheticCorpus corpus;
    corpus.features = std::move(features);
    corpus.cluster_id.assign(corpus.size(), 0);
    corpus.cluster_is_tail = {false};
    assign_splits(corpus, eval_every);
    return corpus;
}

AskConfig TrainConfig::ask_config() const {
    AskConfig cfg;
    cfg.k = k;
    cfg.rho = rho;
    cfg.beta = beta;
    cfg.lambda_f = lambda_f;
    cfg.lambda_c = lambda_c;
    cfg.tau = tau;
    cfg.sinkhorn = SinkhornOptions{epsilon, sinkhorn_max_iters, sinkhorn_tol};
    cfg.renormalize_enhanced = renormalize_enhanced;
    cfg.self_exclude = self_exclude;
    cfg.plan_scaling = plan_scaling;
    return cfg;
}

void TrainConfig::validate() const {
    ask_config().validate();
    if (d < 2 || d_in < 1) throw Error(ErrorCode::ConfigError, "need d >= 2 and d_in >= 1");
    if (batch_size < 1) throw Error(ErrorCode::ConfigError, "batch_size must be at least 1");
    if (epochs < 1) throw Error(ErrorCode::ConfigError, "epochs must be at least 1");
    if (refresh_period < 0) throw Error(ErrorCode::ConfigError, "refresh_period must be >= 0 (0 = static)");
    if (n_c < 1) throw Error(ErrorCode::ConfigError, "N_c must be at least 1");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::ConfigError, "learning_rate must be positive");
    if (lr_decay_every < 0) throw Error(ErrorCode::ConfigError, "lr_decay_every must be >= 0");
    if (!(rdm_temperature > 0.0)) throw Error(ErrorCode::ConfigError, "rdm_temperature must be positive");
}

double RecallTable::t2a_at(std::size_t k) const {
    auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) throw Error(ErrorCode::InvalidArgument, fmt::format("R@{} not computed", k));
    return t2a[static_cast<std::size_t>(it - ks.begin())];
}

double RecallTable::a2t_at(std::size_t k) const {
    auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) throw Error(ErrorCode::InvalidArgument, fmt::format("R@{} not computed", k));
    return a2t[static_cast<std::size_t>(it - ks.begin())];
}

namespace {

// Rank (0-based) of the ground-truth column in each row under the
// (similarity desc, index asc) order.
std::vector<std::size_t> ground_truth_ranks(const Mat& sims) {
    std::vector<std::size_t> ranks(static_cast<std::size_t>(sims.rows()));
    for (Eigen::Index i = 0; i < sims.rows(); ++i) {
        const double target = sims(i, i);
        std::size_t ahead = 0;
        for (Eigen::Index j = 0; j < sims.cols(); ++j) {
            if (sims(i, j) > target || (sims(i, j) == target && j < i)) ++ahead;
        }
        ranks[static_cast<std::size_t>(i)] = ahead;
    }
    return ranks;
}

}  // namespace

RecallTable recall_at_k(const Mat& audio_embs, const Mat& text_embs, const std::vector<std::size_t>& ks) {
    if (audio_embs.rows() != text_embs.rows()) throw Error(ErrorCode::LengthMismatch, "audio and text counts differ");
    if (audio_embs.rows() == 0) throw Error(ErrorCode::EmptyBatch, "empty retrieval pool");
    const auto n = static_cast<std::size_t>(audio_embs.rows());
    for (std::size_t k : ks) {
        if (k < 1 || k > n) throw Error(ErrorCode::KExceedsPoolSize, fmt::format("k = {} with pool size {}", k, n));
    }
    const Mat t2a_sims = text_embs * audio_embs.transpose();
    const std::vector<std::size_t> t2a_ranks = ground_truth_ranks(t2a_sims);
    const std::vector<std::size_t> a2t_ranks = ground_truth_ranks(t2a_sims.transpose());

    RecallTable table;
    table.ks = ks;
    for (std::size_t k : ks) {
        const auto hits = [k](const std::vector<std::size_t>& ranks) {
            return static_cast<double>(std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r < k; }));
        };
        table.t2a.push_back(100.0 * hits(t2a_ranks) / static_cast<double>(n));
        table.a2t.push_back(100.0 * hits(a2t_ranks) / static_cast<double>(n));
    }
    return table;
}

std::pair<ToyEncoder, ToyEncoder> init_encoders(const TrainConfig& config) {
    Rng rng = make_rng(config.seed, "init");
    ToyEncoder audio = ToyEncoder::random(config.d, config.d_in, Side::Audio, rng);
    ToyEncoder text = ToyEncoder::random(config.d, config.d_in, Side::Text, rng);
    return {std::move(audio), std::move(text)};
}

namespace {

double measure_rdm(const ToyEncoder& audio, const PairedFeatures& source, const FineKB& kb, double temperature,
                   int epoch) {
    const Mat current = audio.encode_rows(source.audio);
    return rdm(current, current, kb.audio, temperature, epoch, kb.built_at_epoch).mean;
}

std::uint64_t kmeans_seed(std::uint64_t root, int epoch) {
    return derive_seed(root, fmt::format("kmeans/{}", epoch));
}

}  // namespace

TrainReport train(const TrainConfig& config, const SyntheticCorpus& corpus) {
    config.validate();
    if (corpus.features.audio.cols() != config.d_in) {
        throw Error(ErrorCode::ConfigError,
                    fmt::format("corpus feature dim {} differs from d_in {}", corpus.features.audio.cols(), config.d_in));
    }
    const std::size_t n_train = corpus.train.size();
    if (n_train < config.batch_size) {
        throw Error(ErrorCode::ConfigError, fmt::format("train split {} smaller than batch size {}", n_train, config.batch_size));
    }
    if (config.k + (config.self_exclude ? 1 : 0) > n_train) {
        throw Error(ErrorCode::KTooLarge, fmt::format("K = {} too large for {} training pairs", config.k, n_train));
    }

    TrainReport report;
    report.config = config;
    std::string warning;
    report.n_c_used = clamp_clusters(config.n_c, n_train, &warning);
    if (!warning.empty()) report.warnings.push_back(warning);
    if (config.k > report.n_c_used) {
        throw Error(ErrorCode::KTooLarge, fmt::format("K = {} exceeds the {} coarse prototypes", config.k, report.n_c_used));
    }

    auto [audio, text] = init_encoders(config);
    const PairedFeatures source = corpus.subset(corpus.train);
    std::vector<std::int64_t> kb_ids(n_train);
    std::iota(kb_ids.begin(), kb_ids.end(), std::int64_t{0});

    FineKB fine = build_fine_kb(source, audio.as_encoder(), text.as_encoder(), 0, kb_ids);
    CoarseKB coarse = build_coarse_kb(fine, report.n_c_used, kmeans_seed(config.seed, 0), config.kmeans_max_iters);

    const AskConfig ask_cfg = config.ask_config();
    Rng shuffle_rng = make_rng(config.seed, "shuffle");
    std::vector<std::size_t> order(n_train);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        EpochMetrics m;
        m.epoch = epoch;
        if (config.refresh_period > 0 && should_refresh(epoch, config.refresh_period)) {
            m.rdm_before_refresh = measure_rdm(audio, source, fine, config.rdm_temperature, epoch);
            std::tie(fine, coarse) = refresh(fine, coarse, source, audio.as_encoder(), text.as_encoder(), epoch,
                                             report.n_c_used, kmeans_seed(config.seed, epoch));
            m.rdm_after_refresh = measure_rdm(audio, source, fine, config.rdm_temperature, epoch);
            m.refreshed = true;
            report.refresh_epochs.push_back(epoch);
        }

        double lr = config.learning_rate;
        if (config.lr_decay_every > 0) lr *= std::pow(config.lr_decay_factor, epoch / config.lr_decay_every);

        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        for (std::size_t start = 0; start < n_train; start += config.batch_size) {
            const std::size_t end = std::min(n_train, start + config.batch_size);
            const auto b = static_cast<Eigen::Index>(end - start);
            Mat xa(b, config.d_in), xt(b, config.d_in);
            Batch batch;
            for (Eigen::Index i = 0; i < b; ++i) {
                const std::size_t pos = order[start + static_cast<std::size_t>(i)];
                xa.row(i) = source.audio.row(static_cast<Eigen::Index>(pos));
                xt.row(i) = source.text.row(static_cast<Eigen::Index>(pos));
                batch.ids.push_back(kb_ids[pos]);
            }
            batch.audio = audio.encode_rows(xa);
            batch.text = text.encode_rows(xt);

            const LossAndGradients lg = loss_and_gradients(batch, fine, coarse, ask_cfg, config.loss_variant);
            // A full-corpus batch leaves no out-of-batch entries to measure.
            const double batch_obi =
                batch.size() < fine.size() ? obi_from_gradients(batch, fine, lg.grads).mean : 0.0;

            Mat grad_wa = Mat::Zero(audio.W.rows(), audio.W.cols());
            Mat grad_wt = Mat::Zero(text.W.rows(), text.W.cols());
            for (Eigen::Index i = 0; i < b; ++i) {
                grad_wa += encoder_backward(audio, xa.row(i).transpose(), lg.grads.batch_audio.row(i).transpose());
                grad_wt += encoder_backward(text, xt.row(i).transpose(), lg.grads.batch_text.row(i).transpose());
            }
            audio.W -= lr * grad_wa;
            text.W -= lr * grad_wt;

            m.loss_total += lg.loss.total;
            m.loss_t2a += lg.loss.l_star_t2a;
            m.loss_a2t += lg.loss.l_star_a2t;
            m.l_t2a += lg.loss.l_t2a;
            m.l_a2t += lg.loss.l_a2t;
            m.f_f_t2a += lg.loss.f_f_t2a;
            m.f_c_t2a += lg.loss.f_c_t2a;
            m.f_f_a2t += lg.loss.f_f_a2t;
            m.f_c_a2t += lg.loss.f_c_a2t;
            m.obi += batch_obi;
            m.obi_max_batch = std::max(m.obi_max_batch, batch_obi);
            ++m.steps;
        }
        const double steps = static_cast<double>(m.steps);
        for (double* v : {&m.loss_total, &m.loss_t2a, &m.loss_a2t, &m.l_t2a, &m.l_a2t, &m.f_f_t2a, &m.f_c_t2a,
                          &m.f_f_a2t, &m.f_c_a2t, &m.obi}) {
            *v /= steps;
        }
        m.rdm = measure_rdm(audio, source, fine, config.rdm_temperature, epoch);
        report.epochs.push_back(m);
    }

    // Cutoffs larger than the pool are dropped.
    auto ks_for = [](std::size_t pool) {
        std::vector<std::size_t> ks;
        for (std::size_t k : {1, 5, 10}) {
            if (k <= pool) ks.push_back(k);
        }
        return ks;
    };
    if (!corpus.eval.empty()) {
        const PairedFeatures eval = corpus.subset(corpus.eval);
        report.eval_recall =
            recall_at_k(audio.encode_rows(eval.audio), text.encode_rows(eval.text), ks_for(eval.size()));
    }
    report.train_recall =
        recall_at_k(audio.encode_rows(source.audio), text.encode_rows(source.text), ks_for(source.size()));
    report.audio_encoder = std::move(audio);
    report.text_encoder = std::move(text);
    return report;
}

}  // namespace ask
