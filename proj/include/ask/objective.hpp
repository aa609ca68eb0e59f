#pragma once

#include "ask/ot_align.hpp"
#include "ask/reliability.hpp"

#include <span>
#include <vector>

namespace ask {

enum class LossVariant { Baseline, Ask };

struct AskConfig {
    std::size_t k = 10;
    double rho = 0.2;
    double beta = 0.2;
    double lambda_f = 0.2;
    double lambda_c = 0.3;
    double tau = 0.07;
    SinkhornOptions sinkhorn{};
    bool renormalize_enhanced = true;
    bool self_exclude = true;
    PlanScaling plan_scaling = PlanScaling::RowStochastic;

    void validate() const;
    RetrievalOptions retrieval() const { return RetrievalOptions{k, self_exclude}; }
};

struct LossBreakdown {
    double l_t2a = 0.0;
    double l_a2t = 0.0;
    double f_f_t2a = 0.0;
    double f_c_t2a = 0.0;
    double f_f_a2t = 0.0;
    double f_c_a2t = 0.0;
    double l_star_t2a = 0.0;
    double l_star_a2t = 0.0;
    double total = 0.0;
    double tau = 0.07;
    double lambda_f = 0.0;
    double lambda_c = 0.0;
};

/// Everything treated as a constant within one step: top-K selections, the
/// four transport plans, and the knowledge side of the four potentials.
/// Holding these fixed defines the gradient that grad_embeddings returns.
struct StepContext {
    std::vector<SampleRetrieval> retrieval;
    std::vector<SamplePotentialTerms> potentials;
    TransportPlan plan_fine_t2a;
    TransportPlan plan_coarse_t2a;
    TransportPlan plan_fine_a2t;
    TransportPlan plan_coarse_a2t;
};

/// Gradients of the total loss. KB gradients are dense, zero for entries
/// that no batch item retrieved.
struct Gradients {
    Mat batch_audio;
    Mat batch_text;
    Mat fine_audio;
    Mat fine_text;
    Mat coarse_audio;
    Mat coarse_text;
};

struct LossAndGradients {
    LossBreakdown loss;
    Gradients grads;
};

/// One-direction NT-Xent: rows are anchors, the diagonal holds positives.
double ntxent(const SimMatrix& S, double tau);

/// d ntxent / dS.
Mat ntxent_grad(const SimMatrix& S, double tau);

double directional_loss(const SimMatrix& s_star_fine, const SimMatrix& s_star_coarse, double tau);

/// (1/B) sum_i -ln psi_i.
double reliability_term(std::span<const double> potentials);

double modulated_loss(double base, double f_fine, double f_coarse, double lambda_f, double lambda_c);

StepContext prepare_step(const Batch& batch, const FineKB& fine, const CoarseKB& coarse, const AskConfig& config);

/// Evaluates the ASK objective with the stop-gradient quantities taken from
/// `context`; fills `grads` when non-null.
LossBreakdown evaluate_step(const Batch& batch, const FineKB& fine, const CoarseKB& coarse, const AskConfig& config,
                            const StepContext& context, Gradients* grads = nullptr);

LossBreakdown ask_loss(const Batch& batch, const FineKB& fine, const CoarseKB& coarse, const AskConfig& config);

LossAndGradients grad_embeddings(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                 const AskConfig& config);

/// Plain symmetric NT-Xent: ntxent(V U^T) + ntxent(U V^T). This is exactly
/// what the ASK objective reduces to with rho = 1, beta = 0, lambdas = 0.
/// KB gradients are returned as zero matrices shaped like the bases.
LossAndGradients baseline_loss(const Batch& batch, const FineKB& fine, const CoarseKB& coarse, double tau);

LossAndGradients loss_and_gradients(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                    const AskConfig& config, LossVariant variant);

struct OBIReport {
    std::vector<std::int64_t> entry_ids;
    std::vector<double> per_entry_grad_norms;
    double mean = 0.0;
};

/// Mean over out-of-batch fine entries of ||dL/du_k|| + ||dL/dv_k||.
OBIReport obi_from_gradients(const Batch& batch, const FineKB& fine, const Gradients& grads);

OBIReport obi(const Batch& batch, const FineKB& fine, const CoarseKB& coarse, const AskConfig& config,
              LossVariant variant);

}  // namespace ask
