#include "ask/objective.hpp"

#include "ask/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <unordered_set>

namespace ask {

void AskConfig::validate() const {
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "K must be at least 1");
    if (!(rho >= 0.0 && rho <= 1.0)) throw Error(ErrorCode::RhoOutOfRange, fmt::format("rho = {}", rho));
    if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::BetaOutOfRange, fmt::format("beta = {}", beta));
    if (!(lambda_f >= 0.0) || !(lambda_c >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "modulation weights must be non-negative");
    }
    if (!(tau > 0.0)) throw Error(ErrorCode::NonPositiveTau, fmt::format("tau = {}", tau));
    if (!(sinkhorn.epsilon > 0.0)) throw Error(ErrorCode::NonPositiveEpsilon, fmt::format("epsilon = {}", sinkhorn.epsilon));
}

double ntxent(const SimMatrix& S, double tau) {
    if (!(tau > 0.0)) throw Error(ErrorCode::NonPositiveTau, fmt::format("tau = {}", tau));
    if (S.rows() == 0 || S.rows() != S.cols()) throw Error(ErrorCode::ShapeMismatch, "NT-Xent needs a square matrix");
    const Eigen::Index b = S.rows();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
        const Vec row = S.row(i).transpose() / tau;
        acc += log_sum_exp(row) - row[i];
    }
    return acc / static_cast<double>(b);
}

Mat ntxent_grad(const SimMatrix& S, double tau) {
    const Eigen::Index b = S.rows();
    Mat g(b, b);
    for (Eigen::Index i = 0; i < b; ++i) {
        const Vec row = S.row(i).transpose() / tau;
        Vec p = (row.array() - row.maxCoeff()).exp();
        p /= p.sum();
        p[i] -= 1.0;
        g.row(i) = p.transpose() / (static_cast<double>(b) * tau);
    }
    return g;
}

double directional_loss(const SimMatrix& s_star_fine, const SimMatrix& s_star_coarse, double tau) {
    if (s_star_fine.rows() != s_star_coarse.rows() || s_star_fine.cols() != s_star_coarse.cols()) {
        throw Error(ErrorCode::ShapeMismatch, "fine and coarse similarity shapes differ");
    }
    return ntxent(s_star_fine, tau) + ntxent(s_star_coarse, tau);
}

double reliability_term(std::span<const double> potentials) {
    if (potentials.empty()) throw Error(ErrorCode::EmptyBatch, "no potentials");
    double acc = 0.0;
    for (double psi : potentials) {
        if (!(psi > 0.0)) throw Error(ErrorCode::NonPositivePotential, fmt::format("psi = {}", psi));
        acc -= std::log(psi);
    }
    return acc / static_cast<double>(potentials.size());
}

double modulated_loss(double base, double f_fine, double f_coarse, double lambda_f, double lambda_c) {
    return (1.0 + lambda_f * f_fine + lambda_c * f_coarse) * base;
}

namespace {

// One enhanced embedding: e = normalize(rho x + (1 - rho) mean(kb[neighbors])).
struct EnhancedSlot {
    Vec e;
    double norm = 1.0;  // ||y|| before normalization
};

EnhancedSlot enhance_slot(const Vec& x, const Neighborhood& nb, const Mat& kb_rows, double rho, bool renormalize) {
    EnhancedSlot slot;
    if (rho == 1.0) {
        slot.e = x;
        return slot;
    }
    Vec kbar = Vec::Zero(x.size());
    for (std::size_t idx : nb.indices) kbar += kb_rows.row(static_cast<Eigen::Index>(idx)).transpose();
    kbar /= static_cast<double>(nb.indices.size());
    Vec y = rho * x + (1.0 - rho) * kbar;
    if (renormalize) {
        slot.norm = y.norm();
        if (!(slot.norm > kZeroNormThreshold)) throw Error(ErrorCode::ZeroNorm, "enhanced embedding vanished");
        slot.e = y / slot.norm;
    } else {
        slot.e = std::move(y);
    }
    return slot;
}

// Routes dL/de of one slot back to the original embedding and its neighbors.
void backprop_slot(const EnhancedSlot& slot, const Vec& grad_e, const Neighborhood& nb, double rho, bool renormalize,
                   Eigen::Ref<Vec> grad_x, Mat& grad_kb) {
    if (rho == 1.0) {
        grad_x += grad_e;
        return;
    }
    Vec grad_y = grad_e;
    if (renormalize) grad_y = (grad_e - slot.e * slot.e.dot(grad_e)) / slot.norm;
    grad_x += rho * grad_y;
    const double share = (1.0 - rho) / static_cast<double>(nb.indices.size());
    for (std::size_t idx : nb.indices) grad_kb.row(static_cast<Eigen::Index>(idx)) += share * grad_y.transpose();
}

SimMatrix apply_plan(const SimMatrix& S, const TransportPlan& plan, const AskConfig& config) {
    return realign(S, plan, config.beta, config.plan_scaling);
}

// Gradient of a realigned matrix with respect to the un-realigned one.
Mat pull_back_plan(const Mat& grad_star, const TransportPlan& plan, const AskConfig& config) {
    if (config.beta == 0.0) return grad_star;
    return mixing_matrix(plan, config.beta, config.plan_scaling).transpose() * grad_star;
}

void check_context(const Batch& batch, const StepContext& context) {
    const std::size_t b = batch.size();
    if (context.retrieval.size() != b || context.potentials.size() != b) {
        throw Error(ErrorCode::LengthMismatch, "step context does not match the batch");
    }
    for (const TransportPlan* p : {&context.plan_fine_t2a, &context.plan_coarse_t2a, &context.plan_fine_a2t,
                                   &context.plan_coarse_a2t}) {
        if (p->Q.rows() != static_cast<Eigen::Index>(b)) throw Error(ErrorCode::ShapeMismatch, "plan size mismatch");
    }
}

}  // namespace

StepContext prepare_step(const Batch& batch, const FineKB& fine, const CoarseKB& coarse, const AskConfig& config) {
    config.validate();
    validate_batch(batch);
    if (batch.dim() != fine.dim() || batch.dim() != coarse.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "batch and knowledge base dimensions differ");
    }
    StepContext ctx;
    ctx.retrieval = retrieve_batch(batch, fine, coarse, config.retrieval());
    ctx.potentials.reserve(batch.size());
    for (const SampleRetrieval& s : ctx.retrieval) ctx.potentials.push_back(potential_terms(s, fine, coarse));

    const std::vector<EnhancedPair> enhanced =
        enhance_batch(batch, fine, coarse, ctx.retrieval, config.rho, config.renormalize_enhanced);
    const auto b = static_cast<Eigen::Index>(batch.size());
    Mat uf(b, batch.dim()), vf(b, batch.dim()), uc(b, batch.dim()), vc(b, batch.dim());
    for (Eigen::Index i = 0; i < b; ++i) {
        const EnhancedPair& e = enhanced[static_cast<std::size_t>(i)];
        uf.row(i) = e.u_fine.transpose();
        vf.row(i) = e.v_fine.transpose();
        uc.row(i) = e.u_coarse.transpose();
        vc.row(i) = e.v_coarse.transpose();
    }
    const SimMatrix s_fine = vf * uf.transpose();
    const SimMatrix s_coarse = vc * uc.transpose();
    ctx.plan_fine_t2a = sinkhorn(s_fine, config.sinkhorn);
    ctx.plan_coarse_t2a = sinkhorn(s_coarse, config.sinkhorn);
    ctx.plan_fine_a2t = sinkhorn(s_fine.transpose(), config.sinkhorn);
    ctx.plan_coarse_a2t = sinkhorn(s_coarse.transpose(), config.sinkhorn);
    return ctx;
}

LossBreakdown evaluate_step(const Batch& batch, const FineKB& fine, const CoarseKB& coarse, const AskConfig& config,
                            const StepContext& context, Gradients* grads) {
    check_context(batch, context);
    const std::size_t b = batch.size();
    const auto bi = static_cast<Eigen::Index>(b);
    const Eigen::Index d = batch.dim();
    const double rho = config.rho;
    const bool renorm = config.renormalize_enhanced;

    // Knowledge injection, four slots per pair.
    std::vector<EnhancedSlot> uf(b), vf(b), uc(b), vc(b);
    Mat Uf(bi, d), Vf(bi, d), Uc(bi, d), Vc(bi, d);
    for (std::size_t i = 0; i < b; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const Vec u = batch.audio.row(r).transpose();
        const Vec v = batch.text.row(r).transpose();
        const SampleRetrieval& s = context.retrieval[i];
        uf[i] = enhance_slot(u, s.fine_audio, fine.audio, rho, renorm);
        vf[i] = enhance_slot(v, s.fine_text, fine.text, rho, renorm);
        uc[i] = enhance_slot(u, s.coarse_audio, coarse.audio, rho, renorm);
        vc[i] = enhance_slot(v, s.coarse_text, coarse.text, rho, renorm);
        Uf.row(r) = uf[i].e.transpose();
        Vf.row(r) = vf[i].e.transpose();
        Uc.row(r) = uc[i].e.transpose();
        Vc.row(r) = vc[i].e.transpose();
    }

    // OT-realigned similarities; text-to-audio rows are text anchors.
    const SimMatrix s_fine = Vf * Uf.transpose();
    const SimMatrix s_coarse = Vc * Uc.transpose();
    const SimMatrix star_f_t2a = apply_plan(s_fine, context.plan_fine_t2a, config);
    const SimMatrix star_c_t2a = apply_plan(s_coarse, context.plan_coarse_t2a, config);
    const SimMatrix star_f_a2t = apply_plan(s_fine.transpose(), context.plan_fine_a2t, config);
    const SimMatrix star_c_a2t = apply_plan(s_coarse.transpose(), context.plan_coarse_a2t, config);

    LossBreakdown out;
    out.tau = config.tau;
    out.lambda_f = config.lambda_f;
    out.lambda_c = config.lambda_c;
    out.l_t2a = directional_loss(star_f_t2a, star_c_t2a, config.tau);
    out.l_a2t = directional_loss(star_f_a2t, star_c_a2t, config.tau);

    // Reliability-aware potentials: audio anchors for T->A, text anchors for A->T.
    std::vector<double> psi_f_t2a(b), psi_c_t2a(b), psi_f_a2t(b), psi_c_a2t(b);
    std::vector<Vec> exp_f_t2a(b), exp_c_t2a(b), exp_f_a2t(b), exp_c_a2t(b);
    auto potential = [](const Vec& anchor, const PotentialTerm& term, Vec& exps) {
        exps = (term.partners * anchor).array().exp();
        return term.weights.dot(exps);
    };
    for (std::size_t i = 0; i < b; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const Vec u = batch.audio.row(r).transpose();
        const Vec v = batch.text.row(r).transpose();
        const SamplePotentialTerms& t = context.potentials[i];
        psi_f_t2a[i] = potential(u, t.fine_t2a, exp_f_t2a[i]);
        psi_c_t2a[i] = potential(u, t.coarse_t2a, exp_c_t2a[i]);
        psi_f_a2t[i] = potential(v, t.fine_a2t, exp_f_a2t[i]);
        psi_c_a2t[i] = potential(v, t.coarse_a2t, exp_c_a2t[i]);
    }
    out.f_f_t2a = reliability_term(psi_f_t2a);
    out.f_c_t2a = reliability_term(psi_c_t2a);
    out.f_f_a2t = reliability_term(psi_f_a2t);
    out.f_c_a2t = reliability_term(psi_c_a2t);

    out.l_star_t2a = modulated_loss(out.l_t2a, out.f_f_t2a, out.f_c_t2a, config.lambda_f, config.lambda_c);
    out.l_star_a2t = modulated_loss(out.l_a2t, out.f_f_a2t, out.f_c_a2t, config.lambda_f, config.lambda_c);
    out.total = 0.5 * (out.l_star_t2a + out.l_star_a2t);

    if (grads == nullptr) return out;

    grads->batch_audio = Mat::Zero(bi, d);
    grads->batch_text = Mat::Zero(bi, d);
    grads->fine_audio = Mat::Zero(fine.audio.rows(), d);
    grads->fine_text = Mat::Zero(fine.text.rows(), d);
    grads->coarse_audio = Mat::Zero(coarse.audio.rows(), d);
    grads->coarse_text = Mat::Zero(coarse.text.rows(), d);

    // d total / d l_x = 0.5 * (1 + lambda_f F_f + lambda_c F_c)
    const double c_t2a = 0.5 * (1.0 + config.lambda_f * out.f_f_t2a + config.lambda_c * out.f_c_t2a);
    const double c_a2t = 0.5 * (1.0 + config.lambda_f * out.f_f_a2t + config.lambda_c * out.f_c_a2t);

    const Mat g_fine = c_t2a * pull_back_plan(ntxent_grad(star_f_t2a, config.tau), context.plan_fine_t2a, config) +
                       c_a2t * pull_back_plan(ntxent_grad(star_f_a2t, config.tau), context.plan_fine_a2t, config).transpose();
    const Mat g_coarse =
        c_t2a * pull_back_plan(ntxent_grad(star_c_t2a, config.tau), context.plan_coarse_t2a, config) +
        c_a2t * pull_back_plan(ntxent_grad(star_c_a2t, config.tau), context.plan_coarse_a2t, config).transpose();

    // S = V U^T
    const Mat gVf = g_fine * Uf;
    const Mat gUf = g_fine.transpose() * Vf;
    const Mat gVc = g_coarse * Uc;
    const Mat gUc = g_coarse.transpose() * Vc;

    // Potentials: d total / d psi_i = 0.5 * lambda * l_x * (-1 / (B psi_i)).
    const double bd = static_cast<double>(b);
    const double k_f_t2a = -0.5 * config.lambda_f * out.l_t2a / bd;
    const double k_c_t2a = -0.5 * config.lambda_c * out.l_t2a / bd;
    const double k_f_a2t = -0.5 * config.lambda_f * out.l_a2t / bd;
    const double k_c_a2t = -0.5 * config.lambda_c * out.l_a2t / bd;

    for (std::size_t i = 0; i < b; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const SampleRetrieval& s = context.retrieval[i];
        Vec gu = Vec::Zero(d);
        Vec gv = Vec::Zero(d);
        backprop_slot(uf[i], gUf.row(r).transpose(), s.fine_audio, rho, renorm, gu, grads->fine_audio);
        backprop_slot(vf[i], gVf.row(r).transpose(), s.fine_text, rho, renorm, gv, grads->fine_text);
        backprop_slot(uc[i], gUc.row(r).transpose(), s.coarse_audio, rho, renorm, gu, grads->coarse_audio);
        backprop_slot(vc[i], gVc.row(r).transpose(), s.coarse_text, rho, renorm, gv, grads->coarse_text);

        const SamplePotentialTerms& t = context.potentials[i];
        auto dpsi = [](const PotentialTerm& term, const Vec& exps) -> Vec {
            return term.partners.transpose() * term.weights.cwiseProduct(exps);
        };
        gu += (k_f_t2a / psi_f_t2a[i]) * dpsi(t.fine_t2a, exp_f_t2a[i]);
        gu += (k_c_t2a / psi_c_t2a[i]) * dpsi(t.coarse_t2a, exp_c_t2a[i]);
        gv += (k_f_a2t / psi_f_a2t[i]) * dpsi(t.fine_a2t, exp_f_a2t[i]);
        gv += (k_c_a2t / psi_c_a2t[i]) * dpsi(t.coarse_a2t, exp_c_a2t[i]);

        grads->batch_audio.row(r) = gu.transpose();
        grads->batch_text.row(r) = gv.transpose();
    }
    return out;
}

LossBreakdown ask_loss(const Batch& batch, const FineKB& fine, const CoarseKB& coarse, const AskConfig& config) {
    const StepContext ctx = prepare_step(batch, fine, coarse, config);
    return evaluate_step(batch, fine, coarse, config, ctx);
}

LossAndGradients grad_embeddings(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                 const AskConfig& config) {
    const StepContext ctx = prepare_step(batch, fine, coarse, config);
    LossAndGradients out;
    out.loss = evaluate_step(batch, fine, coarse, config, ctx, &out.grads);
    return out;
}

LossAndGradients baseline_loss(const Batch& batch, const FineKB& fine, const CoarseKB& coarse, double tau) {
    validate_batch(batch);
    const SimMatrix s = batch.text * batch.audio.transpose();
    const SimMatrix st = s.transpose();
    LossAndGradients out;
    out.loss.tau = tau;
    out.loss.l_t2a = ntxent(s, tau);
    out.loss.l_a2t = ntxent(st, tau);
    out.loss.l_star_t2a = out.loss.l_t2a;
    out.loss.l_star_a2t = out.loss.l_a2t;
    out.loss.total = out.loss.l_t2a + out.loss.l_a2t;

    const Mat g = ntxent_grad(s, tau) + ntxent_grad(st, tau).transpose();
    out.grads.batch_text = g * batch.audio;
    out.grads.batch_audio = g.transpose() * batch.text;
    out.grads.fine_audio = Mat::Zero(fine.audio.rows(), fine.audio.cols());
    out.grads.fine_text = Mat::Zero(fine.text.rows(), fine.text.cols());
    out.grads.coarse_audio = Mat::Zero(coarse.audio.rows(), coarse.audio.cols());
    out.grads.coarse_text = Mat::Zero(coarse.text.rows(), coarse.text.cols());
    return out;
}

LossAndGradients loss_and_gradients(const Batch& batch, const FineKB& fine, const CoarseKB& coarse,
                                    const AskConfig& config, LossVariant variant) {
    if (variant == LossVariant::Baseline) return baseline_loss(batch, fine, coarse, config.tau);
    return grad_embeddings(batch, fine, coarse, config);
}

OBIReport obi_from_gradients(const Batch& batch, const FineKB& fine, const Gradients& grads) {
    const std::unordered_set<std::int64_t> in_batch(batch.ids.begin(), batch.ids.end());
    OBIReport report;
    double acc = 0.0;
    for (std::size_t j = 0; j < fine.size(); ++j) {
        if (in_batch.contains(fine.ids[j])) continue;
        const auto r = static_cast<Eigen::Index>(j);
        const double norm = grads.fine_audio.row(r).norm() + grads.fine_text.row(r).norm();
        report.entry_ids.push_back(fine.ids[j]);
        report.per_entry_grad_norms.push_back(norm);
        acc += norm;
    }
    if (report.entry_ids.empty()) throw Error(ErrorCode::EmptyOutOfBatchSet, "every KB entry is in the batch");
    report.mean = acc / static_cast<double>(report.entry_ids.size());
    return report;
}

OBIReport obi(const Batch& batch, const FineKB& fine, const CoarseKB& coarse, const AskConfig& config,
              LossVariant variant) {
    const LossAndGradients lg = loss_and_gradients(batch, fine, coarse, config, variant);
    return obi_from_gradients(batch, fine, lg.grads);
}

}  // namespace ask
