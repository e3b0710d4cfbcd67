#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emo/numerics.hpp"
#include "emo/transport.hpp"

namespace emo {

// ---------------------------------------------------------------------------
// Frozen, row-normalized token embeddings. Carrying the unit-norm guarantee in
// the type lets the per-token loss skip revalidation on the hot path.
// ---------------------------------------------------------------------------

class UnitEmbeddings {
public:
    explicit UnitEmbeddings(Matrix rows) : rows_(std::move(rows)) {
        for (int i = 0; i < rows_.rows(); ++i) {
            const double norm = std::sqrt(dot(rows_.row(i), rows_.row(i)));
            if (std::abs(norm - 1.0) > 1e-9) {
                throw InvalidInput("UnitEmbeddings: row " + std::to_string(i) + " has norm " +
                                   std::to_string(norm) + ", expected 1");
            }
        }
    }

    /// Rescales each row to unit norm; rejects rows with vanishing norm.
    static UnitEmbeddings normalize(const Matrix& raw) {
        Matrix scaled = raw;
        for (int i = 0; i < scaled.rows(); ++i) {
            double sq = 0.0;
            for (int k = 0; k < scaled.cols(); ++k) sq += scaled(i, k) * scaled(i, k);
            const double norm = std::sqrt(sq);
            if (!(norm > 1e-12)) {
                throw InvalidInput("UnitEmbeddings::normalize: row " + std::to_string(i) +
                                   " has norm " + std::to_string(norm) + " (degenerate)");
            }
            for (int k = 0; k < scaled.cols(); ++k) scaled(i, k) /= norm;
        }
        return UnitEmbeddings(std::move(scaled));
    }

    int vocab() const { return rows_.rows(); }
    int dim() const { return rows_.cols(); }
    std::span<const double> row(int i) const { return rows_.row(i); }
    const Matrix& matrix() const { return rows_; }

    CostMatrix cost_matrix() const { return CostMatrix::from_embeddings(rows_); }

private:
    Matrix rows_;
};

// ---------------------------------------------------------------------------
// Per-token objectives. Every loss is a function of softmax(z) and therefore
// shift-invariant in the logits; each returns its analytic logit gradient.
// ---------------------------------------------------------------------------

struct LossOutput {
    double value = 0.0;
    std::vector<double> grad_logits;
};

namespace detail {

inline void check_target(std::span<const double> z, int target, const char* op) {
    if (target < 0 || static_cast<size_t>(target) >= z.size()) {
        throw InvalidInput(std::string(op) + ": target " + std::to_string(target) +
                           " out of range [0, " + std::to_string(z.size()) + ")");
    }
}

inline void check_gamma(double gamma, const char* op) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
        throw InvalidInput(std::string(op) + ": gamma " + std::to_string(gamma) +
                           " outside [0, 1]");
    }
}

// Chain rule through softmax for a loss that depends on z only through
// q = softmax(z)[target]:  dq/dz_k = q (delta_kt - Q_k).
inline std::vector<double> grad_through_target_prob(const Distribution& q_dist, int target,
                                                    double dloss_dq) {
    const double q = q_dist[target];
    std::vector<double> grad(q_dist.size());
    for (int k = 0; k < q_dist.size(); ++k) {
        const double indicator = (k == target) ? 1.0 : 0.0;
        grad[k] = dloss_dq * q * (indicator - q_dist[k]);
    }
    return grad;
}

}  // namespace detail

/// Forward cross-entropy against the one-hot target.
/// Gradient w.r.t. logits is exactly softmax(z) - one_hot(target).
inline LossOutput mle_loss(std::span<const double> z, int target) {
    detail::check_target(z, target, "mle_loss");
    const std::vector<double> logq = log_softmax(z);
    LossOutput out;
    out.value = -logq[target];
    out.grad_logits.resize(z.size());
    for (size_t k = 0; k < z.size(); ++k) {
        out.grad_logits[k] = std::exp(logq[k]) - (static_cast<int>(k) == target ? 1.0 : 0.0);
    }
    return out;
}

/// Total-variation-motivated reweighting of cross-entropy:
///     L = -(q / (gamma + (1-gamma) q)) log q,   q = softmax(z)[target].
/// gamma = 0 reduces to plain cross-entropy.
inline LossOutput tailr_loss(std::span<const double> z, int target, double gamma) {
    detail::check_target(z, target, "tailr_loss");
    detail::check_gamma(gamma, "tailr_loss");
    const Distribution q_dist = softmax(z);
    const double q = q_dist[target];
    const double logq = log_softmax(z)[target];
    const double denom = gamma + (1.0 - gamma) * q;
    LossOutput out;
    out.value = -(q / denom) * logq;
    // d/dq of -(q/denom) log q, with d(q/denom)/dq = gamma / denom^2.
    const double dloss_dq = -(gamma / (denom * denom)) * logq - 1.0 / denom;
    out.grad_logits = detail::grad_through_target_prob(q_dist, target, dloss_dq);
    return out;
}

/// Forward/reverse cross-entropy mixture:
///     L = -(gamma + (1-gamma) q) log q,   q = softmax(z)[target].
/// gamma = 1 reduces to plain cross-entropy.
inline LossOutput mixce_loss(std::span<const double> z, int target, double gamma) {
    detail::check_target(z, target, "mixce_loss");
    detail::check_gamma(gamma, "mixce_loss");
    const Distribution q_dist = softmax(z);
    const double q = q_dist[target];
    const double logq = log_softmax(z)[target];
    const double coef = gamma + (1.0 - gamma) * q;
    LossOutput out;
    out.value = -coef * logq;
    const double dloss_dq = -(1.0 - gamma) * logq - coef / q;
    out.grad_logits = detail::grad_through_target_prob(q_dist, target, dloss_dq);
    return out;
}

/// Surrogate transport cost of moving softmax(z) onto the one-hot target:
///     value = sum_k Q(k) C(k, target) = 1 - <E_hat Q, e_hat_target>,
/// evaluated through the d-dimensional contraction so the |V| x |V| cost
/// matrix is never materialized. The logit gradient has the closed form
///     grad_k = Q(k) (C(k, target) - value).
inline LossOutput demd_loss(std::span<const double> z, int target, const UnitEmbeddings& e_hat) {
    detail::check_target(z, target, "demd_loss");
    if (e_hat.vocab() != static_cast<int>(z.size())) {
        throw DimensionError("demd_loss: embeddings cover " + std::to_string(e_hat.vocab()) +
                             " tokens but got " + std::to_string(z.size()) + " logits");
    }
    const Distribution q = softmax(z);
    const std::span<const double> target_row = e_hat.row(target);
    const int n = q.size();
    std::vector<double> cost_to_target(n);
    for (int k = 0; k < n; ++k) {
        const double cos = std::clamp(dot(e_hat.row(k), target_row), -1.0, 1.0);
        cost_to_target[k] = 1.0 - cos;
    }
    LossOutput out;
    out.value = 0.0;
    for (int k = 0; k < n; ++k) out.value += q[k] * cost_to_target[k];
    out.grad_logits.resize(n);
    for (int k = 0; k < n; ++k) out.grad_logits[k] = q[k] * (cost_to_target[k] - out.value);
    return out;
}

/// Generalized surrogate bound for a dense target distribution:
///     value = sum_i |Q(i) - P(i)| (C P)_i  >=  |Q^T C P - P^T C P|.
inline double demd_general_loss(const Distribution& q, const Distribution& p,
                                const CostMatrix& c) {
    if (q.size() != p.size()) {
        throw DimensionError("demd_general_loss: distributions have lengths " +
                             std::to_string(q.size()) + " and " + std::to_string(p.size()));
    }
    if (c.size() != q.size()) {
        throw DimensionError("demd_general_loss: cost matrix size mismatch");
    }
    const int n = q.size();
    double value = 0.0;
    for (int i = 0; i < n; ++i) {
        double cp = 0.0;
        for (int j = 0; j < n; ++j) cp += c(i, j) * p[j];
        value += std::abs(q[i] - p[i]) * cp;
    }
    return value;
}

// Below this the transport term is dropped: the model already concentrates on
// the target and the ratio value/value would divide by ~0.
inline constexpr double kDemdDegenerateFloor = 1e-12;

/// Dynamically weighted combination of cross-entropy and the transport bound:
///     L = 0.5 (L_mle + (L_mle / L_demd) L_demd)
/// with the ratio treated as a constant during differentiation. The reported
/// value collapses to L_mle identically; the gradient is the blended one.
/// When L_demd <= 1e-12 the transport term and its gradient are dropped.
inline LossOutput emo_loss(std::span<const double> z, int target, const UnitEmbeddings& e_hat) {
    LossOutput mle = mle_loss(z, target);
    LossOutput demd = demd_loss(z, target, e_hat);
    LossOutput out;
    out.value = mle.value;
    out.grad_logits.resize(z.size());
    if (demd.value > kDemdDegenerateFloor) {
        const double ratio = mle.value / demd.value;
        for (size_t k = 0; k < z.size(); ++k) {
            out.grad_logits[k] = 0.5 * (mle.grad_logits[k] + ratio * demd.grad_logits[k]);
        }
    } else {
        for (size_t k = 0; k < z.size(); ++k) out.grad_logits[k] = 0.5 * mle.grad_logits[k];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Objective selection.
// ---------------------------------------------------------------------------

enum class Objective { kMle, kTailr, kMixce, kDemd, kEmo };

inline const char* objective_name(Objective o) {
    switch (o) {
        case Objective::kMle: return "MLE";
        case Objective::kTailr: return "TaiLr";
        case Objective::kMixce: return "MixCE";
        case Objective::kDemd: return "DEMD";
        case Objective::kEmo: return "EMO";
    }
    throw InternalError("objective_name: unknown objective");
}

inline Objective objective_from_string(const std::string& name) {
    if (name == "MLE") return Objective::kMle;
    if (name == "TaiLr") return Objective::kTailr;
    if (name == "MixCE") return Objective::kMixce;
    if (name == "DEMD") return Objective::kDemd;
    if (name == "EMO") return Objective::kEmo;
    throw InvalidInput("unknown objective '" + name +
                       "' (expected MLE, TaiLr, MixCE, DEMD, or EMO)");
}

struct LossConfig {
    Objective objective = Objective::kMle;
    std::optional<double> mixing_gamma;                    // TaiLr / MixCE only
    std::shared_ptr<const UnitEmbeddings> cost_embeddings; // DEMD / EMO only

    void validate() const {
        const bool wants_gamma =
            objective == Objective::kTailr || objective == Objective::kMixce;
        if (wants_gamma != mixing_gamma.has_value()) {
            throw InvalidInput(std::string("LossConfig: mixing_gamma must be present exactly for "
                                           "TaiLr/MixCE; objective is ") +
                               objective_name(objective));
        }
        if (mixing_gamma) detail::check_gamma(*mixing_gamma, "LossConfig");
        const bool wants_cost = objective == Objective::kDemd || objective == Objective::kEmo;
        if (wants_cost != (cost_embeddings != nullptr)) {
            throw InvalidInput(std::string("LossConfig: cost_embeddings must be present exactly "
                                           "for DEMD/EMO; objective is ") +
                               objective_name(objective));
        }
    }
};

inline LossOutput token_loss(std::span<const double> z, int target, const LossConfig& cfg) {
    switch (cfg.objective) {
        case Objective::kMle: return mle_loss(z, target);
        case Objective::kTailr: return tailr_loss(z, target, *cfg.mixing_gamma);
        case Objective::kMixce: return mixce_loss(z, target, *cfg.mixing_gamma);
        case Objective::kDemd: return demd_loss(z, target, *cfg.cost_embeddings);
        case Objective::kEmo: return emo_loss(z, target, *cfg.cost_embeddings);
    }
    throw InternalError("token_loss: unknown objective");
}

// ---------------------------------------------------------------------------
// Sequence-level aggregation over per-step logits.
// ---------------------------------------------------------------------------

struct SequenceLoss {
    double value = 0.0;
    std::vector<std::vector<double>> grad_logits;  // one vector per step; empty for masked steps
    int token_count = 0;
};

/// Mean per-token loss over the unmasked steps (target < 0 marks a masked,
/// padded position). Per-step logit gradients are scaled by 1/token_count so
/// they already accumulate toward the mean.
inline SequenceLoss sequence_loss(const std::vector<std::vector<double>>& step_logits,
                                  const std::vector<int>& targets, const LossConfig& cfg) {
    cfg.validate();
    if (step_logits.size() != targets.size()) {
        throw DimensionError("sequence_loss: " + std::to_string(step_logits.size()) +
                             " logit vectors vs " + std::to_string(targets.size()) + " targets");
    }
    if (step_logits.empty()) throw InvalidInput("sequence_loss: empty sequence");
    int count = 0;
    for (int t : targets) {
        if (t >= 0) ++count;
    }
    if (count == 0) throw InvalidInput("sequence_loss: all positions masked");

    SequenceLoss out;
    out.token_count = count;
    out.grad_logits.resize(step_logits.size());
    const double inv = 1.0 / count;
    for (size_t s = 0; s < step_logits.size(); ++s) {
        if (targets[s] < 0) continue;
        LossOutput step = token_loss(step_logits[s], targets[s], cfg);
        out.value += step.value * inv;
        for (double& g : step.grad_logits) g *= inv;
        out.grad_logits[s] = std::move(step.grad_logits);
    }
    return out;
}

}  // namespace emo
