#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "emo/losses.hpp"
#include "emo/numerics.hpp"
#include "emo/rng.hpp"

namespace emo {

/// Raised when an optimizer step produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Vocabulary {
    int size = 0;
    int pad_id = 0;
    int bos_id = 1;

    void validate() const {
        if (size < 3) {
            throw InvalidInput("Vocabulary: size " + std::to_string(size) +
                               " too small (need pad, bos, and at least one content token)");
        }
        if (pad_id < 0 || pad_id >= size || bos_id < 0 || bos_id >= size) {
            throw InvalidInput("Vocabulary: pad/bos ids out of range");
        }
        if (pad_id == bos_id) throw InvalidInput("Vocabulary: pad and bos must differ");
    }
};

// ---------------------------------------------------------------------------
// Fixed-window feed-forward language model.
//
// The last `window` tokens (bos-padded on the left at the sequence start) are
// embedded and concatenated, pushed through one tanh layer, projected back to
// the embedding dimension, and scored against a separate output table:
//
//     e  = [embed[c_1]; ...; embed[c_n]]          (n*d)
//     h1 = tanh(W1 e + b1)                        (hidden)
//     h  = W2 h1 + b2                             (d)
//     z  = Head h                                 (|V|)
//
// All parameters live in one flat vector so finite-difference checks and the
// optimizer can treat the model as a single point in R^P.
// ---------------------------------------------------------------------------

class ToyLm {
public:
    struct Config {
        Vocabulary vocab;
        int embed_dim = 16;
        int window = 4;
        int hidden_dim = 64;

        void validate() const {
            vocab.validate();
            if (embed_dim < 1 || window < 1 || hidden_dim < 1) {
                throw InvalidInput("ToyLm::Config: dimensions must be positive");
            }
        }
    };

    ToyLm(Config cfg, uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        const int v = cfg_.vocab.size, d = cfg_.embed_dim, n = cfg_.window, h = cfg_.hidden_dim;
        off_embed_ = 0;
        off_w1_ = off_embed_ + v * d;
        off_b1_ = off_w1_ + h * n * d;
        off_w2_ = off_b1_ + h;
        off_b2_ = off_w2_ + d * h;
        off_head_ = off_b2_ + d;
        params_.assign(off_head_ + v * d, 0.0);

        // Classic fan-in scaling keeps the tanh layer out of saturation at
        // init; biases start at zero.
        Rng rng(init_seed);
        for (int i = 0; i < v * d; ++i) params_[off_embed_ + i] = 0.1 * rng.normal();
        const double s1 = 1.0 / std::sqrt(static_cast<double>(n * d));
        for (int i = 0; i < h * n * d; ++i) params_[off_w1_ + i] = s1 * rng.normal();
        const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
        for (int i = 0; i < d * h; ++i) params_[off_w2_ + i] = s2 * rng.normal();
        const double sh = 1.0 / std::sqrt(static_cast<double>(d));
        for (int i = 0; i < v * d; ++i) params_[off_head_ + i] = sh * rng.normal();
    }

    const Config& config() const { return cfg_; }
    int vocab_size() const { return cfg_.vocab.size; }
    int param_count() const { return static_cast<int>(params_.size()); }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    /// Copy of the output table (|V| x d); its normalized rows define the
    /// transport cost geometry frozen for DEMD/EMO training.
    Matrix head_matrix() const {
        const int v = cfg_.vocab.size, d = cfg_.embed_dim;
        Matrix m(v, d);
        for (int i = 0; i < v; ++i) {
            for (int k = 0; k < d; ++k) m(i, k) = params_[off_head_ + i * d + k];
        }
        return m;
    }

    // -- single-step forward / backward -------------------------------------

    struct StepTrace {
        std::vector<int> context;
        std::vector<double> concat;      // n*d embedded window
        std::vector<double> hidden_act;  // tanh(W1 e + b1)
        std::vector<double> proj;        // W2 h1 + b2
        std::vector<double> logits;
    };

    void forward_step_into(std::span<const int> context, StepTrace& t) const {
        const int v = cfg_.vocab.size, d = cfg_.embed_dim, n = cfg_.window, hd = cfg_.hidden_dim;
        if (static_cast<int>(context.size()) != n) {
            throw DimensionError("ToyLm: context has " + std::to_string(context.size()) +
                                 " tokens, window is " + std::to_string(n));
        }
        t.context.assign(context.begin(), context.end());
        t.concat.resize(n * d);
        for (int s = 0; s < n; ++s) {
            const int tok = context[s];
            if (tok < 0 || tok >= v) {
                throw InvalidInput("ToyLm: token id " + std::to_string(tok) +
                                   " out of range [0, " + std::to_string(v) + ")");
            }
            const double* src = params_.data() + off_embed_ + tok * d;
            std::copy(src, src + d, t.concat.data() + s * d);
        }
        t.hidden_act.resize(hd);
        const double* w1 = params_.data() + off_w1_;
        for (int r = 0; r < hd; ++r) {
            double acc = params_[off_b1_ + r];
            const double* row = w1 + r * n * d;
            for (int k = 0; k < n * d; ++k) acc += row[k] * t.concat[k];
            t.hidden_act[r] = std::tanh(acc);
        }
        t.proj.resize(d);
        const double* w2 = params_.data() + off_w2_;
        for (int r = 0; r < d; ++r) {
            double acc = params_[off_b2_ + r];
            const double* row = w2 + r * hd;
            for (int k = 0; k < hd; ++k) acc += row[k] * t.hidden_act[k];
            t.proj[r] = acc;
        }
        t.logits.resize(v);
        const double* head = params_.data() + off_head_;
        for (int r = 0; r < v; ++r) {
            double acc = 0.0;
            const double* row = head + r * d;
            for (int k = 0; k < d; ++k) acc += row[k] * t.proj[k];
            t.logits[r] = acc;
        }
    }

    StepTrace forward_step(std::span<const int> context) const {
        StepTrace t;
        forward_step_into(context, t);
        return t;
    }

    /// Accumulates d(loss)/d(params) into `grad_params` given the upstream
    /// logit gradient for one traced step.
    void backward_step(const StepTrace& t, std::span<const double> grad_logits,
                       std::span<double> grad_params) const {
        const int v = cfg_.vocab.size, d = cfg_.embed_dim, n = cfg_.window, hd = cfg_.hidden_dim;
        if (static_cast<int>(grad_logits.size()) != v ||
            static_cast<int>(grad_params.size()) != param_count()) {
            throw DimensionError("ToyLm::backward_step: gradient buffer size mismatch");
        }
        // Head: z = Head h.
        std::vector<double> g_proj(d, 0.0);
        const double* head = params_.data() + off_head_;
        double* g_head = grad_params.data() + off_head_;
        for (int r = 0; r < v; ++r) {
            const double gz = grad_logits[r];
            if (gz == 0.0) continue;
            const double* row = head + r * d;
            double* grow = g_head + r * d;
            for (int k = 0; k < d; ++k) {
                grow[k] += gz * t.proj[k];
                g_proj[k] += gz * row[k];
            }
        }
        // Projection: h = W2 h1 + b2.
        std::vector<double> g_h1(hd, 0.0);
        const double* w2 = params_.data() + off_w2_;
        double* g_w2 = grad_params.data() + off_w2_;
        double* g_b2 = grad_params.data() + off_b2_;
        for (int r = 0; r < d; ++r) {
            const double g = g_proj[r];
            g_b2[r] += g;
            const double* row = w2 + r * hd;
            double* grow = g_w2 + r * hd;
            for (int k = 0; k < hd; ++k) {
                grow[k] += g * t.hidden_act[k];
                g_h1[k] += g * row[k];
            }
        }
        // Hidden: h1 = tanh(a1), da1 = (1 - h1^2) dh1.
        std::vector<double> g_concat(n * d, 0.0);
        const double* w1 = params_.data() + off_w1_;
        double* g_w1 = grad_params.data() + off_w1_;
        double* g_b1 = grad_params.data() + off_b1_;
        for (int r = 0; r < hd; ++r) {
            const double ga = g_h1[r] * (1.0 - t.hidden_act[r] * t.hidden_act[r]);
            if (ga == 0.0) continue;
            g_b1[r] += ga;
            const double* row = w1 + r * n * d;
            double* grow = g_w1 + r * n * d;
            for (int k = 0; k < n * d; ++k) {
                grow[k] += ga * t.concat[k];
                g_concat[k] += ga * row[k];
            }
        }
        // Embedding lookup.
        double* g_embed = grad_params.data() + off_embed_;
        for (int s = 0; s < n; ++s) {
            double* grow = g_embed + t.context[s] * d;
            const double* src = g_concat.data() + s * d;
            for (int k = 0; k < d; ++k) grow[k] += src[k];
        }
    }

    // -- sequence-level helpers ---------------------------------------------
    //
    // A sequence is a plain vector of content token ids; the implicit bos
    // prefix used for the first predictions is supplied here, never stored.

    /// Fills `out` (size = window) with the context for predicting seq[pos].
    void context_into(std::span<const int> seq, int pos, std::span<int> out) const {
        const int n = cfg_.window;
        if (static_cast<int>(out.size()) != n) {
            throw DimensionError("ToyLm::context_into: output span size mismatch");
        }
        for (int s = 0; s < n; ++s) {
            const int idx = pos - n + s;
            out[s] = (idx >= 0) ? seq[idx] : cfg_.vocab.bos_id;
        }
    }

    /// Next-token distribution Q(. | seq[0..pos)) — softmax of the logits at
    /// position `pos` (which may equal seq.size() to extend the sequence).
    Distribution next_token_distribution(std::span<const int> seq, int pos) const {
        if (pos < 0 || pos > static_cast<int>(seq.size())) {
            throw InvalidInput("ToyLm::next_token_distribution: position out of range");
        }
        std::vector<int> ctx(cfg_.window);
        context_into(seq, pos, ctx);
        StepTrace t;
        forward_step_into(ctx, t);
        return softmax(t.logits);
    }

    /// Sum over positions of log softmax(z)[token]; natural log.
    double sequence_log_prob(std::span<const int> seq) const {
        if (seq.empty()) throw InvalidInput("ToyLm::sequence_log_prob: empty sequence");
        std::vector<int> ctx(cfg_.window);
        StepTrace t;
        double total = 0.0;
        for (int pos = 0; pos < static_cast<int>(seq.size()); ++pos) {
            context_into(seq, pos, ctx);
            forward_step_into(ctx, t);
            total += log_softmax(t.logits)[seq[pos]];
        }
        return total;
    }

    /// exp(mean per-token negative log likelihood) over the corpus.
    double perplexity(const std::vector<std::vector<int>>& corpus) const {
        double nll = 0.0;
        long tokens = 0;
        for (const auto& seq : corpus) {
            nll -= sequence_log_prob(seq);
            tokens += static_cast<long>(seq.size());
        }
        if (tokens == 0) throw InvalidInput("ToyLm::perplexity: empty corpus");
        return std::exp(nll / static_cast<double>(tokens));
    }

    /// Extends `prefix` by ancestral sampling until the sequence holds
    /// `total_length` tokens.
    std::vector<int> ancestral_sample(std::span<const int> prefix, int total_length,
                                      Rng& rng) const {
        if (total_length < static_cast<int>(prefix.size())) {
            throw InvalidInput("ToyLm::ancestral_sample: total_length " +
                               std::to_string(total_length) + " shorter than prefix (" +
                               std::to_string(prefix.size()) + ")");
        }
        std::vector<int> seq(prefix.begin(), prefix.end());
        std::vector<int> ctx(cfg_.window);
        StepTrace t;
        while (static_cast<int>(seq.size()) < total_length) {
            context_into(seq, static_cast<int>(seq.size()), ctx);
            forward_step_into(ctx, t);
            const Distribution q = softmax(t.logits);
            seq.push_back(rng.categorical(q.span()));
        }
        return seq;
    }

private:
    Config cfg_;
    std::vector<double> params_;
    int off_embed_ = 0, off_w1_ = 0, off_b1_ = 0, off_w2_ = 0, off_b2_ = 0, off_head_ = 0;
};

// ---------------------------------------------------------------------------
// Mini-batch SGD with best-epoch selection on validation loss.
// ---------------------------------------------------------------------------

struct TrainOptions {
    int epochs = 3;
    int batch_size = 32;
    double learning_rate = 0.1;
    double momentum = 0.0;
    uint64_t shuffle_seed = 0;

    void validate() const {
        if (epochs < 1 || batch_size < 1) {
            throw InvalidInput("TrainOptions: epochs and batch_size must be positive");
        }
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
            throw InvalidInput("TrainOptions: learning_rate must be nonnegative and finite");
        }
        if (!(momentum >= 0.0 && momentum < 1.0)) {
            throw InvalidInput("TrainOptions: momentum must lie in [0, 1)");
        }
    }
};

struct EpochStats {
    int epoch = 0;           // 1-based
    double train_loss = 0;   // mean per-token objective value over the epoch
    double valid_loss = 0;   // mean per-token objective value on the validation set

    bool operator==(const EpochStats&) const = default;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = 0;  // 1-based epoch whose weights the model now holds
    double best_valid_loss = 0.0;
};

/// Mean per-token negative log likelihood of a corpus (natural log).
inline double corpus_nll(const ToyLm& model, const std::vector<std::vector<int>>& corpus) {
    double nll = 0.0;
    long tokens = 0;
    for (const auto& seq : corpus) {
        nll -= model.sequence_log_prob(seq);
        tokens += static_cast<long>(seq.size());
    }
    if (tokens == 0) throw InvalidInput("corpus_nll: empty corpus");
    return nll / static_cast<double>(tokens);
}

/// Mean per-token objective value of a corpus under a fixed loss config.
inline double corpus_objective_loss(const ToyLm& model,
                                    const std::vector<std::vector<int>>& corpus,
                                    const LossConfig& loss) {
    loss.validate();
    double total = 0.0;
    long tokens = 0;
    std::vector<int> ctx(model.config().window);
    ToyLm::StepTrace trace;
    for (const auto& seq : corpus) {
        for (int pos = 0; pos < static_cast<int>(seq.size()); ++pos) {
            model.context_into(seq, pos, ctx);
            model.forward_step_into(ctx, trace);
            total += token_loss(trace.logits, seq[pos], loss).value;
        }
        tokens += static_cast<long>(seq.size());
    }
    if (tokens == 0) throw InvalidInput("corpus_objective_loss: empty corpus");
    return total / static_cast<double>(tokens);
}

/// Trains in place. Sequences are shuffled each epoch; each optimizer step
/// averages the objective's logit gradients over every token of a mini-batch
/// of sequences. After the last epoch the parameters are rolled back to the
/// epoch whose validation loss (measured under the training objective) was
/// lowest.
inline TrainResult train(ToyLm& model, const std::vector<std::vector<int>>& train_set,
                         const std::vector<std::vector<int>>& valid_set, const LossConfig& loss,
                         const TrainOptions& opts) {
    opts.validate();
    loss.validate();
    if (train_set.empty() || valid_set.empty()) {
        throw InvalidInput("train: training and validation sets must be non-empty");
    }
    // Validate token ranges up front so the only failures left inside the hot
    // loop are genuine numerical divergences.
    const int vocab = model.vocab_size();
    for (const auto* corpus : {&train_set, &valid_set}) {
        for (const auto& seq : *corpus) {
            if (seq.empty()) throw InvalidInput("train: empty sequence in corpus");
            for (int tok : seq) {
                if (tok < 0 || tok >= vocab) {
                    throw InvalidInput("train: token id " + std::to_string(tok) +
                                       " out of range [0, " + std::to_string(vocab) + ")");
                }
            }
        }
    }

    const int n_seq = static_cast<int>(train_set.size());
    std::vector<int> order(n_seq);
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> grad(model.param_count());
    std::vector<double> velocity(model.param_count(), 0.0);
    std::vector<int> ctx(model.config().window);
    ToyLm::StepTrace trace;

    TrainResult result;
    std::vector<double> best_params;
    result.best_valid_loss = std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(opts.shuffle_seed, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        long epoch_tokens = 0;
        for (int start = 0, batch_index = 0; start < n_seq;
             start += opts.batch_size, ++batch_index) {
            const int end = std::min(start + opts.batch_size, n_seq);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            long batch_tokens = 0;
            for (int s = start; s < end; ++s) {
                const std::vector<int>& seq = train_set[order[s]];
                batch_tokens += static_cast<long>(seq.size());
            }
            const double inv = 1.0 / static_cast<double>(batch_tokens);
            try {
                for (int s = start; s < end; ++s) {
                    const std::vector<int>& seq = train_set[order[s]];
                    for (int pos = 0; pos < static_cast<int>(seq.size()); ++pos) {
                        model.context_into(seq, pos, ctx);
                        model.forward_step_into(ctx, trace);
                        LossOutput step = token_loss(trace.logits, seq[pos], loss);
                        batch_loss += step.value;
                        for (double& g : step.grad_logits) g *= inv;
                        model.backward_step(trace, step.grad_logits, grad);
                    }
                }
            } catch (const InvalidInput& e) {
                // Exploding parameters surface as non-finite logits inside the
                // forward pass; report them as the divergence they are.
                throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(batch_index) + ": " +
                                       e.what());
            }
            batch_loss *= inv;
            if (!std::isfinite(batch_loss)) {
                throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(batch_index) +
                                       ": non-finite loss");
            }
            std::span<double> params = model.params();
            if (opts.momentum > 0.0) {
                for (int i = 0; i < model.param_count(); ++i) {
                    velocity[i] = opts.momentum * velocity[i] - opts.learning_rate * grad[i];
                    params[i] += velocity[i];
                }
            } else {
                for (int i = 0; i < model.param_count(); ++i) {
                    params[i] -= opts.learning_rate * grad[i];
                }
            }
            epoch_loss += batch_loss * static_cast<double>(batch_tokens);
            epoch_tokens += batch_tokens;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss / static_cast<double>(epoch_tokens);
        try {
            stats.valid_loss = corpus_objective_loss(model, valid_set, loss);
        } catch (const InvalidInput& e) {
            // Parameters that exploded on the last batch of an epoch only
            // surface here; still a divergence, not a caller error.
            throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                                   ", validation pass: " + e.what());
        }
        if (!std::isfinite(stats.valid_loss)) {
            throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                                   ", validation pass: non-finite validation loss");
        }
        result.history.push_back(stats);
        if (stats.valid_loss < result.best_valid_loss) {
            result.best_valid_loss = stats.valid_loss;
            result.best_epoch = epoch;
            best_params.assign(model.params().begin(), model.params().end());
        }
    }

    std::copy(best_params.begin(), best_params.end(), model.params().begin());
    return result;
}

}  // namespace emo
