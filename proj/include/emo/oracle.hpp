#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "emo/lm.hpp"
#include "emo/numerics.hpp"
#include "emo/rng.hpp"

namespace emo {

// ---------------------------------------------------------------------------
// k-th-order Markov generator with a fully known distribution. Because every
// conditional row is stored explicitly, sequence probabilities, next-token
// distributions, and entropy estimates are exact — this is the "oracle" the
// experiment scores students against.
//
// Contexts are the last k tokens, bos-padded at the start of a sequence; a
// context is indexed as a base-|V| number (most recent token in the lowest
// digit). The initial context is itself a distribution over context indices
// (a point mass on the all-bos context by default), and sequence
// probabilities marginalize over it in closed form.
// ---------------------------------------------------------------------------

class OracleModel {
public:
    OracleModel(Vocabulary vocab, int order, Matrix table, Distribution initial_context)
        : vocab_(vocab), order_(order), table_(std::move(table)),
          initial_context_(std::move(initial_context)) {
        vocab_.validate();
        if (order_ < 1) throw InvalidInput("OracleModel: order must be >= 1");
        const long contexts = context_count(vocab_.size, order_);
        if (table_.rows() != contexts || table_.cols() != vocab_.size) {
            throw DimensionError("OracleModel: table is " + std::to_string(table_.rows()) + "x" +
                                 std::to_string(table_.cols()) + ", expected " +
                                 std::to_string(contexts) + "x" + std::to_string(vocab_.size));
        }
        if (initial_context_.size() != contexts) {
            throw DimensionError("OracleModel: initial context distribution covers " +
                                 std::to_string(initial_context_.size()) + " contexts, expected " +
                                 std::to_string(contexts));
        }
        for (int r = 0; r < table_.rows(); ++r) {
            Distribution::validate_row(table_.row(r));  // throws with row content diagnostics
        }
        // Cache the support of the initial-context distribution; scoring
        // marginalizes over exactly these entries.
        for (int c = 0; c < initial_context_.size(); ++c) {
            if (initial_context_[c] > 0.0) initial_support_.push_back(c);
        }
        if (initial_support_.empty()) {
            throw InvalidInput("OracleModel: initial context distribution has empty support");
        }
        modulus_ = 1;
        for (int i = 0; i < order_ - 1; ++i) modulus_ *= vocab_.size;
    }

    static long context_count(int vocab_size, int order) {
        long count = 1;
        for (int i = 0; i < order; ++i) {
            count *= vocab_size;
            if (count > 10'000'000) {
                throw InvalidInput("OracleModel: |V|^order exceeds the 1e7 context budget");
            }
        }
        return count;
    }

    /// Index of a length-k context window (ctx[k-1] is the most recent token).
    long context_index(std::span<const int> ctx) const {
        if (static_cast<int>(ctx.size()) != order_) {
            throw DimensionError("OracleModel::context_index: context length mismatch");
        }
        long idx = 0;
        for (int tok : ctx) {
            check_token(tok);
            idx = idx * vocab_.size + tok;
        }
        return idx;
    }

    const Vocabulary& vocab() const { return vocab_; }
    int vocab_size() const { return vocab_.size; }
    int order() const { return order_; }
    const Matrix& table() const { return table_; }
    const Distribution& initial_context() const { return initial_context_; }

    long bos_context_index() const {
        std::vector<int> ctx(order_, vocab_.bos_id);
        return context_index(ctx);
    }

    // -- exact probabilities --------------------------------------------------

    /// log P(x_0 .. x_{t_end-1}), marginalized over the initial context.
    double joint_log_prob_up_to(std::span<const int> seq, int t_end) const {
        if (t_end < 0 || t_end > static_cast<int>(seq.size())) {
            throw InvalidInput("OracleModel: scoring range out of bounds");
        }
        for (int t = 0; t < t_end; ++t) check_token(seq[t]);
        if (t_end == 0) return 0.0;
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> terms;
        terms.reserve(initial_support_.size());
        for (long c0 : initial_support_) {
            double lp = std::log(initial_context_[static_cast<int>(c0)]);
            long ctx = c0;
            for (int t = 0; t < t_end; ++t) {
                const double p = table_(static_cast<int>(ctx), seq[t]);
                lp += (p > 0.0) ? std::log(p) : -std::numeric_limits<double>::infinity();
                ctx = advance_context(ctx, seq[t]);
                if (lp == -std::numeric_limits<double>::infinity()) break;
            }
            terms.push_back(lp);
            best = std::max(best, lp);
        }
        if (best == -std::numeric_limits<double>::infinity()) return best;
        double acc = 0.0;
        for (double lp : terms) acc += std::exp(lp - best);
        return best + std::log(acc);
    }

    /// log P(x_{score_from} .. | x_{< score_from}); score_from = 0 gives the
    /// full sequence probability.
    double sequence_log_prob(std::span<const int> seq, int score_from = 0) const {
        if (seq.empty()) throw InvalidInput("OracleModel::sequence_log_prob: empty sequence");
        if (score_from < 0 || score_from >= static_cast<int>(seq.size())) {
            throw InvalidInput("OracleModel::sequence_log_prob: score_from out of range");
        }
        const double full = joint_log_prob_up_to(seq, static_cast<int>(seq.size()));
        if (score_from == 0) return full;
        const double prefix = joint_log_prob_up_to(seq, score_from);
        if (prefix == -std::numeric_limits<double>::infinity()) {
            throw InvalidInput("OracleModel::sequence_log_prob: conditioning prefix has "
                               "probability zero");
        }
        return full - prefix;
    }

    /// Exact next-token distribution P(. | x_{<pos}): the posterior-weighted
    /// mixture of table rows over the surviving initial contexts. With a
    /// point-mass initial context this is a single table row.
    Distribution next_token_distribution(std::span<const int> seq, int pos) const {
        if (pos < 0 || pos > static_cast<int>(seq.size())) {
            throw InvalidInput("OracleModel::next_token_distribution: position out of range");
        }
        for (int t = 0; t < pos; ++t) check_token(seq[t]);
        std::vector<double> weights;
        std::vector<long> ctxs;
        double best = -std::numeric_limits<double>::infinity();
        for (long c0 : initial_support_) {
            double lp = std::log(initial_context_[static_cast<int>(c0)]);
            long ctx = c0;
            for (int t = 0; t < pos && lp != -std::numeric_limits<double>::infinity(); ++t) {
                const double p = table_(static_cast<int>(ctx), seq[t]);
                lp += (p > 0.0) ? std::log(p) : -std::numeric_limits<double>::infinity();
                ctx = advance_context(ctx, seq[t]);
            }
            weights.push_back(lp);
            ctxs.push_back(ctx);
            best = std::max(best, lp);
        }
        if (best == -std::numeric_limits<double>::infinity()) {
            throw InvalidInput("OracleModel::next_token_distribution: prefix has probability "
                               "zero under the oracle");
        }
        std::vector<double> mix(vocab_.size, 0.0);
        double norm = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            const double w = std::exp(weights[i] - best);
            if (w == 0.0) continue;
            norm += w;
            const auto row = table_.row(static_cast<int>(ctxs[i]));
            for (int v = 0; v < vocab_.size; ++v) mix[v] += w * row[v];
        }
        for (double& m : mix) m /= norm;
        return Distribution(mix);
    }

    // -- generation -----------------------------------------------------------

    std::vector<int> sample_sequence(int length, Rng& rng) const {
        if (length < 1) throw InvalidInput("OracleModel::sample_sequence: length must be >= 1");
        long ctx = initial_support_.size() == 1
                       ? initial_support_.front()
                       : static_cast<long>(rng.categorical(initial_context_.span()));
        std::vector<int> seq;
        seq.reserve(length);
        for (int t = 0; t < length; ++t) {
            const int tok = rng.categorical(table_.row(static_cast<int>(ctx)));
            seq.push_back(tok);
            ctx = advance_context(ctx, tok);
        }
        return seq;
    }

    /// Rao-Blackwellized entropy-rate estimate in nats: the average entropy of
    /// the visited conditional rows along a simulated trajectory.
    double entropy_rate_estimate(int num_tokens, uint64_t seed) const {
        if (num_tokens < 1) throw InvalidInput("entropy_rate_estimate: need >= 1 token");
        Rng rng(seed);
        long ctx = initial_support_.size() == 1
                       ? initial_support_.front()
                       : static_cast<long>(rng.categorical(initial_context_.span()));
        double total = 0.0;
        for (int t = 0; t < num_tokens; ++t) {
            const auto row = table_.row(static_cast<int>(ctx));
            double h = 0.0;
            for (double p : row) {
                if (p > 0.0) h -= p * std::log(p);
            }
            total += h;
            ctx = advance_context(ctx, rng.categorical(row));
        }
        return total / num_tokens;
    }

private:
    void check_token(int tok) const {
        if (tok < 0 || tok >= vocab_.size) {
            throw InvalidInput("OracleModel: token id " + std::to_string(tok) +
                               " outside vocabulary of size " + std::to_string(vocab_.size));
        }
    }

    // Drop the oldest token, append the newest: base-|V| shift.
    long advance_context(long ctx, int tok) const {
        return (ctx % modulus_) * vocab_.size + tok;
    }

    Vocabulary vocab_;
    int order_;
    Matrix table_;
    Distribution initial_context_;
    std::vector<long> initial_support_;
    long modulus_ = 1;  // |V|^(k-1): strips the oldest token from a context id
};

/// Draws every conditional row from a symmetric Dirichlet(concentration) over
/// the full vocabulary; the initial context is a point mass on the all-bos
/// context, matching the bos-padding convention used when scoring.
inline OracleModel make_oracle(const Vocabulary& vocab, int order, double concentration,
                               uint64_t seed) {
    vocab.validate();
    if (!(concentration > 0.0) || !std::isfinite(concentration)) {
        throw InvalidInput("make_oracle: concentration must be positive and finite");
    }
    if (order < 1) throw InvalidInput("make_oracle: order must be >= 1");
    const long contexts = OracleModel::context_count(vocab.size, order);
    Matrix table(static_cast<int>(contexts), vocab.size);
    Rng rng(seed);
    for (int r = 0; r < table.rows(); ++r) {
        double sum = 0.0;
        for (int v = 0; v < vocab.size; ++v) {
            const double g = rng.gamma(concentration);
            table(r, v) = g;
            sum += g;
        }
        for (int v = 0; v < vocab.size; ++v) table(r, v) /= sum;
    }
    std::vector<double> init(contexts, 0.0);
    long bos_ctx = 0;
    for (int i = 0; i < order; ++i) bos_ctx = bos_ctx * vocab.size + vocab.bos_id;
    init[bos_ctx] = 1.0;
    return OracleModel(vocab, order, std::move(table), Distribution(std::move(init)));
}

// ---------------------------------------------------------------------------
// Corpus sampling with disjoint train/valid/test splits.
// ---------------------------------------------------------------------------

struct CorpusSplit {
    std::vector<std::vector<int>> train;
    std::vector<std::vector<int>> valid;
    std::vector<std::vector<int>> test;
};

/// Draws train+valid+test sequences from one seeded stream and splits them in
/// order, so the splits are disjoint draws by construction.
inline CorpusSplit sample_corpus(const OracleModel& oracle, int n_train, int n_valid, int n_test,
                                 int length, uint64_t seed) {
    if (n_train < 1 || n_valid < 1 || n_test < 1 || length < 1) {
        throw InvalidInput("sample_corpus: all split sizes and the length must be positive");
    }
    Rng rng(seed);
    CorpusSplit split;
    split.train.reserve(n_train);
    split.valid.reserve(n_valid);
    split.test.reserve(n_test);
    for (int i = 0; i < n_train; ++i) split.train.push_back(oracle.sample_sequence(length, rng));
    for (int i = 0; i < n_valid; ++i) split.valid.push_back(oracle.sample_sequence(length, rng));
    for (int i = 0; i < n_test; ++i) split.test.push_back(oracle.sample_sequence(length, rng));
    return split;
}

}  // namespace emo
