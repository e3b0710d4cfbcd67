#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emo/numerics.hpp"
#include "emo/oracle.hpp"

namespace emo {

// ---------------------------------------------------------------------------
// ROUGE over integer token sequences.
// ---------------------------------------------------------------------------

struct RougeScores {
    double rouge1_f = 0.0;
    double rougeL_f = 0.0;
};

namespace detail {

inline double f1_from_overlap(double overlap, size_t cand_len, size_t ref_len) {
    const double precision = overlap / static_cast<double>(cand_len);
    const double recall = overlap / static_cast<double>(ref_len);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

inline size_t lcs_length(std::span<const int> a, std::span<const int> b) {
    // Two-row DP; sequences are short (tens of tokens).
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            cur[j] = (a[i - 1] == b[j - 1]) ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace detail

/// ROUGE-1 (clipped unigram overlap) and ROUGE-L (longest common subsequence)
/// F1 for one candidate/reference pair.
inline RougeScores rouge_pair(std::span<const int> candidate, std::span<const int> reference) {
    if (candidate.empty() || reference.empty()) {
        throw InvalidInput("rouge_pair: empty candidate or reference sequence");
    }
    std::map<int, int> ref_counts;
    for (int tok : reference) ++ref_counts[tok];
    double overlap = 0.0;
    for (int tok : candidate) {
        auto it = ref_counts.find(tok);
        if (it != ref_counts.end() && it->second > 0) {
            --it->second;
            overlap += 1.0;
        }
    }
    RougeScores s;
    s.rouge1_f = detail::f1_from_overlap(overlap, candidate.size(), reference.size());
    const double lcs = static_cast<double>(detail::lcs_length(candidate, reference));
    s.rougeL_f = detail::f1_from_overlap(lcs, candidate.size(), reference.size());
    return s;
}

/// Mean ROUGE over aligned candidate/reference pairs.
inline RougeScores rouge_scores(const std::vector<std::vector<int>>& candidates,
                                const std::vector<std::vector<int>>& references) {
    if (candidates.empty() || candidates.size() != references.size()) {
        throw InvalidInput("rouge_scores: need a non-empty, aligned list of pairs (" +
                           std::to_string(candidates.size()) + " candidates, " +
                           std::to_string(references.size()) + " references)");
    }
    RougeScores total;
    for (size_t i = 0; i < candidates.size(); ++i) {
        const RougeScores s = rouge_pair(candidates[i], references[i]);
        total.rouge1_f += s.rouge1_f;
        total.rougeL_f += s.rougeL_f;
    }
    total.rouge1_f /= static_cast<double>(candidates.size());
    total.rougeL_f /= static_cast<double>(candidates.size());
    return total;
}

// ---------------------------------------------------------------------------
// Oracle perplexity of student-generated text (precision proxy).
// ---------------------------------------------------------------------------

struct OraclePerplexity {
    double value = 0.0;          // +inf when overflowed
    bool overflow = false;       // some sequence had probability zero under the oracle
    int overflow_sequences = 0;  // how many
    long scored_tokens = 0;
};

/// Perplexity the oracle assigns to the sample set, scoring positions from
/// `score_from` onward (conditioned on the earlier tokens). A sample the
/// oracle gives probability zero is reported as an explicit overflow rather
/// than silently propagating infinities into downstream aggregates.
inline OraclePerplexity ppl_oracle(const OracleModel& oracle,
                                   const std::vector<std::vector<int>>& samples,
                                   int score_from = 0) {
    if (samples.empty()) throw InvalidInput("ppl_oracle: empty sample set");
    OraclePerplexity out;
    double nll = 0.0;
    for (const auto& seq : samples) {
        if (score_from >= static_cast<int>(seq.size())) {
            throw InvalidInput("ppl_oracle: score_from " + std::to_string(score_from) +
                               " leaves no scored positions in a length-" +
                               std::to_string(seq.size()) + " sample");
        }
        const double lp = oracle.sequence_log_prob(seq, score_from);
        if (lp == -std::numeric_limits<double>::infinity()) {
            out.overflow = true;
            ++out.overflow_sequences;
        } else {
            nll -= lp;
        }
        out.scored_tokens += static_cast<long>(seq.size()) - score_from;
    }
    out.value = out.overflow ? std::numeric_limits<double>::infinity()
                             : std::exp(nll / static_cast<double>(out.scored_tokens));
    return out;
}

// ---------------------------------------------------------------------------
// Token-level forward/reverse cross-entropy between full next-token
// distributions (precision/recall diagnostic).
// ---------------------------------------------------------------------------

struct CeDiagnostic {
    double fwd_ce = 0.0;  // mean CE(P_surrogate, Q_student): recall axis
    double rev_ce = 0.0;  // mean CE(Q_student, P_surrogate): precision axis
};

/// Averages CE(P, Q) and CE(Q, P) over every position of the corpus, where P
/// is the surrogate's and Q the student's exact next-token distribution.
/// Both arguments only need `vocab_size()` and `next_token_distribution(seq,
/// pos)`, so any model can play either role. Terms with zero weight are
/// skipped (the 0 log 0 = 0 convention); a zero-probability entry under a
/// positive weight propagates as +inf.
template <typename StudentT, typename SurrogateT>
CeDiagnostic ce_diagnostic(const StudentT& student, const SurrogateT& surrogate,
                           const std::vector<std::vector<int>>& corpus) {
    if (student.vocab_size() != surrogate.vocab_size()) {
        throw DimensionError("ce_diagnostic: student vocabulary (" +
                             std::to_string(student.vocab_size()) + ") != surrogate (" +
                             std::to_string(surrogate.vocab_size()) + ")");
    }
    if (corpus.empty()) throw InvalidInput("ce_diagnostic: empty corpus");
    CeDiagnostic out;
    long positions = 0;
    for (const auto& seq : corpus) {
        if (seq.empty()) throw InvalidInput("ce_diagnostic: empty sequence in corpus");
        for (int pos = 0; pos < static_cast<int>(seq.size()); ++pos) {
            const Distribution q = student.next_token_distribution(seq, pos);
            const Distribution p = surrogate.next_token_distribution(seq, pos);
            double fwd = 0.0, rev = 0.0;
            for (int v = 0; v < p.size(); ++v) {
                if (p[v] > 0.0) fwd -= p[v] * std::log(q[v]);
                if (q[v] > 0.0) rev -= q[v] * std::log(p[v]);
            }
            out.fwd_ce += fwd;
            out.rev_ce += rev;
            ++positions;
        }
    }
    out.fwd_ce /= static_cast<double>(positions);
    out.rev_ce /= static_cast<double>(positions);
    return out;
}

}  // namespace emo
