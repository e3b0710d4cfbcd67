#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emo/numerics.hpp"

namespace emo {

// ---------------------------------------------------------------------------
// CostMatrix: pairwise token transport costs, 1 - cosine similarity.
// ---------------------------------------------------------------------------

class CostMatrix {
public:
    /// Builds C(i,j) = 1 - <e_i, e_j> / (|e_i| |e_j|) from one embedding row
    /// per token. Cosines are clamped to [-1, 1] before forming 1 - cos so
    /// roundoff cannot produce a negative cost.
    static CostMatrix from_embeddings(const Matrix& embeddings) {
        const int n = embeddings.rows();
        const int d = embeddings.cols();
        std::vector<double> inv_norm(n);
        for (int i = 0; i < n; ++i) {
            double sq = 0.0;
            for (int k = 0; k < d; ++k) sq += embeddings(i, k) * embeddings(i, k);
            const double norm = std::sqrt(sq);
            if (!(norm > 1e-12)) {
                throw InvalidInput("cost_matrix_from_embeddings: embedding row " +
                                   std::to_string(i) + " has norm " + std::to_string(norm) +
                                   " (degenerate)");
            }
            inv_norm[i] = 1.0 / norm;
        }
        Matrix c(n, n);
        for (int i = 0; i < n; ++i) {
            c(i, i) = 0.0;
            for (int j = i + 1; j < n; ++j) {
                double cos = dot(embeddings.row(i), embeddings.row(j)) * inv_norm[i] * inv_norm[j];
                cos = std::clamp(cos, -1.0, 1.0);
                c(i, j) = 1.0 - cos;
                c(j, i) = c(i, j);
            }
        }
        return CostMatrix(std::move(c));
    }

    /// Validates an externally supplied matrix: square, finite, nonnegative,
    /// symmetric within 1e-12, entries at most 2.
    static CostMatrix from_matrix(Matrix m) {
        if (m.rows() != m.cols()) {
            throw DimensionError("CostMatrix: expected square matrix, got " +
                                 std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
        }
        for (int i = 0; i < m.rows(); ++i) {
            for (int j = 0; j < m.cols(); ++j) {
                const double v = m(i, j);
                if (!std::isfinite(v)) throw InvalidInput("CostMatrix: non-finite entry");
                if (v < 0.0) {
                    throw InvalidInput("CostMatrix: negative entry " + std::to_string(v) +
                                       " at (" + std::to_string(i) + "," + std::to_string(j) + ")");
                }
                if (v > 2.0) {
                    throw InvalidInput("CostMatrix: entry " + std::to_string(v) +
                                       " exceeds the cosine-distance bound of 2");
                }
                if (std::abs(v - m(j, i)) > 1e-12) {
                    throw InvalidInput("CostMatrix: asymmetric at (" + std::to_string(i) + "," +
                                       std::to_string(j) + ")");
                }
            }
        }
        return CostMatrix(std::move(m));
    }

    /// Wraps a matrix without validation. Exists so test hooks can inject
    /// deliberately broken costs into the verification suites.
    static CostMatrix unchecked(Matrix m) { return CostMatrix(std::move(m)); }

    int size() const { return entries_.rows(); }
    double operator()(int i, int j) const { return entries_(i, j); }
    const Matrix& entries() const { return entries_; }

private:
    explicit CostMatrix(Matrix m) : entries_(std::move(m)) {}
    Matrix entries_;
};

inline CostMatrix cost_matrix_from_embeddings(const Matrix& embeddings) {
    return CostMatrix::from_embeddings(embeddings);
}

// ---------------------------------------------------------------------------
// TransportPlan: nonnegative mass matrix with prescribed marginals.
// Rows belong to the source distribution (first argument everywhere in this
// library), columns to the target.
// ---------------------------------------------------------------------------

inline constexpr double kMarginalTolerance = 1e-8;

class TransportPlan {
public:
    TransportPlan(Matrix mass, Distribution source, Distribution target)
        : mass_(std::move(mass)), source_(std::move(source)), target_(std::move(target)) {
        if (mass_.rows() != source_.size() || mass_.cols() != target_.size()) {
            throw DimensionError("TransportPlan: mass shape does not match marginals");
        }
        for (int i = 0; i < mass_.rows(); ++i) {
            for (int j = 0; j < mass_.cols(); ++j) {
                if (!(mass_(i, j) >= 0.0)) {
                    throw InvalidInput("TransportPlan: negative mass at (" + std::to_string(i) +
                                       "," + std::to_string(j) + ")");
                }
            }
        }
        for (int i = 0; i < mass_.rows(); ++i) {
            double row_sum = 0.0;
            for (int j = 0; j < mass_.cols(); ++j) row_sum += mass_(i, j);
            if (std::abs(row_sum - source_[i]) > kMarginalTolerance) {
                throw InvalidInput("TransportPlan: row " + std::to_string(i) + " sums to " +
                                   std::to_string(row_sum) + ", expected " +
                                   std::to_string(source_[i]));
            }
        }
        for (int j = 0; j < mass_.cols(); ++j) {
            double col_sum = 0.0;
            for (int i = 0; i < mass_.rows(); ++i) col_sum += mass_(i, j);
            if (std::abs(col_sum - target_[j]) > kMarginalTolerance) {
                throw InvalidInput("TransportPlan: column " + std::to_string(j) + " sums to " +
                                   std::to_string(col_sum) + ", expected " +
                                   std::to_string(target_[j]));
            }
        }
    }

    const Matrix& mass() const { return mass_; }
    const Distribution& source_marginal() const { return source_; }
    const Distribution& target_marginal() const { return target_; }

private:
    Matrix mass_;
    Distribution source_;
    Distribution target_;
};

/// The product plan mass(i,j) = Q(i) P(j): always feasible, optimal when P is
/// one-hot, and the plan whose cost the training objective bounds from above.
inline TransportPlan surrogate_plan(const Distribution& q, const Distribution& p) {
    if (q.size() != p.size()) {
        throw DimensionError("surrogate_plan: distributions have lengths " +
                             std::to_string(q.size()) + " and " + std::to_string(p.size()));
    }
    Matrix mass(q.size(), p.size());
    for (int i = 0; i < q.size(); ++i) {
        for (int j = 0; j < p.size(); ++j) mass(i, j) = q[i] * p[j];
    }
    return TransportPlan(std::move(mass), q, p);
}

/// Total cost sum_ij mass(i,j) C(i,j) of executing a plan.
inline double plan_cost(const TransportPlan& plan, const CostMatrix& c) {
    const Matrix& mass = plan.mass();
    if (mass.rows() != c.size() || mass.cols() != c.size()) {
        throw DimensionError("plan_cost: plan is " + std::to_string(mass.rows()) + "x" +
                             std::to_string(mass.cols()) + " but cost matrix is " +
                             std::to_string(c.size()) + "x" + std::to_string(c.size()));
    }
    double total = 0.0;
    for (int i = 0; i < mass.rows(); ++i) {
        for (int j = 0; j < mass.cols(); ++j) total += mass(i, j) * c(i, j);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Exact earth mover distance.
//
// Solves the transportation LP
//     min sum_ij g(i,j) C(i,j)   s.t.  row sums = P1, column sums = P2, g >= 0
// by successive shortest augmenting paths on the flow network
// S -> rows -> columns -> T. Augmenting along cheapest residual paths keeps
// the shipped flow cost-optimal at every step, so the final flow is a global
// minimizer. Intended as a small-vocabulary verification oracle (|V| <= 64);
// cost is cubic-ish in |V| and no attempt is made to scale beyond that.
// ---------------------------------------------------------------------------

struct EmdResult {
    double value;
    TransportPlan plan;
};

namespace detail {

struct FlowArc {
    int to;
    double cap;
    double cost;
    int rev;  // index of the reverse arc in graph[to]
};

class FlowGraph {
public:
    explicit FlowGraph(int nodes) : adj_(nodes) {}

    void add_arc(int from, int to, double cap, double cost) {
        adj_[from].push_back({to, cap, cost, static_cast<int>(adj_[to].size())});
        adj_[to].push_back({from, 0.0, -cost, static_cast<int>(adj_[from].size()) - 1});
    }

    std::vector<FlowArc>& operator[](int node) { return adj_[node]; }
    int size() const { return static_cast<int>(adj_.size()); }

private:
    std::vector<std::vector<FlowArc>> adj_;
};

}  // namespace detail

inline EmdResult exact_emd(const Distribution& p1, const Distribution& p2, const CostMatrix& c) {
    const int n = p1.size();
    if (p2.size() != n) {
        throw DimensionError("exact_emd: distributions have lengths " + std::to_string(n) +
                             " and " + std::to_string(p2.size()));
    }
    if (c.size() != n) {
        throw DimensionError("exact_emd: cost matrix size " + std::to_string(c.size()) +
                             " does not match distributions of length " + std::to_string(n));
    }

    // Node layout: 0 = super source, 1..n = sources, n+1..2n = sinks, 2n+1 = super sink.
    const int source = 0;
    const int sink = 2 * n + 1;
    detail::FlowGraph graph(2 * n + 2);
    constexpr double kInfCap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        if (p1[i] > 0.0) graph.add_arc(source, 1 + i, p1[i], 0.0);
        if (p2[i] > 0.0) graph.add_arc(1 + n + i, sink, p2[i], 0.0);
    }
    for (int i = 0; i < n; ++i) {
        if (p1[i] <= 0.0) continue;
        for (int j = 0; j < n; ++j) {
            if (p2[j] > 0.0) graph.add_arc(1 + i, 1 + n + j, kInfCap, c(i, j));
        }
    }

    // Residual capacities this small are treated as exhausted; keeps the
    // augmentation loop from chasing roundoff dust.
    constexpr double kEps = 1e-14;

    const int num_nodes = graph.size();
    std::vector<double> dist(num_nodes);
    std::vector<int> prev_node(num_nodes);
    std::vector<int> prev_arc(num_nodes);
    std::vector<bool> in_queue(num_nodes);

    double remaining = 1.0;
    double total_cost = 0.0;
    // Each augmentation saturates a source or sink arc, so the loop runs at
    // most 2n times; the extra few iterations absorb floating-point slack.
    for (int iter = 0; iter < 4 * n + 8 && remaining > 1e-12; ++iter) {
        // Bellman-Ford (queue-based) over the residual graph; residual arcs
        // can carry negative cost.
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        std::fill(in_queue.begin(), in_queue.end(), false);
        dist[source] = 0.0;
        std::vector<int> queue = {source};
        in_queue[source] = true;
        for (size_t head = 0; head < queue.size(); ++head) {
            const int u = queue[head];
            in_queue[u] = false;
            for (size_t a = 0; a < graph[u].size(); ++a) {
                const detail::FlowArc& arc = graph[u][a];
                if (arc.cap <= kEps) continue;
                const double nd = dist[u] + arc.cost;
                if (nd < dist[arc.to] - 1e-15) {
                    dist[arc.to] = nd;
                    prev_node[arc.to] = u;
                    prev_arc[arc.to] = static_cast<int>(a);
                    if (!in_queue[arc.to]) {
                        queue.push_back(arc.to);
                        in_queue[arc.to] = true;
                    }
                }
            }
        }
        if (!std::isfinite(dist[sink])) break;

        double push = remaining;
        for (int v = sink; v != source; v = prev_node[v]) {
            push = std::min(push, graph[prev_node[v]][prev_arc[v]].cap);
        }
        if (push <= kEps) break;
        for (int v = sink; v != source; v = prev_node[v]) {
            detail::FlowArc& arc = graph[prev_node[v]][prev_arc[v]];
            arc.cap -= push;
            graph[v][arc.rev].cap += push;
        }
        total_cost += push * dist[sink];
        remaining -= push;
    }

    if (remaining > 1e-9) {
        throw InternalError("exact_emd: failed to ship all mass; residual " +
                            std::to_string(remaining));
    }

    // Flow on row->column arcs is the reverse-arc capacity.
    Matrix mass(n, n, 0.0);
    for (int i = 0; i < n; ++i) {
        if (p1[i] <= 0.0) continue;
        for (const detail::FlowArc& arc : graph[1 + i]) {
            if (arc.to > n && arc.to <= 2 * n) {
                const double flow = graph[arc.to][arc.rev].cap;
                if (flow > 0.0) mass(i, arc.to - n - 1) = flow;
            }
        }
    }
    return EmdResult{total_cost, TransportPlan(std::move(mass), p1, p2)};
}

}  // namespace emo
