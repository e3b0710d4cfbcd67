#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace emo {

// Thrown when an argument lies outside an operation's domain (non-finite
// input, negative probability, out-of-range token, ...).
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Thrown when operand shapes are incompatible.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Thrown when an internal consistency check fails; indicates a bug, not bad input.
struct InternalError : std::logic_error {
    using std::logic_error::logic_error;
};

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Matrix: dense row-major storage of 64-bit floats.
// ---------------------------------------------------------------------------

class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
        if (rows <= 0 || cols <= 0) {
            throw InvalidInput("Matrix dimensions must be positive, got " +
                               std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty() || rows.front().empty()) {
            throw InvalidInput("Matrix::from_rows: empty input");
        }
        Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
        for (size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != rows.front().size()) {
                throw DimensionError("Matrix::from_rows: ragged row " + std::to_string(r));
            }
            std::copy(rows[r].begin(), rows[r].end(), m.data_.begin() + r * m.cols_);
        }
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }

    double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

    std::span<double> row(int r) { return {data_.data() + static_cast<size_t>(r) * cols_, static_cast<size_t>(cols_)}; }
    std::span<const double> row(int r) const {
        return {data_.data() + static_cast<size_t>(r) * cols_, static_cast<size_t>(cols_)};
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// y = M x
inline std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
    if (static_cast<size_t>(m.cols()) != x.size()) {
        throw DimensionError("matvec: shape mismatch");
    }
    std::vector<double> y(m.rows());
    for (int r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
    return y;
}

// ---------------------------------------------------------------------------
// Distribution: probability vector over token indices 0..|V|-1.
// ---------------------------------------------------------------------------

// Absolute tolerance on |sum - 1| accepted by the Distribution constructor.
// Inputs within it are renormalized; anything further off is rejected so the
// transport solver never sees infeasible marginals.
inline constexpr double kDistributionSumTolerance = 1e-9;

class Distribution {
public:
    explicit Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
        validate_row(probs_);
        double sum = 0.0;
        for (double p : probs_) sum += p;
        for (double& p : probs_) p /= sum;
    }

    /// Applies the constructor's validation rules to a row stored elsewhere
    /// (e.g. one row of a large conditional table) without copying it.
    static void validate_row(std::span<const double> row) {
        if (row.empty()) throw InvalidInput("Distribution: empty probability vector");
        double sum = 0.0;
        for (double p : row) {
            if (!std::isfinite(p)) throw InvalidInput("Distribution: non-finite entry");
            if (p < 0.0) {
                throw InvalidInput("Distribution: negative entry " + std::to_string(p));
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > kDistributionSumTolerance) {
            throw InvalidInput("Distribution: entries sum to " + std::to_string(sum) +
                               ", outside tolerance of 1");
        }
    }

    static Distribution uniform(int n) {
        if (n <= 0) throw InvalidInput("Distribution::uniform: size must be positive");
        return Distribution(std::vector<double>(n, 1.0 / n));
    }

    static Distribution one_hot(int n, int index) {
        if (n <= 0) throw InvalidInput("Distribution::one_hot: size must be positive");
        if (index < 0 || index >= n) {
            throw InvalidInput("Distribution::one_hot: index " + std::to_string(index) +
                               " out of range [0," + std::to_string(n) + ")");
        }
        std::vector<double> p(n, 0.0);
        p[index] = 1.0;
        return Distribution(std::move(p));
    }

    int size() const { return static_cast<int>(probs_.size()); }
    double operator[](int i) const { return probs_[i]; }
    const std::vector<double>& probs() const { return probs_; }
    std::span<const double> span() const { return probs_; }

private:
    std::vector<double> probs_;
};

// ---------------------------------------------------------------------------
// Stable softmax machinery.
// ---------------------------------------------------------------------------

/// Numerically stable softmax: exp(z_i - max z) / sum_j exp(z_j - max z).
inline Distribution softmax(std::span<const double> z) {
    if (z.empty()) throw InvalidInput("softmax: empty input");
    if (!all_finite(z)) throw InvalidInput("softmax: non-finite logit");
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return Distribution(std::move(p));
}

/// log softmax via z - max z - log sum exp(z - max z); safe for large spreads.
inline std::vector<double> log_softmax(std::span<const double> z) {
    if (z.empty()) throw InvalidInput("log_softmax: empty input");
    if (!all_finite(z)) throw InvalidInput("log_softmax: non-finite logit");
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double x : z) sum += std::exp(x - m);
    const double lse = m + std::log(sum);
    std::vector<double> out(z.size());
    for (size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

// ---------------------------------------------------------------------------
// Gradient verification.
// ---------------------------------------------------------------------------

/// Central-difference check of a claimed gradient over selected coordinates
/// (all of them when `indices` is empty).
///
/// Returns max_i |g_i - (f(x+h e_i) - f(x-h e_i)) / 2h| divided by the
/// gradient's max-norm — the relative error of the gradient as a vector.
/// Per-coordinate normalization would report spurious blow-ups on entries
/// that are legitimately ~0 (softmax tails), where the finite-difference
/// noise floor dominates.
template <class F, class G>
double grad_check(F&& f, G&& grad_f, std::span<const double> x, double h,
                  std::span<const int> indices = {}) {
    if (h <= 0.0) throw InvalidInput("grad_check: step must be positive");
    if (!all_finite(x)) throw InvalidInput("grad_check: non-finite point");
    std::vector<double> g = grad_f(std::span<const double>(x));
    if (g.size() != x.size()) throw DimensionError("grad_check: gradient length mismatch");
    double scale = 0.0;
    for (double gi : g) scale = std::max(scale, std::abs(gi));
    std::vector<int> all;
    if (indices.empty()) {
        all.resize(x.size());
        for (size_t i = 0; i < x.size(); ++i) all[i] = static_cast<int>(i);
        indices = all;
    }
    std::vector<double> probe(x.begin(), x.end());
    double worst_abs = 0.0;
    for (int i : indices) {
        if (i < 0 || static_cast<size_t>(i) >= x.size()) {
            throw InvalidInput("grad_check: coordinate index out of range");
        }
        const double saved = probe[i];
        probe[i] = saved + h;
        const double fp = f(std::span<const double>(probe));
        probe[i] = saved - h;
        const double fm = f(std::span<const double>(probe));
        probe[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        worst_abs = std::max(worst_abs, std::abs(g[i] - numeric));
        scale = std::max(scale, std::abs(numeric));
    }
    return worst_abs / std::max(scale, 1e-12);
}

}  // namespace emo
