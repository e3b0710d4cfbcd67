#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "emo/numerics.hpp"

namespace emo {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from a root seed. Used to give each
/// experiment stage (oracle, corpus, init, per-objective training, sampling)
/// its own generator so stages cannot perturb each other's draws.
inline uint64_t derive_seed(uint64_t root, uint64_t stream) {
    uint64_t s = root ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    splitmix64(s);
    return splitmix64(s);
}

// xoshiro256++ with splitmix64 seeding. Self-contained so that every draw is
// reproducible from the seed alone, independent of the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {
        uint64_t sm = seed;
        for (auto& s : state_) s = splitmix64(sm);
    }

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1); never returns 0 so log() stays finite.
    double uniform_positive() {
        double u;
        do {
            u = uniform();
        } while (u <= 0.0);
        return u;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    /// Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_positive();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Gamma(alpha, 1) via Marsaglia-Tsang squeeze; alpha < 1 handled with the
    /// Gamma(alpha+1) * U^(1/alpha) boost.
    double gamma(double alpha) {
        if (!(alpha > 0.0)) throw InvalidInput("Rng::gamma: alpha must be positive");
        if (alpha < 1.0) {
            const double u = uniform_positive();
            return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x;
            double v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform_positive();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// Inverse-CDF draw from a probability vector.
    int categorical(std::span<const double> probs) {
        if (probs.empty()) throw InvalidInput("Rng::categorical: empty distribution");
        const double u = uniform();
        double cum = 0.0;
        for (size_t i = 0; i < probs.size(); ++i) {
            cum += probs[i];
            if (u < cum) return static_cast<int>(i);
        }
        // u landed in the roundoff gap above the final cumulative sum; return
        // the last index with positive mass.
        for (size_t i = probs.size(); i-- > 0;) {
            if (probs[i] > 0.0) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

    /// Shuffles indices [0, n) in place (Fisher-Yates).
    void shuffle(std::span<int> values) {
        for (size_t i = values.size(); i > 1; --i) {
            const size_t j = next_u64() % i;
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t seed_;
    uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace emo
