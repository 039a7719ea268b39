#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace hym {

// splitmix64 finalizer, used to derive independent seed streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Deterministic RNG. The mt19937_64 engine output is standardized, and the
// uniform/normal transforms below are hand-rolled so results are identical
// across platforms and library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Derive a sub-seed for an independent stream (e.g. per sample index).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t s = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
        splitmix64(s);
        return splitmix64(s);
    }

    std::uint64_t u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    long uniform_int(long lo, long hi) {
        long span = hi - lo + 1;
        long v = lo + static_cast<long>(uniform() * static_cast<double>(span));
        return v > hi ? hi : v;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller, one spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // Fisher-Yates permutation of {0..n-1}.
    std::vector<long> permutation(long n) {
        std::vector<long> p(static_cast<std::size_t>(n));
        for (long i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
        for (long i = n - 1; i > 0; --i) {
            long j = uniform_int(0, i);
            std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
        }
        return p;
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hym
