#pragma once

#include <chrono>
#include <vector>

#include "hymunet/ops.hpp"
#include "hymunet/rng.hpp"
#include "hymunet/ssm.hpp"

namespace hym {

// Dense bidirectional attention over a length-L sequence of d-dim tokens:
// softmax(Q K^T / sqrt(d)) V. Forward only — this is the quadratic reference
// the linear-time scan is measured against.
inline Tensor attention_forward(const Tensor& Q, const Tensor& K, const Tensor& V) {
    check(Q.rank() == 2 && K.shape == Q.shape && V.shape == Q.shape,
          "attention: Q, K, V must share shape [L,d]");
    const long L = Q.dim(0), d = Q.dim(1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<double> scores(static_cast<std::size_t>(L) * L);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(L),
                static_cast<int>(L), static_cast<int>(d), scale, Q.ptr(), static_cast<int>(d),
                K.ptr(), static_cast<int>(d), 0.0, scores.data(), static_cast<int>(L));
    for (long i = 0; i < L; ++i) {
        double* row = scores.data() + i * L;
        double mx = row[0];
        for (long j = 1; j < L; ++j) mx = std::max(mx, row[j]);
        double sum = 0;
        for (long j = 0; j < L; ++j) sum += row[j] = std::exp(row[j] - mx);
        for (long j = 0; j < L; ++j) row[j] /= sum;
    }
    Tensor out({L, d});
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(L),
                static_cast<int>(d), static_cast<int>(L), 1.0, scores.data(),
                static_cast<int>(L), V.ptr(), static_cast<int>(d), 0.0, out.ptr(),
                static_cast<int>(d));
    return out;
}

// --- timing ----------------------------------------------------------------------

struct BenchRecord {
    long length = 0;
    double mean_sec = 0, min_sec = 0;
    long reps = 0;
    double bytes_est = 0;  // rough working-set size
};

struct BenchResult {
    std::vector<BenchRecord> records;
    double slope = 0;  // log-log least-squares exponent of min_sec vs length
};

namespace detail {

// Times fn() with enough inner iterations that one measurement is ~2 ms,
// then takes min/mean over `reps` measurements. min_sec is the scaling
// signal: it is the least noise-contaminated statistic.
template <class Fn>
BenchRecord time_fn(Fn&& fn, long length, long reps, double bytes_est) {
    using clock = std::chrono::steady_clock;
    const auto secs = [](clock::duration d) { return std::chrono::duration<double>(d).count(); };

    fn();  // warmup + calibration probe
    const auto c0 = clock::now();
    fn();
    const double once = std::max(secs(clock::now() - c0), 1e-9);
    const long inner = once >= 2e-3 ? 1 : static_cast<long>(std::ceil(2e-3 / once));

    BenchRecord rec;
    rec.length = length;
    rec.reps = reps;
    rec.bytes_est = bytes_est;
    rec.min_sec = std::numeric_limits<double>::infinity();
    for (long r = 0; r < reps; ++r) {
        const auto t0 = clock::now();
        for (long k = 0; k < inner; ++k) fn();
        const double per_call = secs(clock::now() - t0) / static_cast<double>(inner);
        rec.mean_sec += per_call;
        rec.min_sec = std::min(rec.min_sec, per_call);
    }
    rec.mean_sec /= static_cast<double>(reps);
    return rec;
}

}  // namespace detail

inline double fit_loglog_slope(const std::vector<BenchRecord>& records) {
    check(records.size() >= 2, "bench: need at least two lengths to fit a slope");
    double sx = 0, sy = 0;
    for (const BenchRecord& r : records) {
        check(r.length > 0 && r.min_sec > 0, "bench: nonpositive length or time");
        sx += std::log(static_cast<double>(r.length));
        sy += std::log(r.min_sec);
    }
    const double mx = sx / records.size(), my = sy / records.size();
    double num = 0, den = 0;
    for (const BenchRecord& r : records) {
        const double dx = std::log(static_cast<double>(r.length)) - mx;
        num += dx * (std::log(r.min_sec) - my);
        den += dx * dx;
    }
    check(den > 0, "bench: lengths must not all be equal");
    return num / den;
}

// strictly increasing, at least 4 points spanning >= 16x, so the fitted
// exponent is meaningful
inline void check_bench_lengths(const std::vector<long>& lengths, long reps) {
    check(lengths.size() >= 4, "bench: need at least 4 lengths");
    check(lengths.front() > 0, "bench: lengths must be positive");
    for (std::size_t i = 1; i < lengths.size(); ++i)
        check(lengths[i] > lengths[i - 1], "bench: lengths must be strictly increasing");
    check(lengths.back() >= 16 * lengths.front(), "bench: lengths must span at least 16x");
    check(reps >= 5, "bench: need at least 5 repetitions");
}

inline BenchResult bench_scan(const std::vector<long>& lengths, long D = 64, long N = 8,
                              std::uint64_t seed = 0, long reps = 5) {
    check_bench_lengths(lengths, reps);
    BenchResult out;
    for (long L : lengths) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(L)));
        Tensor x({1, L, D}), delta({1, L, D}), A({D, N}), Bm({1, L, N}), Cm({1, L, N});
        for (long i = 0; i < x.numel(); ++i) x.at(i) = rng.normal();
        for (long i = 0; i < delta.numel(); ++i) delta.at(i) = rng.uniform(0.01, 0.1);
        for (long d = 0; d < D; ++d)
            for (long n = 0; n < N; ++n) A.at(d * N + n) = -static_cast<double>(n + 1);
        for (long i = 0; i < Bm.numel(); ++i) Bm.at(i) = rng.normal();
        for (long i = 0; i < Cm.numel(); ++i) Cm.at(i) = rng.normal();
        const double bytes = 8.0 * (static_cast<double>(L) * D * N + 3.0 * L * D + 2.0 * L * N);
        out.records.push_back(detail::time_fn(
            [&] { selective_scan(x, delta, A, Bm, Cm); }, L, reps, bytes));
    }
    out.slope = fit_loglog_slope(out.records);
    return out;
}

inline BenchResult bench_attention(const std::vector<long>& lengths, long d = 64,
                                   std::uint64_t seed = 0, long reps = 5) {
    check_bench_lengths(lengths, reps);
    BenchResult out;
    for (long L : lengths) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(L)));
        Tensor Q({L, d}), K({L, d}), V({L, d});
        for (long i = 0; i < Q.numel(); ++i) Q.at(i) = rng.normal();
        for (long i = 0; i < K.numel(); ++i) K.at(i) = rng.normal();
        for (long i = 0; i < V.numel(); ++i) V.at(i) = rng.normal();
        const double bytes = 8.0 * (2.0 * static_cast<double>(L) * L + 4.0 * L * d);
        out.records.push_back(
            detail::time_fn([&] { attention_forward(Q, K, V); }, L, reps, bytes));
    }
    out.slope = fit_loglog_slope(out.records);
    return out;
}

inline const std::vector<long>& default_bench_lengths() {
    static const std::vector<long> lengths = {256, 512, 1024, 2048, 4096};
    return lengths;
}

}  // namespace hym
