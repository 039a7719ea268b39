#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "hymunet/tensor.hpp"

namespace hym {

struct Mask {
    long h = 0, w = 0;
    std::vector<std::uint8_t> v;  // row-major {0,1}

    Mask() = default;
    Mask(long height, long width) : h(height), w(width), v(height * width, 0) {}

    bool at(long i, long j) const { return v[i * w + j] != 0; }
    void set(long i, long j, bool fg) { v[i * w + j] = fg ? 1 : 0; }
    long count() const {
        long n = 0;
        for (auto b : v) n += b;
        return n;
    }
};

inline void check_same_size(const Mask& p, const Mask& g, const char* op) {
    check(p.h == g.h && p.w == g.w,
          std::string(op) + ": mask sizes differ, " + std::to_string(p.h) + "x" +
              std::to_string(p.w) + " vs " + std::to_string(g.h) + "x" + std::to_string(g.w));
}

// >= threshold counts as foreground
inline Mask binarize_plane(const Tensor& t, double threshold = 0.5) {
    check(t.rank() == 2, "binarize_plane: expected [H,W], got " + shape_str(t.shape));
    Mask m(t.dim(0), t.dim(1));
    for (long i = 0; i < t.numel(); ++i) m.v[i] = t.at(i) >= threshold ? 1 : 0;
    return m;
}

inline std::vector<Mask> binarize(const Tensor& y, double threshold = 0.5) {
    check(y.rank() == 4 && y.dim(1) == 1,
          "binarize: expected [B,1,H,W], got " + shape_str(y.shape));
    const long B = y.dim(0), H = y.dim(2), W = y.dim(3);
    std::vector<Mask> out;
    out.reserve(B);
    for (long b = 0; b < B; ++b) {
        Mask m(H, W);
        const double* p = y.ptr() + b * H * W;
        for (long i = 0; i < H * W; ++i) m.v[i] = p[i] >= threshold ? 1 : 0;
        out.push_back(std::move(m));
    }
    return out;
}

namespace detail {
inline void overlap_counts(const Mask& p, const Mask& g, long& tp, long& np, long& ng) {
    tp = np = ng = 0;
    for (std::size_t i = 0; i < p.v.size(); ++i) {
        np += p.v[i];
        ng += g.v[i];
        tp += p.v[i] & g.v[i];
    }
}
}  // namespace detail

// DSC = 2|P∩G| / (|P|+|G|); both empty -> 1
inline double dsc(const Mask& p, const Mask& g) {
    check_same_size(p, g, "dsc");
    long tp, np, ng;
    detail::overlap_counts(p, g, tp, np, ng);
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(np + ng);
}

// IoU = |P∩G| / |P∪G|; both empty -> 1
inline double iou(const Mask& p, const Mask& g) {
    check_same_size(p, g, "iou");
    long tp, np, ng;
    detail::overlap_counts(p, g, tp, np, ng);
    const long uni = np + ng - tp;
    if (uni == 0) return 1.0;
    return static_cast<double>(tp) / static_cast<double>(uni);
}

// PRE = TP / (TP+FP); empty P -> 1 if G empty, else 0
inline double precision(const Mask& p, const Mask& g) {
    check_same_size(p, g, "precision");
    long tp, np, ng;
    detail::overlap_counts(p, g, tp, np, ng);
    if (np == 0) return ng == 0 ? 1.0 : 0.0;
    return static_cast<double>(tp) / static_cast<double>(np);
}

struct Point {
    long i, j;
};

// foreground pixels with at least one background 4-neighbor; pixels beyond
// the image border count as background
inline std::vector<Point> boundary_points(const Mask& m) {
    std::vector<Point> pts;
    for (long i = 0; i < m.h; ++i)
        for (long j = 0; j < m.w; ++j) {
            if (!m.at(i, j)) continue;
            const bool edge = i == 0 || i == m.h - 1 || j == 0 || j == m.w - 1;
            if (edge || !m.at(i - 1, j) || !m.at(i + 1, j) || !m.at(i, j - 1) ||
                !m.at(i, j + 1)) {
                pts.push_back({i, j});
            }
        }
    return pts;
}

namespace detail {

// q-th percentile with linear interpolation between order statistics
// (position q*(n-1) into the sorted sample)
inline double percentile(std::vector<double> xs, double q) {
    std::sort(xs.begin(), xs.end());
    const long n = static_cast<long>(xs.size());
    check(n > 0, "percentile: empty sample");
    const double pos = q * static_cast<double>(n - 1);
    const long lo = static_cast<long>(pos);
    const long hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    return xs[lo] + frac * (xs[hi] - xs[lo]);
}

// brute-force nearest-neighbor distances from each point of `from` to the
// set `to`; integer squared distances keep the search exact
inline std::vector<double> nn_distances(const std::vector<Point>& from,
                                        const std::vector<Point>& to) {
    std::vector<double> ds;
    ds.reserve(from.size());
    for (const Point& a : from) {
        long best = std::numeric_limits<long>::max();
        for (const Point& b : to) {
            const long di = a.i - b.i, dj = a.j - b.j;
            best = std::min(best, di * di + dj * dj);
        }
        ds.push_back(std::sqrt(static_cast<double>(best)));
    }
    return ds;
}

}  // namespace detail

// 95th-percentile symmetric Hausdorff distance between mask boundaries;
// undefined (nullopt) when either mask is empty
inline std::optional<double> hd95(const Mask& p, const Mask& g) {
    check_same_size(p, g, "hd95");
    const std::vector<Point> bp = boundary_points(p), bg = boundary_points(g);
    if (bp.empty() || bg.empty()) return std::nullopt;
    const double h_pg = detail::percentile(detail::nn_distances(bp, bg), 0.95);
    const double h_gp = detail::percentile(detail::nn_distances(bg, bp), 0.95);
    return std::max(h_pg, h_gp);
}

struct ImageMetrics {
    double dsc = 0, iou = 0, precision = 0;
    std::optional<double> hd95;
};

inline ImageMetrics compute_metrics(const Mask& pred, const Mask& gt) {
    return {dsc(pred, gt), iou(pred, gt), precision(pred, gt), hd95(pred, gt)};
}

struct Aggregate {
    double mean = 0, stdev = 0;  // population std over the defined entries
    long count = 0;
};

struct MetricReport {
    std::vector<ImageMetrics> per_image;
    Aggregate dsc, iou, precision, hd95;
    long hd95_undefined = 0;  // images excluded from the hd95 aggregate
};

namespace detail {
inline Aggregate aggregate_of(const std::vector<double>& xs) {
    Aggregate a;
    a.count = static_cast<long>(xs.size());
    if (a.count == 0) return a;
    for (double x : xs) a.mean += x;
    a.mean /= static_cast<double>(a.count);
    double ss = 0;
    for (double x : xs) ss += (x - a.mean) * (x - a.mean);
    a.stdev = std::sqrt(ss / static_cast<double>(a.count));
    return a;
}
}  // namespace detail

inline MetricReport aggregate_metrics(std::vector<ImageMetrics> per_image) {
    MetricReport r;
    std::vector<double> ds, is, ps, hs;
    for (const ImageMetrics& m : per_image) {
        ds.push_back(m.dsc);
        is.push_back(m.iou);
        ps.push_back(m.precision);
        if (m.hd95)
            hs.push_back(*m.hd95);
        else
            ++r.hd95_undefined;
    }
    r.per_image = std::move(per_image);
    r.dsc = detail::aggregate_of(ds);
    r.iou = detail::aggregate_of(is);
    r.precision = detail::aggregate_of(ps);
    r.hd95 = detail::aggregate_of(hs);
    return r;
}

}  // namespace hym
