#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hymunet/image_io.hpp"
#include "hymunet/metrics.hpp"
#include "hymunet/rng.hpp"

namespace hym {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

struct Sample {
    Tensor image;  // [3,H,W] in [0,1]
    Mask mask;
    std::string id;
};

using Dataset = std::vector<Sample>;

inline void check_sample(const Sample& s, const char* who) {
    check(s.image.rank() == 3 && s.image.dim(0) == 3,
          std::string(who) + ": sample image must be [3,H,W] (id " + s.id + ")");
    check(s.image.dim(1) == s.mask.h && s.image.dim(2) == s.mask.w,
          std::string(who) + ": image/mask size mismatch for id " + s.id);
}

// --- layout conversions ---------------------------------------------------------

inline Tensor image_to_chw(const Image& img) {
    Tensor t({img.channels, img.h, img.w});
    for (long c = 0; c < img.channels; ++c)
        for (long i = 0; i < img.h; ++i)
            for (long j = 0; j < img.w; ++j) t.at((c * img.h + i) * img.w + j) = img.at(i, j, c);
    return t;
}

inline Image chw_to_image(const Tensor& t) {
    check(t.rank() == 3, "chw_to_image: expected [C,H,W], got " + shape_str(t.shape));
    Image img(t.dim(1), t.dim(2), t.dim(0));
    for (long c = 0; c < img.channels; ++c)
        for (long i = 0; i < img.h; ++i)
            for (long j = 0; j < img.w; ++j) img.at(i, j, c) = t.at((c * img.h + i) * img.w + j);
    return img;
}

inline Image mask_to_image(const Mask& m) {
    Image img(m.h, m.w, 1);
    for (std::size_t i = 0; i < m.v.size(); ++i) img.v[i] = m.v[i] ? 1.0 : 0.0;
    return img;
}

inline Mask image_to_mask(const Image& img, double threshold = 0.5) {
    check(img.channels == 1, "image_to_mask: expected grayscale");
    Mask m(img.h, img.w);
    for (std::size_t i = 0; i < img.v.size(); ++i) m.v[i] = img.v[i] >= threshold ? 1 : 0;
    return m;
}

// --- resizing (half-pixel-center sampling, edge clamped) -----------------------

inline Tensor resize_bilinear_chw(const Tensor& src, long oh, long ow) {
    check(src.rank() == 3, "resize_bilinear: expected [C,H,W]");
    check(oh >= 1 && ow >= 1, "resize_bilinear: output size must be positive");
    const long C = src.dim(0), H = src.dim(1), W = src.dim(2);
    Tensor out({C, oh, ow});
    const double sy = static_cast<double>(H) / static_cast<double>(oh);
    const double sx = static_cast<double>(W) / static_cast<double>(ow);
    auto clamp_idx = [](long i, long n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); };
    for (long oy = 0; oy < oh; ++oy) {
        const double fy = (oy + 0.5) * sy - 0.5;
        const long y0 = static_cast<long>(std::floor(fy));
        const double wy = fy - static_cast<double>(y0);
        const long ya = clamp_idx(y0, H), yb = clamp_idx(y0 + 1, H);
        for (long ox = 0; ox < ow; ++ox) {
            const double fx = (ox + 0.5) * sx - 0.5;
            const long x0 = static_cast<long>(std::floor(fx));
            const double wx = fx - static_cast<double>(x0);
            const long xa = clamp_idx(x0, W), xb = clamp_idx(x0 + 1, W);
            for (long c = 0; c < C; ++c) {
                const double* p = src.ptr() + c * H * W;
                const double top = p[ya * W + xa] * (1 - wx) + p[ya * W + xb] * wx;
                const double bot = p[yb * W + xa] * (1 - wx) + p[yb * W + xb] * wx;
                out.at((c * oh + oy) * ow + ox) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

inline Mask resize_nearest_mask(const Mask& src, long oh, long ow) {
    check(oh >= 1 && ow >= 1, "resize_nearest: output size must be positive");
    Mask out(oh, ow);
    const double sy = static_cast<double>(src.h) / static_cast<double>(oh);
    const double sx = static_cast<double>(src.w) / static_cast<double>(ow);
    for (long oy = 0; oy < oh; ++oy) {
        long iy = static_cast<long>(std::floor((oy + 0.5) * sy));
        iy = std::min(std::max(iy, 0L), src.h - 1);
        for (long ox = 0; ox < ow; ++ox) {
            long ix = static_cast<long>(std::floor((ox + 0.5) * sx));
            ix = std::min(std::max(ix, 0L), src.w - 1);
            out.set(oy, ox, src.at(iy, ix));
        }
    }
    return out;
}

// --- geometric augmentation -----------------------------------------------------

struct GeoParams {
    bool flip_h = false, flip_v = false;
    double angle_deg = 0.0;
};

namespace detail {

template <class Get, class Set>
void flip_plane(long h, long w, bool horizontal, Get&& get, Set&& set) {
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j)
            set(i, j, horizontal ? get(i, w - 1 - j) : get(h - 1 - i, j));
}

}  // namespace detail

inline Tensor flip_chw(const Tensor& src, bool horizontal) {
    const long C = src.dim(0), H = src.dim(1), W = src.dim(2);
    Tensor out(src.shape);
    for (long c = 0; c < C; ++c) {
        const double* p = src.ptr() + c * H * W;
        double* q = out.ptr() + c * H * W;
        detail::flip_plane(
            H, W, horizontal, [&](long i, long j) { return p[i * W + j]; },
            [&](long i, long j, double v) { q[i * W + j] = v; });
    }
    return out;
}

inline Mask flip_mask(const Mask& src, bool horizontal) {
    Mask out(src.h, src.w);
    detail::flip_plane(
        src.h, src.w, horizontal, [&](long i, long j) { return src.at(i, j); },
        [&](long i, long j, bool v) { out.set(i, j, v); });
    return out;
}

// Rotation about the image center by `angle_deg` (inverse-mapped).
// Out-of-frame image taps read the per-channel mean; masks read background.
inline Tensor rotate_bilinear_chw(const Tensor& src, double angle_deg) {
    const long C = src.dim(0), H = src.dim(1), W = src.dim(2);
    std::vector<double> fill(C, 0.0);
    for (long c = 0; c < C; ++c) {
        const double* p = src.ptr() + c * H * W;
        for (long i = 0; i < H * W; ++i) fill[c] += p[i];
        fill[c] /= static_cast<double>(H * W);
    }
    const double rad = angle_deg * kPi / 180.0;
    const double co = std::cos(rad), si = std::sin(rad);
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    Tensor out(src.shape);
    for (long i = 0; i < H; ++i)
        for (long j = 0; j < W; ++j) {
            const double di = i - cy, dj = j - cx;
            const double sif = cy + di * co - dj * si;
            const double sjf = cx + di * si + dj * co;
            const long i0 = static_cast<long>(std::floor(sif));
            const long j0 = static_cast<long>(std::floor(sjf));
            const double wi = sif - i0, wj = sjf - j0;
            for (long c = 0; c < C; ++c) {
                const double* p = src.ptr() + c * H * W;
                auto tap = [&](long y, long x) {
                    return (y < 0 || y >= H || x < 0 || x >= W) ? fill[c] : p[y * W + x];
                };
                const double top = tap(i0, j0) * (1 - wj) + tap(i0, j0 + 1) * wj;
                const double bot = tap(i0 + 1, j0) * (1 - wj) + tap(i0 + 1, j0 + 1) * wj;
                out.at((c * H + i) * W + j) = top * (1 - wi) + bot * wi;
            }
        }
    return out;
}

inline Mask rotate_nearest_mask(const Mask& src, double angle_deg) {
    const double rad = angle_deg * kPi / 180.0;
    const double co = std::cos(rad), si = std::sin(rad);
    const double cy = (src.h - 1) / 2.0, cx = (src.w - 1) / 2.0;
    Mask out(src.h, src.w);
    for (long i = 0; i < src.h; ++i)
        for (long j = 0; j < src.w; ++j) {
            const double di = i - cy, dj = j - cx;
            const long y = static_cast<long>(std::floor(cy + di * co - dj * si + 0.5));
            const long x = static_cast<long>(std::floor(cx + di * si + dj * co + 0.5));
            const bool fg = y >= 0 && y < src.h && x >= 0 && x < src.w && src.at(y, x);
            out.set(i, j, fg);
        }
    return out;
}

// flips are exact index permutations; a zero angle skips resampling entirely
inline Sample apply_geo(const Sample& s, const GeoParams& g) {
    check_sample(s, "apply_geo");
    check(s.mask.h == s.mask.w, "apply_geo: augmentation requires square images");
    Sample out{s.image, s.mask, s.id};
    if (g.flip_h) {
        out.image = flip_chw(out.image, true);
        out.mask = flip_mask(out.mask, true);
    }
    if (g.flip_v) {
        out.image = flip_chw(out.image, false);
        out.mask = flip_mask(out.mask, false);
    }
    if (g.angle_deg != 0.0) {
        out.image = rotate_bilinear_chw(out.image, g.angle_deg);
        out.mask = rotate_nearest_mask(out.mask, g.angle_deg);
    }
    return out;
}

inline GeoParams sample_geo(Rng& rng) {
    GeoParams g;
    g.flip_h = rng.bernoulli(0.5);
    g.flip_v = rng.bernoulli(0.5);
    g.angle_deg = rng.uniform(-90.0, 90.0);
    return g;
}

inline Sample augment(const Sample& s, Rng& rng) { return apply_geo(s, sample_geo(rng)); }

// --- synthetic lesion-like data -------------------------------------------------

struct SynthOptions {
    bool artifacts = true;
    double artifact_density = 1.0;  // scales hair/dot/ruler counts
};

namespace detail {

struct Blob {
    double cy, cx, a, b, phi;
    double amp[3], phase[3];  // Fourier harmonics k = 2,3,4

    bool contains(double y, double x) const {
        const double dy = y - cy, dx = x - cx;
        const double u = dx * std::cos(phi) + dy * std::sin(phi);
        const double v = -dx * std::sin(phi) + dy * std::cos(phi);
        const double ru = u / a, rv = v / b;
        const double rho = std::sqrt(ru * ru + rv * rv);
        const double theta = std::atan2(rv, ru);
        double edge = 1.0;
        for (int k = 0; k < 3; ++k) edge += amp[k] * std::cos((k + 2) * theta + phase[k]);
        return rho <= edge;
    }
};

inline Blob random_blob(Rng& rng, long size) {
    Blob b;
    b.cy = rng.uniform(0.3, 0.7) * size;
    b.cx = rng.uniform(0.3, 0.7) * size;
    b.a = rng.uniform(0.09, 0.15) * size;
    b.b = rng.uniform(0.09, 0.15) * size;
    b.phi = rng.uniform(0.0, kPi);
    for (int k = 0; k < 3; ++k) {
        b.amp[k] = rng.uniform(0.0, 0.3) / (k + 2);
        b.phase[k] = rng.uniform(0.0, 2.0 * kPi);
    }
    return b;
}

inline void stamp_disc(Image& img, double cy, double cx, double radius, const double* color) {
    const long lo_i = std::max(0L, static_cast<long>(std::floor(cy - radius)));
    const long hi_i = std::min(img.h - 1, static_cast<long>(std::ceil(cy + radius)));
    const long lo_j = std::max(0L, static_cast<long>(std::floor(cx - radius)));
    const long hi_j = std::min(img.w - 1, static_cast<long>(std::ceil(cx + radius)));
    for (long i = lo_i; i <= hi_i; ++i)
        for (long j = lo_j; j <= hi_j; ++j)
            if ((i - cy) * (i - cy) + (j - cx) * (j - cx) <= radius * radius)
                for (long c = 0; c < 3; ++c) img.at(i, j, c) = color[c];
}

inline void stamp_segment(Image& img, double y0, double x0, double y1, double x1,
                          const double* color) {
    const double len = std::hypot(y1 - y0, x1 - x0);
    const long steps = std::max(2L, static_cast<long>(len * 2.0));
    for (long s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / static_cast<double>(steps);
        const long i = static_cast<long>(std::floor(y0 + t * (y1 - y0) + 0.5));
        const long j = static_cast<long>(std::floor(x0 + t * (x1 - x0) + 0.5));
        if (i >= 0 && i < img.h && j >= 0 && j < img.w)
            for (long c = 0; c < 3; ++c) img.at(i, j, c) = color[c];
    }
}

}  // namespace detail

// Deterministic per (seed, index): lesion-like blobs over textured background
// with optional clutter (hair strokes, specular dots, ruler lines) drawn on
// the image only.
inline Sample generate_sample(std::uint64_t seed, long index, long size,
                              const SynthOptions& opts = {}) {
    check(size >= 32 && size % 32 == 0, "generate_sample: size must be a multiple of 32");
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(index)));

    Mask mask(size, size);
    double frac = 0.0;
    for (int attempt = 0; attempt < 64; ++attempt) {
        std::fill(mask.v.begin(), mask.v.end(), 0);
        const long nblobs = rng.uniform_int(1, 3);
        std::vector<detail::Blob> blobs;
        for (long k = 0; k < nblobs; ++k) blobs.push_back(detail::random_blob(rng, size));
        for (long i = 0; i < size; ++i)
            for (long j = 0; j < size; ++j)
                for (const auto& b : blobs)
                    if (b.contains(i + 0.5, j + 0.5)) {
                        mask.set(i, j, true);
                        break;
                    }
        frac = static_cast<double>(mask.count()) / static_cast<double>(size * size);
        if (frac >= 0.05 && frac <= 0.6) break;
    }
    check(frac >= 0.05 && frac <= 0.6, "generate_sample: foreground fraction out of range");

    double bg[3], fg[3];
    for (int c = 0; c < 3; ++c) {
        bg[c] = rng.uniform(0.45, 0.75);
        fg[c] = std::max(0.02, bg[c] - rng.uniform(0.18, 0.40));
    }
    Image img(size, size, 3);
    for (long i = 0; i < size; ++i)
        for (long j = 0; j < size; ++j) {
            const bool inside = mask.at(i, j);
            for (long c = 0; c < 3; ++c)
                img.at(i, j, c) = (inside ? fg[c] : bg[c]) + rng.normal(0.0, 0.04);
        }

    if (opts.artifacts) {
        const auto scaled = [&](long lo, long hi) {
            return static_cast<long>(std::lround(rng.uniform_int(lo, hi) * opts.artifact_density));
        };
        const long hairs = scaled(1, 4);
        for (long k = 0; k < hairs; ++k) {
            double col[3];
            const double shade = rng.uniform(0.02, 0.15);
            col[0] = col[1] = col[2] = shade;
            double y = rng.uniform(0.0, size - 1.0), x = rng.uniform(0.0, size - 1.0);
            double dir = rng.uniform(0.0, 2.0 * kPi);
            const long segs = size / 4;
            for (long s = 0; s < segs; ++s) {
                const double ny = y + 4.0 * std::sin(dir), nx = x + 4.0 * std::cos(dir);
                detail::stamp_segment(img, y, x, ny, nx, col);
                y = ny;
                x = nx;
                dir += rng.uniform(-0.5, 0.5);
            }
        }
        const long dots = scaled(2, 8);
        for (long k = 0; k < dots; ++k) {
            double col[3];
            const double shine = rng.uniform(0.85, 1.0);
            col[0] = col[1] = col[2] = shine;
            detail::stamp_disc(img, rng.uniform(0.0, size - 1.0), rng.uniform(0.0, size - 1.0),
                               rng.uniform(0.6, 1.8), col);
        }
        const long rulers = scaled(0, 2);
        for (long k = 0; k < rulers; ++k) {
            double col[3];
            const double tone = rng.uniform(0.10, 0.30);
            col[0] = col[1] = col[2] = tone;
            const double y0 = rng.uniform(0.0, size - 1.0), x0 = rng.uniform(0.0, size - 1.0);
            const double ang = rng.uniform(0.0, kPi);
            const double len = rng.uniform(0.4, 0.9) * size;
            const double y1 = y0 + len * std::sin(ang), x1 = x0 + len * std::cos(ang);
            detail::stamp_segment(img, y0, x0, y1, x1, col);
            const long ticks = static_cast<long>(len / 8.0);
            for (long t = 1; t <= ticks; ++t) {
                const double f = static_cast<double>(t) / static_cast<double>(ticks + 1);
                const double ty = y0 + f * (y1 - y0), tx = x0 + f * (x1 - x0);
                detail::stamp_segment(img, ty, tx, ty + 3.0 * std::cos(ang),
                                      tx - 3.0 * std::sin(ang), col);
            }
        }
    }

    for (auto& v : img.v) v = std::min(1.0, std::max(0.0, v));
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%06ld", index);
    return {image_to_chw(img), std::move(mask), id};
}

inline Dataset generate_synthetic(std::uint64_t seed, long count, long size,
                                  const SynthOptions& opts = {}) {
    check(count >= 0, "generate_synthetic: count must be >= 0");
    Dataset out;
    out.reserve(count);
    for (long i = 0; i < count; ++i) out.push_back(generate_sample(seed, i, size, opts));
    return out;
}

// --- splits ---------------------------------------------------------------------

struct SplitSpec {
    double train = 0.8, val = 0.1, test = 0.1;
    std::uint64_t seed = 0;
};

struct SplitIndices {
    std::vector<long> train, val, test;
};

// floor allocation for train and val after a seeded shuffle; the remainder
// goes to test (e.g. 2594 -> 2075/259/260 under the default ratios)
inline SplitIndices split_indices(long n, const SplitSpec& spec) {
    check(spec.train >= 0 && spec.val >= 0 && spec.test >= 0,
          "split: ratios must be nonnegative");
    check(std::abs(spec.train + spec.val + spec.test - 1.0) < 1e-9,
          "split: ratios must sum to 1");
    Rng rng(spec.seed);
    const std::vector<long> perm = rng.permutation(n);
    const long n_train = static_cast<long>(std::floor(spec.train * static_cast<double>(n)));
    const long n_val = static_cast<long>(std::floor(spec.val * static_cast<double>(n)));
    SplitIndices out;
    for (long i = 0; i < n; ++i) {
        if (i < n_train)
            out.train.push_back(perm[i]);
        else if (i < n_train + n_val)
            out.val.push_back(perm[i]);
        else
            out.test.push_back(perm[i]);
    }
    return out;
}

inline Dataset select(const Dataset& data, const std::vector<long>& idx) {
    Dataset out;
    out.reserve(idx.size());
    for (long i : idx) out.push_back(data.at(i));
    return out;
}

// --- on-disk layout: images/<id>.png, masks/<id>.png, manifest.txt --------------

inline void save_dataset(const std::string& dir, const Dataset& data,
                         const SplitIndices* split = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    std::vector<std::string> split_of(data.size(), "all");
    if (split) {
        for (long i : split->train) split_of.at(i) = "train";
        for (long i : split->val) split_of.at(i) = "val";
        for (long i : split->test) split_of.at(i) = "test";
    }
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    check(static_cast<bool>(manifest), "save_dataset: cannot write manifest in " + dir);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Sample& s = data[i];
        check_sample(s, "save_dataset");
        write_png((fs::path(dir) / "images" / (s.id + ".png")).string(),
                  chw_to_image(s.image));
        write_png((fs::path(dir) / "masks" / (s.id + ".png")).string(), mask_to_image(s.mask));
        manifest << s.id << " " << split_of[i] << "\n";
    }
    check(static_cast<bool>(manifest), "save_dataset: manifest write failed in " + dir);
}

namespace detail {

inline Image to_gray(const Image& img) {
    if (img.channels == 1) return img;
    Image g(img.h, img.w, 1);
    for (long i = 0; i < img.h; ++i)
        for (long j = 0; j < img.w; ++j)
            g.at(i, j, 0) = (img.at(i, j, 0) + img.at(i, j, 1) + img.at(i, j, 2)) / 3.0;
    return g;
}

inline Image to_rgb(const Image& img) {
    if (img.channels == 3) return img;
    Image rgb(img.h, img.w, 3);
    for (long i = 0; i < img.h; ++i)
        for (long j = 0; j < img.w; ++j)
            for (long c = 0; c < 3; ++c) rgb.at(i, j, c) = img.at(i, j, 0);
    return rgb;
}

}  // namespace detail

// Decode an image/mask pair into a size x size sample: image bilinear, mask
// nearest + threshold 0.5. A mask that is not near-binary before the
// threshold is rejected. size 0 keeps native resolution (then image and mask
// must already agree).
inline Sample load_pair(const std::string& image_path, const std::string& mask_path,
                        const std::string& id, long size) {
    Image img = detail::to_rgb(read_image(image_path));
    Image mimg = detail::to_gray(read_image(mask_path));
    long ambiguous = 0;
    for (double v : mimg.v) ambiguous += v > 0.1 && v < 0.9;
    check(ambiguous <= static_cast<long>(mimg.v.size()) / 4,
          "load_pair: mask " + mask_path + " is not binary");
    Sample s;
    s.id = id;
    if (size == 0) {
        s.image = image_to_chw(img);
        s.mask = image_to_mask(mimg);
    } else {
        s.image = resize_bilinear_chw(image_to_chw(img), size, size);
        s.mask = resize_nearest_mask(image_to_mask(mimg), size, size);
    }
    check_sample(s, "load_pair");
    return s;
}

inline Dataset ingest_isic(const std::string& images_dir, const std::string& masks_dir,
                           long size) {
    namespace fs = std::filesystem;
    check(fs::is_directory(images_dir), "ingest: " + images_dir + " is not a directory");
    check(fs::is_directory(masks_dir), "ingest: " + masks_dir + " is not a directory");
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(images_dir)) {
        const std::string ext = e.path().extension().string();
        if (ext == ".png" || ext == ".ppm" || ext == ".pgm") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) {
        std::fprintf(stderr, "warning: no images found in %s\n", images_dir.c_str());
        return {};
    }

    auto mask_path_of = [&](const std::string& id) -> std::string {
        for (const char* suffix : {".png", "_segmentation.png", ".pgm", ".ppm"}) {
            const fs::path p = fs::path(masks_dir) / (id + suffix);
            if (fs::exists(p)) return p.string();
        }
        return {};
    };
    std::string missing;
    for (const auto& id : ids)
        if (mask_path_of(id).empty()) missing += " " + id;
    check(missing.empty(), "ingest: missing mask for:" + missing);

    Dataset out;
    for (const auto& id : ids) {
        std::string image_path;
        for (const char* ext : {".png", ".ppm", ".pgm"}) {
            const fs::path p = fs::path(images_dir) / (id + ext);
            if (fs::exists(p)) {
                image_path = p.string();
                break;
            }
        }
        out.push_back(load_pair(image_path, mask_path_of(id), id, size));
    }
    return out;
}

// Reads a directory written by save_dataset, grouped by manifest split label.
inline std::map<std::string, Dataset> load_dataset(const std::string& dir, long size) {
    namespace fs = std::filesystem;
    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    check(static_cast<bool>(manifest), "load_dataset: missing manifest.txt in " + dir);
    std::map<std::string, Dataset> out;
    std::string id, label;
    while (manifest >> id >> label) {
        const std::string ip = (fs::path(dir) / "images" / (id + ".png")).string();
        const std::string mp = (fs::path(dir) / "masks" / (id + ".png")).string();
        out[label].push_back(load_pair(ip, mp, id, size));
    }
    return out;
}

// --- batch assembly --------------------------------------------------------------

inline Tensor stack_images(const Dataset& data, const std::vector<long>& idx) {
    check(!idx.empty(), "stack_images: empty batch");
    const Sample& first = data.at(idx[0]);
    const long C = first.image.dim(0), H = first.image.dim(1), W = first.image.dim(2);
    Tensor out({static_cast<long>(idx.size()), C, H, W});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const Sample& s = data.at(idx[b]);
        check(s.image.shape == first.image.shape,
              "stack_images: inconsistent sizes in batch (id " + s.id + ")");
        std::copy(s.image.ptr(), s.image.ptr() + C * H * W, out.ptr() + b * C * H * W);
    }
    return out;
}

inline Tensor stack_masks(const Dataset& data, const std::vector<long>& idx) {
    check(!idx.empty(), "stack_masks: empty batch");
    const Sample& first = data.at(idx[0]);
    const long H = first.mask.h, W = first.mask.w;
    Tensor out({static_cast<long>(idx.size()), 1, H, W});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const Mask& m = data.at(idx[b]).mask;
        check(m.h == H && m.w == W, "stack_masks: inconsistent sizes in batch");
        for (long i = 0; i < H * W; ++i) out.at(b * H * W + i) = m.v[i] ? 1.0 : 0.0;
    }
    return out;
}

}  // namespace hym
