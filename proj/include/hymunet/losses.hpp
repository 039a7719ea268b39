#pragma once

#include "hymunet/ops.hpp"

namespace hym {

inline constexpr double kBceClamp = 1e-7;

// Soft Dice with squared-denominator normalization.
inline Tensor dice_loss(const Tensor& pred, const Tensor& target, double eps = 1e-6) {
    check_same_shape(pred, target, "dice_loss");
    Tensor num = add_scalar(mul_scalar(sum(mul(pred, target)), 2.0), eps);
    Tensor den = add_scalar(add(sum(mul(pred, pred)), sum(mul(target, target))), eps);
    return scalar_sub(1.0, div(num, den));
}

// Mean binary cross-entropy; probabilities clamped away from {0,1}.
inline Tensor bce_elementwise(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "bce_loss");
    Tensor p = clamp(pred, kBceClamp, 1.0 - kBceClamp);
    Tensor pos = mul(target, log(p));
    Tensor neg = mul(scalar_sub(1.0, target), log(scalar_sub(1.0, p)));
    return scalar_sub(0.0, add(pos, neg));
}

inline Tensor bce_loss(const Tensor& pred, const Tensor& target) {
    return mean(bce_elementwise(pred, target));
}

// Morphological boundary band of a binary mask: dilate(y,r) AND NOT erode(y,r)
// with a (2r+1)x(2r+1) square structuring element; outside the image counts as
// background. Returns a {0,1} mask; not part of the autodiff graph.
inline Tensor edge_band(const Tensor& target, long radius) {
    check(target.rank() == 4, "edge_band: expected [B,C,H,W], got " + shape_str(target.shape));
    check(radius >= 1, "edge_band: radius must be >= 1");
    const long B = target.dim(0), C = target.dim(1), H = target.dim(2), W = target.dim(3);
    Tensor band = Tensor::zeros(target.shape);
    const double* t = target.ptr();
    double* out = band.ptr();
    for (long bc = 0; bc < B * C; ++bc) {
        const double* plane = t + bc * H * W;
        double* oplane = out + bc * H * W;
        for (long i = 0; i < H; ++i)
            for (long j = 0; j < W; ++j) {
                bool dil = false, ero = true;
                for (long di = -radius; di <= radius; ++di)
                    for (long dj = -radius; dj <= radius; ++dj) {
                        const long ii = i + di, jj = j + dj;
                        const bool fg = ii >= 0 && ii < H && jj >= 0 && jj < W &&
                                        plane[ii * W + jj] > 0.5;
                        dil = dil || fg;
                        ero = ero && fg;
                    }
                oplane[i * W + j] = dil && !ero ? 1.0 : 0.0;
            }
    }
    return band;
}

// Mean BCE restricted to the boundary band, scaled by edge_weight.
// An empty band contributes exactly zero.
inline Tensor edge_loss(const Tensor& pred, const Tensor& target, long radius = 2,
                        double edge_weight = 1.0) {
    Tensor band = edge_band(target, radius);
    double count = 0;
    for (long i = 0; i < band.numel(); ++i) count += band.ptr()[i];
    if (count == 0) {
        Tensor zero = Tensor::zeros({1});
        if (Graph* g = Graph::current(); tracing(g, pred)) attach_output(zero, g);
        return zero;
    }
    Tensor masked = mul(bce_elementwise(pred, target), band);
    return mul_scalar(sum(masked), edge_weight / count);
}

struct LossWeights {
    double dice = 1.0;
    double bce = 0.5;
    double edge = 0.5;
    double eps = 1e-6;
    long edge_radius = 2;
    double edge_weight = 1.0;
};

struct LossParts {
    Tensor total, dice, bce, edge;
};

inline LossParts total_loss(const Tensor& pred, const Tensor& target,
                            const LossWeights& w = {}) {
    LossParts parts;
    parts.dice = dice_loss(pred, target, w.eps);
    parts.bce = bce_loss(pred, target);
    parts.edge = edge_loss(pred, target, w.edge_radius, w.edge_weight);
    parts.total = add(add(mul_scalar(parts.dice, w.dice), mul_scalar(parts.bce, w.bce)),
                      mul_scalar(parts.edge, w.edge));
    return parts;
}

}  // namespace hym
