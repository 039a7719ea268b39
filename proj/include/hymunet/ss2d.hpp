#pragma once

#include <array>
#include <vector>

#include "hymunet/ops.hpp"
#include "hymunet/ssm.hpp"

namespace hym {

// Traversal family for the four directional unfoldings.
//   kRowMirror (default): plain raster, its reverse, horizontally mirrored
//                         raster, and that one's reverse.
//   kRowCol:              raster, reverse, column-major, reverse.
// Directions 2 and 4 are always the reverses of 1 and 3.
enum class ScanMode { kRowMirror, kRowCol };

// Permutation for one direction: result[i] = raster index (row*W + col) of
// the token visited at scan position i.
inline std::vector<long> scan_permutation(long H, long W, int dir, ScanMode mode) {
    check(H >= 1 && W >= 1, "scan_permutation: H and W must be positive");
    check(dir >= 0 && dir < 4, "scan_permutation: direction must be 0..3");
    const long L = H * W;
    std::vector<long> p(static_cast<std::size_t>(L));
    const int base = dir < 2 ? 0 : 2;
    for (long i = 0; i < L; ++i) {
        long v;
        if (base == 0) {
            v = i;  // row-major raster from the top-left
        } else if (mode == ScanMode::kRowMirror) {
            v = (i / W) * W + (W - 1 - i % W);  // raster after horizontal mirror
        } else {
            v = (i % H) * W + i / H;  // column-major from the top-left
        }
        p[static_cast<std::size_t>(i)] = v;
    }
    if (dir == 1 || dir == 3) std::reverse(p.begin(), p.end());
    return p;
}

inline std::vector<long> inverse_permutation(const std::vector<long>& p) {
    std::vector<long> inv(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) inv[static_cast<std::size_t>(p[i])] = static_cast<long>(i);
    return inv;
}

// Unfold a feature map into the four directional token sequences [B,L,C].
inline std::array<Tensor, 4> unfold_directions(const Tensor& F,
                                               ScanMode mode = ScanMode::kRowMirror) {
    check(F.rank() == 4, "unfold_directions: input must be [B,C,H,W], got " + shape_str(F.shape));
    const long H = F.dim(2), W = F.dim(3);
    Tensor tokens = im2seq(F);
    std::array<Tensor, 4> out;
    for (int d = 0; d < 4; ++d) out[d] = seq_gather(tokens, scan_permutation(H, W, d, mode));
    return out;
}

// Scatter four scanned sequences back to spatial layout through the inverse
// permutations and sum. The sum nests as (d1+d2)+(d3+d4) so that swapping the
// pairs (a commutative single addition) is bitwise neutral.
inline Tensor merge_directions(const std::array<Tensor, 4>& ys, long H, long W,
                               ScanMode mode = ScanMode::kRowMirror) {
    const long L = H * W;
    for (const Tensor& y : ys)
        check(y.rank() == 3 && y.dim(1) == L,
              "merge_directions: sequence shape " + shape_str(y.shape) + " does not match " +
                  std::to_string(H) + "x" + std::to_string(W));
    std::array<Tensor, 4> back;
    for (int d = 0; d < 4; ++d)
        back[d] = seq_gather(ys[d], inverse_permutation(scan_permutation(H, W, d, mode)));
    Tensor merged = add(add(back[0], back[1]), add(back[2], back[3]));
    return seq2im(merged, H, W);
}

// 2-D selective scan: unfold, scan each direction with its own parameters,
// merge. Output shape equals input shape.
inline Tensor ss2d_apply(const Tensor& F, const std::array<SsmParams, 4>& params,
                         ScanMode mode = ScanMode::kRowMirror) {
    check(F.rank() == 4, "ss2d_apply: input must be [B,C,H,W], got " + shape_str(F.shape));
    const long H = F.dim(2), W = F.dim(3);
    auto seqs = unfold_directions(F, mode);
    std::array<Tensor, 4> ys;
    for (int d = 0; d < 4; ++d) ys[d] = ssm_apply(seqs[d], params[d]);
    return merge_directions(ys, H, W, mode);
}

}  // namespace hym
