#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "hymunet/ops.hpp"
#include "hymunet/rng.hpp"
#include "hymunet/ss2d.hpp"

namespace hym {

// Runtime knobs threaded through every block forward.
struct ForwardCtx {
    bool training = false;
    NormMode norm_mode = NormMode::kBatch;
    ScanMode scan_mode = ScanMode::kRowMirror;
};

inline Tensor he_uniform(Shape s, long fan_in, Rng& rng) {
    Tensor t(std::move(s));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (long i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(-bound, bound);
    return t;
}

inline Tensor xavier_uniform(Shape s, long fan_in, long fan_out, Rng& rng) {
    Tensor t(std::move(s));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (long i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(-bound, bound);
    return t;
}

struct Conv2dLayer {
    Tensor w, b;
    long stride = 1, pad = 0;
    bool has_bias = true;

    // Convolutions feeding a BatchNorm use bias=false: the normalization
    // subtracts any channel-constant shift, which would leave the bias with
    // an identically zero gradient.
    static Conv2dLayer make(long in_c, long out_c, long k, long stride, long pad, bool bias,
                            Rng& rng) {
        Conv2dLayer l;
        l.w = he_uniform({out_c, in_c, k, k}, in_c * k * k, rng);
        l.b = Tensor::zeros({out_c});
        l.stride = stride;
        l.pad = pad;
        l.has_bias = bias;
        return l;
    }
    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
    template <class Fn>
    void visit(const std::string& p, Fn&& fn) {
        fn(p + ".w", w, true);
        if (has_bias) fn(p + ".b", b, true);
    }
};

struct BatchNorm2dLayer {
    Tensor gamma, beta, running_mean, running_var;

    static BatchNorm2dLayer make(long c) {
        BatchNorm2dLayer l;
        l.gamma = Tensor::full({c}, 1.0);
        l.beta = Tensor::zeros({c});
        l.running_mean = Tensor::zeros({c});
        l.running_var = Tensor::full({c}, 1.0);
        return l;
    }
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) {
        return batch_norm2d(x, gamma, beta, running_mean, running_var, ctx.training,
                            ctx.norm_mode);
    }
    template <class Fn>
    void visit(const std::string& p, Fn&& fn) {
        fn(p + ".gamma", gamma, true);
        fn(p + ".beta", beta, true);
        fn(p + ".running_mean", running_mean, false);
        fn(p + ".running_var", running_var, false);
    }
};

struct ConvBnRelu {
    Conv2dLayer conv;
    BatchNorm2dLayer bn;

    static ConvBnRelu make(long in_c, long out_c, long k, long stride, long pad, Rng& rng) {
        return {Conv2dLayer::make(in_c, out_c, k, stride, pad, /*bias=*/false, rng),
                BatchNorm2dLayer::make(out_c)};
    }
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) {
        return relu(bn.forward(conv.forward(x), ctx));
    }
    template <class Fn>
    void visit(const std::string& p, Fn&& fn) {
        conv.visit(p + ".conv", fn);
        bn.visit(p + ".bn", fn);
    }
};

// Residual Convolution Block: two 3x3 conv+BN+ReLU plus identity shortcut,
// with a 1x1 projection (no activation) when the channel count changes.
struct RcbBlock {
    ConvBnRelu c1, c2;
    bool has_proj = false;
    Conv2dLayer proj;

    static RcbBlock make(long in_c, long out_c, Rng& rng) {
        RcbBlock blk;
        blk.c1 = ConvBnRelu::make(in_c, out_c, 3, 1, 1, rng);
        blk.c2 = ConvBnRelu::make(out_c, out_c, 3, 1, 1, rng);
        blk.has_proj = in_c != out_c;
        if (blk.has_proj) blk.proj = Conv2dLayer::make(in_c, out_c, 1, 1, 0, /*bias=*/true, rng);
        return blk;
    }
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) {
        Tensor h = c2.forward(c1.forward(x, ctx), ctx);
        return add(h, has_proj ? proj.forward(x) : x);
    }
    template <class Fn>
    void visit(const std::string& p, Fn&& fn) {
        c1.visit(p + ".c1", fn);
        c2.visit(p + ".c2", fn);
        if (has_proj) proj.visit(p + ".proj", fn);
    }
};

struct LinearLayer {
    Tensor w, b;

    static LinearLayer make(long in_f, long out_f, Rng& rng) {
        return {xavier_uniform({out_f, in_f}, in_f, out_f, rng), Tensor::zeros({out_f})};
    }
    Tensor forward(const Tensor& x) const { return linear(x, w, b); }
    template <class Fn>
    void visit(const std::string& p, Fn&& fn) {
        fn(p + ".w", w, true);
        fn(p + ".b", b, true);
    }
};

// Visual State Space block:
//   X'    = SiLU(Linear(F_in))
//   X''   = SS2D(Conv1d(X'))        (depthwise conv along each directional
//                                    sequence, then that direction's scan)
//   F_out = Linear(X'' (*) SiLU(Linear(F_in))) + F_in
struct VssBlock {
    long channels = 0, expanded = 0;
    LinearLayer in_proj, gate_proj, out_proj;
    std::array<Tensor, 4> conv_w, conv_b;
    std::array<SsmParams, 4> ssm;

    static VssBlock make(long c, long expansion, long state_dim, long conv_k, Rng& rng,
                         Selectivity sel = Selectivity::kInputDependent) {
        check(conv_k % 2 == 1, "VssBlock: conv1d kernel width must be odd");
        VssBlock blk;
        blk.channels = c;
        blk.expanded = c * expansion;
        blk.in_proj = LinearLayer::make(c, blk.expanded, rng);
        blk.gate_proj = LinearLayer::make(c, blk.expanded, rng);
        blk.out_proj = LinearLayer::make(blk.expanded, c, rng);
        for (int d = 0; d < 4; ++d) {
            blk.conv_w[d] = he_uniform({blk.expanded, conv_k}, conv_k, rng);
            blk.conv_b[d] = Tensor::zeros({blk.expanded});
            blk.ssm[d] = make_ssm_params(blk.expanded, state_dim, rng, sel);
        }
        return blk;
    }
    Tensor forward(const Tensor& f, const ForwardCtx& ctx) {
        check(f.rank() == 4 && f.dim(1) == channels,
              "VssBlock: expected [B," + std::to_string(channels) + ",H,W], got " +
                  shape_str(f.shape));
        const long H = f.dim(2), W = f.dim(3);
        Tensor tokens = im2seq(f);
        Tensor xp = silu(in_proj.forward(tokens));
        std::array<Tensor, 4> zs;
        for (int d = 0; d < 4; ++d) {
            auto perm = scan_permutation(H, W, d, ctx.scan_mode);
            Tensor s = seq_gather(xp, perm);
            s = depthwise_conv1d(s, conv_w[d], conv_b[d]);
            s = ssm_apply(s, ssm[d]);
            zs[d] = seq_gather(s, inverse_permutation(perm));
        }
        Tensor x2 = add(add(zs[0], zs[1]), add(zs[2], zs[3]));
        Tensor gate = silu(gate_proj.forward(tokens));
        Tensor out_tokens = out_proj.forward(mul(x2, gate));
        return add(seq2im(out_tokens, H, W), f);
    }
    template <class Fn>
    void visit(const std::string& p, Fn&& fn) {
        in_proj.visit(p + ".in", fn);
        gate_proj.visit(p + ".gate", fn);
        out_proj.visit(p + ".out", fn);
        for (int d = 0; d < 4; ++d) {
            const std::string dp = p + ".dir" + std::to_string(d);
            fn(dp + ".conv.w", conv_w[d], true);
            fn(dp + ".conv.b", conv_b[d], true);
            ssm[d].visit([&](const char* name, Tensor& t, bool trainable) {
                fn(dp + "." + name, t, trainable);
            });
        }
    }
};

// Gate of the Mamba-Guided Fusion skip: G = sigmoid(1x1(relu(3x3(D_up)))),
// a single-channel spatial attention map.
struct GateNet {
    Conv2dLayer c3, c1;

    static GateNet make(long c, Rng& rng) {
        return {Conv2dLayer::make(c, c, 3, 1, 1, /*bias=*/true, rng),
                Conv2dLayer::make(c, 1, 1, 1, 0, /*bias=*/true, rng)};
    }
    Tensor forward(const Tensor& d_up) const { return sigmoid(c1.forward(relu(c3.forward(d_up)))); }
    template <class Fn>
    void visit(const std::string& p, Fn&& fn) {
        c3.visit(p + ".c3", fn);
        c1.visit(p + ".c1", fn);
    }
};

// F_skip = Concat([E + E (*) G(D_up)], D_up) with D upsampled x2 here.
inline Tensor mgf_skip(const Tensor& e, const Tensor& d, const GateNet& gate) {
    check(e.rank() == 4 && d.rank() == 4, "mgf_skip: inputs must be [B,C,H,W]");
    check(2 * d.dim(2) == e.dim(2) && 2 * d.dim(3) == e.dim(3),
          "mgf_skip: decoder map " + shape_str(d.shape) + " is not one stage below encoder map " +
              shape_str(e.shape));
    Tensor d_up = upsample_bilinear2x(d);
    Tensor g = gate.forward(d_up);
    return concat_channels(add(e, gate_mul(e, g)), d_up);
}

// Two 3x3 stride-2 conv+BN+ReLU layers taking the image to H/4 at the
// stage-1 width.
struct PatchEmbed {
    ConvBnRelu c1, c2;

    static PatchEmbed make(long in_c, long width, Rng& rng) {
        const long mid = std::max(width / 2, std::min(width, 8L));
        return {ConvBnRelu::make(in_c, mid, 3, 2, 1, rng),
                ConvBnRelu::make(mid, width, 3, 2, 1, rng)};
    }
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) {
        check(x.rank() == 4, "patch_embed: input must be [B,C,H,W], got " + shape_str(x.shape));
        check(x.dim(2) % 32 == 0 && x.dim(3) % 32 == 0,
              "patch_embed: input size " + std::to_string(x.dim(2)) + "x" +
                  std::to_string(x.dim(3)) + " must be a multiple of 32");
        return c2.forward(c1.forward(x, ctx), ctx);
    }
    template <class Fn>
    void visit(const std::string& p, Fn&& fn) {
        c1.visit(p + ".c1", fn);
        c2.visit(p + ".c2", fn);
    }
};

struct DecoderBlock {
    ConvBnRelu c1, c2;

    static DecoderBlock make(long in_c, long out_c, Rng& rng) {
        return {ConvBnRelu::make(in_c, out_c, 3, 1, 1, rng),
                ConvBnRelu::make(out_c, out_c, 3, 1, 1, rng)};
    }
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) {
        return c2.forward(c1.forward(x, ctx), ctx);
    }
    template <class Fn>
    void visit(const std::string& p, Fn&& fn) {
        c1.visit(p + ".c1", fn);
        c2.visit(p + ".c2", fn);
    }
};

// Upsample x4 back to input resolution, 1x1 conv to one channel, sigmoid.
struct OutputHead {
    Conv2dLayer conv;

    static OutputHead make(long in_c, Rng& rng) {
        return {Conv2dLayer::make(in_c, 1, 1, 1, 0, /*bias=*/true, rng)};
    }
    Tensor forward(const Tensor& x) const {
        return sigmoid(conv.forward(upsample_bilinear2x(upsample_bilinear2x(x))));
    }
    template <class Fn>
    void visit(const std::string& p, Fn&& fn) {
        conv.visit(p + ".conv", fn);
    }
};

}  // namespace hym
