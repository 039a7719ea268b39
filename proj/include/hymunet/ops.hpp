#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "hymunet/graph.hpp"
#include "hymunet/tensor.hpp"

namespace hym {

// --- BLAS ------------------------------------------------------------------

extern "C" {
void openblas_set_num_threads(int num_threads);
}

inline void blas_single_thread() {
    static const bool once = [] {
        openblas_set_num_threads(1);  // deterministic accumulation order
        return true;
    }();
    (void)once;
}

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C. lda/ldb are the
// physical row lengths of the stored matrices.
inline void gemm(bool ta, bool tb, long m, long n, long k, double alpha, const double* A,
                 long lda, const double* B, long ldb, double beta, double* C, long ldc) {
    blas_single_thread();
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, A,
                static_cast<int>(lda), B, static_cast<int>(ldb), beta, C, static_cast<int>(ldc));
}

// --- elementwise binary ------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check(a.shape == b.shape, std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                  " vs " + shape_str(b.shape));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
    debug_check_finite(out, "add");
    if (Graph* g = Graph::current(); tracing(g, a, b)) {
        attach_output(out, g);
        Tensor ta = a, tb = b, to = out;
        if (ta.requires_grad) ta.ensure_grad();
        if (tb.requires_grad) tb.ensure_grad();
        g->add([ta, tb, to]() mutable {
            const double* go = to.gptr();
            const long n = to.numel();
            if (ta.requires_grad)
                for (long i = 0; i < n; ++i) ta.gptr()[i] += go[i];
            if (tb.requires_grad)
                for (long i = 0; i < n; ++i) tb.gptr()[i] += go[i];
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) out.at(i) = a.at(i) - b.at(i);
    debug_check_finite(out, "sub");
    if (Graph* g = Graph::current(); tracing(g, a, b)) {
        attach_output(out, g);
        Tensor ta = a, tb = b, to = out;
        if (ta.requires_grad) ta.ensure_grad();
        if (tb.requires_grad) tb.ensure_grad();
        g->add([ta, tb, to]() mutable {
            const double* go = to.gptr();
            const long n = to.numel();
            if (ta.requires_grad)
                for (long i = 0; i < n; ++i) ta.gptr()[i] += go[i];
            if (tb.requires_grad)
                for (long i = 0; i < n; ++i) tb.gptr()[i] -= go[i];
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
    debug_check_finite(out, "mul");
    if (Graph* g = Graph::current(); tracing(g, a, b)) {
        attach_output(out, g);
        Tensor ta = a, tb = b, to = out;
        if (ta.requires_grad) ta.ensure_grad();
        if (tb.requires_grad) tb.ensure_grad();
        g->add([ta, tb, to]() mutable {
            const double* go = to.gptr();
            const long n = to.numel();
            if (ta.requires_grad)
                for (long i = 0; i < n; ++i) ta.gptr()[i] += go[i] * tb.at(i);
            if (tb.requires_grad)
                for (long i = 0; i < n; ++i) tb.gptr()[i] += go[i] * ta.at(i);
        });
    }
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    Tensor out(a.shape);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) out.at(i) = a.at(i) / b.at(i);
    debug_check_finite(out, "div");
    if (Graph* g = Graph::current(); tracing(g, a, b)) {
        attach_output(out, g);
        Tensor ta = a, tb = b, to = out;
        if (ta.requires_grad) ta.ensure_grad();
        if (tb.requires_grad) tb.ensure_grad();
        g->add([ta, tb, to]() mutable {
            const double* go = to.gptr();
            const long n = to.numel();
            if (ta.requires_grad)
                for (long i = 0; i < n; ++i) ta.gptr()[i] += go[i] / tb.at(i);
            if (tb.requires_grad)
                for (long i = 0; i < n; ++i)
                    tb.gptr()[i] -= go[i] * ta.at(i) / (tb.at(i) * tb.at(i));
        });
    }
    return out;
}

// --- scalar variants ---------------------------------------------------------

inline Tensor add_scalar(const Tensor& a, double s) {
    Tensor out(a.shape);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) out.at(i) = a.at(i) + s;
    debug_check_finite(out, "add_scalar");
    if (Graph* g = Graph::current(); tracing(g, a)) {
        attach_output(out, g);
        Tensor ta = a, to = out;
        ta.ensure_grad();
        g->add([ta, to]() mutable {
            const long n = to.numel();
            for (long i = 0; i < n; ++i) ta.gptr()[i] += to.gptr()[i];
        });
    }
    return out;
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    Tensor out(a.shape);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) out.at(i) = a.at(i) * s;
    debug_check_finite(out, "mul_scalar");
    if (Graph* g = Graph::current(); tracing(g, a)) {
        attach_output(out, g);
        Tensor ta = a, to = out;
        ta.ensure_grad();
        g->add([ta, to, s]() mutable {
            const long n = to.numel();
            for (long i = 0; i < n; ++i) ta.gptr()[i] += to.gptr()[i] * s;
        });
    }
    return out;
}

// s - x elementwise.
inline Tensor scalar_sub(double s, const Tensor& a) {
    Tensor out(a.shape);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) out.at(i) = s - a.at(i);
    debug_check_finite(out, "scalar_sub");
    if (Graph* g = Graph::current(); tracing(g, a)) {
        attach_output(out, g);
        Tensor ta = a, to = out;
        ta.ensure_grad();
        g->add([ta, to]() mutable {
            const long n = to.numel();
            for (long i = 0; i < n; ++i) ta.gptr()[i] -= to.gptr()[i];
        });
    }
    return out;
}

// --- unary ------------------------------------------------------------------

namespace detail {
// Shared skeleton for elementwise unary ops: dfn receives (x_i, y_i).
template <class Fwd, class Dfn>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Dfn dfn) {
    Tensor out(a.shape);
    const long n = out.numel();
    for (long i = 0; i < n; ++i) out.at(i) = fwd(a.at(i));
    debug_check_finite(out, name);
    if (Graph* g = Graph::current(); tracing(g, a)) {
        attach_output(out, g);
        Tensor ta = a, to = out;
        ta.ensure_grad();
        g->add([ta, to, dfn]() mutable {
            const long n = to.numel();
            for (long i = 0; i < n; ++i) ta.gptr()[i] += to.gptr()[i] * dfn(ta.at(i), to.at(i));
        });
    }
    return out;
}
}  // namespace detail

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_scalar(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a, "sigmoid", [](double x) { return sigmoid_scalar(x); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor silu(const Tensor& a) {
    return detail::unary_op(
        a, "silu", [](double x) { return x * sigmoid_scalar(x); },
        [](double x, double) {
            double s = sigmoid_scalar(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

inline double softplus_scalar(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline Tensor softplus(const Tensor& a) {
    return detail::unary_op(
        a, "softplus", [](double x) { return softplus_scalar(x); },
        [](double x, double) { return sigmoid_scalar(x); });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    return detail::unary_op(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor clamp(const Tensor& a, double lo, double hi) {
    return detail::unary_op(
        a, "clamp", [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// --- reductions ---------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    Tensor out({1});
    double acc = 0.0;
    const long n = a.numel();
    for (long i = 0; i < n; ++i) acc += a.at(i);
    out.at(0) = acc;
    debug_check_finite(out, "sum");
    if (Graph* g = Graph::current(); tracing(g, a)) {
        attach_output(out, g);
        Tensor ta = a, to = out;
        ta.ensure_grad();
        g->add([ta, to]() mutable {
            const double go = to.gptr()[0];
            const long n = ta.numel();
            for (long i = 0; i < n; ++i) ta.gptr()[i] += go;
        });
    }
    return out;
}

inline Tensor mean(const Tensor& a) {
    Tensor out({1});
    double acc = 0.0;
    const long n = a.numel();
    for (long i = 0; i < n; ++i) acc += a.at(i);
    out.at(0) = acc / static_cast<double>(n);
    debug_check_finite(out, "mean");
    if (Graph* g = Graph::current(); tracing(g, a)) {
        attach_output(out, g);
        Tensor ta = a, to = out;
        ta.ensure_grad();
        g->add([ta, to]() mutable {
            const long n = ta.numel();
            const double go = to.gptr()[0] / static_cast<double>(n);
            for (long i = 0; i < n; ++i) ta.gptr()[i] += go;
        });
    }
    return out;
}

// --- shape ops -----------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    check(shape_numel(new_shape) == a.numel(), "reshape: cannot view " + shape_str(a.shape) +
                                                   " as " + shape_str(new_shape));
    Tensor out;
    out.shape = std::move(new_shape);
    out.data = std::make_shared<std::vector<double>>(*a.data);
    if (Graph* g = Graph::current(); tracing(g, a)) {
        attach_output(out, g);
        Tensor ta = a, to = out;
        ta.ensure_grad();
        g->add([ta, to]() mutable {
            const long n = ta.numel();
            for (long i = 0; i < n; ++i) ta.gptr()[i] += to.gptr()[i];
        });
    }
    return out;
}

// [B,C,H,W] -> [B,H*W,C] row-major raster tokens.
inline Tensor im2seq(const Tensor& a) {
    check(a.rank() == 4, "im2seq: input must be [B,C,H,W], got " + shape_str(a.shape));
    const long B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3), L = H * W;
    Tensor out({B, L, C});
    for (long b = 0; b < B; ++b)
        for (long c = 0; c < C; ++c)
            for (long l = 0; l < L; ++l)
                out.at((b * L + l) * C + c) = a.at((b * C + c) * L + l);
    if (Graph* g = Graph::current(); tracing(g, a)) {
        attach_output(out, g);
        Tensor ta = a, to = out;
        ta.ensure_grad();
        g->add([ta, to, B, C, L]() mutable {
            for (long b = 0; b < B; ++b)
                for (long c = 0; c < C; ++c)
                    for (long l = 0; l < L; ++l)
                        ta.gptr()[(b * C + c) * L + l] += to.gptr()[(b * L + l) * C + c];
        });
    }
    return out;
}

// [B,L,C] -> [B,C,H,W] with L == H*W.
inline Tensor seq2im(const Tensor& a, long H, long W) {
    check(a.rank() == 3, "seq2im: input must be [B,L,C], got " + shape_str(a.shape));
    const long B = a.dim(0), L = a.dim(1), C = a.dim(2);
    check(L == H * W, "seq2im: token count " + std::to_string(L) + " != " + std::to_string(H) +
                          "x" + std::to_string(W));
    Tensor out({B, C, H, W});
    for (long b = 0; b < B; ++b)
        for (long l = 0; l < L; ++l)
            for (long c = 0; c < C; ++c)
                out.at((b * C + c) * L + l) = a.at((b * L + l) * C + c);
    if (Graph* g = Graph::current(); tracing(g, a)) {
        attach_output(out, g);
        Tensor ta = a, to = out;
        ta.ensure_grad();
        g->add([ta, to, B, C, L]() mutable {
            for (long b = 0; b < B; ++b)
                for (long l = 0; l < L; ++l)
                    for (long c = 0; c < C; ++c)
                        ta.gptr()[(b * L + l) * C + c] += to.gptr()[(b * C + c) * L + l];
        });
    }
    return out;
}

// Reorder tokens: out[b,i,c] = x[b, idx[i], c]. idx must be a permutation.
inline Tensor seq_gather(const Tensor& a, const std::vector<long>& idx) {
    check(a.rank() == 3, "seq_gather: input must be [B,L,C], got " + shape_str(a.shape));
    const long B = a.dim(0), L = a.dim(1), C = a.dim(2);
    check(static_cast<long>(idx.size()) == L,
          "seq_gather: permutation length " + std::to_string(idx.size()) + " != L " +
              std::to_string(L));
    Tensor out({B, L, C});
    for (long b = 0; b < B; ++b)
        for (long i = 0; i < L; ++i) {
            const long src = idx[static_cast<std::size_t>(i)];
            for (long c = 0; c < C; ++c)
                out.at((b * L + i) * C + c) = a.at((b * L + src) * C + c);
        }
    if (Graph* g = Graph::current(); tracing(g, a)) {
        attach_output(out, g);
        Tensor ta = a, to = out;
        ta.ensure_grad();
        auto perm = std::make_shared<std::vector<long>>(idx);
        g->add([ta, to, perm, B, L, C]() mutable {
            for (long b = 0; b < B; ++b)
                for (long i = 0; i < L; ++i) {
                    const long src = (*perm)[static_cast<std::size_t>(i)];
                    for (long c = 0; c < C; ++c)
                        ta.gptr()[(b * L + src) * C + c] += to.gptr()[(b * L + i) * C + c];
                }
        });
    }
    return out;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    check(a.rank() == 4 && b.rank() == 4, "concat_channels: inputs must be [B,C,H,W]");
    check(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels: mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const long B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    const long S = H * W;
    Tensor out({B, Ca + Cb, H, W});
    for (long bb = 0; bb < B; ++bb) {
        std::copy_n(a.ptr() + bb * Ca * S, Ca * S, out.ptr() + bb * (Ca + Cb) * S);
        std::copy_n(b.ptr() + bb * Cb * S, Cb * S, out.ptr() + (bb * (Ca + Cb) + Ca) * S);
    }
    if (Graph* g = Graph::current(); tracing(g, a, b)) {
        attach_output(out, g);
        Tensor ta = a, tb = b, to = out;
        if (ta.requires_grad) ta.ensure_grad();
        if (tb.requires_grad) tb.ensure_grad();
        g->add([ta, tb, to, B, Ca, Cb, S]() mutable {
            for (long bb = 0; bb < B; ++bb) {
                if (ta.requires_grad) {
                    const double* go = to.gptr() + bb * (Ca + Cb) * S;
                    double* ga = ta.gptr() + bb * Ca * S;
                    for (long i = 0; i < Ca * S; ++i) ga[i] += go[i];
                }
                if (tb.requires_grad) {
                    const double* go = to.gptr() + (bb * (Ca + Cb) + Ca) * S;
                    double* gb = tb.gptr() + bb * Cb * S;
                    for (long i = 0; i < Cb * S; ++i) gb[i] += go[i];
                }
            }
        });
    }
    return out;
}

// Broadcast-multiply a one-channel gate over all channels: out = x * g.
inline Tensor gate_mul(const Tensor& x, const Tensor& gate) {
    check(x.rank() == 4 && gate.rank() == 4, "gate_mul: inputs must be [B,C,H,W]");
    check(gate.dim(1) == 1 && gate.dim(0) == x.dim(0) && gate.dim(2) == x.dim(2) &&
              gate.dim(3) == x.dim(3),
          "gate_mul: gate must be [B,1,H,W] matching x, got " + shape_str(gate.shape) + " vs " +
              shape_str(x.shape));
    const long B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
    Tensor out(x.shape);
    for (long b = 0; b < B; ++b)
        for (long c = 0; c < C; ++c)
            for (long i = 0; i < S; ++i)
                out.at((b * C + c) * S + i) = x.at((b * C + c) * S + i) * gate.at(b * S + i);
    debug_check_finite(out, "gate_mul");
    if (Graph* g = Graph::current(); tracing(g, x, gate)) {
        attach_output(out, g);
        Tensor tx = x, tg = gate, to = out;
        if (tx.requires_grad) tx.ensure_grad();
        if (tg.requires_grad) tg.ensure_grad();
        g->add([tx, tg, to, B, C, S]() mutable {
            for (long b = 0; b < B; ++b)
                for (long c = 0; c < C; ++c)
                    for (long i = 0; i < S; ++i) {
                        const double go = to.gptr()[(b * C + c) * S + i];
                        if (tx.requires_grad)
                            tx.gptr()[(b * C + c) * S + i] += go * tg.at(b * S + i);
                        if (tg.requires_grad)
                            tg.gptr()[b * S + i] += go * tx.at((b * C + c) * S + i);
                    }
        });
    }
    return out;
}

// --- matmul / linear --------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul: inputs must be rank-2, got " +
                                              shape_str(a.shape) + " and " + shape_str(b.shape));
    const long m = a.dim(0), k = a.dim(1), n = b.dim(1);
    check(b.dim(0) == k, "matmul: inner dims differ, " + shape_str(a.shape) + " x " +
                             shape_str(b.shape));
    Tensor out({m, n});
    gemm(false, false, m, n, k, 1.0, a.ptr(), k, b.ptr(), n, 0.0, out.ptr(), n);
    debug_check_finite(out, "matmul");
    if (Graph* g = Graph::current(); tracing(g, a, b)) {
        attach_output(out, g);
        Tensor ta = a, tb = b, to = out;
        if (ta.requires_grad) ta.ensure_grad();
        if (tb.requires_grad) tb.ensure_grad();
        g->add([ta, tb, to, m, n, k]() mutable {
            if (ta.requires_grad)  // gA += gC * B^T
                gemm(false, true, m, k, n, 1.0, to.gptr(), n, tb.ptr(), n, 1.0, ta.gptr(), k);
            if (tb.requires_grad)  // gB += A^T * gC
                gemm(true, false, k, n, m, 1.0, ta.ptr(), k, to.gptr(), n, 1.0, tb.gptr(), n);
        });
    }
    return out;
}

// y[..., out] = x[..., in] * W^T + b with W stored [out, in].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.rank() >= 1, "linear: input must have rank >= 1");
    check(w.rank() == 2, "linear: weight must be [out,in], got " + shape_str(w.shape));
    const long in = w.dim(1), out_f = w.dim(0);
    check(x.shape.back() == in, "linear: input feature dim " + std::to_string(x.shape.back()) +
                                    " != weight in dim " + std::to_string(in));
    check(b.numel() == out_f, "linear: bias size " + std::to_string(b.numel()) +
                                  " != out dim " + std::to_string(out_f));
    const long M = x.numel() / in;
    Shape out_shape = x.shape;
    out_shape.back() = out_f;
    Tensor out(out_shape);
    gemm(false, true, M, out_f, in, 1.0, x.ptr(), in, w.ptr(), in, 0.0, out.ptr(), out_f);
    for (long r = 0; r < M; ++r)
        for (long c = 0; c < out_f; ++c) out.at(r * out_f + c) += b.at(c);
    debug_check_finite(out, "linear");
    if (Graph* g = Graph::current(); tracing(g, x, w, b)) {
        attach_output(out, g);
        Tensor tx = x, tw = w, tb = b, to = out;
        if (tx.requires_grad) tx.ensure_grad();
        if (tw.requires_grad) tw.ensure_grad();
        if (tb.requires_grad) tb.ensure_grad();
        g->add([tx, tw, tb, to, M, in, out_f]() mutable {
            if (tx.requires_grad)  // gX += gY * W
                gemm(false, false, M, in, out_f, 1.0, to.gptr(), out_f, tw.ptr(), in, 1.0,
                     tx.gptr(), in);
            if (tw.requires_grad)  // gW += gY^T * X
                gemm(true, false, out_f, in, M, 1.0, to.gptr(), out_f, tx.ptr(), in, 1.0,
                     tw.gptr(), in);
            if (tb.requires_grad)
                for (long r = 0; r < M; ++r)
                    for (long c = 0; c < out_f; ++c) tb.gptr()[c] += to.gptr()[r * out_f + c];
        });
    }
    return out;
}

// --- conv2d -----------------------------------------------------------------------

namespace detail {
// Scatter x[b] into col [C*kh*kw, OH*OW] with zero padding.
inline void im2col(const double* x, long C, long H, long W, long kh, long kw, long stride,
                   long pad, long OH, long OW, double* col) {
    for (long c = 0; c < C; ++c)
        for (long i = 0; i < kh; ++i)
            for (long j = 0; j < kw; ++j) {
                double* row = col + ((c * kh + i) * kw + j) * OH * OW;
                for (long oy = 0; oy < OH; ++oy) {
                    const long iy = oy * stride - pad + i;
                    if (iy < 0 || iy >= H) {
                        for (long ox = 0; ox < OW; ++ox) row[oy * OW + ox] = 0.0;
                        continue;
                    }
                    for (long ox = 0; ox < OW; ++ox) {
                        const long ix = ox * stride - pad + j;
                        row[oy * OW + ox] = (ix < 0 || ix >= W) ? 0.0 : x[(c * H + iy) * W + ix];
                    }
                }
            }
}

inline void col2im_add(const double* col, long C, long H, long W, long kh, long kw, long stride,
                       long pad, long OH, long OW, double* gx) {
    for (long c = 0; c < C; ++c)
        for (long i = 0; i < kh; ++i)
            for (long j = 0; j < kw; ++j) {
                const double* row = col + ((c * kh + i) * kw + j) * OH * OW;
                for (long oy = 0; oy < OH; ++oy) {
                    const long iy = oy * stride - pad + i;
                    if (iy < 0 || iy >= H) continue;
                    for (long ox = 0; ox < OW; ++ox) {
                        const long ix = ox * stride - pad + j;
                        if (ix >= 0 && ix < W) gx[(c * H + iy) * W + ix] += row[oy * OW + ox];
                    }
                }
            }
}
}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, long stride = 1,
                     long pad = 0) {
    check(x.rank() == 4, "conv2d: input must be [B,C,H,W], got " + shape_str(x.shape));
    check(w.rank() == 4, "conv2d: weight must be [OC,C,kh,kw], got " + shape_str(w.shape));
    const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const long OC = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    check(w.dim(1) == C, "conv2d: weight expects " + std::to_string(w.dim(1)) +
                             " input channels, input has " + std::to_string(C));
    check(b.numel() == OC, "conv2d: bias size " + std::to_string(b.numel()) + " != out channels " +
                               std::to_string(OC));
    check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    const long OH = (H + 2 * pad - kh) / stride + 1;
    const long OW = (W + 2 * pad - kw) / stride + 1;
    check(OH >= 1 && OW >= 1, "conv2d: kernel larger than padded input");
    const long K = C * kh * kw, M = OH * OW;

    Tensor out({B, OC, OH, OW});
    auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B * K * M));
    for (long bb = 0; bb < B; ++bb) {
        double* col = cols->data() + bb * K * M;
        detail::im2col(x.ptr() + bb * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW, col);
        double* o = out.ptr() + bb * OC * M;
        gemm(false, false, OC, M, K, 1.0, w.ptr(), K, col, M, 0.0, o, M);
        for (long oc = 0; oc < OC; ++oc)
            for (long m = 0; m < M; ++m) o[oc * M + m] += b.at(oc);
    }
    debug_check_finite(out, "conv2d");
    if (Graph* g = Graph::current(); tracing(g, x, w, b)) {
        attach_output(out, g);
        Tensor tx = x, tw = w, tbias = b, to = out;
        if (tx.requires_grad) tx.ensure_grad();
        if (tw.requires_grad) tw.ensure_grad();
        if (tbias.requires_grad) tbias.ensure_grad();
        g->add([tx, tw, tbias, to, cols, B, C, H, W, kh, kw, stride, pad, OH, OW, OC, K,
                M]() mutable {
            std::vector<double> gcol(static_cast<std::size_t>(K * M));
            for (long bb = 0; bb < B; ++bb) {
                const double* go = to.gptr() + bb * OC * M;
                const double* col = cols->data() + bb * K * M;
                if (tw.requires_grad)  // gW += gO * col^T
                    gemm(false, true, OC, K, M, 1.0, go, M, col, M, 1.0, tw.gptr(), K);
                if (tbias.requires_grad)
                    for (long oc = 0; oc < OC; ++oc)
                        for (long m = 0; m < M; ++m) tbias.gptr()[oc] += go[oc * M + m];
                if (tx.requires_grad) {  // gcol = W^T * gO, then scatter
                    gemm(true, false, K, M, OC, 1.0, tw.ptr(), K, go, M, 0.0, gcol.data(), M);
                    detail::col2im_add(gcol.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                                       tx.gptr() + bb * C * H * W);
                }
            }
        });
    }
    return out;
}

// Depthwise 1-D convolution over token sequences [B,L,C], "same" padding.
inline Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.rank() == 3, "depthwise_conv1d: input must be [B,L,C], got " + shape_str(x.shape));
    check(w.rank() == 2, "depthwise_conv1d: weight must be [C,k], got " + shape_str(w.shape));
    const long B = x.dim(0), L = x.dim(1), C = x.dim(2), k = w.dim(1);
    check(w.dim(0) == C, "depthwise_conv1d: weight has " + std::to_string(w.dim(0)) +
                             " channels, input has " + std::to_string(C));
    check(k % 2 == 1, "depthwise_conv1d: kernel width must be odd for same padding");
    check(b.numel() == C, "depthwise_conv1d: bias size mismatch");
    const long pad = (k - 1) / 2;
    Tensor out({B, L, C});
    for (long bb = 0; bb < B; ++bb)
        for (long l = 0; l < L; ++l)
            for (long c = 0; c < C; ++c) {
                double acc = b.at(c);
                for (long j = 0; j < k; ++j) {
                    const long t = l + j - pad;
                    if (t >= 0 && t < L) acc += w.at(c * k + j) * x.at((bb * L + t) * C + c);
                }
                out.at((bb * L + l) * C + c) = acc;
            }
    debug_check_finite(out, "depthwise_conv1d");
    if (Graph* g = Graph::current(); tracing(g, x, w, b)) {
        attach_output(out, g);
        Tensor tx = x, tw = w, tbias = b, to = out;
        if (tx.requires_grad) tx.ensure_grad();
        if (tw.requires_grad) tw.ensure_grad();
        if (tbias.requires_grad) tbias.ensure_grad();
        g->add([tx, tw, tbias, to, B, L, C, k, pad]() mutable {
            for (long bb = 0; bb < B; ++bb)
                for (long l = 0; l < L; ++l)
                    for (long c = 0; c < C; ++c) {
                        const double go = to.gptr()[(bb * L + l) * C + c];
                        if (tbias.requires_grad) tbias.gptr()[c] += go;
                        for (long j = 0; j < k; ++j) {
                            const long t = l + j - pad;
                            if (t < 0 || t >= L) continue;
                            if (tw.requires_grad)
                                tw.gptr()[c * k + j] += go * tx.at((bb * L + t) * C + c);
                            if (tx.requires_grad)
                                tx.gptr()[(bb * L + t) * C + c] += go * tw.at(c * k + j);
                        }
                    }
        });
    }
    return out;
}

// --- batch norm ------------------------------------------------------------------

enum class NormMode { kBatch, kInstance };

// Per-channel normalization over [B,C,H,W]. In kBatch mode statistics pool
// over (B,H,W) and running averages are updated in training / used in eval.
// In kInstance mode statistics are per (b,c) over (H,W) in both phases and
// the running buffers are left untouched.
inline Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           Tensor& running_mean, Tensor& running_var, bool training,
                           NormMode mode = NormMode::kBatch, double momentum = 0.1,
                           double eps = 1e-5) {
    check(x.rank() == 4, "batch_norm2d: input must be [B,C,H,W], got " + shape_str(x.shape));
    const long B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
    check(gamma.numel() == C && beta.numel() == C, "batch_norm2d: affine param size mismatch");
    check(running_mean.numel() == C && running_var.numel() == C,
          "batch_norm2d: running buffer size mismatch");

    const bool per_instance = (mode == NormMode::kInstance);
    const long groups = per_instance ? B * C : C;
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups));
    auto group_of = [C, per_instance](long b, long c) { return per_instance ? b * C + c : c; };

    Tensor out(x.shape);
    const bool use_batch_stats = training || per_instance;
    if (use_batch_stats) {
        const long m = per_instance ? S : B * S;
        std::vector<double> mu(static_cast<std::size_t>(groups), 0.0);
        std::vector<double> var(static_cast<std::size_t>(groups), 0.0);
        for (long b = 0; b < B; ++b)
            for (long c = 0; c < C; ++c)
                for (long i = 0; i < S; ++i) mu[group_of(b, c)] += x.at((b * C + c) * S + i);
        for (long gi = 0; gi < groups; ++gi) mu[gi] /= static_cast<double>(m);
        for (long b = 0; b < B; ++b)
            for (long c = 0; c < C; ++c)
                for (long i = 0; i < S; ++i) {
                    const double d = x.at((b * C + c) * S + i) - mu[group_of(b, c)];
                    var[group_of(b, c)] += d * d;
                }
        for (long gi = 0; gi < groups; ++gi) {
            var[gi] /= static_cast<double>(m);
            (*inv_std)[gi] = 1.0 / std::sqrt(var[gi] + eps);
        }
        if (!per_instance && training) {
            const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
            for (long c = 0; c < C; ++c) {
                running_mean.at(c) = (1.0 - momentum) * running_mean.at(c) + momentum * mu[c];
                running_var.at(c) =
                    (1.0 - momentum) * running_var.at(c) + momentum * var[c] * unbias;
            }
        }
        for (long b = 0; b < B; ++b)
            for (long c = 0; c < C; ++c) {
                const long gi = group_of(b, c);
                for (long i = 0; i < S; ++i) {
                    const long off = (b * C + c) * S + i;
                    const double xh = (x.at(off) - mu[gi]) * (*inv_std)[gi];
                    (*xhat)[off] = xh;
                    out.at(off) = gamma.at(c) * xh + beta.at(c);
                }
            }
    } else {
        for (long c = 0; c < C; ++c)
            (*inv_std)[c] = 1.0 / std::sqrt(running_var.at(c) + eps);
        for (long b = 0; b < B; ++b)
            for (long c = 0; c < C; ++c)
                for (long i = 0; i < S; ++i) {
                    const long off = (b * C + c) * S + i;
                    const double xh = (x.at(off) - running_mean.at(c)) * (*inv_std)[c];
                    (*xhat)[off] = xh;
                    out.at(off) = gamma.at(c) * xh + beta.at(c);
                }
    }
    debug_check_finite(out, "batch_norm2d");

    if (Graph* g = Graph::current(); tracing(g, x, gamma, beta)) {
        attach_output(out, g);
        Tensor tx = x, tg = gamma, tb = beta, to = out;
        if (tx.requires_grad) tx.ensure_grad();
        if (tg.requires_grad) tg.ensure_grad();
        if (tb.requires_grad) tb.ensure_grad();
        g->add([tx, tg, tb, to, xhat, inv_std, group_of, B, C, S, use_batch_stats]() mutable {
            const long groups = static_cast<long>(inv_std->size());
            const long m = (B * C * S) / groups;
            std::vector<double> s1(static_cast<std::size_t>(groups), 0.0);
            std::vector<double> s2(static_cast<std::size_t>(groups), 0.0);
            for (long b = 0; b < B; ++b)
                for (long c = 0; c < C; ++c)
                    for (long i = 0; i < S; ++i) {
                        const long off = (b * C + c) * S + i;
                        const long gi = group_of(b, c);
                        s1[gi] += to.gptr()[off];
                        s2[gi] += to.gptr()[off] * (*xhat)[off];
                    }
            if (tg.requires_grad || tb.requires_grad)
                for (long gi = 0; gi < groups; ++gi) {
                    const long c = groups == C ? gi : gi % C;
                    if (tg.requires_grad) tg.gptr()[c] += s2[gi];
                    if (tb.requires_grad) tb.gptr()[c] += s1[gi];
                }
            if (tx.requires_grad) {
                for (long b = 0; b < B; ++b)
                    for (long c = 0; c < C; ++c) {
                        const long gi = group_of(b, c);
                        const double scale = tg.at(c) * (*inv_std)[gi];
                        for (long i = 0; i < S; ++i) {
                            const long off = (b * C + c) * S + i;
                            const double go = to.gptr()[off];
                            if (use_batch_stats)
                                tx.gptr()[off] +=
                                    scale * (go - s1[gi] / static_cast<double>(m) -
                                             (*xhat)[off] * s2[gi] / static_cast<double>(m));
                            else
                                tx.gptr()[off] += scale * go;
                        }
                    }
            }
        });
    }
    return out;
}

// --- bilinear upsample x2 (align_corners = false) -----------------------------------

namespace detail {
struct LerpTap {
    long i0, i1;
    double w1;  // weight of i1; i0 gets (1 - w1)
};
inline std::vector<LerpTap> upsample_taps(long in_size) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(2 * in_size));
    for (long o = 0; o < 2 * in_size; ++o) {
        const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
        double f = std::floor(src);
        double w = src - f;
        long i0 = static_cast<long>(f);
        long i1 = i0 + 1;
        i0 = std::clamp(i0, 0L, in_size - 1);
        i1 = std::clamp(i1, 0L, in_size - 1);
        taps[static_cast<std::size_t>(o)] = {i0, i1, w};
    }
    return taps;
}
}  // namespace detail

inline Tensor upsample_bilinear2x(const Tensor& x) {
    check(x.rank() == 4, "upsample_bilinear2x: input must be [B,C,H,W], got " +
                             shape_str(x.shape));
    const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto ty = detail::upsample_taps(H);
    const auto tx_ = detail::upsample_taps(W);
    Tensor out({B, C, 2 * H, 2 * W});
    for (long b = 0; b < B; ++b)
        for (long c = 0; c < C; ++c) {
            const double* src = x.ptr() + (b * C + c) * H * W;
            double* dst = out.ptr() + (b * C + c) * 4 * H * W;
            for (long oy = 0; oy < 2 * H; ++oy) {
                const auto& r = ty[static_cast<std::size_t>(oy)];
                for (long ox = 0; ox < 2 * W; ++ox) {
                    const auto& s = tx_[static_cast<std::size_t>(ox)];
                    const double top = src[r.i0 * W + s.i0] * (1 - s.w1) + src[r.i0 * W + s.i1] * s.w1;
                    const double bot = src[r.i1 * W + s.i0] * (1 - s.w1) + src[r.i1 * W + s.i1] * s.w1;
                    dst[oy * 2 * W + ox] = top * (1 - r.w1) + bot * r.w1;
                }
            }
        }
    debug_check_finite(out, "upsample_bilinear2x");
    if (Graph* g = Graph::current(); tracing(g, x)) {
        attach_output(out, g);
        Tensor tin = x, to = out;
        tin.ensure_grad();
        g->add([tin, to, B, C, H, W]() mutable {
            const auto ty = detail::upsample_taps(H);
            const auto tx_ = detail::upsample_taps(W);
            for (long b = 0; b < B; ++b)
                for (long c = 0; c < C; ++c) {
                    double* gsrc = tin.gptr() + (b * C + c) * H * W;
                    const double* gdst = to.gptr() + (b * C + c) * 4 * H * W;
                    for (long oy = 0; oy < 2 * H; ++oy) {
                        const auto& r = ty[static_cast<std::size_t>(oy)];
                        for (long ox = 0; ox < 2 * W; ++ox) {
                            const auto& s = tx_[static_cast<std::size_t>(ox)];
                            const double go = gdst[oy * 2 * W + ox];
                            gsrc[r.i0 * W + s.i0] += go * (1 - r.w1) * (1 - s.w1);
                            gsrc[r.i0 * W + s.i1] += go * (1 - r.w1) * s.w1;
                            gsrc[r.i1 * W + s.i0] += go * r.w1 * (1 - s.w1);
                            gsrc[r.i1 * W + s.i1] += go * r.w1 * s.w1;
                        }
                    }
                }
        });
    }
    return out;
}

}  // namespace hym
