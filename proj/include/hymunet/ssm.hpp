#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "hymunet/ops.hpp"
#include "hymunet/rng.hpp"

namespace hym {

inline constexpr double kZohSingularityEps = 1e-12;

// ZOH discretization of a diagonal continuous system, elementwise:
//   A_bar = exp(delta * A),  B_bar = ((exp(delta * A) - 1) / A) * B,
// with the removable singularity at A -> 0 replaced by B_bar = delta * B.
// Plain-value helper (no autodiff); the scan fuses the same math per token.
inline std::pair<Tensor, Tensor> zoh_discretize(const Tensor& A, const Tensor& B, double delta) {
    check(delta > 0.0, "zoh_discretize: delta must be positive, got " + std::to_string(delta));
    check_same_shape(A, B, "zoh_discretize");
    Tensor A_bar(A.shape), B_bar(A.shape);
    for (long i = 0; i < A.numel(); ++i) {
        const double a = A.at(i);
        const double e = std::exp(delta * a);
        A_bar.at(i) = e;
        B_bar.at(i) = std::abs(a) < kZohSingularityEps ? delta * B.at(i)
                                                       : (e - 1.0) / a * B.at(i);
    }
    return {A_bar, B_bar};
}

// Selective scan over token sequences.
//   x     [B,L,D]   input sequence
//   delta [B,L,D]   positive step sizes
//   A     [D,N]     diagonal state matrix entries (any sign; A < 0 for stability)
//   Bm    [B,L,N]   per-token input matrix
//   Cm    [B,L,N]   per-token output matrix
// Per channel d: h_t = exp(delta_t A) h_{t-1} + B_bar_t x_t,  y_t = <C_t, h_t>,
// h_0 = 0. Runs in O(B*L*D*N); backward replays the recurrence adjoint in
// reverse time using the saved hidden states.
inline Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& A,
                             const Tensor& Bm, const Tensor& Cm) {
    check(x.rank() == 3, "selective_scan: x must be [B,L,D], got " + shape_str(x.shape));
    const long B = x.dim(0), L = x.dim(1), D = x.dim(2);
    check(delta.shape == x.shape, "selective_scan: delta shape " + shape_str(delta.shape) +
                                      " != x shape " + shape_str(x.shape));
    check(A.rank() == 2 && A.dim(0) == D,
          "selective_scan: A must be [D,N] with D=" + std::to_string(D) + ", got " +
              shape_str(A.shape));
    const long N = A.dim(1);
    check(Bm.shape == (Shape{B, L, N}), "selective_scan: B must be [B,L,N], got " +
                                            shape_str(Bm.shape));
    check(Cm.shape == (Shape{B, L, N}), "selective_scan: C must be [B,L,N], got " +
                                            shape_str(Cm.shape));
    for (const Tensor* t : {&x, &delta, &A, &Bm, &Cm})
        check(t->all_finite(), "selective_scan: non-finite input");
    // zero is allowed: softplus underflows to 0 for very negative inputs, and
    // the ZOH formulas degrade gracefully there (A_bar = 1, B_bar = 0)
    for (long i = 0; i < delta.numel(); ++i)
        check(delta.at(i) >= 0.0, "selective_scan: delta must be nonnegative everywhere");

    Tensor y({B, L, D});
    auto h_all = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B * D * L * N));
    std::vector<double> hprev(static_cast<std::size_t>(N));
    for (long b = 0; b < B; ++b)
        for (long d = 0; d < D; ++d) {
            const double* Ad = A.ptr() + d * N;
            std::fill(hprev.begin(), hprev.end(), 0.0);
            double* hrows = h_all->data() + (b * D + d) * L * N;
            for (long t = 0; t < L; ++t) {
                const long td = (b * L + t) * D + d;
                const double dt = delta.at(td), xv = x.at(td);
                const double* Bt = Bm.ptr() + (b * L + t) * N;
                const double* Ct = Cm.ptr() + (b * L + t) * N;
                double acc = 0.0;
                for (long n = 0; n < N; ++n) {
                    const double a = Ad[n];
                    const double e = std::exp(dt * a);
                    const double b_bar = std::abs(a) < kZohSingularityEps
                                             ? dt * Bt[n]
                                             : (e - 1.0) / a * Bt[n];
                    const double h = e * hprev[n] + b_bar * xv;
                    hrows[t * N + n] = h;
                    hprev[n] = h;
                    acc += Ct[n] * h;
                }
                y.at(td) = acc;
            }
        }
    debug_check_finite(y, "selective_scan");

    if (Graph* g = Graph::current(); tracing(g, x, delta, A, Bm, Cm)) {
        attach_output(y, g);
        Tensor tx = x, td_ = delta, tA = A, tB = Bm, tC = Cm, ty = y;
        for (Tensor* t : {&tx, &td_, &tA, &tB, &tC})
            if (t->requires_grad) t->ensure_grad();
        g->add([tx, td_, tA, tB, tC, ty, h_all, B, L, D, N]() mutable {
            std::vector<double> gh(static_cast<std::size_t>(N));
            for (long b = 0; b < B; ++b)
                for (long d = 0; d < D; ++d) {
                    const double* Ad = tA.ptr() + d * N;
                    const double* hrows = h_all->data() + (b * D + d) * L * N;
                    std::fill(gh.begin(), gh.end(), 0.0);
                    for (long t = L - 1; t >= 0; --t) {
                        const long tdx = (b * L + t) * D + d;
                        const double gy = ty.gptr()[tdx];
                        const double dt = td_.at(tdx), xv = tx.at(tdx);
                        const double* Bt = tB.ptr() + (b * L + t) * N;
                        const double* Ct = tC.ptr() + (b * L + t) * N;
                        double gx_acc = 0.0, gdt_acc = 0.0;
                        for (long n = 0; n < N; ++n) {
                            const double h = hrows[t * N + n];
                            const double hp = t > 0 ? hrows[(t - 1) * N + n] : 0.0;
                            if (tC.requires_grad) tC.gptr()[(b * L + t) * N + n] += gy * h;
                            const double ghn = gh[static_cast<std::size_t>(n)] + gy * Ct[n];
                            const double a = Ad[n];
                            const double e = std::exp(dt * a);
                            const bool small = std::abs(a) < kZohSingularityEps;
                            const double coefB = small ? dt : (e - 1.0) / a;
                            gx_acc += ghn * coefB * Bt[n];
                            if (tB.requires_grad)
                                tB.gptr()[(b * L + t) * N + n] += ghn * xv * coefB;
                            // d(b_bar)/d(delta) = e*B (limit: B); d(a_bar)/d(delta) = a*e
                            gdt_acc += ghn * (hp * a * e + xv * Bt[n] * (small ? 1.0 : e));
                            if (tA.requires_grad) {
                                // d(a_bar)/dA = dt*e; d(b_bar)/dA via quotient rule,
                                // limit dt^2/2 at A -> 0
                                const double db_da =
                                    small ? dt * dt / 2.0
                                          : (dt * e * a - (e - 1.0)) / (a * a);
                                tA.gptr()[d * N + n] += ghn * (hp * dt * e + xv * Bt[n] * db_da);
                            }
                            gh[static_cast<std::size_t>(n)] = ghn * e;
                        }
                        if (tx.requires_grad) tx.gptr()[tdx] += gx_acc;
                        if (td_.requires_grad) td_.gptr()[tdx] += gdt_acc;
                    }
                }
        });
    }
    return y;
}

// --- learned parameterization ------------------------------------------------

enum class Selectivity { kInputDependent, kFixed };

// Parameters of one selective SSM over D channels with state size N.
// Input-dependent mode (default): delta = softplus(x dt_w^T + dt_b),
// B = x B_w^T, C = x C_w^T per token. Fixed mode freezes the projection
// weights at zero so delta/B/C reduce to the (trainable) biases, giving the
// classic input-independent state-space model.
struct SsmParams {
    long D = 0, N = 0;
    Selectivity selectivity = Selectivity::kInputDependent;
    Tensor A_log;  // [D,N]; A = -exp(A_log) keeps every entry negative
    Tensor dt_w;   // [D,D]
    Tensor dt_b;   // [D]
    Tensor B_w;    // [N,D]
    Tensor B_b;    // [N]
    Tensor C_w;    // [N,D]
    Tensor C_b;    // [N]

    template <class Fn>
    void visit(Fn&& fn) {
        fn("A_log", A_log, /*trainable=*/true);
        const bool dep = selectivity == Selectivity::kInputDependent;
        fn("dt_w", dt_w, dep);
        fn("dt_b", dt_b, true);
        fn("B_w", B_w, dep);
        fn("B_b", B_b, !dep);
        fn("C_w", C_w, dep);
        fn("C_b", C_b, !dep);
    }
};

inline SsmParams make_ssm_params(long D, long N, Rng& rng,
                                 Selectivity sel = Selectivity::kInputDependent) {
    check(D >= 1 && N >= 1, "make_ssm_params: D and N must be positive");
    SsmParams p;
    p.D = D;
    p.N = N;
    p.selectivity = sel;
    p.A_log = Tensor({D, N});
    for (long d = 0; d < D; ++d)
        for (long n = 0; n < N; ++n) p.A_log.at(d * N + n) = std::log(static_cast<double>(n + 1));
    p.dt_w = Tensor({D, D});
    p.dt_b = Tensor({D});
    p.B_w = Tensor({N, D});
    p.B_b = Tensor({N});
    p.C_w = Tensor({N, D});
    p.C_b = Tensor({N});
    const double k = 1.0 / std::sqrt(static_cast<double>(D));
    // softplus(dt_b) lands in [0.01, 0.1], log-uniform
    for (long d = 0; d < D; ++d) {
        const double dt = std::exp(rng.uniform(std::log(0.01), std::log(0.1)));
        p.dt_b.at(d) = std::log(std::expm1(dt));
    }
    if (sel == Selectivity::kInputDependent) {
        for (long i = 0; i < p.dt_w.numel(); ++i) p.dt_w.at(i) = rng.uniform(-k, k);
        for (long i = 0; i < p.B_w.numel(); ++i) p.B_w.at(i) = rng.uniform(-k, k);
        for (long i = 0; i < p.C_w.numel(); ++i) p.C_w.at(i) = rng.uniform(-k, k);
    } else {
        for (long n = 0; n < N; ++n) {
            p.B_b.at(n) = 1.0;
            p.C_b.at(n) = 1.0;
        }
    }
    return p;
}

// Apply the selective SSM to a token sequence [B,L,D].
inline Tensor ssm_apply(const Tensor& x, const SsmParams& p) {
    check(x.rank() == 3 && x.dim(2) == p.D,
          "ssm_apply: expected [B,L," + std::to_string(p.D) + "], got " + shape_str(x.shape));
    Tensor delta = softplus(linear(x, p.dt_w, p.dt_b));
    Tensor Bm = linear(x, p.B_w, p.B_b);
    Tensor Cm = linear(x, p.C_w, p.C_b);
    Tensor A = scalar_sub(0.0, hym::exp(p.A_log));
    return selective_scan(x, delta, A, Bm, Cm);
}

}  // namespace hym
