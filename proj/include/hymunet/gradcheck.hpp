#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hymunet/graph.hpp"
#include "hymunet/ops.hpp"
#include "hymunet/tensor.hpp"

namespace hym {

// Compare analytic gradients of a scalar-valued function against central
// finite differences. `f` must rebuild its computation from the current
// contents of `inputs` on every call. Returns the max over all checked
// entries of |analytic - numeric| / max(1, |analytic|).
//
// `max_entries_per_input` < 0 checks every entry; otherwise entries are
// sampled at a fixed stride so large tensors stay cheap and deterministic.
inline double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor*>& inputs,
                         double step = 1e-5, long max_entries_per_input = -1) {
    check(step > 0.0, "grad_check: step must be positive");
    for (Tensor* t : inputs) {
        t->set_requires_grad(true);
        t->zero_grad();
    }

    std::vector<std::vector<double>> analytic;
    {
        Graph graph;
        Recording rec(graph);
        Tensor out = f();
        check(out.numel() == 1, "grad_check: f must be scalar-valued, got shape " +
                                    shape_str(out.shape));
        check(std::isfinite(out.at(0)), "grad_check: f produced a non-finite value");
        graph.backward(out);
        for (Tensor* t : inputs) analytic.push_back(*t->grad);
    }

    auto eval = [&f]() {
        Tensor out = f();  // no recording context: pure forward
        check(std::isfinite(out.at(0)), "grad_check: f produced a non-finite value");
        return out.at(0);
    };

    double max_err = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor* t = inputs[ti];
        const long n = t->numel();
        long stride = 1;
        if (max_entries_per_input > 0 && n > max_entries_per_input)
            stride = (n + max_entries_per_input - 1) / max_entries_per_input;
        for (long i = 0; i < n; i += stride) {
            const double saved = t->at(i);
            t->at(i) = saved + step;
            const double fp = eval();
            t->at(i) = saved - step;
            const double fm = eval();
            t->at(i) = saved;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[ti][static_cast<std::size_t>(i)];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            if (err > max_err) max_err = err;
        }
    }
    return max_err;
}

}  // namespace hym
