#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "hymunet/tensor.hpp"

namespace hym {

// Reverse-mode tape. Ops append nodes in forward order; backward replays the
// closures in reverse insertion order, which is a valid topological order by
// construction. Thread-confined: use one Graph per thread of execution.
class Graph {
public:
    static Graph*& current() {
        thread_local Graph* g = nullptr;
        return g;
    }

    void add(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return nodes_.size(); }

    void backward(Tensor& root) {
        check(root.numel() == 1,
              "backward: root must be scalar, got shape " + shape_str(root.shape));
        check(root.tape == this, "backward: root was not produced by this graph");
        root.ensure_grad();
        (*root.grad)[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() { nodes_.clear(); }

private:
    std::vector<std::function<void()>> nodes_;
};

// RAII guard that makes `g` the recording target on this thread.
class Recording {
public:
    explicit Recording(Graph& g) : prev_(Graph::current()) { Graph::current() = &g; }
    ~Recording() { Graph::current() = prev_; }
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

private:
    Graph* prev_;
};

// Mark `out` as a recorded intermediate of graph `g`.
inline void attach_output(Tensor& out, Graph* g) {
    out.requires_grad = true;
    out.ensure_grad();
    out.tape = g;
}

// True when an op fed by `inputs...` must record a node.
template <class... Ts>
bool tracing(Graph* g, const Ts&... inputs) {
    return g != nullptr && (... || inputs.requires_grad);
}

}  // namespace hym
