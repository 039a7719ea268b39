#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hym {

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

inline void check(bool ok, const std::string& msg) {
    if (!ok) fail(msg);
}

using Shape = std::vector<long>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline long shape_numel(const Shape& s) {
    long n = 1;
    for (long e : s) {
        check(e > 0, "tensor extent must be positive, got shape " + shape_str(s));
        n *= e;
    }
    return n;
}

// Dense row-major float64 tensor. Data and grad buffers are shared so copies
// alias the same storage; ops never mutate tensors that are already recorded
// on a graph.
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    const void* tape = nullptr;  // graph that produced this tensor, null for leaves

    Tensor() = default;

    explicit Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)),
          data(std::make_shared<std::vector<double>>(
              static_cast<std::size_t>(shape_numel(shape)), fill)) {}

    static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0); }
    static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }

    static Tensor from(Shape s, std::vector<double> values) {
        Tensor t;
        t.shape = std::move(s);
        check(shape_numel(t.shape) == static_cast<long>(values.size()),
              "tensor init: " + std::to_string(values.size()) + " values for shape " +
                  shape_str(t.shape));
        t.data = std::make_shared<std::vector<double>>(std::move(values));
        return t;
    }

    long numel() const { return static_cast<long>(data ? data->size() : 0); }
    long dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    double* ptr() { return data->data(); }
    const double* ptr() const { return data->data(); }
    double& at(long i) { return (*data)[static_cast<std::size_t>(i)]; }
    double at(long i) const { return (*data)[static_cast<std::size_t>(i)]; }

    void ensure_grad() {
        if (!grad) grad = std::make_shared<std::vector<double>>(data->size(), 0.0);
    }
    double* gptr() { return grad->data(); }
    const double* gptr() const { return grad->data(); }

    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    }

    Tensor& set_requires_grad(bool flag) {
        requires_grad = flag;
        if (flag) ensure_grad();
        return *this;
    }

    // Deep copy of values only (fresh buffers, no grad, leaf).
    Tensor clone_data() const {
        Tensor t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<double>>(*data);
        return t;
    }

    bool all_finite() const {
        for (double v : *data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

#ifndef NDEBUG
inline void debug_check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) fail(std::string(op) + ": non-finite value in output");
}
#else
inline void debug_check_finite(const Tensor&, const char*) {}
#endif

// --- binary serialization -------------------------------------------------
// Layout: magic "HYMT", version u32, rank u32, extents u64 each, then the
// payload as little-endian f64.

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace detail {
template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    check(static_cast<bool>(is), "tensor load: truncated stream");
    return v;
}
}  // namespace detail

inline constexpr std::uint32_t kTensorFormatVersion = 1;

inline void save_tensor(std::ostream& os, const Tensor& t) {
    os.write("HYMT", 4);
    detail::write_pod<std::uint32_t>(os, kTensorFormatVersion);
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (long e : t.shape) detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.ptr()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.numel())));
    check(static_cast<bool>(os), "tensor save: stream write failed");
}

inline Tensor load_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    check(static_cast<bool>(is) && std::memcmp(magic, "HYMT", 4) == 0,
          "tensor load: bad magic, not a tensor stream");
    auto version = detail::read_pod<std::uint32_t>(is);
    check(version == kTensorFormatVersion,
          "tensor load: unsupported format version " + std::to_string(version));
    auto rank = detail::read_pod<std::uint32_t>(is);
    check(rank <= 8, "tensor load: implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<long>(detail::read_pod<std::uint64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.ptr()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.numel())));
    check(static_cast<bool>(is), "tensor load: truncated payload");
    return t;
}

}  // namespace hym
