#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssb {

// Error taxonomy mirrored by the CLI exit codes: usage errors are handled at
// the CLI layer, data_error -> 2, numeric_error -> 3, anything else -> 1.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct shape_error : error {
    using error::error;
};
struct data_error : error {
    using error::error;
};
struct numeric_error : error {
    using error::error;
};

using Shape = std::vector<std::size_t>;

// All numeric storage is kept at a fixed 64-byte alignment. SIMD code paths
// (both Eigen's and the compiler's) can split a loop differently depending on
// where a buffer happens to land, which makes results depend on heap layout;
// pinning the alignment makes every computation a function of shape alone.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
    template <class U>
    bool operator!=(const AlignedAllocator<U>&) const { return false; }
};

template <class T>
using AlignedVec = std::vector<T, AlignedAllocator<T>>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major N-D array. The single value type flowing through the
// network; gradients live in a separate Tensor of the same shape owned by
// the autodiff node.
template <class T>
struct Tensor {
    Shape shape;
    AlignedVec<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {
        for (std::size_t d : shape)
            if (d == 0) throw shape_error("tensor dimension must be positive");
    }
    Tensor(Shape s, AlignedVec<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw shape_error("data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
    }
    Tensor(Shape s, std::initializer_list<T> d)
        : shape(std::move(s)), data(d.begin(), d.end()) {
        if (data.size() != shape_numel(shape))
            throw shape_error("data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
    }
    Tensor(Shape s, const std::vector<T>& d)
        : shape(std::move(s)), data(d.begin(), d.end()) {
        if (data.size() != shape_numel(shape))
            throw shape_error("data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // 3-D / 4-D indexing helpers for the H,W,C / N,H,W,C layouts.
    T& at3(std::size_t h, std::size_t w, std::size_t c) {
        return data[(h * shape[1] + w) * shape[2] + c];
    }
    const T& at3(std::size_t h, std::size_t w, std::size_t c) const {
        return data[(h * shape[1] + w) * shape[2] + c];
    }
    T& at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
        return data[((n * shape[1] + h) * shape[2] + w) * shape[3] + c];
    }
    const T& at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
        return data[((n * shape[1] + h) * shape[2] + w) * shape[3] + c];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    void check_finite(const char* where) const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v)))
                throw numeric_error(std::string("non-finite value in ") + where);
    }
};

template <class T>
Tensor<T> zeros_like(const Tensor<T>& x) {
    return Tensor<T>(x.shape);
}

template <class T>
Tensor<T> full(Shape s, T v) {
    Tensor<T> t(std::move(s));
    t.fill(v);
    return t;
}

template <class T, class Rng>
Tensor<T> randn(Shape s, Rng& rng, T stddev = T(1)) {
    Tensor<T> t(std::move(s));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.data) v = static_cast<T>(dist(rng) * static_cast<double>(stddev));
    return t;
}

}  // namespace ssb
