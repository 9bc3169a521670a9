#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace davel {

// Shape mismatch in a primitive; the message names the op and the dims.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite input or other numeric-domain violation.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller broke an operation contract (e.g. backward on a non-scalar).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace num {

inline std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

inline int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

// Dense row-major tensor. product(shape) == data.size() always.
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
    Tensor(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int64_t> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    // Row/col view of the trailing dimension; any tensor is [numel/last, last].
    int64_t cols() const { return shape.empty() ? 1 : shape.back(); }
    int64_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
    T at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_string() const { return shape_str(shape); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Mask = std::vector<uint8_t>;

inline int mask_valid_count(const Mask& m) {
    int n = 0;
    for (uint8_t v : m) n += (v != 0);
    return n;
}

}  // namespace num
}  // namespace davel
