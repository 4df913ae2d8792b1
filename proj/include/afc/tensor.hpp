#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace afc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

struct dimension_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor of doubles. Value semantics; copying copies data.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != data.size())
            throw dimension_error("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = v;
        return t;
    }
    /// Rank-2 tensor from nested initializer lists.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        Tensor t({r, c});
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw dimension_error("ragged matrix initializer");
            for (double v : row) t.data[i++] = v;
        }
        return t;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    /// NCHW element access.
    double& at4(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
        return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    double at4(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
        return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    double& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

/// tr(a^T b) for equal-shape rank-2 tensors.
inline double frobenius_inner(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw dimension_error("frobenius_inner expects rank-2 tensors, got " + shape_str(a.shape) +
                              " and " + shape_str(b.shape));
    if (!a.same_shape(b))
        throw dimension_error("frobenius_inner shape mismatch: " + shape_str(a.shape) + " vs " +
                              shape_str(b.shape));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

inline double frobenius_norm_sq(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data) acc += v * v;
    return acc;
}

inline double frobenius_norm(const Tensor& a) { return std::sqrt(frobenius_norm_sq(a)); }

#ifndef NDEBUG
#define AFC_FINITE_CHECKS 1
#else
#define AFC_FINITE_CHECKS 0
#endif

inline void check_finite(const Tensor& t, const char* where) {
#if AFC_FINITE_CHECKS
    if (!t.all_finite()) throw std::runtime_error(std::string("non-finite value in ") + where);
#else
    (void)t;
    (void)where;
#endif
}

}  // namespace afc
