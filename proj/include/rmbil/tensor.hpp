#pragma once

#include <cstddef>
#include <numeric>

#include "rmbil/common.hpp"

namespace rmbil {

using Vec = std::vector<double>;

// Dense row-major container. Rank-1 tensors double as plain vectors; rank-2
// as matrices. All numerics in the library are 64-bit.
struct Tensor {
    std::vector<std::size_t> shape;
    Vec data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, Vec d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw ShapeError("tensor data length does not match shape");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        Vec d(numel_of(s), 0.0);
        return Tensor(std::move(s), std::move(d));
    }

    static Tensor vec(Vec v) {
        std::vector<std::size_t> s{v.size()};
        return Tensor(std::move(s), std::move(v));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    double& at(std::size_t i) { return data.at(i); }
    double at(std::size_t i) const { return data.at(i); }
    double& at(std::size_t i, std::size_t j) { return data.at(i * cols() + j); }
    double at(std::size_t i, std::size_t j) const { return data.at(i * cols() + j); }
};

// Straight-line vector arithmetic. The tape's forward pass calls these same
// helpers, so taped and tape-free evaluation of identical formulas produce
// identical bits.
inline void same_size(const Vec& a, const Vec& b, const char* what) {
    if (a.size() != b.size()) throw ShapeError(std::string("size mismatch in ") + what);
}

inline Vec vec_add(const Vec& a, const Vec& b) {
    same_size(a, b, "vec_add");
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline Vec vec_sub(const Vec& a, const Vec& b) {
    same_size(a, b, "vec_sub");
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline Vec vec_mul(const Vec& a, const Vec& b) {
    same_size(a, b, "vec_mul");
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * b[i];
    return r;
}

inline Vec vec_scale(const Vec& a, double c) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = c * a[i];
    return r;
}

// a + c*b
inline Vec vec_add_scaled(const Vec& a, const Vec& b, double c) {
    same_size(a, b, "vec_add_scaled");
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + c * b[i];
    return r;
}

// y += c*x
inline void vec_axpy(Vec& y, double c, const Vec& x) {
    same_size(y, x, "vec_axpy");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c * x[i];
}

// offset + scale ⊙ a
inline Vec vec_affine(const Vec& a, const Vec& offset, const Vec& scale) {
    same_size(a, offset, "vec_affine");
    same_size(a, scale, "vec_affine");
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = offset[i] + scale[i] * a[i];
    return r;
}

inline double vec_dot(const Vec& a, const Vec& b) {
    same_size(a, b, "vec_dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double vec_sqnorm(const Vec& a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return s;
}

inline double vec_sum(const Vec& a) {
    double s = 0.0;
    for (double v : a) s += v;
    return s;
}

// w is a rows×cols matrix stored row-major.
inline Vec mat_vec(const Vec& w, std::size_t rows, std::size_t cols, const Vec& x) {
    if (w.size() != rows * cols) throw ShapeError("mat_vec: matrix size mismatch");
    if (x.size() != cols) throw ShapeError("mat_vec: vector size mismatch");
    Vec y(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        const double* row = w.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) s += row[j] * x[j];
        y[i] = s;
    }
    return y;
}

inline double elu(double v) { return v > 0.0 ? v : std::expm1(v); }

inline Vec vec_elu(const Vec& a) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = elu(a[i]);
    return r;
}

inline Vec vec_exp(const Vec& a) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = std::exp(a[i]);
    return r;
}

inline void vec_check_finite(const Vec& a, const char* what) {
    for (double v : a) check_finite(v, what);
}

}  // namespace rmbil
