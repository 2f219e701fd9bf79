#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "changeforge/errors.hpp"

namespace changeforge {

/// Canonical 4-axis extent (batch, channels, height, width). Weights reuse the
/// same carrier as (out_channels, in_channels, kernel_h, kernel_w).
struct Shape {
    int n = 1, c = 1, h = 1, w = 1;

    std::size_t count() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    bool operator==(const Shape& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

/// Dense 4-axis tensor. Row-major in (n, c, h, w); scalars are (1,1,1,1).
/// T is float for training and double for gradient-check mode.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(s), data(s.count(), T(0)) {
        if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0)
            throw data_error("tensor extents must be positive, got " + s.str());
    }
    Tensor(Shape s, T fill) : Tensor(s) { std::fill(data.begin(), data.end(), fill); }

    static Tensor scalar(T v) {
        Tensor t(Shape{1, 1, 1, 1});
        t.data[0] = v;
        return t;
    }

    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w;
    }
    T& at(int n, int c, int h, int w) { return data[index(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data[index(n, c, h, w)]; }

    std::size_t count() const { return data.size(); }
    bool is_scalar() const { return data.size() == 1; }

    T item() const {
        if (!is_scalar()) throw data_error("item() on non-scalar tensor " + shape.str());
        return data[0];
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

} // namespace changeforge
