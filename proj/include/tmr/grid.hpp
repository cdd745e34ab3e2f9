#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tmr/errors.hpp"

namespace tmr {

/// Dense height x width x depth grid stored row-major in (y, x, d) order.
template <typename T>
struct Grid3 {
    int height = 0;
    int width = 0;
    int depth = 0;
    std::vector<T> values;

    Grid3() = default;
    Grid3(int h, int w, int d, T fill = T(0)) : height(h), width(w), depth(d) {
        if (h < 0 || w < 0 || d < 0) {
            throw ArgumentError("Grid3: negative dimension");
        }
        values.assign(static_cast<std::size_t>(h) * w * d, fill);
    }

    [[nodiscard]] std::size_t size() const { return values.size(); }
    [[nodiscard]] std::size_t cells() const { return static_cast<std::size_t>(height) * width; }
    [[nodiscard]] bool empty() const { return values.empty(); }

    [[nodiscard]] std::size_t index(int y, int x, int d) const {
        return (static_cast<std::size_t>(y) * width + x) * depth + d;
    }
    T& at(int y, int x, int d) { return values[index(y, x, d)]; }
    const T& at(int y, int x, int d) const { return values[index(y, x, d)]; }

    std::span<T> pixel(int y, int x) { return {values.data() + index(y, x, 0), static_cast<std::size_t>(depth)}; }
    std::span<const T> pixel(int y, int x) const {
        return {values.data() + index(y, x, 0), static_cast<std::size_t>(depth)};
    }

    [[nodiscard]] bool same_shape(const Grid3& other) const {
        return height == other.height && width == other.width && depth == other.depth;
    }

    [[nodiscard]] bool all_finite() const {
        return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
    }

    void fill(T v) { std::fill(values.begin(), values.end(), v); }

    Grid3& operator+=(const Grid3& other) {
        if (!same_shape(other)) {
            throw ConfigError("Grid3: shape mismatch in accumulation");
        }
        for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
        return *this;
    }
};

using Grid3f = Grid3<float>;
using Grid3d = Grid3<double>;

template <typename To, typename From>
Grid3<To> grid_cast(const Grid3<From>& g) {
    Grid3<To> out;
    out.height = g.height;
    out.width = g.width;
    out.depth = g.depth;
    out.values.assign(g.values.begin(), g.values.end());
    return out;
}

inline std::string shape_string(int h, int w, int d) {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(d);
}

template <typename T>
std::string shape_string(const Grid3<T>& g) {
    return shape_string(g.height, g.width, g.depth);
}

}  // namespace tmr
