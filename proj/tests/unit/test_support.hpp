#pragma once

#include <cstdint>
#include <random>

#include "tmr/backbone.hpp"
#include "tmr/grid.hpp"
#include "tmr/layers.hpp"

namespace tmr::testing {

template <typename T = double>
Grid3<T> random_grid(int h, int w, int d, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Grid3<T> g(h, w, d);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : g.values) v = static_cast<T>(u(rng));
    return g;
}

template <typename T = double>
void randomize(LayerParams<T>& p, std::mt19937_64& rng, double scale = 0.5) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& v : p.weights) v = static_cast<T>(u(rng));
    for (auto& v : p.bias) v = static_cast<T>(u(rng));
}

/// Sum of elementwise products: a linear functional whose gradient w.r.t. `g` is `weights`.
template <typename T>
double dot(const Grid3<T>& g, const Grid3<T>& weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.values.size(); ++i) s += static_cast<double>(g.values[i]) * weights.values[i];
    return s;
}

template <typename T = double>
FeatureMapT<T> random_map(int h, int w, int d, double stride, std::mt19937_64& rng) {
    FeatureMapT<T> fm;
    fm.grid = random_grid<T>(h, w, d, rng);
    fm.stride = stride;
    return fm;
}

}  // namespace tmr::testing
