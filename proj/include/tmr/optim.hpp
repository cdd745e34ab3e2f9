#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tmr/layers.hpp"

namespace tmr {

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment accumulators for one LayerParams, same shapes.
struct Moments {
    std::vector<double> m_weights, v_weights, m_bias, v_bias;
};

struct OptimState {
    AdamWConfig config;
    std::int64_t step = 0;
    std::map<std::string, Moments> moments;  // keyed by LayerParams::name
};

/// One AdamW update (decoupled decay: w <- w - lr*wd*w - lr*mhat/(sqrt(vhat)+eps)),
/// then zeroes the gradients. Frozen layers are skipped.
template <typename T>
void optimizer_step(std::span<LayerParams<T>* const> params, OptimState& state);

}  // namespace tmr
