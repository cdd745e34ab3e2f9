#include "tmr/optim.hpp"

#include <cmath>

namespace tmr {
namespace {

template <typename T>
void adamw_update(std::vector<T>& w, std::vector<T>& g, std::vector<double>& m, std::vector<double>& v,
                  const AdamWConfig& c, double bias1, double bias2) {
    if (m.size() != w.size()) m.assign(w.size(), 0.0);
    if (v.size() != w.size()) v.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double grad = static_cast<double>(g[i]);
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad * grad;
        const double mhat = m[i] / bias1;
        const double vhat = v[i] / bias2;
        double wi = static_cast<double>(w[i]);
        wi -= c.lr * c.weight_decay * wi;
        wi -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        w[i] = static_cast<T>(wi);
        g[i] = T(0);
    }
}

}  // namespace

template <typename T>
void optimizer_step(std::span<LayerParams<T>* const> params, OptimState& state) {
    ++state.step;
    const auto& c = state.config;
    const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (LayerParams<T>* p : params) {
        if (!p->trainable) {
            p->zero_grad();
            continue;
        }
        Moments& mo = state.moments[p->name];
        adamw_update(p->weights, p->grad_weights, mo.m_weights, mo.v_weights, c, bias1, bias2);
        adamw_update(p->bias, p->grad_bias, mo.m_bias, mo.v_bias, c, bias1, bias2);
    }
}

template void optimizer_step(std::span<LayerParams<float>* const>, OptimState&);
template void optimizer_step(std::span<LayerParams<double>* const>, OptimState&);

}  // namespace tmr
