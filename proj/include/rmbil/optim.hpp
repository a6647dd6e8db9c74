#pragma once

#include "rmbil/mlp.hpp"

namespace rmbil {

// Adaptive-moment estimation with epoch-indexed step decay.
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double decay = 0.5;
    std::size_t decay_every = 100;  // epochs
};

inline double effective_lr(const AdamConfig& c, std::size_t epoch) {
    if (c.lr <= 0.0) throw Error("learning rate must be positive");
    return c.lr * std::pow(c.decay, static_cast<double>(epoch / c.decay_every));
}

struct AdamState {
    std::vector<Vec> m, v;  // aligned with the parameter tensor list
    long step = 0;

    static AdamState from(const std::vector<Tensor*>& params) {
        AdamState st;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const Tensor* t : params) {
            st.m.emplace_back(t->numel(), 0.0);
            st.v.emplace_back(t->numel(), 0.0);
        }
        return st;
    }
};

// One update over an ordered parameter list; grads[k] is the flat gradient
// for params[k]. epoch drives the step-decay schedule only.
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Vec>& grads,
                      AdamState& st, const AdamConfig& cfg, std::size_t epoch) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw ShapeError("adam_step: parameter/gradient/state count mismatch");
    const double lr = effective_lr(cfg, epoch);
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Vec& g = grads[k];
        if (g.size() != p.numel()) throw ShapeError("adam_step: gradient size mismatch");
        Vec& m = st.m[k];
        Vec& v = st.v[k];
        for (std::size_t i = 0; i < g.size(); ++i) {
            check_finite(g[i], "adam_step gradient");
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace rmbil
