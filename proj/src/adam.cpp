#include "cryoquery/adam.hpp"

#include <cmath>

#include "cryoquery/errors.hpp"

namespace cq::ad {

void adam_step(Param& p, const std::vector<float>& grad, AdamState& state, double lr,
               const AdamConfig& cfg) {
    if (grad.size() != p.value.values.size())
        throw DimensionError("adam_step: gradient shape mismatch for " + p.name);
    for (float g : grad)
        if (!std::isfinite(g))
            throw NumericError("adam_step: non-finite gradient for parameter '" + p.name + "'");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const float b1 = static_cast<float>(cfg.beta1);
    const float b2 = static_cast<float>(cfg.beta2);
    for (size_t i = 0; i < grad.size(); ++i) {
        const float g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0f - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0f - b2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        p.value.values[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

void AdamOptimizer::step(ParamStore& store, const GradSet& gs,
                         const std::map<std::string, double>& lr_by_group) {
    static const std::vector<float> kEmpty;
    for (size_t i = 0; i < store.size(); ++i) {
        Param& p = store.at(i);
        auto it = lr_by_group.find(p.group);
        const double lr = it != lr_by_group.end() ? it->second : 0.0;
        const std::vector<float>* g = gs.grad_for(p);
        if (g == nullptr) {
            // no gradient this step: zero update, counter still advances
            std::vector<float> zeros(p.value.values.size(), 0.0f);
            adam_step(p, zeros, states_[i], lr, cfg_);
        } else {
            adam_step(p, *g, states_[i], lr, cfg_);
        }
    }
}

}  // namespace cq::ad
