#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cryoquery/params.hpp"

namespace cq::ad {

// Bias-corrected Adam moments for one parameter tensor.
struct AdamState {
    std::vector<float> m;
    std::vector<float> v;
    std::int64_t step = 0;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected update of a single parameter. Throws NumericError
// naming the parameter if the gradient carries NaN/Inf.
void adam_step(Param& p, const std::vector<float>& grad, AdamState& state, double lr,
               const AdamConfig& cfg = {});

// Applies adam_step across a store with per-group learning rates. Parameters
// without a gradient in `gs` still advance their step counter with g = 0
// (parameters unchanged).
class AdamOptimizer {
public:
    AdamOptimizer(const ParamStore& store, AdamConfig cfg = {}) : cfg_(cfg) {
        states_.resize(store.size());
        for (size_t i = 0; i < store.size(); ++i) {
            const auto n = static_cast<size_t>(store.at(i).value.numel());
            states_[i].m.assign(n, 0.0f);
            states_[i].v.assign(n, 0.0f);
        }
    }

    void step(ParamStore& store, const GradSet& gs, const std::map<std::string, double>& lr_by_group);

    AdamState& state(size_t param_index) { return states_[param_index]; }
    const AdamState& state(size_t param_index) const { return states_[param_index]; }
    size_t size() const { return states_.size(); }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<AdamState> states_;
};

}  // namespace cq::ad
