#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cryoquery/tensor.hpp"

namespace cq::ad {

// A named trainable tensor. `group` selects the learning-rate bucket
// ("tables", "model", "orient"). Index is assigned by the owning store and
// keys gradient/optimizer bookkeeping so all reductions iterate in a fixed
// order.
struct Param {
    std::string name;
    std::string group;
    Tensor value;
    int index = -1;
};

class ParamStore {
public:
    Param& add(std::string name, std::string group, Tensor init) {
        init.requires_grad = true;
        auto p = std::make_unique<Param>();
        p->name = std::move(name);
        p->group = std::move(group);
        p->value = std::move(init);
        p->index = static_cast<int>(params_.size());
        params_.push_back(std::move(p));
        return *params_.back();
    }

    size_t size() const { return params_.size(); }
    Param& at(size_t i) { return *params_[i]; }
    const Param& at(size_t i) const { return *params_[i]; }

    Param* find(const std::string& name) {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    std::int64_t total_values() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

private:
    std::vector<std::unique_ptr<Param>> params_;
};

// Per-image (or per-worker) gradient buffers, indexed by param index.
// Reduction over a fixed index order keeps training bitwise deterministic
// regardless of thread count.
struct GradSet {
    std::vector<std::vector<float>> g;

    void add(const Param& p, const std::vector<float>& grad) {
        if (static_cast<size_t>(p.index) >= g.size()) g.resize(p.index + 1);
        auto& dst = g[static_cast<size_t>(p.index)];
        if (dst.empty()) dst.assign(grad.size(), 0.0f);
        for (size_t i = 0; i < grad.size(); ++i) dst[i] += grad[i];
    }

    void accumulate(const GradSet& other) {
        if (other.g.size() > g.size()) g.resize(other.g.size());
        for (size_t i = 0; i < other.g.size(); ++i) {
            if (other.g[i].empty()) continue;
            auto& dst = g[i];
            if (dst.empty()) dst.assign(other.g[i].size(), 0.0f);
            for (size_t k = 0; k < other.g[i].size(); ++k) dst[k] += other.g[i][k];
        }
    }

    const std::vector<float>* grad_for(const Param& p) const {
        if (static_cast<size_t>(p.index) >= g.size() || g[static_cast<size_t>(p.index)].empty())
            return nullptr;
        return &g[static_cast<size_t>(p.index)];
    }

    void clear() { g.clear(); }
};

}  // namespace cq::ad
