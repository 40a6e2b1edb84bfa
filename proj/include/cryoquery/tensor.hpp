#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "cryoquery/errors.hpp"

namespace cq {

// Dense row-major float32 tensor. Reductions that feed metrics accumulate
// in double (see tape.cpp); storage stays float32.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> values;
    bool requires_grad = false;
    std::vector<float> grad;  // empty until first backward touches it

    Tensor() = default;

    explicit Tensor(std::vector<int> s, float fill = 0.0f) : shape(std::move(s)) {
        values.assign(static_cast<size_t>(numel_of(shape)), fill);
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s), 0.0f); }

    static Tensor full(std::vector<int> s, float v) { return Tensor(std::move(s), v); }

    static Tensor from(std::vector<int> s, std::vector<float> vals) {
        Tensor t;
        t.shape = std::move(s);
        t.values = std::move(vals);
        if (static_cast<std::int64_t>(t.values.size()) != numel_of(t.shape))
            throw DimensionError("tensor value count does not match shape");
        return t;
    }

    static Tensor scalar(float v) { return from({1}, {v}); }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // 2-D accessors
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }
    float& at(int r, int c) { return values[static_cast<size_t>(r) * cols() + c]; }
    float at(int r, int c) const { return values[static_cast<size_t>(r) * cols() + c]; }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0f);
    }

    bool all_finite() const {
        for (float v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

}  // namespace cq
