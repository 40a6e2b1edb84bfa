#pragma once

#include "cryoquery/rng.hpp"
#include "cryoquery/tensor.hpp"

namespace cq::ad {

// U(-1/sqrt(fan_in), +1/sqrt(fan_in)), the usual linear-layer default.
inline Tensor uniform_fan_in(int rows, int cols, Rng& rng) {
    Tensor t({rows, cols});
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    for (float& v : t.values) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

inline Tensor uniform_range(std::vector<int> shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    for (float& v : t.values) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

inline Tensor gaussian_init(std::vector<int> shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (float& v : t.values) v = static_cast<float>(rng.gaussian(0.0, stddev));
    return t;
}

}  // namespace cq::ad
