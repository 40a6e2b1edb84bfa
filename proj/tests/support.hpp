#pragma once

// Shared test helpers: random tensors, the central finite-difference gradient
// checker (step 1e-4 on the double-precision reference route), and small
// comparison utilities.

#include <doctest.h>

#include <functional>
#include <vector>

#include "cryoquery/rng.hpp"
#include "cryoquery/tape.hpp"
#include "reference.hpp"

namespace support {

inline cq::Tensor random_tensor(std::vector<int> shape, cq::Rng& rng, double scale = 1.0,
                                bool requires_grad = true) {
    cq::Tensor t(std::move(shape));
    for (float& v : t.values) v = static_cast<float>(rng.gaussian(0.0, scale));
    t.requires_grad = requires_grad;
    return t;
}

inline ref::Mat to_ref(const cq::Tensor& t) {
    ref::Mat m(t.rank() == 1 ? 1 : t.dim(0), t.rank() == 1 ? t.dim(0) : t.dim(1));
    m.v.assign(t.values.begin(), t.values.end());
    return m;
}

struct GradStats {
    int checks = 0;
    int failures = 0;
    double worst_abs = 0.0;
    double fail_analytic = 0.0;
    double fail_numeric = 0.0;

    void compare(double analytic, double numeric, double rtol, double atol) {
        ++checks;
        const double err = std::fabs(analytic - numeric);
        worst_abs = std::max(worst_abs, err);
        if (err > atol + rtol * std::fabs(numeric)) {
            ++failures;
            fail_analytic = analytic;
            fail_numeric = numeric;
        }
    }
    bool ok() const { return checks > 0 && failures == 0; }
};

// Checks d(sum(c .* op(inputs)))/d(inputs) against central differences of the
// double-precision reference op. Step 1e-4.
inline GradStats check_op_gradient(
    const std::vector<std::vector<int>>& input_shapes,
    const std::function<int(cq::ad::Tape&, const std::vector<int>&)>& engine_op,
    const std::function<ref::Mat(const std::vector<ref::Mat>&)>& ref_op, cq::Rng& rng,
    double rtol = 1e-4, double atol = 1e-6, double input_scale = 1.0) {
    const double h = 1e-4;

    std::vector<cq::Tensor> inputs;
    for (const auto& s : input_shapes) inputs.push_back(random_tensor(s, rng, input_scale));

    // engine forward/backward with a random linear readout
    cq::ad::Tape tape;
    std::vector<int> nodes;
    for (auto& t : inputs) nodes.push_back(tape.leaf(t));
    const int out = engine_op(tape, nodes);
    cq::Tensor weights = random_tensor(tape.val(out).shape, rng, 1.0, false);
    const int loss = tape.sum_all(tape.mul(out, tape.constant(weights)));
    tape.backward(loss);

    std::vector<ref::Mat> rin;
    for (const auto& t : inputs) rin.push_back(to_ref(t));
    const ref::Mat rw = to_ref(weights);

    auto ref_loss = [&](const std::vector<ref::Mat>& ins) {
        const ref::Mat o = ref_op(ins);
        double acc = 0.0;
        for (size_t i = 0; i < o.v.size(); ++i) acc += o.v[i] * rw.v[i];
        return acc;
    };

    GradStats stats;
    for (size_t ii = 0; ii < inputs.size(); ++ii) {
        const cq::Tensor g = tape.grad_tensor(nodes[ii]);
        for (size_t k = 0; k < rin[ii].v.size(); ++k) {
            std::vector<ref::Mat> plus = rin, minus = rin;
            plus[ii].v[k] += h;
            minus[ii].v[k] -= h;
            const double numeric = (ref_loss(plus) - ref_loss(minus)) / (2.0 * h);
            stats.compare(g.values[k], numeric, rtol, atol);
        }
    }
    return stats;
}

}  // namespace support
