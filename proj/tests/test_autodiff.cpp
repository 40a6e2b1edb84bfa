#include <doctest.h>

#include <cmath>

#include "cryoquery/adam.hpp"
#include "cryoquery/errors.hpp"
#include "cryoquery/tape.hpp"
#include "support.hpp"

using namespace cq;
using support::check_op_gradient;

namespace {

Tensor t2(std::vector<int> shape, std::vector<float> vals) {
    return Tensor::from(std::move(shape), std::move(vals));
}

}  // namespace

TEST_CASE("matmul: identity and projector examples") {
    ad::Tape tape;
    const int i2 = tape.constant(t2({2, 2}, {1, 0, 0, 1}));
    const int a = tape.constant(t2({2, 2}, {1, 2, 3, 4}));
    const int prod = tape.matmul(i2, a);
    CHECK(tape.val(prod).values == std::vector<float>{1, 2, 3, 4});

    const int proj = tape.constant(t2({2, 2}, {1, 0, 0, 0}));
    const int b = tape.constant(t2({2, 2}, {5, 6, 7, 8}));
    const int pb = tape.matmul(proj, b);
    CHECK(tape.val(pb).values == std::vector<float>{5, 6, 0, 0});
}

TEST_CASE("matmul: dimension mismatch throws") {
    ad::Tape tape;
    const int a = tape.constant(Tensor({2, 3}));
    const int b = tape.constant(Tensor({2, 2}));
    CHECK_THROWS_AS(tape.matmul(a, b), DimensionError);
}

TEST_CASE("matmul: gradient of sum(A*B) matches finite differences") {
    Rng rng(42, "fd_matmul");
    for (int trial = 0; trial < 10; ++trial) {
        auto stats = check_op_gradient(
            {{3, 3}, {3, 3}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.matmul(in[0], in[1]); },
            [](const std::vector<ref::Mat>& in) { return ref::matmul(in[0], in[1]); }, rng);
        CHECK(stats.ok());
    }
}

TEST_CASE("matmul: transpose flags against reference") {
    Rng rng(43, "fd_matmul_t");
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            const std::vector<int> sa = ta ? std::vector<int>{4, 3} : std::vector<int>{3, 4};
            const std::vector<int> sb = tb ? std::vector<int>{5, 4} : std::vector<int>{4, 5};
            auto stats = check_op_gradient(
                {sa, sb},
                [ta, tb](ad::Tape& t, const std::vector<int>& in) {
                    return t.matmul(in[0], in[1], ta, tb);
                },
                [ta, tb](const std::vector<ref::Mat>& in) {
                    return ref::matmul(ta ? ref::transpose(in[0]) : in[0],
                                       tb ? ref::transpose(in[1]) : in[1]);
                },
                rng);
            CHECK(stats.ok());
        }
}

TEST_CASE("softmax: uniform and shift-invariance examples") {
    ad::Tape tape;
    const int z = tape.constant(t2({1, 3}, {0, 0, 0}));
    const auto& u = tape.val(tape.softmax_rows(z)).values;
    for (float v : u) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-6));

    for (float c : {-3.0f, 0.0f, 7.5f}) {
        const int x = tape.constant(t2({1, 2}, {c, c + std::log(2.0f)}));
        const auto& s = tape.val(tape.softmax_rows(x)).values;
        CHECK(s[0] == doctest::Approx(1.0 / 3).epsilon(1e-5));
        CHECK(s[1] == doctest::Approx(2.0 / 3).epsilon(1e-5));
    }
}

TEST_CASE("softmax: rows sum to one on random input") {
    Rng rng(7, "softmax_rows");
    ad::Tape tape;
    const int x = tape.constant(support::random_tensor({20, 13}, rng, 3.0, false));
    const auto& s = tape.val(tape.softmax_rows(x));
    for (int i = 0; i < 20; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 13; ++j) acc += s.at(i, j);
        CHECK(std::fabs(acc - 1.0) < 1e-6);
    }
}

TEST_CASE("softmax: Jacobian matches finite differences") {
    Rng rng(44, "fd_softmax");
    for (int trial = 0; trial < 10; ++trial) {
        auto stats = check_op_gradient(
            {{1, 4}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.softmax_rows(in[0]); },
            [](const std::vector<ref::Mat>& in) { return ref::softmax_rows(in[0]); }, rng);
        CHECK(stats.ok());
    }
}

TEST_CASE("attention: degenerate-weight examples") {
    ad::Tape tape;
    // q k^T all zeros -> output is the column mean of v in every row
    const int q = tape.constant(t2({3, 2}, {0, 0, 0, 0, 0, 0}));
    Rng rng(5, "attn");
    const Tensor kt = support::random_tensor({4, 2}, rng, 1.0, false);
    const Tensor vt = support::random_tensor({4, 2}, rng, 1.0, false);
    const auto [out, w] = tape.attention(q, tape.constant(kt), tape.constant(vt));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double mean = 0.0;
            for (int r = 0; r < 4; ++r) mean += vt.at(r, j);
            mean /= 4.0;
            CHECK(tape.val(out).at(i, j) == doctest::Approx(mean).epsilon(1e-5));
        }
    // weights are row-stochastic
    for (int i = 0; i < 3; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 4; ++j) {
            acc += tape.val(w).at(i, j);
            CHECK(tape.val(w).at(i, j) >= 0.0f);
        }
        CHECK(std::fabs(acc - 1.0) < 1e-6);
    }
}

TEST_CASE("attention: single token returns v") {
    Rng rng(6, "attn1");
    ad::Tape tape;
    const Tensor vt = support::random_tensor({1, 5}, rng, 2.0, false);
    const auto [out, w] = tape.attention(tape.constant(support::random_tensor({1, 5}, rng)),
                                         tape.constant(support::random_tensor({1, 5}, rng)),
                                         tape.constant(vt));
    for (int j = 0; j < 5; ++j) CHECK(tape.val(out).at(0, j) == doctest::Approx(vt.at(0, j)));
    CHECK(tape.val(w).values[0] == doctest::Approx(1.0));
}

TEST_CASE("attention: 2x2 hand evaluation") {
    // q = [[1,0],[0,1]], k = I, v = [[1,0],[0,1]], C = 2
    ad::Tape tape;
    const int q = tape.constant(t2({2, 2}, {1, 0, 0, 1}));
    const int k = tape.constant(t2({2, 2}, {1, 0, 0, 1}));
    const int v = tape.constant(t2({2, 2}, {1, 0, 0, 1}));
    const auto [out, w] = tape.attention(q, k, v);
    const double s = 1.0 / std::sqrt(2.0);
    const double e1 = std::exp(s), e0 = std::exp(0.0);
    const double w_diag = e1 / (e1 + e0);
    const double w_off = e0 / (e1 + e0);
    CHECK(tape.val(w).at(0, 0) == doctest::Approx(w_diag).epsilon(1e-5));
    CHECK(tape.val(w).at(0, 1) == doctest::Approx(w_off).epsilon(1e-5));
    CHECK(tape.val(out).at(0, 0) == doctest::Approx(w_diag).epsilon(1e-5));
    CHECK(tape.val(out).at(1, 1) == doctest::Approx(w_diag).epsilon(1e-5));
}

TEST_CASE("attention: gradients match finite differences") {
    Rng rng(45, "fd_attention");
    for (int trial = 0; trial < 5; ++trial) {
        auto stats = check_op_gradient(
            {{3, 4}, {5, 4}, {5, 4}},
            [](ad::Tape& t, const std::vector<int>& in) {
                return t.attention(in[0], in[1], in[2]).first;
            },
            [](const std::vector<ref::Mat>& in) { return ref::attention(in[0], in[1], in[2]); },
            rng);
        CHECK(stats.ok());
    }
}

TEST_CASE("elementwise examples: relu and layer_norm") {
    ad::Tape tape;
    const int x = tape.constant(t2({1, 3}, {-1, 0, 2}));
    CHECK(tape.val(tape.relu(x)).values == std::vector<float>{0, 0, 2});

    // constant row -> zeros before affine
    const int c = tape.constant(t2({1, 4}, {3, 3, 3, 3}));
    const int g = tape.constant(Tensor::full({4}, 1.0f));
    const int b = tape.constant(Tensor({4}));
    const auto& ln = tape.val(tape.layer_norm(c, g, b)).values;
    for (float v : ln) CHECK(std::fabs(v) < 1e-4);
}

TEST_CASE("elementwise ops: gradients match finite differences") {
    Rng rng(46, "fd_elem");
    auto unary = [&](auto efn, auto rfn, double rtol = 1e-4) {
        for (int trial = 0; trial < 10; ++trial) {
            auto stats = check_op_gradient({{2, 4}}, efn, rfn, rng, rtol);
            CHECK(stats.ok());
        }
    };
    unary([](ad::Tape& t, const std::vector<int>& in) { return t.relu(in[0]); },
          [](const std::vector<ref::Mat>& in) { return ref::relu(in[0]); });
    unary([](ad::Tape& t, const std::vector<int>& in) { return t.tanh_(in[0]); },
          [](const std::vector<ref::Mat>& in) {
              ref::Mat o = in[0];
              for (double& v : o.v) v = std::tanh(v);
              return o;
          });
    unary([](ad::Tape& t, const std::vector<int>& in) { return t.softplus(in[0]); },
          [](const std::vector<ref::Mat>& in) {
              ref::Mat o = in[0];
              for (double& v : o.v) v = v > 20 ? v : std::log1p(std::exp(v));
              return o;
          });
    unary([](ad::Tape& t, const std::vector<int>& in) { return t.square(in[0]); },
          [](const std::vector<ref::Mat>& in) {
              ref::Mat o = in[0];
              for (double& v : o.v) v *= v;
              return o;
          });
    unary([](ad::Tape& t, const std::vector<int>& in) { return t.abs_(in[0]); },
          [](const std::vector<ref::Mat>& in) {
              ref::Mat o = in[0];
              for (double& v : o.v) v = std::fabs(v);
              return o;
          });
    unary([](ad::Tape& t, const std::vector<int>& in) { return t.scale(in[0], 2.5f); },
          [](const std::vector<ref::Mat>& in) {
              ref::Mat o = in[0];
              for (double& v : o.v) v *= 2.5;
              return o;
          });
}

TEST_CASE("add/sub/mul and shape ops: gradients match finite differences") {
    Rng rng(47, "fd_binary");
    for (int trial = 0; trial < 5; ++trial) {
        auto s1 = check_op_gradient(
            {{3, 4}, {3, 4}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.add(in[0], in[1]); },
            [](const std::vector<ref::Mat>& in) { return ref::add(in[0], in[1]); }, rng);
        CHECK(s1.ok());
        auto s2 = check_op_gradient(
            {{3, 4}, {3, 4}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.mul(in[0], in[1]); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o = in[0];
                for (size_t i = 0; i < o.v.size(); ++i) o.v[i] *= in[1].v[i];
                return o;
            },
            rng);
        CHECK(s2.ok());
        auto s3 = check_op_gradient(
            {{2, 6}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.reshape(in[0], {3, 4}); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o(3, 4);
                o.v = in[0].v;
                return o;
            },
            rng);
        CHECK(s3.ok());
        auto s4 = check_op_gradient(
            {{3, 5}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.slice_cols(in[0], 1, 4); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o(3, 3);
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) o.at(i, j) = in[0].at(i, j + 1);
                return o;
            },
            rng);
        CHECK(s4.ok());
        auto s5 = check_op_gradient(
            {{4, 3}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.slice_rows(in[0], 1, 3); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o(2, 3);
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 3; ++j) o.at(i, j) = in[0].at(i + 1, j);
                return o;
            },
            rng);
        CHECK(s5.ok());
    }
}

TEST_CASE("reductions and broadcast ops: gradients match finite differences") {
    Rng rng(48, "fd_reduce");
    for (int trial = 0; trial < 5; ++trial) {
        auto s1 = check_op_gradient(
            {{3, 4}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.sum_axis1(in[0]); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o(3, 1);
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 4; ++j) o.at(i, 0) += in[0].at(i, j);
                return o;
            },
            rng);
        CHECK(s1.ok());
        auto s2 = check_op_gradient(
            {{4, 3}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.mean_axis0(in[0]); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o(1, 3);
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 3; ++j) o.at(0, j) += in[0].at(i, j) / 4.0;
                return o;
            },
            rng);
        CHECK(s2.ok());
        auto s3 = check_op_gradient(
            {{6, 3}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.mean_group_rows(in[0], 3); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o(2, 3);
                for (int b = 0; b < 2; ++b)
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) o.at(b, j) += in[0].at(b * 3 + i, j) / 3.0;
                return o;
            },
            rng);
        CHECK(s3.ok());
        auto s4 = check_op_gradient(
            {{3, 4}, {1, 4}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.add_rowvec(in[0], in[1]); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o = in[0];
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 4; ++j) o.at(i, j) += in[1].at(0, j);
                return o;
            },
            rng);
        CHECK(s4.ok());
        auto s5 = check_op_gradient(
            {{6, 4}, {3, 4}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.add_tile_rows(in[0], in[1]); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o = in[0];
                for (int b = 0; b < 2; ++b)
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 4; ++j) o.at(b * 3 + i, j) += in[1].at(i, j);
                return o;
            },
            rng);
        CHECK(s5.ok());
        auto s6 = check_op_gradient(
            {{6, 2}},  // interpreted as [(N*C), F] with N=3, C=2 -> [C, N*F]
            [](ad::Tape& t, const std::vector<int>& in) { return t.expand_perm(in[0], 3, 2); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o(2, 6);
                for (int j = 0; j < 3; ++j)
                    for (int c = 0; c < 2; ++c)
                        for (int f = 0; f < 2; ++f) o.at(c, j * 2 + f) = in[0].at(j * 2 + c, f);
                return o;
            },
            rng);
        CHECK(s6.ok());
        auto s7 = check_op_gradient(
            {{2, 3}, {2, 6}},  // rowmix with N=3, C=2
            [](ad::Tape& t, const std::vector<int>& in) { return t.rowmix(in[0], in[1], 3, 2); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o(2, 2);
                for (int b = 0; b < 2; ++b)
                    for (int j = 0; j < 3; ++j)
                        for (int c = 0; c < 2; ++c)
                            o.at(b, c) += in[0].at(b, j) * in[1].at(b, j * 2 + c);
                return o;
            },
            rng);
        CHECK(s7.ok());
    }
}

TEST_CASE("layer_norm: gradients match finite differences") {
    Rng rng(49, "fd_ln");
    for (int trial = 0; trial < 10; ++trial) {
        auto stats = check_op_gradient(
            {{2, 5}, {1, 5}, {1, 5}},
            [](ad::Tape& t, const std::vector<int>& in) {
                return t.layer_norm(in[0], in[1], in[2]);
            },
            [](const std::vector<ref::Mat>& in) {
                return ref::layer_norm(in[0], in[1].v, in[2].v);
            },
            rng);
        CHECK(stats.ok());
    }
}

TEST_CASE("shared sub-expressions accumulate: d(x+x)/dx = 2") {
    ad::Tape tape;
    Tensor x = Tensor::scalar(1.5f);
    x.requires_grad = true;
    const int xn = tape.leaf(std::move(x));
    tape.backward(tape.add(xn, xn));
    CHECK(tape.grad_tensor(xn).values[0] == doctest::Approx(2.0));
}

TEST_CASE("cross3 / columns3 / scalar-node ops: finite differences") {
    Rng rng(50, "fd_vec");
    for (int trial = 0; trial < 5; ++trial) {
        auto s1 = check_op_gradient(
            {{1, 3}, {1, 3}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.cross3(in[0], in[1]); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o(1, 3);
                const auto& a = in[0].v;
                const auto& b = in[1].v;
                o.v = {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                       a[0] * b[1] - a[1] * b[0]};
                return o;
            },
            rng);
        CHECK(s1.ok());
        auto s2 = check_op_gradient(
            {{1, 3}, {1, 1}},
            [](ad::Tape& t, const std::vector<int>& in) {
                return t.div_scalar_node(in[0], t.add_const(t.square(in[1]), 1.0f));
            },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o = in[0];
                const double s = in[1].v[0] * in[1].v[0] + 1.0;
                for (double& v : o.v) v /= s;
                return o;
            },
            rng);
        CHECK(s2.ok());
        auto s3 = check_op_gradient(
            {{2, 3}, {1, 1}},
            [](ad::Tape& t, const std::vector<int>& in) {
                return t.mul_scalar_node(in[0], in[1]);
            },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o = in[0];
                for (double& v : o.v) v *= in[1].v[0];
                return o;
            },
            rng);
        CHECK(s3.ok());
        auto s4 = check_op_gradient(
            {{1, 1}},
            [](ad::Tape& t, const std::vector<int>& in) {
                return t.broadcast_scalar(in[0], {2, 3});
            },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o(2, 3);
                for (double& v : o.v) v = in[0].v[0];
                return o;
            },
            rng);
        CHECK(s4.ok());
        auto s5 = check_op_gradient(
            {{2, 2}},
            [](ad::Tape& t, const std::vector<int>& in) { return t.sqrt_(in[0], 4.0f); },
            [](const std::vector<ref::Mat>& in) {
                ref::Mat o = in[0];
                for (double& v : o.v) v = std::sqrt(v + 4.0);
                return o;
            },
            rng);
        CHECK(s5.ok());
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ad::ParamStore store;
    ad::Param& p = store.add("w", "model", t2({2, 2}, {1, 2, 3, 4}));
    ad::AdamState st;
    st.m.assign(4, 0.0f);
    st.v.assign(4, 0.0f);
    adam_step(p, std::vector<float>(4, 0.0f), st, 0.1);
    CHECK(p.value.values == std::vector<float>{1, 2, 3, 4});
    CHECK(st.step == 1);
}

TEST_CASE("adam: first step with unit gradient is -lr") {
    ad::ParamStore store;
    ad::Param& p = store.add("w", "model", Tensor::scalar(0.0f));
    ad::AdamState st;
    st.m.assign(1, 0.0f);
    st.v.assign(1, 0.0f);
    adam_step(p, {1.0f}, st, 0.1);
    CHECK(p.value.values[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: 100 steps on x^2 from x=1 reach |x| < 0.1") {
    ad::ParamStore store;
    ad::Param& p = store.add("x", "model", Tensor::scalar(1.0f));
    ad::AdamState st;
    st.m.assign(1, 0.0f);
    st.v.assign(1, 0.0f);
    for (int i = 0; i < 100; ++i) {
        const float g = 2.0f * p.value.values[0];
        adam_step(p, {g}, st, 0.1);
    }
    CHECK(std::fabs(p.value.values[0]) < 0.1);
}

TEST_CASE("adam: NaN gradient aborts naming the parameter") {
    ad::ParamStore store;
    ad::Param& p = store.add("dec.queries", "model", Tensor::scalar(0.0f));
    ad::AdamState st;
    st.m.assign(1, 0.0f);
    st.v.assign(1, 0.0f);
    try {
        adam_step(p, {std::nanf("")}, st, 0.1);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("dec.queries") != std::string::npos);
    }
}

TEST_CASE("deterministic optimization: same seed, bitwise-identical parameters") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed, "det");
        ad::ParamStore store;
        ad::Param& w = store.add("w", "model", support::random_tensor({4, 4}, rng));
        ad::AdamOptimizer opt(store);
        for (int step = 0; step < 25; ++step) {
            ad::Tape tape;
            const int wn = tape.param(w);
            const int x = tape.constant(support::random_tensor({4, 4}, rng, 1.0, false));
            const int loss = tape.sum_all(tape.square(tape.sub(tape.matmul(wn, x), x)));
            tape.backward(loss);
            ad::GradSet gs;
            tape.export_grads(gs);
            opt.step(store, gs, {{"model", 1e-2}});
        }
        return w.value.values;
    };
    CHECK(run(123) == run(123));
    CHECK(run(123) != run(124));
}

TEST_CASE("non-finite detection in checked mode") {
    ad::Tape tape;
    tape.set_check_finite(true);
    const int x = tape.constant(t2({1, 2}, {1e30f, 1e30f}));
    CHECK_THROWS_AS(tape.mul(x, x), NumericError);
}
