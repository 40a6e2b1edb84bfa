#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

#include "cryoquery/errors.hpp"
#include "cryoquery/geometry.hpp"
#include "support.hpp"

using namespace cq;

TEST_CASE("rotation_from_6d: identity and Gram-Schmidt idempotence") {
    CHECK(geo::rotation_from_6d({1, 0, 0, 0, 1, 0}).isApprox(Eigen::Matrix3d::Identity(), 1e-12));
    // scale and shear along b1 are removed
    CHECK(geo::rotation_from_6d({2, 0, 0, 3, 1, 0}).isApprox(Eigen::Matrix3d::Identity(), 1e-12));
}

TEST_CASE("rotation_from_6d: degenerate codes throw") {
    CHECK_THROWS_AS(geo::rotation_from_6d({0, 0, 0, 0, 1, 0}), DegenerateCodeError);
    CHECK_THROWS_AS(geo::rotation_from_6d({1, 0, 0, 2, 0, 0}), DegenerateCodeError);
}

TEST_CASE("rotation_from_6d: random codes always land in SO(3), round trip") {
    Rng rng(11, "so3_sweep");
    for (int i = 0; i < 1000; ++i) {
        std::array<double, 6> code;
        for (double& c : code) c = rng.gaussian();
        const Eigen::Matrix3d r = geo::rotation_from_6d(code);
        CHECK(geo::orthogonality_defect(r) < 1e-6);
        CHECK(r.determinant() > 0.0);
        const Eigen::Matrix3d r2 = geo::rotation_from_6d(geo::rotation_to_6d(r));
        CHECK((r - r2).norm() < 1e-6);
    }
}

TEST_CASE("rotation_from_6d: invariant to positive scaling of either vector") {
    Rng rng(12, "scale_inv");
    for (int i = 0; i < 100; ++i) {
        std::array<double, 6> code;
        for (double& c : code) c = rng.gaussian();
        const Eigen::Matrix3d r = geo::rotation_from_6d(code);
        std::array<double, 6> scaled = code;
        for (int k = 0; k < 3; ++k) scaled[static_cast<size_t>(k)] *= 3.7;
        for (int k = 3; k < 6; ++k) scaled[static_cast<size_t>(k)] *= 0.21;
        CHECK((geo::rotation_from_6d(scaled) - r).norm() < 1e-6);
    }
}

TEST_CASE("rotation_to_6d: canonical examples and validation") {
    const auto id = geo::rotation_to_6d(Eigen::Matrix3d::Identity());
    CHECK(id == std::array<double, 6>{1, 0, 0, 0, 1, 0});

    Eigen::Matrix3d rz;  // 90 degrees about z
    rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    const auto c = geo::rotation_to_6d(rz);
    CHECK(c == std::array<double, 6>{0, 1, 0, -1, 0, 0});

    Eigen::Matrix3d bad = Eigen::Matrix3d::Identity() * 2.0;
    CHECK_THROWS_AS(geo::rotation_to_6d(bad), ValidationError);
}

TEST_CASE("sample_uniform_rotation: reproducible, valid, zero-mean trace") {
    Rng a(77, "rot"), b(77, "rot");
    CHECK(geo::sample_uniform_rotation(a).isApprox(geo::sample_uniform_rotation(b), 1e-15));

    Rng rng(78, "rot_stats");
    const int n = 20000;
    double trace_sum = 0.0, trace_sq = 0.0;
    Eigen::Matrix3d mean = Eigen::Matrix3d::Zero();
    for (int i = 0; i < n; ++i) {
        const Eigen::Matrix3d r = geo::sample_uniform_rotation(rng);
        CHECK(geo::orthogonality_defect(r) < 1e-6);
        CHECK(r.determinant() > 0.0);
        trace_sum += r.trace();
        trace_sq += r.trace() * r.trace();
        mean += r;
    }
    const double tmean = trace_sum / n;
    const double tstd = std::sqrt((trace_sq / n - tmean * tmean) / n);
    CHECK(std::fabs(tmean) < 3.0 * tstd);  // E[tr R] = 0 for Haar measure
    mean /= n;
    CHECK(mean.norm() < 3.0 * 1.5 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("perturb_pose: zero noise is the identity, outputs stay in SO(3)") {
    Rng rng(13, "perturb");
    geo::Pose p;
    p.rotation = geo::sample_uniform_rotation(rng);
    p.translation = Eigen::Vector2d(1.5, -2.0);
    const geo::Pose q = geo::perturb_pose(p, 0.0, 0.0, rng);
    CHECK(q.rotation.isApprox(p.rotation, 1e-15));
    CHECK(q.translation == p.translation);

    for (int i = 0; i < 200; ++i) {
        const geo::Pose r = geo::perturb_pose(p, 0.5, 3.0, rng);
        CHECK(geo::orthogonality_defect(r.rotation) < 1e-6);
        CHECK(r.rotation.determinant() > 0.0);
    }
}

TEST_CASE("perturb_pose: sigma=0.1 reference initial rotation error") {
    // Monte-Carlo measurement of the error a pose-refinement run starts from.
    Rng rng(14, "perturb_ref");
    std::vector<Eigen::Matrix3d> pred, gt;
    for (int i = 0; i < 10000; ++i) {
        geo::Pose p;
        p.rotation = geo::sample_uniform_rotation(rng);
        gt.push_back(p.rotation);
        pred.push_back(geo::perturb_pose(p, 0.1, 0.0, rng).rotation);
    }
    const double err = geo::rotation_error(pred, gt);
    // additive N(0, 0.1^2) noise projected to SO(3) keeps only the skew part:
    // expected mean square Frobenius error ~ 3 sigma^2
    CHECK(err > 0.015);
    CHECK(err < 0.05);
    MESSAGE("perturbation sigma=0.1 initial rotation error: ", err);
}

TEST_CASE("rotation_error: zero, closed form, positivity") {
    Rng rng(15, "rot_err");
    std::vector<Eigen::Matrix3d> a{geo::sample_uniform_rotation(rng)};
    CHECK(geo::rotation_error(a, a) == 0.0);

    Eigen::Matrix3d flip;  // 180 degrees about z
    flip << -1, 0, 0, 0, -1, 0, 0, 0, 1;
    CHECK(geo::rotation_error({Eigen::Matrix3d::Identity()}, {flip}) == doctest::Approx(8.0));

    std::vector<Eigen::Matrix3d> b{geo::sample_uniform_rotation(rng)};
    if ((a[0] - b[0]).norm() > 1e-12) CHECK(geo::rotation_error(a, b) > 0.0);
    CHECK_THROWS_AS(geo::rotation_error({}, {}), DimensionError);
}

TEST_CASE("translation_error: zero and the 3-4-5 example") {
    std::vector<Eigen::Vector2d> a{{0, 0}}, b{{3, 4}};
    CHECK(geo::translation_error(a, a, 100) == 0.0);
    CHECK(geo::translation_error(a, b, 100) == doctest::Approx(0.05));
    CHECK_THROWS_AS(geo::translation_error({}, {}, 100), DimensionError);
}

TEST_CASE("rotation_from_6d_node: matches the plain implementation and its gradient") {
    Rng rng(16, "fd_rot6d");
    for (int trial = 0; trial < 10; ++trial) {
        auto stats = support::check_op_gradient(
            {{1, 6}},
            [](ad::Tape& t, const std::vector<int>& in) {
                return geo::rotation_from_6d_node(t, in[0]);
            },
            [](const std::vector<ref::Mat>& in) {
                double code[6];
                for (int i = 0; i < 6; ++i) code[i] = in[0].v[static_cast<size_t>(i)];
                double out[9];
                ref::rotation_from_6d(code, out);
                ref::Mat m(3, 3);
                m.v.assign(out, out + 9);
                return m;
            },
            rng, 5e-4, 1e-5);
        CHECK(stats.ok());
    }
    // values agree with the double-precision construction
    ad::Tape tape;
    Tensor code({1, 6});
    std::array<double, 6> cd;
    Rng r2(17, "rot6d_vals");
    for (int i = 0; i < 6; ++i) {
        cd[static_cast<size_t>(i)] = r2.gaussian();
        code.values[static_cast<size_t>(i)] = static_cast<float>(cd[static_cast<size_t>(i)]);
    }
    const int rn = geo::rotation_from_6d_node(tape, tape.constant(code));
    const Eigen::Matrix3d want = geo::rotation_from_6d(cd);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(tape.val(rn).at(i, j) == doctest::Approx(want(i, j)).epsilon(1e-5));
}
