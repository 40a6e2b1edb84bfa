#include <doctest.h>

#include <cmath>
#include <complex>

#include "cryoquery/errors.hpp"
#include "cryoquery/fft.hpp"
#include "cryoquery/imaging.hpp"
#include "cryoquery/phantom.hpp"
#include "support.hpp"

using namespace cq;

namespace {

double image_variance(const std::vector<float>& img) {
    double mean = 0.0;
    for (float v : img) mean += v;
    mean /= static_cast<double>(img.size());
    double var = 0.0;
    for (float v : img) var += (v - mean) * (v - mean);
    return var / static_cast<double>(img.size());
}

// centered 2-D/3-D DFT sample: F(k) = sum_r f(r) exp(-2 pi i k.(r - center)/D)
std::complex<double> dft3_centered(const DensityVolume& v, double kx, double ky, double kz) {
    const int d = v.d;
    const double c = (d - 1) / 2.0;
    std::complex<double> acc(0, 0);
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < d; ++y)
            for (int x = 0; x < d; ++x) {
                const double ph = -2.0 * M_PI * (kx * (x - c) + ky * (y - c) + kz * (z - c)) / d;
                acc += static_cast<double>(v.at(x, y, z)) * std::complex<double>(std::cos(ph), std::sin(ph));
            }
    return acc;
}

}  // namespace

TEST_CASE("project: constant volume under identity pose integrates the cube depth") {
    DensityVolume v(16, 1.0, 2.0f);
    const geo::Pose pose;
    const auto img = img::project(v, pose, 128);
    // interior pixels: the ray crosses the full unit depth of constant c
    for (int y = 4; y < 12; ++y)
        for (int x = 4; x < 12; ++x)
            CHECK(img[static_cast<size_t>(y) * 16 + x] == doctest::Approx(2.0).epsilon(0.03));
}

TEST_CASE("project: single bright voxel lands at the image center") {
    DensityVolume v(16, 1.0);
    v.at(8, 8, 8) = 100.0f;
    const auto img = img::project(v, geo::Pose{}, 64);
    size_t best = 0;
    for (size_t i = 0; i < img.size(); ++i)
        if (img[i] > img[best]) best = i;
    // voxel (8,8,8) center sits at pixel (8,8)
    CHECK(best % 16 == 8);
    CHECK(best / 16 == 8);
}

TEST_CASE("project: linear in the volume") {
    Rng rng(31, "proj_lin");
    DensityVolume a(12, 1.0), b(12, 1.0), mix(12, 1.0);
    for (size_t i = 0; i < a.values.size(); ++i) {
        a.values[i] = static_cast<float>(rng.uniform());
        b.values[i] = static_cast<float>(rng.uniform());
        mix.values[i] = 2.0f * a.values[i] - 3.0f * b.values[i];
    }
    geo::Pose pose;
    pose.rotation = geo::sample_uniform_rotation(rng);
    const auto ia = img::project(a, pose, 24);
    const auto ib = img::project(b, pose, 24);
    const auto im = img::project(mix, pose, 24);
    for (size_t i = 0; i < im.size(); ++i)
        CHECK(im[i] == doctest::Approx(2.0 * ia[i] - 3.0 * ib[i]).epsilon(1e-4).scale(1.0));
}

TEST_CASE("project: integer translation shifts the image") {
    const int d = 16;
    DensityVolume v = phantom::make_single(d, 1.0);
    geo::Pose p0;
    const auto base = img::project(v, p0, 48);
    geo::Pose pt;
    pt.translation = Eigen::Vector2d(3.0, -2.0);
    const auto shifted = img::project(v, pt, 48);
    // I_t(x, y) = I_0(x - tx, y - ty), vacuum padded
    for (int y = 0; y < d; ++y)
        for (int x = 0; x < d; ++x) {
            const int sx = x - 3, sy = y + 2;
            const double want = (sx >= 0 && sx < d && sy >= 0 && sy < d)
                                    ? base[static_cast<size_t>(sy) * d + sx]
                                    : 0.0;
            CHECK(shifted[static_cast<size_t>(y) * d + x] ==
                  doctest::Approx(want).epsilon(1e-3).scale(0.1));
        }
}

TEST_CASE("fourier slice: projection FFT matches the central slice of the volume FFT") {
    // smooth blobby volume, energy concentrated well below Nyquist
    const int d = 24;
    DensityVolume v = phantom::blob_volume(d, 1.0,
                                           {{0.45, 0.5, 0.52, 0.12, 1.0},
                                            {0.6, 0.45, 0.45, 0.1, 0.8},
                                            {0.5, 0.62, 0.55, 0.11, 0.9}});
    Rng rng(32, "slice");
    for (int trial = 0; trial < 3; ++trial) {
        geo::Pose pose;
        pose.rotation = geo::sample_uniform_rotation(rng);
        const auto img = img::project(v, pose, 2 * d);

        // centered 2-D DFT of the projection
        const double c = (d - 1) / 2.0;
        double num = 0.0, den = 0.0;
        for (int ky = -d / 4; ky <= d / 4; ++ky)
            for (int kx = -d / 4; kx <= d / 4; ++kx) {
                std::complex<double> p2(0, 0);
                for (int y = 0; y < d; ++y)
                    for (int x = 0; x < d; ++x) {
                        const double ph = -2.0 * M_PI * (kx * (x - c) + ky * (y - c)) / d;
                        p2 += static_cast<double>(img[static_cast<size_t>(y) * d + x]) *
                              std::complex<double>(std::cos(ph), std::sin(ph));
                    }
                // I = integral of V(R^T x + c) dz slices the spectrum on the
                // R^T-rotated plane
                const Eigen::Vector3d k = pose.rotation.transpose() * Eigen::Vector3d(kx, ky, 0.0);
                const std::complex<double> s3 = dft3_centered(v, k.x(), k.y(), k.z()) / static_cast<double>(d);
                num += std::norm(p2 - s3);
                den += std::norm(s3);
            }
        CHECK(std::sqrt(num / den) < 0.05);
    }
}

TEST_CASE("ctf: value at zero frequency is -w, pure amplitude limit bounded") {
    img::CtfParams p;
    p.amp_contrast = 0.07;
    CHECK(img::ctf_value(p, 0.0) == doctest::Approx(-0.07));
    p.amp_contrast = 1.0;
    for (double f = 0.0; f < 0.5; f += 0.01) {
        const double v = img::ctf_value(p, f);
        CHECK(v <= 1.0);
        CHECK(v >= -1.0);
    }
}

TEST_CASE("ctf: first zero crossing matches a bisection root of the phase") {
    img::CtfParams p;
    p.kv = 300;
    p.defocus_A = 10000;
    p.cs_mm = 2.7;
    p.amp_contrast = 0.1;
    // gamma(f) + atan2(w, sqrt(1-w^2)) = pi at the first zero
    const double lambda = img::electron_wavelength_A(p.kv);
    const double w = p.amp_contrast;
    const double target = M_PI - std::atan2(w, std::sqrt(1 - w * w));
    auto gamma = [&](double f) {
        return M_PI * lambda * p.defocus_A * f * f -
               0.5 * M_PI * (p.cs_mm * 1e7) * lambda * lambda * lambda * f * f * f * f;
    };
    double lo = 0.0, hi = 0.05;
    while (gamma(hi) < target) hi += 0.05;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (gamma(mid) < target ? lo : hi) = mid;
    }
    const double f0 = 0.5 * (lo + hi);
    CHECK(std::fabs(img::ctf_value(p, f0)) < 1e-6);
    CHECK(img::ctf_value(p, f0 * 0.98) < 0.0);
    CHECK(img::ctf_value(p, f0 * 1.02) > 0.0);
}

TEST_CASE("apply_ctf: identity transfer, composition, spectral bound") {
    Rng rng(33, "apctf");
    const int d = 16;
    std::vector<float> img(static_cast<size_t>(d) * d);
    for (float& v : img) v = static_cast<float>(rng.gaussian());

    auto copy = img;
    img::apply_ctf(copy.data(), d, std::vector<double>(static_cast<size_t>(d) * d, 1.0));
    for (size_t i = 0; i < img.size(); ++i) CHECK(copy[i] == doctest::Approx(img[i]).epsilon(1e-5));

    img::CtfParams p;
    const auto t = img::ctf_transfer(p, d, 1.6);
    std::vector<double> t2(t.size());
    for (size_t i = 0; i < t.size(); ++i) t2[i] = t[i] * t[i];
    auto twice = img, once = img;
    img::apply_ctf(twice.data(), d, t);
    img::apply_ctf(twice.data(), d, t);
    img::apply_ctf(once.data(), d, t2);
    for (size_t i = 0; i < img.size(); ++i)
        CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-4).scale(1.0));

    // Parseval: ||T x||_2 <= max|T| ||x||_2
    double tmax = 0.0;
    for (double v : t) tmax = std::max(tmax, std::fabs(v));
    double nin = 0.0, nout = 0.0;
    auto filtered = img;
    img::apply_ctf(filtered.data(), d, t);
    for (size_t i = 0; i < img.size(); ++i) {
        nin += static_cast<double>(img[i]) * img[i];
        nout += static_cast<double>(filtered[i]) * filtered[i];
    }
    CHECK(std::sqrt(nout) <= tmax * std::sqrt(nin) * (1 + 1e-6));
}

TEST_CASE("apply_ctf: matches the naive DFT reference") {
    Rng rng(34, "apctf_ref");
    const int d = 8;
    std::vector<float> img(static_cast<size_t>(d) * d);
    for (float& v : img) v = static_cast<float>(rng.gaussian());
    img::CtfParams p;
    const auto t = img::ctf_transfer(p, d, 2.0);

    ref::vecd rimg(img.begin(), img.end());
    ref::apply_transfer_naive(rimg, d, t);
    img::apply_ctf(img.data(), d, t);
    for (size_t i = 0; i < img.size(); ++i)
        CHECK(img[i] == doctest::Approx(rimg[i]).epsilon(1e-4).scale(1.0));
}

TEST_CASE("add_noise: disabled sentinel, variance calibration, errors") {
    Rng rng(35, "noise");
    const int d = 32;
    std::vector<float> img(static_cast<size_t>(d) * d);
    for (float& v : img) v = static_cast<float>(rng.gaussian());
    auto orig = img;

    img::NoiseModel off;  // snr = inf
    img::add_noise(img.data(), d, off, rng);
    CHECK(img == orig);

    // SNR 0.1 on a unit-variance image: noise variance ~ 10, via sample stats
    const double var0 = image_variance(img);
    double noise_var = 0.0;
    const int reps = 1000;  // 1000 * 1024 pixels ~ 1e6 samples
    for (int r = 0; r < reps; ++r) {
        auto noisy = orig;
        img::NoiseModel m{0.1};
        img::add_noise(noisy.data(), d, m, rng);
        for (size_t i = 0; i < noisy.size(); ++i) {
            const double dlt = noisy[i] - orig[i];
            noise_var += dlt * dlt;
        }
    }
    noise_var /= static_cast<double>(reps) * orig.size();
    CHECK(noise_var == doctest::Approx(var0 * 10.0).epsilon(0.02));

    std::vector<float> flat(static_cast<size_t>(d) * d, 3.0f);
    img::NoiseModel m{0.1};
    CHECK_THROWS_AS(img::add_noise(flat.data(), d, m, rng), NumericError);

    // dB bookkeeping
    CHECK(10.0 * std::log10(0.1) == doctest::Approx(-10.0));
    CHECK(10.0 * std::log10(0.001) == doctest::Approx(-30.0));
}

TEST_CASE("simulate: identity-forced poses reproduce a plain projection") {
    DensityVolume v = phantom::make_single(12, 1.0);
    img::SimulateSpec spec;
    spec.n_images = 3;
    spec.ctf.kind = img::CtfKind::none;
    spec.force_identity_poses = true;
    spec.translation_range_px = 0.0;
    spec.seed = 5;
    spec.depth_steps = 24;
    const auto ds = img::simulate_dataset({v}, spec);
    const auto want = img::project(v, geo::Pose{}, 24);
    for (int i = 0; i < 3; ++i)
        for (size_t k = 0; k < want.size(); ++k)
            CHECK(ds.data.stack.image(i)[k] == doctest::Approx(want[k]).epsilon(1e-6));
}

TEST_CASE("simulate: reproducible from its seed and state histogram is uniform") {
    const int d = 4;
    std::vector<DensityVolume> states;
    for (int s = 0; s < 10; ++s) {
        DensityVolume v(d, 1.0, 0.0f);
        v.at(s % d, (s / 2) % d, 1) = 1.0f + s;
        states.push_back(v);
    }
    img::SimulateSpec spec;
    spec.n_images = 20000;
    spec.ctf.kind = img::CtfKind::none;
    spec.seed = 99;
    spec.depth_steps = 4;
    spec.threads = 2;
    const auto a = img::simulate_dataset(states, spec);
    const auto b = img::simulate_dataset(states, spec);
    CHECK(a.data.stack.pixels == b.data.stack.pixels);

    // chi-square against the uniform multinomial, 9 dof
    std::vector<long> counts(10, 0);
    for (const auto& r : a.data.records) counts[static_cast<size_t>(*r.state_id)] += 1;
    const double expect = spec.n_images / 10.0;
    double chi2 = 0.0;
    for (long c : counts) chi2 += (c - expect) * (c - expect) / expect;
    CHECK(chi2 < 27.9);  // p ~ 0.001 for 9 dof
}

TEST_CASE("simulate: mismatched state volumes are rejected") {
    DensityVolume a(8, 1.0), b(10, 1.0);
    img::SimulateSpec spec;
    spec.n_images = 1;
    CHECK_THROWS_AS(img::simulate_dataset({a, b}, spec), ValidationError);
}
