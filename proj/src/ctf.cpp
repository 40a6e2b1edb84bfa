#include "cryoquery/ctf.hpp"

#include <cmath>

#include "cryoquery/errors.hpp"

namespace cq::img {

namespace {
constexpr double kPi = 3.14159265358979323846;

void validate(const CtfParams& p) {
    if (p.kv <= 0.0) throw ValidationError("ctf: voltage must be positive");
    if (p.amp_contrast < 0.0 || p.amp_contrast > 1.0)
        throw ValidationError("ctf: amplitude contrast must lie in [0, 1]");
}

double freq_component(int k, int d, double pixel_size) {
    const int f = k <= d / 2 ? k : k - d;
    return static_cast<double>(f) / (d * pixel_size);
}

}  // namespace

double electron_wavelength_A(double kv) {
    const double v = kv * 1e3;  // volts
    return 12.2642598 / std::sqrt(v * (1.0 + v * 0.97845e-6));
}

double ctf_value(const CtfParams& p, double freq_invA) {
    validate(p);
    const double lambda = electron_wavelength_A(p.kv);
    const double cs_A = p.cs_mm * 1e7;
    const double f2 = freq_invA * freq_invA;
    const double gamma = kPi * lambda * p.defocus_A * f2 -
                         0.5 * kPi * cs_A * lambda * lambda * lambda * f2 * f2;
    const double w = p.amp_contrast;
    double v = -(std::sqrt(1.0 - w * w) * std::sin(gamma) + w * std::cos(gamma));
    if (p.bfactor_A2 != 0.0) v *= std::exp(-p.bfactor_A2 * f2 / 4.0);
    return v;
}

std::vector<double> ctf_transfer(const CtfParams& p, int d, double pixel_size) {
    validate(p);
    std::vector<double> t(static_cast<size_t>(d) * d);
    for (int ky = 0; ky < d; ++ky) {
        const double fy = freq_component(ky, d, pixel_size);
        for (int kx = 0; kx < d; ++kx) {
            const double fx = freq_component(kx, d, pixel_size);
            t[static_cast<size_t>(ky) * d + kx] = ctf_value(p, std::sqrt(fx * fx + fy * fy));
        }
    }
    return t;
}

std::vector<double> gaussian_transfer(double bfactor_A2, int d, double pixel_size) {
    std::vector<double> t(static_cast<size_t>(d) * d);
    for (int ky = 0; ky < d; ++ky) {
        const double fy = freq_component(ky, d, pixel_size);
        for (int kx = 0; kx < d; ++kx) {
            const double fx = freq_component(kx, d, pixel_size);
            t[static_cast<size_t>(ky) * d + kx] = std::exp(-bfactor_A2 * (fx * fx + fy * fy) / 4.0);
        }
    }
    return t;
}

}  // namespace cq::img
