#pragma once

#include <vector>

// Weak-phase contrast transfer function on the FFT frequency grid:
//   CTF(f) = -(sqrt(1 - w^2) sin(gamma) + w cos(gamma)) * exp(-B f^2 / 4)
//   gamma(f) = pi lambda dz f^2 - (pi/2) Cs lambda^3 f^4
// with f in 1/Angstrom. Also provides a plain Gaussian low-pass mode for
// the simplest synthetic tests.

namespace cq::img {

struct CtfParams {
    double defocus_A = 10000.0;   // dz, underfocus positive
    double cs_mm = 2.7;           // spherical aberration
    double kv = 300.0;            // accelerating voltage
    double amp_contrast = 0.1;    // w in [0, 1]
    double bfactor_A2 = 0.0;      // 0 disables the envelope
};

// Relativistic electron wavelength in Angstrom.
double electron_wavelength_A(double kv);

double ctf_value(const CtfParams& p, double freq_invA);

// D x D real transfer array in unshifted FFT index layout (index k maps to
// frequency (k <= D/2 ? k : k - D) / (D * pixel_size)).
std::vector<double> ctf_transfer(const CtfParams& p, int d, double pixel_size);

// exp(-B f^2 / 4) low-pass on the same grid.
std::vector<double> gaussian_transfer(double bfactor_A2, int d, double pixel_size);

}  // namespace cq::img
