#pragma once

#include <complex>
#include <vector>

// Thin wrapper over FFTW (double precision, complex-to-complex). Plans are
// cached per (rank, size, direction) behind a mutex; execution on distinct
// arrays is safe from multiple threads. Transforms are unnormalized, FFTW
// convention: callers divide by N after an inverse.

namespace cq::fft {

void dft2(int d, const std::complex<double>* in, std::complex<double>* out, bool inverse);

void dft3(int d, const std::complex<double>* in, std::complex<double>* out, bool inverse);

// Forward 2-D FFT of a real image (row-major, y major, x minor).
std::vector<std::complex<double>> fft2_real(const float* img, int d);

}  // namespace cq::fft
