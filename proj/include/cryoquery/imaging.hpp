#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cryoquery/ctf.hpp"
#include "cryoquery/geometry.hpp"
#include "cryoquery/metadata.hpp"
#include "cryoquery/rng.hpp"
#include "cryoquery/volume.hpp"

// The forward physics: projection along z after rotation, CTF application in
// the Fourier domain, exact-SNR white Gaussian noise, and the synthetic
// dataset generator.

namespace cq::img {

// Target linear SNR; infinity disables noise.
struct NoiseModel {
    double snr = std::numeric_limits<double>::infinity();
    bool enabled() const { return std::isfinite(snr); }
};

// Clean, pre-CTF projection of a volume. For each pixel the integrand is
// sampled at n_depth midpoints across the unit cube; samples falling outside
// the volume contribute 0 (vacuum). Translation shifts the ray origin, so
// project(v, {R, t}) equals project(v, {R, 0}) shifted by t pixels.
std::vector<float> project(const DensityVolume& v, const geo::Pose& pose, int n_depth);

// Same geometry with an arbitrary field sigma(x, y, z) in [0,1]^3.
std::vector<float> project_field(const std::function<double(double, double, double)>& sigma,
                                 int d, const geo::Pose& pose, int n_depth);

// IFFT2(FFT2(image) * transfer), real part. `transfer` is a real D x D array
// in unshifted FFT layout (see ctf_transfer). Linear, and self-adjoint for
// real transfers.
void apply_ctf(float* image, int d, const std::vector<double>& transfer);

// Adds white Gaussian noise with std = sqrt(Var(image) / snr). Throws
// NumericError on a zero-variance image (undefined SNR).
void add_noise(float* image, int d, const NoiseModel& model, Rng& rng);

enum class CtfKind { weak_phase, gaussian, none };

struct CtfSampling {
    CtfKind kind = CtfKind::weak_phase;
    double defocus_min_A = 10000.0;
    double defocus_max_A = 20000.0;
    double cs_mm = 2.7;
    double kv = 300.0;
    double amp_contrast = 0.1;
    double bfactor_A2 = 0.0;  // envelope (weak_phase) or low-pass width (gaussian)
};

struct SimulateSpec {
    int n_images = 0;
    double snr = std::numeric_limits<double>::infinity();
    CtfSampling ctf;
    double translation_range_px = 10.0;
    std::uint64_t seed = 0;
    int depth_steps = 0;             // 0 -> 2*D
    bool force_identity_poses = false;
    // When > 0, a second pose set perturbed per these parameters is produced
    // (initial estimates for pose pre-training).
    double perturb_rot_sigma = 0.0;
    double perturb_trans_px = 0.0;
    int threads = 1;
};

struct SimulatedDataset {
    meta::ParticleDataset data;
    std::vector<meta::ParticleRecord> initial_poses;  // empty unless perturbation requested
};

// Per image: state uniform over the given volumes, rotation Haar-uniform,
// translation uniform in [-r, r]^2, clean projection -> CTF -> noise. Every
// image derives an independent rng stream from (seed, image index), so the
// result does not depend on execution order.
SimulatedDataset simulate_dataset(const std::vector<DensityVolume>& states,
                                  const SimulateSpec& spec);

}  // namespace cq::img
