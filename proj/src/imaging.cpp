#include "cryoquery/imaging.hpp"

#include <cmath>

#include "cryoquery/errors.hpp"
#include "cryoquery/fft.hpp"
#include "cryoquery/threading.hpp"

namespace cq::img {

// Depth samples span the cube's circumscribed range [-sqrt(3)/2, sqrt(3)/2]
// so rotated corners are never clipped; vacuum outside contributes nothing.
constexpr double kDepthSpan = 1.7320508075688772;

std::vector<float> project(const DensityVolume& v, const geo::Pose& pose, int n_depth) {
    const int d = v.d;
    std::vector<float> out(static_cast<size_t>(d) * d, 0.0f);
    const double dz = kDepthSpan / n_depth;
    const Eigen::Matrix3d rt = pose.rotation.transpose();
    const double tx = pose.translation.x() / d;
    const double ty = pose.translation.y() / d;
    for (int py = 0; py < d; ++py) {
        const double yn = (py + 0.5) / d - 0.5 - ty;
        for (int px = 0; px < d; ++px) {
            const double xn = (px + 0.5) / d - 0.5 - tx;
            // base point at z = -0.5 plus per-step increment along the ray
            Eigen::Vector3d q = rt * Eigen::Vector3d(xn, yn, -0.5 * kDepthSpan + 0.5 * dz) +
                                Eigen::Vector3d(0.5, 0.5, 0.5);
            const Eigen::Vector3d step = rt.col(2) * dz;
            double acc = 0.0;
            for (int s = 0; s < n_depth; ++s) {
                acc += sample_trilinear(v, q.x(), q.y(), q.z());
                q += step;
            }
            out[static_cast<size_t>(py) * d + px] = static_cast<float>(acc * dz);
        }
    }
    return out;
}

std::vector<float> project_field(const std::function<double(double, double, double)>& sigma,
                                 int d, const geo::Pose& pose, int n_depth) {
    std::vector<float> out(static_cast<size_t>(d) * d, 0.0f);
    const double dz = 1.0 / n_depth;
    const Eigen::Matrix3d rt = pose.rotation.transpose();
    const double tx = pose.translation.x() / d;
    const double ty = pose.translation.y() / d;
    for (int py = 0; py < d; ++py) {
        const double yn = (py + 0.5) / d - 0.5 - ty;
        for (int px = 0; px < d; ++px) {
            const double xn = (px + 0.5) / d - 0.5 - tx;
            Eigen::Vector3d q = rt * Eigen::Vector3d(xn, yn, -0.5 * kDepthSpan + 0.5 * dz) +
                                Eigen::Vector3d(0.5, 0.5, 0.5);
            const Eigen::Vector3d step = rt.col(2) * dz;
            double acc = 0.0;
            for (int s = 0; s < n_depth; ++s) {
                if (q.x() >= 0.0 && q.x() <= 1.0 && q.y() >= 0.0 && q.y() <= 1.0 && q.z() >= 0.0 &&
                    q.z() <= 1.0)
                    acc += sigma(q.x(), q.y(), q.z());
                q += step;
            }
            out[static_cast<size_t>(py) * d + px] = static_cast<float>(acc * dz);
        }
    }
    return out;
}

void apply_ctf(float* image, int d, const std::vector<double>& transfer) {
    if (transfer.size() != static_cast<size_t>(d) * d)
        throw DimensionError("apply_ctf: transfer size does not match image");
    const size_t n = static_cast<size_t>(d) * d;
    std::vector<std::complex<double>> buf(n), spec(n);
    for (size_t i = 0; i < n; ++i) buf[i] = image[i];
    fft::dft2(d, buf.data(), spec.data(), false);
    for (size_t i = 0; i < n; ++i) spec[i] *= transfer[i];
    fft::dft2(d, spec.data(), buf.data(), true);
    const double inv = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) image[i] = static_cast<float>(buf[i].real() * inv);
}

void add_noise(float* image, int d, const NoiseModel& model, Rng& rng) {
    if (!model.enabled()) return;
    if (model.snr <= 0.0) throw ValidationError("add_noise: SNR must be positive");
    const size_t n = static_cast<size_t>(d) * d;
    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += image[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t i = 0; i < n; ++i) var += (image[i] - mean) * (image[i] - mean);
    var /= static_cast<double>(n);
    if (var <= 0.0)
        throw NumericError("add_noise: zero-variance image has undefined SNR");
    const double stddev = std::sqrt(var / model.snr);
    for (size_t i = 0; i < n; ++i) image[i] += static_cast<float>(rng.gaussian(0.0, stddev));
}

SimulatedDataset simulate_dataset(const std::vector<DensityVolume>& states,
                                  const SimulateSpec& spec) {
    if (states.empty()) throw ValidationError("simulate_dataset: need at least one state volume");
    const int d = states[0].d;
    const double px = states[0].pixel_size;
    for (const auto& v : states)
        if (v.d != d || v.pixel_size != px)
            throw ValidationError("simulate_dataset: state volumes must share D and pixel size");

    const int n_depth = spec.depth_steps > 0 ? spec.depth_steps : 2 * d;
    const bool perturb = spec.perturb_rot_sigma > 0.0 || spec.perturb_trans_px > 0.0;

    SimulatedDataset out;
    out.data.stack = ImageStack(d, spec.n_images, px);
    out.data.records.resize(static_cast<size_t>(spec.n_images));
    if (perturb) out.initial_poses.resize(static_cast<size_t>(spec.n_images));

    parallel_for(spec.n_images, spec.threads, [&](int i) {
        Rng rng(spec.seed, "simulate", static_cast<std::uint64_t>(i));
        meta::ParticleRecord rec;
        rec.idx = i;
        const int state = static_cast<int>(rng.uniform_index(states.size()));
        geo::Pose pose;
        if (!spec.force_identity_poses) {
            pose.rotation = geo::sample_uniform_rotation(rng);
            pose.translation.x() = rng.uniform(-spec.translation_range_px, spec.translation_range_px);
            pose.translation.y() = rng.uniform(-spec.translation_range_px, spec.translation_range_px);
        }
        rec.rotation = pose.rotation;
        rec.translation = pose.translation;
        rec.state_id = state;
        if (std::isfinite(spec.snr)) rec.snr = spec.snr;

        std::vector<float> img = project(states[static_cast<size_t>(state)], pose, n_depth);

        if (spec.ctf.kind == CtfKind::weak_phase) {
            CtfParams cp;
            cp.defocus_A = rng.uniform(spec.ctf.defocus_min_A, spec.ctf.defocus_max_A);
            cp.cs_mm = spec.ctf.cs_mm;
            cp.kv = spec.ctf.kv;
            cp.amp_contrast = spec.ctf.amp_contrast;
            cp.bfactor_A2 = spec.ctf.bfactor_A2;
            apply_ctf(img.data(), d, ctf_transfer(cp, d, px));
            rec.defocus_A = cp.defocus_A;
            rec.cs_mm = cp.cs_mm;
            rec.kv = cp.kv;
            rec.amp_contrast = cp.amp_contrast;
            rec.bfactor_A2 = cp.bfactor_A2;
        } else if (spec.ctf.kind == CtfKind::gaussian) {
            apply_ctf(img.data(), d, gaussian_transfer(spec.ctf.bfactor_A2, d, px));
            rec.bfactor_A2 = spec.ctf.bfactor_A2;
        }

        if (std::isfinite(spec.snr)) {
            NoiseModel nm{spec.snr};
            add_noise(img.data(), d, nm, rng);
        }

        std::copy(img.begin(), img.end(), out.data.stack.image(i));
        out.data.records[static_cast<size_t>(i)] = rec;

        if (perturb) {
            Rng prng(spec.seed, "perturb", static_cast<std::uint64_t>(i));
            geo::Pose init =
                geo::perturb_pose(pose, spec.perturb_rot_sigma, spec.perturb_trans_px, prng);
            meta::ParticleRecord ir;
            ir.idx = i;
            ir.rotation = init.rotation;
            ir.translation = init.translation;
            out.initial_poses[static_cast<size_t>(i)] = ir;
        }
    });

    return out;
}

}  // namespace cq::img
