#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

#include "cryoquery/geometry.hpp"
#include "cryoquery/volume.hpp"

// Per-particle ground-truth bookkeeping as a plain CSV. Column contract:
//   idx, r00..r22 (rotation, row-major), tx_px, ty_px,
//   defocus_A, cs_mm, kv, amp_contrast, bfactor_A2, state_id, snr
// Every column except idx is optional; optional columns are present or
// absent as a block (all 9 rotation entries together, tx/ty together).

namespace cq::meta {

struct ParticleRecord {
    long idx = 0;
    std::optional<Eigen::Matrix3d> rotation;
    std::optional<Eigen::Vector2d> translation;  // pixels
    std::optional<double> defocus_A;
    std::optional<double> cs_mm;
    std::optional<double> kv;
    std::optional<double> amp_contrast;
    std::optional<double> bfactor_A2;
    std::optional<int> state_id;
    std::optional<double> snr;

    geo::Pose pose() const {
        geo::Pose p;
        if (rotation) p.rotation = *rotation;
        if (translation) p.translation = *translation;
        return p;
    }
};

struct MetadataFile {
    std::vector<ParticleRecord> records;
    // One entry per rotation whose orthogonality defect exceeds 1e-3.
    std::vector<std::string> warnings;
};

MetadataFile read_metadata(const std::string& path);

void write_metadata(const std::vector<ParticleRecord>& records, const std::string& path);

// Image stack plus per-image records; the spec's {I_i} with ground truth.
struct ParticleDataset {
    ImageStack stack;
    std::vector<ParticleRecord> records;

    int d() const { return stack.d; }
    int size() const { return stack.count; }
    double pixel_size() const { return stack.pixel_size; }

    bool has_poses() const;
    bool has_ctf() const;
    bool has_states() const;
};

// Loads stack + CSV and checks that lengths agree.
ParticleDataset load_dataset(const std::string& stack_path, const std::string& metadata_path);

}  // namespace cq::meta
