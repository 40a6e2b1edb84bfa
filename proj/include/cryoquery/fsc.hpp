#pragma once

#include <string>
#include <vector>

#include "cryoquery/volume.hpp"

namespace cq::eval {

// Fourier shell correlation between two maps, shells one Fourier voxel wide
// indexed by rounded radius, reported from the first shell up to Nyquist.
struct FscCurve {
    std::vector<double> frequency;    // 1/Angstrom, strictly increasing
    std::vector<double> correlation;  // clamped to [-1, 1]
    std::vector<long> shell_count;    // voxels per shell
    double pixel_size = 1.0;

    double nyquist() const { return 0.5 / pixel_size; }
};

FscCurve fsc(const DensityVolume& a, const DensityVolume& b);

struct ResolutionResult {
    double angstrom = 0.0;
    bool at_nyquist = false;   // curve never dropped below the threshold
    bool unresolved = false;   // curve entirely below the threshold
};

// First crossing below `threshold`, linearly interpolated between shells;
// returns 1/f in Angstrom.
ResolutionResult resolution(const FscCurve& curve, double threshold);

void write_fsc_csv(const FscCurve& curve, const std::string& path);
FscCurve read_fsc_csv(const std::string& path);

}  // namespace cq::eval
