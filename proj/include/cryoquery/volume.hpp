#pragma once

#include <cstdint>
#include <vector>

#include "cryoquery/errors.hpp"

namespace cq {

// Cubic scalar field on a D^3 grid. Values are stored row-major with x
// fastest: values[(z*D + y)*D + x]. Voxel centers sit at (i + 0.5)/D in the
// normalized [0,1]^3 frame shared with the hash grid and the projector.
struct DensityVolume {
    int d = 0;
    double pixel_size = 1.0;  // Angstrom / voxel
    std::vector<float> values;

    DensityVolume() = default;
    DensityVolume(int side, double px, float fill = 0.0f)
        : d(side), pixel_size(px), values(static_cast<size_t>(side) * side * side, fill) {
        if (side <= 0 || px <= 0.0) throw ValidationError("DensityVolume: side and pixel size must be positive");
    }

    float& at(int x, int y, int z) {
        return values[(static_cast<size_t>(z) * d + y) * d + x];
    }
    float at(int x, int y, int z) const {
        return values[(static_cast<size_t>(z) * d + y) * d + x];
    }
    std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
};

// Square particle images, stored as one contiguous stack. Image i pixel
// (x, y) lives at pixels[(i*D + y)*D + x].
struct ImageStack {
    int d = 0;
    int count = 0;
    double pixel_size = 1.0;
    std::vector<float> pixels;

    ImageStack() = default;
    ImageStack(int side, int n, double px)
        : d(side), count(n), pixel_size(px), pixels(static_cast<size_t>(side) * side * n, 0.0f) {}

    float* image(int i) { return pixels.data() + static_cast<size_t>(i) * d * d; }
    const float* image(int i) const { return pixels.data() + static_cast<size_t>(i) * d * d; }
};

// Trilinear interpolation of the 8 voxels surrounding a point given in
// normalized [0,1]^3 coordinates. Everything outside the volume is vacuum:
// points outside [0,1]^3 return exactly 0, and boundary cells interpolate
// against zero padding.
double sample_trilinear(const DensityVolume& v, double x, double y, double z);

}  // namespace cq
