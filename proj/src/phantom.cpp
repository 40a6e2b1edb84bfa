#include "cryoquery/phantom.hpp"

#include <cmath>

namespace cq::phantom {

DensityVolume blob_volume(int d, double pixel_size, const std::vector<Blob>& blobs) {
    DensityVolume v(d, pixel_size);
    for (int z = 0; z < d; ++z) {
        const double zn = (z + 0.5) / d;
        for (int y = 0; y < d; ++y) {
            const double yn = (y + 0.5) / d;
            for (int x = 0; x < d; ++x) {
                const double xn = (x + 0.5) / d;
                double acc = 0.0;
                for (const Blob& b : blobs) {
                    const double dx = xn - b.x, dy = yn - b.y, dz = zn - b.z;
                    const double r2 = dx * dx + dy * dy + dz * dz;
                    acc += b.amplitude * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
                }
                v.at(x, y, z) = static_cast<float>(acc);
            }
        }
    }
    return v;
}

std::vector<Blob> body_blobs() {
    return {
        {0.50, 0.50, 0.44, 0.085, 1.00},
        {0.42, 0.44, 0.56, 0.065, 0.90},
        {0.58, 0.42, 0.58, 0.055, 0.85},
        {0.47, 0.60, 0.52, 0.045, 0.80},
        {0.56, 0.56, 0.40, 0.035, 0.75},
        {0.40, 0.52, 0.42, 0.030, 0.70},
    };
}

std::vector<DensityVolume> make_states(int d, double pixel_size, int n_states) {
    std::vector<DensityVolume> out;
    out.reserve(static_cast<size_t>(n_states));
    for (int s = 0; s < n_states; ++s) {
        const double u = n_states == 1 ? 0.5 : static_cast<double>(s) / (n_states - 1);
        const double swing = 2.0 * (u - 0.5);  // [-1, 1]
        std::vector<Blob> blobs = body_blobs();
        blobs.push_back({0.50 + 0.14 * swing, 0.62, 0.60, 0.050, 1.00});
        blobs.push_back({0.50 + 0.20 * swing, 0.68, 0.63, 0.040, 0.90});
        out.push_back(blob_volume(d, pixel_size, blobs));
    }
    return out;
}

}  // namespace cq::phantom
