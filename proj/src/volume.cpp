#include "cryoquery/volume.hpp"

#include <cmath>

namespace cq {

double sample_trilinear(const DensityVolume& v, double x, double y, double z) {
    if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0 || z < 0.0 || z > 1.0) return 0.0;
    const int d = v.d;
    const double px = x * d - 0.5;
    const double py = y * d - 0.5;
    const double pz = z * d - 0.5;
    const int ix = static_cast<int>(std::floor(px));
    const int iy = static_cast<int>(std::floor(py));
    const int iz = static_cast<int>(std::floor(pz));
    const double fx = px - ix, fy = py - iy, fz = pz - iz;

    auto fetch = [&](int cx, int cy, int cz) -> double {
        if (cx < 0 || cx >= d || cy < 0 || cy >= d || cz < 0 || cz >= d) return 0.0;
        return v.at(cx, cy, cz);
    };

    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz) {
        const double wz = dz ? fz : 1.0 - fz;
        for (int dy = 0; dy < 2; ++dy) {
            const double wy = dy ? fy : 1.0 - fy;
            for (int dx = 0; dx < 2; ++dx) {
                const double wx = dx ? fx : 1.0 - fx;
                acc += wx * wy * wz * fetch(ix + dx, iy + dy, iz + dz);
            }
        }
    }
    return acc;
}

}  // namespace cq
