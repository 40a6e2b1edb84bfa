#pragma once

#include <string>

#include "cryoquery/volume.hpp"

// MRC2014 subset: mode 2 (float32), no extended header, origin zeroed.
// The machine stamp is honored on read; files are written little-endian.

namespace cq::mrc {

struct MrcData {
    int nx = 0, ny = 0, nz = 0;
    double pixel_size = 1.0;  // cella_x / mx
    std::vector<float> values;  // x fastest, then y, then z (section)
};

MrcData read_mrc(const std::string& path);

// A volume must satisfy nx == ny == nz.
DensityVolume read_volume(const std::string& path);

// A stack interprets nz as the image count.
ImageStack read_stack(const std::string& path);

void write_volume(const DensityVolume& v, const std::string& path);

void write_stack(const ImageStack& s, const std::string& path);

}  // namespace cq::mrc
