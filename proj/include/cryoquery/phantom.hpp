#pragma once

#include <vector>

#include "cryoquery/volume.hpp"

// Synthetic Gaussian-blob density phantoms for demos and end-to-end runs:
// a rigid multi-blob body plus an "arm" whose placement differs between
// conformational states, so the state difference is localized.

namespace cq::phantom {

struct Blob {
    double x, y, z;     // center, normalized [0,1] coordinates
    double sigma;       // width, normalized units
    double amplitude;
};

DensityVolume blob_volume(int d, double pixel_size, const std::vector<Blob>& blobs);

// Shared body for all states.
std::vector<Blob> body_blobs();

// n_states volumes; the arm swings along an arc between its end positions.
std::vector<DensityVolume> make_states(int d, double pixel_size, int n_states);

inline DensityVolume make_single(int d, double pixel_size) {
    return make_states(d, pixel_size, 1).front();
}

}  // namespace cq::phantom
