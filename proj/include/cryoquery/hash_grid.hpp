#pragma once

#include <cstdint>
#include <vector>

#include "cryoquery/params.hpp"
#include "cryoquery/rng.hpp"
#include "cryoquery/tape.hpp"

// Multiresolution hash-grid feature volume: L levels of trilinearly
// interpolated feature lattices, densely indexed while (N_l+1)^3 fits the
// table and spatially hashed above that, followed by a tiny head MLP and a
// learned expansion from the head output to N x C spatial tokens.

namespace cq::field {

struct HashGridConfig {
    int levels = 16;
    int features_per_level = 2;
    int log2_table_size = 15;
    int base_resolution = 16;
    int max_resolution = 0;  // 0 -> training image size, set by the caller
    int head_hidden = 16;
    int head_out = 32;       // equals levels * features_per_level by default
};

// Lattice resolutions N_l = floor(N_0 * b^l), b = (N_max/N_0)^(1/(L-1)),
// clamped to be non-decreasing.
std::vector<int> level_resolutions(const HashGridConfig& cfg);

std::uint32_t spatial_hash(std::uint32_t x, std::uint32_t y, std::uint32_t z, int log2_size);

struct SpatialField {
    HashGridConfig cfg;
    int n_tokens = 0;
    int token_dim = 0;
    std::vector<int> resolutions;
    std::vector<bool> dense;            // per level: direct indexing?
    std::vector<ad::Param*> tables;     // per level: [entries, F]
    ad::Param* head_w1 = nullptr;       // [hidden, L*F]
    ad::Param* head_b1 = nullptr;
    ad::Param* head_w2 = nullptr;       // [head_out, hidden]
    ad::Param* head_b2 = nullptr;
    ad::Param* expand_w = nullptr;      // [(N*C), head_out]
    ad::Param* expand_b = nullptr;

    int feature_dim() const { return cfg.levels * cfg.features_per_level; }

    // Tape builders. coords is a [B,3] node in normalized [0,1]^3 space
    // (out-of-range coordinates are clamped).
    int lookup(ad::Tape& tape, int coords) const;            // [B, L*F]
    int head(ad::Tape& tape, int feats) const;               // [B, head_out]
    int tokens(ad::Tape& tape, int head_out) const;          // [B, N*C]
    int spatial_feature(ad::Tape& tape, int coords) const;   // [B, N*C]
};

SpatialField build_spatial_field(ad::ParamStore& store, HashGridConfig cfg, int n_tokens,
                                 int token_dim, Rng& rng);

// Raw multi-level lookup without the tape (used by tests and fast eval).
void lookup_values(const SpatialField& field, const std::vector<Tensor*>& tables,
                   const float* coords, int count, float* out);

}  // namespace cq::field
