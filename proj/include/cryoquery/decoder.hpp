#pragma once

#include "cryoquery/hash_grid.hpp"
#include "cryoquery/params.hpp"
#include "cryoquery/rng.hpp"
#include "cryoquery/tape.hpp"

// Query-based deformation transformer: learnable structure queries pass
// through deformation-aware blocks (inter-query self-attention, cross-
// attention against the deformation tokens, FFN; pre-layer-norm residual
// around each sub-layer), then spatial cross-attention against the spatial
// feature tokens at a coordinate and a small FFN head produce the density.
//
// Attention follows the projection-free form softmax(Q K^T / sqrt(C)) V.
// The value source is switchable: by default the value matrix is the query
// tokens themselves (the literal composition used by the architecture);
// `value_from_keys` switches to the conventional choice (value = key source).

namespace cq::dec {

struct DecoderConfig {
    int n_tokens = 64;       // N
    int token_dim = 64;      // C
    int blocks = 3;
    int ffn_hidden = 0;      // 0 -> 4C
    int density_hidden = 0;  // 0 -> 2C
    bool value_from_keys = false;
    bool positivity = false;        // softplus on the density output
    bool spatial_attention = true;  // false: concatenation + MLP tail
};

struct DecoderWeights {
    DecoderConfig cfg;
    ad::Param* queries = nullptr;  // [N, C]
    struct Block {
        ad::Param *ln1_g, *ln1_b;
        ad::Param *ln2_g, *ln2_b;
        ad::Param *ln3_g, *ln3_b;
        ad::Param *ffn_w1, *ffn_b1, *ffn_w2, *ffn_b2;
    };
    std::vector<Block> blocks;
    ad::Param *ln_sp_g = nullptr, *ln_sp_b = nullptr;
    ad::Param *ln_pool_g = nullptr, *ln_pool_b = nullptr;
    ad::Param *head_w1 = nullptr, *head_b1 = nullptr;
    ad::Param *head_w2 = nullptr, *head_b2 = nullptr;
    // concatenation + MLP tail (used when spatial_attention is off)
    ad::Param *cat_wa = nullptr, *cat_wb = nullptr, *cat_b1 = nullptr;
    ad::Param *cat_w2 = nullptr, *cat_b2 = nullptr;

    int ffn_hidden() const { return cfg.ffn_hidden > 0 ? cfg.ffn_hidden : 4 * cfg.token_dim; }
    int density_hidden() const {
        return cfg.density_hidden > 0 ? cfg.density_hidden : 2 * cfg.token_dim;
    }
};

DecoderWeights build_decoder(ad::ParamStore& store, DecoderConfig cfg, int spatial_head_out,
                             Rng& rng);

// One deformation-aware block applied to `tokens` with deformation tokens
// `fd` (both [N, C] nodes).
int deformation_block(ad::Tape& tape, const DecoderWeights& w, int block_index, int tokens,
                      int fd);

// Structure queries conditioned by all blocks.
int conditioned_tokens(ad::Tape& tape, const DecoderWeights& w, int fd);

struct DensityBatch {
    int density;       // [B, 1]
    int wbar = -1;     // [B, N] mean-over-queries spatial attention weights
    int weights = -1;  // [(B*N), N] full row-stochastic weight matrices
};

// Density at a batch of coordinates ([B,3] node, normalized [0,1]^3 space)
// for one image's conditioned tokens.
DensityBatch density_batch(ad::Tape& tape, const DecoderWeights& w,
                           const field::SpatialField& field, int cond_tokens, int coords);

}  // namespace cq::dec
