#pragma once

#include <vector>

#include "cryoquery/geometry.hpp"
#include "cryoquery/params.hpp"
#include "cryoquery/rng.hpp"
#include "cryoquery/tape.hpp"

// Image encoders: plain deep MLPs over flattened raw pixels. The orientation
// encoder emits an 8-dim code (6-D rotation + 2 translation components, the
// latter bounded by tanh times the translation range); the deformation
// encoder emits a compact latent that a learned linear expansion lifts to
// N x C deformation tokens.

namespace cq::enc {

struct EncoderConfig {
    int image_dim = 0;       // D*D
    int hidden_layers = 10;
    int width = 128;
};

struct Mlp {
    std::vector<ad::Param*> w;
    std::vector<ad::Param*> b;

    // images: [B, image_dim] node -> [B, out_dim]
    int forward(ad::Tape& tape, int images) const {
        int x = images;
        for (size_t l = 0; l + 1 < w.size(); ++l)
            x = tape.relu(tape.linear(x, tape.param(*w[l]), tape.param(*b[l])));
        return tape.linear(x, tape.param(*w.back()), tape.param(*b.back()));
    }
};

struct OrientationEncoder {
    EncoderConfig cfg;
    double translation_range_px = 10.0;
    Mlp mlp;  // -> [B, 8]

    int codes(ad::Tape& tape, int images) const { return mlp.forward(tape, images); }
};

// Rotation/translation nodes decoded from one row of an 8-dim code batch.
struct PoseNodes {
    int rotation;     // [3,3]
    int translation;  // [1,2] pixels
};

PoseNodes decode_pose(ad::Tape& tape, int code_row, double translation_range_px);

struct DeformationEncoder {
    EncoderConfig cfg;
    int dz = 16;
    int n_tokens = 0;
    int token_dim = 0;
    Mlp mlp;  // -> [B, dz]
    ad::Param* expand_w = nullptr;  // [(N*C), dz]
    ad::Param* expand_b = nullptr;

    int latent(ad::Tape& tape, int images) const { return mlp.forward(tape, images); }

    // z: [1, dz] node -> [N, C] deformation tokens
    int tokens_from_latent(ad::Tape& tape, int z) const {
        const int e = tape.linear(z, tape.param(*expand_w), tape.param(*expand_b));
        return tape.reshape(e, {n_tokens, token_dim});
    }
};

OrientationEncoder build_orientation_encoder(ad::ParamStore& store, EncoderConfig cfg,
                                             double translation_range_px, Rng& rng);

DeformationEncoder build_deformation_encoder(ad::ParamStore& store, EncoderConfig cfg, int dz,
                                             int n_tokens, int token_dim, Rng& rng);

// Eq-style pose pre-training objective over a batch:
//   sum_i (1/9) ||Rhat_i - R0_i||_F + (1/2) || that_i/D - t0_i/D ||_1
// codes: [B,8] node; targets: B poses; D: image side. Returns a [1] node.
int pose_pretrain_loss_node(ad::Tape& tape, int codes, const std::vector<geo::Pose>& targets,
                            int image_size, double translation_range_px);

}  // namespace cq::enc
