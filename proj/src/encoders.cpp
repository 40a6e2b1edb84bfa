#include "cryoquery/encoders.hpp"

#include <cmath>
#include <cstdio>

#include "cryoquery/errors.hpp"
#include "cryoquery/nn_init.hpp"

namespace cq::enc {

namespace {

Mlp build_mlp(ad::ParamStore& store, const char* prefix, const EncoderConfig& cfg, int out_dim,
              Rng& rng) {
    Mlp mlp;
    char name[64];
    int in = cfg.image_dim;
    for (int l = 0; l < cfg.hidden_layers; ++l) {
        std::snprintf(name, sizeof(name), "%s.w%02d", prefix, l);
        mlp.w.push_back(&store.add(name, "orient", ad::uniform_fan_in(cfg.width, in, rng)));
        std::snprintf(name, sizeof(name), "%s.b%02d", prefix, l);
        mlp.b.push_back(&store.add(name, "orient", Tensor({cfg.width})));
        in = cfg.width;
    }
    std::snprintf(name, sizeof(name), "%s.w%02d", prefix, cfg.hidden_layers);
    mlp.w.push_back(&store.add(name, "orient", ad::uniform_fan_in(out_dim, in, rng)));
    std::snprintf(name, sizeof(name), "%s.b%02d", prefix, cfg.hidden_layers);
    mlp.b.push_back(&store.add(name, "orient", Tensor({out_dim})));
    return mlp;
}

}  // namespace

PoseNodes decode_pose(ad::Tape& tape, int code_row, double translation_range_px) {
    if (tape.val(code_row).numel() != 8)
        throw DimensionError("decode_pose: orientation code must have 8 entries");
    const int flat = tape.reshape(code_row, {1, 8});
    const int rot6 = tape.slice_cols(flat, 0, 6);
    const int rotation = geo::rotation_from_6d_node(tape, rot6);
    int trans = tape.tanh_(tape.slice_cols(flat, 6, 8));
    trans = tape.scale(trans, static_cast<float>(translation_range_px));
    return {rotation, trans};
}

OrientationEncoder build_orientation_encoder(ad::ParamStore& store, EncoderConfig cfg,
                                             double translation_range_px, Rng& rng) {
    if (cfg.image_dim <= 0) throw ValidationError("orientation encoder: image_dim must be set");
    OrientationEncoder e;
    e.cfg = cfg;
    e.translation_range_px = translation_range_px;
    e.mlp = build_mlp(store, "enc.orient", cfg, 8, rng);

    // The final layer starts at (near) the 6-D identity code so early pose
    // decoding never hits the degenerate case: tiny weights, identity bias.
    ad::Param* wf = e.mlp.w.back();
    ad::Param* bf = e.mlp.b.back();
    const double noise = 1e-3 / std::sqrt(static_cast<double>(cfg.width));
    for (float& v : wf->value.values) v = static_cast<float>(rng.uniform(-noise, noise));
    const float identity6[8] = {1, 0, 0, 0, 1, 0, 0, 0};
    for (int i = 0; i < 8; ++i) bf->value.values[static_cast<size_t>(i)] = identity6[i];
    return e;
}

DeformationEncoder build_deformation_encoder(ad::ParamStore& store, EncoderConfig cfg, int dz,
                                             int n_tokens, int token_dim, Rng& rng) {
    if (cfg.image_dim <= 0) throw ValidationError("deformation encoder: image_dim must be set");
    DeformationEncoder e;
    e.cfg = cfg;
    e.dz = dz;
    e.n_tokens = n_tokens;
    e.token_dim = token_dim;
    e.mlp = build_mlp(store, "enc.deform", cfg, dz, rng);
    // The deformation path trains with the main model, not the pose stage.
    for (auto* p : e.mlp.w) p->group = "model";
    for (auto* p : e.mlp.b) p->group = "model";
    e.expand_w = &store.add("enc.deform.expand.w", "model",
                            ad::uniform_fan_in(n_tokens * token_dim, dz, rng));
    e.expand_b = &store.add("enc.deform.expand.b", "model", Tensor({n_tokens * token_dim}));
    return e;
}

int pose_pretrain_loss_node(ad::Tape& tape, int codes, const std::vector<geo::Pose>& targets,
                            int image_size, double translation_range_px) {
    const Tensor& tc = tape.val(codes);
    if (targets.empty()) throw ValidationError("pose_pretrain_loss: empty batch");
    if (tc.rank() != 2 || tc.dim(1) != 8 ||
        tc.dim(0) != static_cast<int>(targets.size()))
        throw DimensionError("pose_pretrain_loss: codes must be [B,8] matching targets");

    const float inv_d = 1.0f / static_cast<float>(image_size);
    int loss = -1;
    for (size_t i = 0; i < targets.size(); ++i) {
        const int row = tape.slice_rows(codes, static_cast<int>(i), static_cast<int>(i) + 1);
        const PoseNodes pose = decode_pose(tape, row, translation_range_px);

        Tensor r0({3, 3});
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                r0.values[static_cast<size_t>(a) * 3 + b] =
                    static_cast<float>(targets[i].rotation(a, b));
        const int dr = tape.sub(pose.rotation, tape.constant(std::move(r0)));
        // eps inside the root keeps the gradient finite at a perfect fit
        const int frob = tape.sqrt_(tape.sum_all(tape.square(dr)), 1e-12f);
        int term = tape.scale(frob, 1.0f / 9.0f);

        Tensor t0({1, 2});
        t0.values[0] = static_cast<float>(targets[i].translation.x()) * inv_d;
        t0.values[1] = static_cast<float>(targets[i].translation.y()) * inv_d;
        const int dt = tape.sub(tape.scale(pose.translation, inv_d), tape.constant(std::move(t0)));
        term = tape.add(term, tape.scale(tape.sum_all(tape.abs_(dt)), 0.5f));

        loss = loss < 0 ? term : tape.add(loss, term);
    }
    return loss;
}

}  // namespace cq::enc
