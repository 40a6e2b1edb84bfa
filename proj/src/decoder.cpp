#include "cryoquery/decoder.hpp"

#include <cmath>
#include <cstdio>

#include "cryoquery/errors.hpp"
#include "cryoquery/nn_init.hpp"

namespace cq::dec {

DecoderWeights build_decoder(ad::ParamStore& store, DecoderConfig cfg, int spatial_head_out,
                             Rng& rng) {
    if (cfg.n_tokens < 1 || cfg.token_dim < 1 || cfg.blocks < 1)
        throw ValidationError("decoder: N, C and block count must be positive");
    DecoderWeights w;
    w.cfg = cfg;
    const int n = cfg.n_tokens, c = cfg.token_dim;
    w.queries = &store.add("dec.queries", "model",
                           ad::gaussian_init({n, c}, 1.0 / std::sqrt(static_cast<double>(c)), rng));
    const int h = w.ffn_hidden();
    char name[64];
    for (int b = 0; b < cfg.blocks; ++b) {
        DecoderWeights::Block blk;
        auto ln = [&](const char* tag, bool gamma) -> ad::Param* {
            std::snprintf(name, sizeof(name), "dec.b%d.%s.%s", b, tag, gamma ? "g" : "b");
            return &store.add(name, "model", gamma ? Tensor::full({c}, 1.0f) : Tensor({c}));
        };
        blk.ln1_g = ln("ln1", true);
        blk.ln1_b = ln("ln1", false);
        blk.ln2_g = ln("ln2", true);
        blk.ln2_b = ln("ln2", false);
        blk.ln3_g = ln("ln3", true);
        blk.ln3_b = ln("ln3", false);
        std::snprintf(name, sizeof(name), "dec.b%d.ffn.w1", b);
        blk.ffn_w1 = &store.add(name, "model", ad::uniform_fan_in(h, c, rng));
        std::snprintf(name, sizeof(name), "dec.b%d.ffn.b1", b);
        blk.ffn_b1 = &store.add(name, "model", Tensor({h}));
        std::snprintf(name, sizeof(name), "dec.b%d.ffn.w2", b);
        blk.ffn_w2 = &store.add(name, "model", ad::uniform_fan_in(c, h, rng));
        std::snprintf(name, sizeof(name), "dec.b%d.ffn.b2", b);
        blk.ffn_b2 = &store.add(name, "model", Tensor({c}));
        w.blocks.push_back(blk);
    }
    w.ln_sp_g = &store.add("dec.lnsp.g", "model", Tensor::full({c}, 1.0f));
    w.ln_sp_b = &store.add("dec.lnsp.b", "model", Tensor({c}));
    w.ln_pool_g = &store.add("dec.lnpool.g", "model", Tensor::full({c}, 1.0f));
    w.ln_pool_b = &store.add("dec.lnpool.b", "model", Tensor({c}));
    const int hd = w.density_hidden();
    w.head_w1 = &store.add("dec.head.w1", "model", ad::uniform_fan_in(hd, c, rng));
    w.head_b1 = &store.add("dec.head.b1", "model", Tensor({hd}));
    w.head_w2 = &store.add("dec.head.w2", "model", ad::uniform_fan_in(1, hd, rng));
    w.head_b2 = &store.add("dec.head.b2", "model", Tensor({1}));
    w.cat_wa = &store.add("dec.cat.wa", "model", ad::uniform_fan_in(hd, c, rng));
    w.cat_wb = &store.add("dec.cat.wb", "model", ad::uniform_fan_in(hd, spatial_head_out, rng));
    w.cat_b1 = &store.add("dec.cat.b1", "model", Tensor({hd}));
    w.cat_w2 = &store.add("dec.cat.w2", "model", ad::uniform_fan_in(1, hd, rng));
    w.cat_b2 = &store.add("dec.cat.b2", "model", Tensor({1}));
    return w;
}

int deformation_block(ad::Tape& tape, const DecoderWeights& w, int block_index, int tokens,
                      int fd) {
    const auto& blk = w.blocks.at(static_cast<size_t>(block_index));

    const int x1 = tape.layer_norm(tokens, tape.param(*blk.ln1_g), tape.param(*blk.ln1_b));
    tokens = tape.add(tokens, tape.attention(x1, x1, x1).first);

    const int x2 = tape.layer_norm(tokens, tape.param(*blk.ln2_g), tape.param(*blk.ln2_b));
    const int value = w.cfg.value_from_keys ? fd : x2;
    tokens = tape.add(tokens, tape.attention(x2, fd, value).first);

    const int x3 = tape.layer_norm(tokens, tape.param(*blk.ln3_g), tape.param(*blk.ln3_b));
    const int ffn = tape.linear(tape.relu(tape.linear(x3, tape.param(*blk.ffn_w1),
                                                      tape.param(*blk.ffn_b1))),
                                tape.param(*blk.ffn_w2), tape.param(*blk.ffn_b2));
    return tape.add(tokens, ffn);
}

int conditioned_tokens(ad::Tape& tape, const DecoderWeights& w, int fd) {
    int tokens = tape.param(*w.queries);
    for (int b = 0; b < w.cfg.blocks; ++b) tokens = deformation_block(tape, w, b, tokens, fd);
    return tokens;
}

DensityBatch density_batch(ad::Tape& tape, const DecoderWeights& w,
                           const field::SpatialField& field, int cond_tokens, int coords) {
    const int n = w.cfg.n_tokens, c = w.cfg.token_dim;
    const int h = field.head(tape, field.lookup(tape, coords));  // [B, 32]

    int pooled;
    int wbar = -1;
    int weights = -1;
    if (w.cfg.spatial_attention) {
        const int tq = tape.layer_norm(cond_tokens, tape.param(*w.ln_sp_g), tape.param(*w.ln_sp_b));
        const int ew = tape.param(*field.expand_w);
        const int eb = tape.param(*field.expand_b);

        // scores[(b,i),j] = Tq_i . F_S(b)_j / sqrt(C), computed without
        // materializing F_S: one [B,32] x [32,N^2] product per image. The
        // 1/sqrt(C) folds into the query side.
        const int tqs = tape.scale(tq, 1.0f / std::sqrt(static_cast<float>(c)));
        const int m2 = tape.reshape(tape.matmul(tqs, tape.expand_perm(ew, n, c)),
                                    {n * n, field.cfg.head_out});
        const int s0 = tape.matmul(tqs, tape.reshape(eb, {n, c}), false, true);  // [N,N]
        // [B, N*N] -> [(B*N), N]: the row-major layouts coincide
        const int bdim = tape.val(h).dim(0);
        int scores = tape.reshape(tape.matmul(h, m2, false, true), {bdim * n, n});
        scores = tape.add_tile_rows(scores, s0);

        weights = tape.softmax_rows(scores);  // [(B*N), N]
        wbar = tape.mean_group_rows(weights, n);

        int attn;
        if (w.cfg.value_from_keys) {
            const int fs = tape.add_rowvec(tape.matmul(h, ew, false, true), eb);  // [B, N*C]
            attn = tape.rowmix(wbar, fs, n, c);
        } else {
            attn = tape.matmul(wbar, tq);  // value = query tokens
        }
        const int tbar = tape.mean_axis0(cond_tokens);  // residual of the pooled stream
        pooled = tape.add_rowvec(attn, tbar);
        pooled = tape.layer_norm(pooled, tape.param(*w.ln_pool_g), tape.param(*w.ln_pool_b));
    } else {
        // ablation tail: concatenation + MLP == W_a tbar + W_b h through one hidden layer
        const int tbar = tape.mean_axis0(cond_tokens);
        const int row = tape.linear(tbar, tape.param(*w.cat_wa), tape.param(*w.cat_b1));  // [1,Hd]
        const int hid = tape.relu(
            tape.add_rowvec(tape.matmul(h, tape.param(*w.cat_wb), false, true), row));
        int dens = tape.linear(hid, tape.param(*w.cat_w2), tape.param(*w.cat_b2));
        if (w.cfg.positivity) dens = tape.softplus(dens);
        return {dens, -1, -1};
    }

    const int hid = tape.relu(tape.linear(pooled, tape.param(*w.head_w1), tape.param(*w.head_b1)));
    int dens = tape.linear(hid, tape.param(*w.head_w2), tape.param(*w.head_b2));
    if (w.cfg.positivity) dens = tape.softplus(dens);
    return {dens, wbar, weights};
}

}  // namespace cq::dec
