#include "cryoquery/model.hpp"

#include <cmath>

#include "cryoquery/errors.hpp"
#include "cryoquery/threading.hpp"

namespace cq {

std::unique_ptr<Model> Model::build(const ModelConfig& cfg_in) {
    auto m = std::unique_ptr<Model>(new Model());
    m->cfg = cfg_in;
    if (m->cfg.grid.max_resolution <= 0) m->cfg.grid.max_resolution = m->cfg.d;
    Rng rng(m->cfg.seed, "init");
    m->field = field::build_spatial_field(m->store, m->cfg.grid, m->cfg.decoder.n_tokens,
                                          m->cfg.decoder.token_dim, rng);
    m->decoder = dec::build_decoder(m->store, m->cfg.decoder, m->cfg.grid.head_out, rng);
    enc::EncoderConfig ec;
    ec.image_dim = m->cfg.d * m->cfg.d;
    ec.hidden_layers = m->cfg.encoder_layers;
    ec.width = m->cfg.encoder_width;
    m->orient = enc::build_orientation_encoder(m->store, ec, m->cfg.translation_range_px, rng);
    m->deform = enc::build_deformation_encoder(m->store, ec, m->cfg.dz, m->cfg.decoder.n_tokens,
                                               m->cfg.decoder.token_dim, rng);
    return m;
}

int Model::deformation_tokens(ad::Tape& tape, const std::vector<float>& z) const {
    const int n = cfg.decoder.n_tokens, c = cfg.decoder.token_dim;
    if (z.empty()) return tape.constant(Tensor({n, c}));
    if (static_cast<int>(z.size()) != cfg.dz)
        throw DimensionError("deformation_tokens: latent dimension mismatch");
    Tensor zt({1, cfg.dz});
    zt.values = z;
    return deform.tokens_from_latent(tape, tape.constant(std::move(zt)));
}

namespace {

Tensor grid_coords_slab(int grid_d, int z0, int z1) {
    Tensor coords({grid_d * grid_d * (z1 - z0), 3});
    size_t at = 0;
    for (int z = z0; z < z1; ++z)
        for (int y = 0; y < grid_d; ++y)
            for (int x = 0; x < grid_d; ++x) {
                coords.values[at++] = (x + 0.5f) / grid_d;
                coords.values[at++] = (y + 0.5f) / grid_d;
                coords.values[at++] = (z + 0.5f) / grid_d;
            }
    return coords;
}

}  // namespace

DensityVolume Model::export_volume(const std::vector<float>& z, int grid_d, double pixel_size,
                                   int threads) const {
    DensityVolume out(grid_d, pixel_size);
    const int slab = std::max(1, grid_d / std::max(1, threads));
    const int n_slabs = (grid_d + slab - 1) / slab;
    parallel_for(n_slabs, threads, [&](int s) {
        const int z0 = s * slab;
        const int z1 = std::min(grid_d, z0 + slab);
        ad::Tape tape(false);
        const int fd = deformation_tokens(tape, z);
        const int tokens = dec::conditioned_tokens(tape, decoder, fd);
        const int coords = tape.constant(grid_coords_slab(grid_d, z0, z1));
        const auto eval = dec::density_batch(tape, decoder, field, tokens, coords);
        const auto& dens = tape.val(eval.density).values;
        std::copy(dens.begin(), dens.end(),
                  out.values.begin() + static_cast<size_t>(z0) * grid_d * grid_d);
    });
    return out;
}

DensityVolume Model::attention_volume(const std::vector<float>& z, int grid_d, double pixel_size,
                                      int channel, int threads) const {
    if (!cfg.decoder.spatial_attention)
        throw ValidationError("attention_volume: spatial cross-attention is disabled");
    if (channel < 0 || channel >= cfg.decoder.n_tokens)
        throw ValidationError("attention_volume: channel out of range");
    DensityVolume out(grid_d, pixel_size);
    const int n = cfg.decoder.n_tokens;
    const int slab = std::max(1, grid_d / std::max(1, threads));
    const int n_slabs = (grid_d + slab - 1) / slab;
    parallel_for(n_slabs, threads, [&](int s) {
        const int z0 = s * slab;
        const int z1 = std::min(grid_d, z0 + slab);
        ad::Tape tape(false);
        const int fd = deformation_tokens(tape, z);
        const int tokens = dec::conditioned_tokens(tape, decoder, fd);
        const int coords = tape.constant(grid_coords_slab(grid_d, z0, z1));
        const auto eval = dec::density_batch(tape, decoder, field, tokens, coords);
        const auto& wbar = tape.val(eval.wbar).values;
        float* dst = out.values.data() + static_cast<size_t>(z0) * grid_d * grid_d;
        const size_t count = static_cast<size_t>(z1 - z0) * grid_d * grid_d;
        for (size_t i = 0; i < count; ++i) dst[i] = wbar[i * n + channel];
    });
    return out;
}

Model::PointEval Model::density_at(const std::vector<float>& z, double x, double y,
                                   double z_coord) const {
    ad::Tape tape(false);
    const int fd = deformation_tokens(tape, z);
    const int tokens = dec::conditioned_tokens(tape, decoder, fd);
    Tensor c({1, 3});
    c.values = {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z_coord)};
    const int coords = tape.constant(std::move(c));
    const auto eval = dec::density_batch(tape, decoder, field, tokens, coords);
    PointEval out;
    out.density = tape.val(eval.density).values[0];
    if (eval.weights >= 0) {
        out.attention = tape.val(eval.weights);  // [(1*N), N]
        out.attention.shape = {cfg.decoder.n_tokens, cfg.decoder.n_tokens};
        out.wbar = tape.val(eval.wbar).values;
    }
    return out;
}

}  // namespace cq
