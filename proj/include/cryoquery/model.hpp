#pragma once

#include <cstdint>
#include <memory>

#include "cryoquery/decoder.hpp"
#include "cryoquery/encoders.hpp"
#include "cryoquery/hash_grid.hpp"
#include "cryoquery/params.hpp"
#include "cryoquery/volume.hpp"

namespace cq {

struct ModelConfig {
    int d = 32;  // image side the encoders are built for
    dec::DecoderConfig decoder;
    field::HashGridConfig grid;  // grid.max_resolution 0 -> d
    int encoder_layers = 10;
    int encoder_width = 128;
    int dz = 16;
    double translation_range_px = 10.0;
    std::uint64_t seed = 0;
};

// The full reconstruction model. Parameter registration order (and therefore
// checkpoint layout and rng consumption during init) is fixed: spatial field,
// decoder, orientation encoder, deformation encoder.
class Model {
public:
    static std::unique_ptr<Model> build(const ModelConfig& cfg);

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    ModelConfig cfg;
    ad::ParamStore store;
    field::SpatialField field;
    dec::DecoderWeights decoder;
    enc::OrientationEncoder orient;
    enc::DeformationEncoder deform;

    // Deformation tokens for a latent ([N,C] node); z empty -> zero tokens
    // (also the "deformation disabled" path).
    int deformation_tokens(ad::Tape& tape, const std::vector<float>& z) const;

    // sigma-hat on a grid_d^3 voxel-center grid conditioned on latent z.
    DensityVolume export_volume(const std::vector<float>& z, int grid_d, double pixel_size,
                                int threads) const;

    // Mean-over-queries spatial attention weight of one key channel on the
    // voxel grid; values lie in [0,1].
    DensityVolume attention_volume(const std::vector<float>& z, int grid_d, double pixel_size,
                                   int channel, int threads) const;

    struct PointEval {
        double density = 0.0;
        Tensor attention;           // [N, N] spatial cross-attention weights
        std::vector<float> wbar;    // [N] column means of `attention`
    };
    PointEval density_at(const std::vector<float>& z, double x, double y, double z_coord) const;

private:
    Model() = default;
};

}  // namespace cq
