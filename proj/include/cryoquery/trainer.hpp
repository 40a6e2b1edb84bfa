#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cryoquery/adam.hpp"
#include "cryoquery/metadata.hpp"
#include "cryoquery/model.hpp"

// Two-stage training: pose pre-training of the orientation encoder against
// initial pose estimates, then joint optimization of the squared image loss
// over field, decoder, deformation encoder and (unless frozen) the
// orientation encoder. Per-image gradients go to per-image buffers reduced
// in image order, so results are bitwise reproducible for any thread count.

namespace cq::train {

struct TrainConfig {
    int batch = 8;
    int pretrain_batch = 64;
    int depth_steps = 0;  // 0 -> D
    int pretrain_epochs = 200;
    int epochs = 20;
    double lr_tables = 1e-2;
    double lr_model = 1e-4;
    double lr_orient_refine = 1e-5;
    double lr_orient_pretrain = 1e-4;
    std::uint64_t seed = 0;
    bool deterministic = true;
    int threads = 1;
    bool freeze_orientation = false;
    bool disable_deformation = false;

    enum class PoseSource { encoder, given };
    PoseSource pose_source = PoseSource::encoder;
};

struct EpochStats {
    int epoch = 0;
    std::string stage;  // "pretrain" | "train"
    double loss = 0.0;  // mean per image
    double rot_error = -1.0;    // vs ground truth, when available
    double trans_error = -1.0;
};

class Trainer {
public:
    Trainer(Model& model, const meta::ParticleDataset& data, TrainConfig cfg);

    // Stage 1: orientation encoder on the Eq-style pose objective.
    void pretrain_orientation(const std::vector<geo::Pose>& targets);

    // Stage 2: joint image-loss training. When pose_source == given the
    // renderer uses `given_poses` (defaults to the dataset poses) and no
    // pose gradient flows.
    void train();

    void set_given_poses(std::vector<geo::Pose> poses) { given_poses_ = std::move(poses); }

    std::vector<geo::Pose> predict_poses() const;
    std::vector<std::vector<float>> deformation_latents() const;

    const std::vector<EpochStats>& history() const { return history_; }
    ad::AdamOptimizer& optimizer() { return *opt_; }
    const TrainConfig& config() const { return cfg_; }

    void write_loss_log(const std::string& path) const;

    // Pose metrics of `poses` against the dataset ground truth.
    std::pair<double, double> pose_errors(const std::vector<geo::Pose>& poses) const;

private:
    void train_epoch(int epoch);
    double batch_step(const std::vector<int>& indices);
    void snapshot_params();
    void restore_params();

    Model& model_;
    const meta::ParticleDataset& data_;
    TrainConfig cfg_;
    std::unique_ptr<ad::AdamOptimizer> opt_;
    std::vector<geo::Pose> given_poses_;
    std::vector<std::shared_ptr<const std::vector<double>>> ctf_;  // per image, may be null
    std::vector<EpochStats> history_;
    std::vector<std::vector<float>> last_good_;
    int depth_ = 0;
};

}  // namespace cq::train
