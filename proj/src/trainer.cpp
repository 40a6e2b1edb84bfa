#include "cryoquery/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cryoquery/errors.hpp"
#include "cryoquery/imaging.hpp"
#include "cryoquery/render.hpp"
#include "cryoquery/threading.hpp"

namespace cq::train {

namespace {

Tensor image_tensor(const meta::ParticleDataset& data, int i, bool flat) {
    const int d = data.d();
    Tensor t(flat ? std::vector<int>{1, d * d} : std::vector<int>{d, d});
    const float* src = data.stack.image(i);
    std::copy(src, src + static_cast<size_t>(d) * d, t.values.begin());
    return t;
}

Tensor rotation_tensor(const Eigen::Matrix3d& r) {
    Tensor t({3, 3});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) t.values[static_cast<size_t>(i) * 3 + j] = static_cast<float>(r(i, j));
    return t;
}

}  // namespace

Trainer::Trainer(Model& model, const meta::ParticleDataset& data, TrainConfig cfg)
    : model_(model), data_(data), cfg_(cfg) {
    if (data_.size() == 0) throw ValidationError("trainer: empty dataset");
    if (data_.d() != model_.cfg.d)
        throw ValidationError("trainer: dataset image size does not match the model");
    depth_ = cfg_.depth_steps > 0 ? cfg_.depth_steps : data_.d();
    opt_ = std::make_unique<ad::AdamOptimizer>(model_.store);

    if (data_.has_poses()) {
        given_poses_.reserve(static_cast<size_t>(data_.size()));
        for (const auto& r : data_.records) given_poses_.push_back(r.pose());
    } else if (cfg_.pose_source == TrainConfig::PoseSource::given) {
        throw ConfigError("trainer: pose_source=given requires poses in the metadata");
    }

    ctf_.resize(static_cast<size_t>(data_.size()));
    if (data_.has_ctf()) {
        const int d = data_.d();
        for (int i = 0; i < data_.size(); ++i) {
            const auto& r = data_.records[static_cast<size_t>(i)];
            img::CtfParams p;
            p.defocus_A = *r.defocus_A;
            p.kv = *r.kv;
            if (r.cs_mm) p.cs_mm = *r.cs_mm;
            if (r.amp_contrast) p.amp_contrast = *r.amp_contrast;
            if (r.bfactor_A2) p.bfactor_A2 = *r.bfactor_A2;
            ctf_[static_cast<size_t>(i)] = std::make_shared<const std::vector<double>>(
                img::ctf_transfer(p, d, data_.pixel_size()));
        }
    }
}

void Trainer::pretrain_orientation(const std::vector<geo::Pose>& targets) {
    if (targets.size() != static_cast<size_t>(data_.size()))
        throw ConfigError("pretrain: need one initial pose per image");
    const int n = data_.size();
    const int d = data_.d();
    const std::map<std::string, double> lrs{{"orient", cfg_.lr_orient_pretrain}};

    for (int epoch = 0; epoch < cfg_.pretrain_epochs; ++epoch) {
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        Rng shuffle_rng(cfg_.seed, "pretrain_shuffle", static_cast<std::uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[shuffle_rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);

        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += cfg_.pretrain_batch) {
            const int count = std::min(cfg_.pretrain_batch, n - start);
            // fixed split into 4 sub-batches keeps reductions independent of
            // the thread count
            const int parts = std::min(4, count);
            const int per = (count + parts - 1) / parts;
            std::vector<ad::GradSet> grads(static_cast<size_t>(parts));
            std::vector<double> losses(static_cast<size_t>(parts), 0.0);
            parallel_for(parts, cfg_.threads, [&](int p) {
                const int lo = start + p * per;
                const int hi = std::min(start + count, lo + per);
                if (lo >= hi) return;
                ad::Tape tape;
                Tensor images({hi - lo, d * d});
                std::vector<geo::Pose> batch_targets;
                batch_targets.reserve(static_cast<size_t>(hi - lo));
                for (int k = lo; k < hi; ++k) {
                    const int idx = order[static_cast<size_t>(k)];
                    const float* src = data_.stack.image(idx);
                    std::copy(src, src + static_cast<size_t>(d) * d,
                              images.values.begin() + static_cast<size_t>(k - lo) * d * d);
                    batch_targets.push_back(targets[static_cast<size_t>(idx)]);
                }
                const int codes = model_.orient.codes(tape, tape.constant(std::move(images)));
                const int loss = enc::pose_pretrain_loss_node(tape, codes, batch_targets, d,
                                                              model_.cfg.translation_range_px);
                losses[static_cast<size_t>(p)] = tape.val(loss).values[0];
                tape.backward(loss);
                tape.export_grads(grads[static_cast<size_t>(p)]);
            });
            ad::GradSet total;
            for (auto& g : grads) total.accumulate(g);
            double batch_loss = 0.0;
            for (double l : losses) batch_loss += l;
            if (!std::isfinite(batch_loss)) {
                restore_params();
                throw DivergenceError("pose pre-training diverged at epoch " +
                                      std::to_string(epoch));
            }
            epoch_loss += batch_loss;
            opt_->step(model_.store, total, lrs);
        }
        history_.push_back({epoch, "pretrain", epoch_loss / n, -1.0, -1.0});
        snapshot_params();
    }
}

double Trainer::batch_step(const std::vector<int>& indices) {
    const int d = data_.d();
    const int count = static_cast<int>(indices.size());
    std::vector<ad::GradSet> grads(static_cast<size_t>(count));
    std::vector<double> losses(static_cast<size_t>(count), 0.0);

    parallel_for(count, cfg_.threads, [&](int item) {
        const int idx = indices[static_cast<size_t>(item)];
        ad::Tape tape;
        if (cfg_.freeze_orientation) tape.freeze_group("orient");

        render::RenderInputs in;
        if (cfg_.pose_source == TrainConfig::PoseSource::given) {
            const geo::Pose& pose = given_poses_[static_cast<size_t>(idx)];
            in.rotation = tape.constant(rotation_tensor(pose.rotation));
            Tensor t({1, 2});
            t.values = {static_cast<float>(pose.translation.x()),
                        static_cast<float>(pose.translation.y())};
            in.translation = tape.constant(std::move(t));
        } else {
            const int img_node = tape.constant(image_tensor(data_, idx, true));
            const int codes = model_.orient.codes(tape, img_node);
            const auto pose = enc::decode_pose(tape, codes, model_.cfg.translation_range_px);
            in.rotation = pose.rotation;
            in.translation = pose.translation;
        }

        if (cfg_.disable_deformation) {
            in.fd = tape.constant(Tensor({model_.cfg.decoder.n_tokens, model_.cfg.decoder.token_dim}));
        } else {
            const int img_node = tape.constant(image_tensor(data_, idx, true));
            const int z = model_.deform.latent(tape, img_node);
            in.fd = model_.deform.tokens_from_latent(tape, z);
        }
        in.ctf = ctf_[static_cast<size_t>(idx)];

        const int pred = render::render_image_node(tape, model_, in, d, depth_);
        const int loss = render::image_loss_node(tape, pred, image_tensor(data_, idx, false));
        losses[static_cast<size_t>(item)] = tape.val(loss).values[0];
        tape.backward(loss);
        tape.export_grads(grads[static_cast<size_t>(item)]);
    });

    ad::GradSet total;
    for (auto& g : grads) total.accumulate(g);
    double batch_loss = 0.0;
    for (double l : losses) batch_loss += l;
    if (!std::isfinite(batch_loss)) {
        restore_params();
        throw DivergenceError("training loss is not finite");
    }

    std::map<std::string, double> lrs{
        {"tables", cfg_.lr_tables},
        {"model", cfg_.lr_model},
        {"orient", cfg_.freeze_orientation ? 0.0 : cfg_.lr_orient_refine}};
    opt_->step(model_.store, total, lrs);
    return batch_loss;
}

void Trainer::train_epoch(int epoch) {
    const int n = data_.size();
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(cfg_.seed, "train_shuffle", static_cast<std::uint64_t>(epoch));
    for (int i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)],
                  order[shuffle_rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);

    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += cfg_.batch) {
        const int count = std::min(cfg_.batch, n - start);
        std::vector<int> batch(order.begin() + start, order.begin() + start + count);
        epoch_loss += batch_step(batch);
    }

    EpochStats stats{epoch, "train", epoch_loss / n, -1.0, -1.0};
    if (data_.has_poses()) {
        std::vector<geo::Pose> poses = cfg_.pose_source == TrainConfig::PoseSource::given
                                           ? given_poses_
                                           : predict_poses();
        const auto [re, te] = pose_errors(poses);
        stats.rot_error = re;
        stats.trans_error = te;
    }
    history_.push_back(stats);
    snapshot_params();
}

void Trainer::train() {
    snapshot_params();
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) train_epoch(epoch);
}

std::vector<geo::Pose> Trainer::predict_poses() const {
    const int n = data_.size();
    const int d = data_.d();
    std::vector<geo::Pose> out(static_cast<size_t>(n));
    const int chunk = 256;
    const int n_chunks = (n + chunk - 1) / chunk;
    parallel_for(n_chunks, cfg_.threads, [&](int ci) {
        const int lo = ci * chunk;
        const int hi = std::min(n, lo + chunk);
        ad::Tape tape(false);
        Tensor images({hi - lo, d * d});
        for (int i = lo; i < hi; ++i) {
            const float* src = data_.stack.image(i);
            std::copy(src, src + static_cast<size_t>(d) * d,
                      images.values.begin() + static_cast<size_t>(i - lo) * d * d);
        }
        const int codes = model_.orient.codes(tape, tape.constant(std::move(images)));
        const auto& cv = tape.val(codes).values;
        for (int i = lo; i < hi; ++i) {
            const float* row = cv.data() + static_cast<size_t>(i - lo) * 8;
            std::array<double, 6> code6;
            for (int k = 0; k < 6; ++k) code6[static_cast<size_t>(k)] = row[k];
            geo::Pose p;
            p.rotation = geo::rotation_from_6d(code6);
            p.translation.x() = std::tanh(row[6]) * model_.cfg.translation_range_px;
            p.translation.y() = std::tanh(row[7]) * model_.cfg.translation_range_px;
            out[static_cast<size_t>(i)] = p;
        }
    });
    return out;
}

std::vector<std::vector<float>> Trainer::deformation_latents() const {
    const int n = data_.size();
    const int d = data_.d();
    std::vector<std::vector<float>> out(static_cast<size_t>(n));
    const int chunk = 256;
    const int n_chunks = (n + chunk - 1) / chunk;
    parallel_for(n_chunks, cfg_.threads, [&](int ci) {
        const int lo = ci * chunk;
        const int hi = std::min(n, lo + chunk);
        ad::Tape tape(false);
        Tensor images({hi - lo, d * d});
        for (int i = lo; i < hi; ++i) {
            const float* src = data_.stack.image(i);
            std::copy(src, src + static_cast<size_t>(d) * d,
                      images.values.begin() + static_cast<size_t>(i - lo) * d * d);
        }
        const int z = model_.deform.latent(tape, tape.constant(std::move(images)));
        const auto& zv = tape.val(z).values;
        const int dz = model_.cfg.dz;
        for (int i = lo; i < hi; ++i)
            out[static_cast<size_t>(i)] = std::vector<float>(
                zv.begin() + static_cast<size_t>(i - lo) * dz,
                zv.begin() + static_cast<size_t>(i - lo + 1) * dz);
    });
    return out;
}

std::pair<double, double> Trainer::pose_errors(const std::vector<geo::Pose>& poses) const {
    std::vector<Eigen::Matrix3d> pr, gr;
    std::vector<Eigen::Vector2d> pt, gt;
    for (int i = 0; i < data_.size(); ++i) {
        const auto& rec = data_.records[static_cast<size_t>(i)];
        if (!rec.rotation) continue;
        pr.push_back(poses[static_cast<size_t>(i)].rotation);
        gr.push_back(*rec.rotation);
        pt.push_back(poses[static_cast<size_t>(i)].translation);
        gt.push_back(rec.translation ? *rec.translation : Eigen::Vector2d::Zero());
    }
    if (pr.empty()) return {-1.0, -1.0};
    return {geo::rotation_error(pr, gr), geo::translation_error(pt, gt, data_.d())};
}

void Trainer::snapshot_params() {
    last_good_.resize(model_.store.size());
    for (size_t i = 0; i < model_.store.size(); ++i) last_good_[i] = model_.store.at(i).value.values;
}

void Trainer::restore_params() {
    if (last_good_.empty()) return;
    for (size_t i = 0; i < model_.store.size(); ++i) model_.store.at(i).value.values = last_good_[i];
}

void Trainer::write_loss_log(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "epoch stage loss rot_error trans_error\n";
    for (const auto& s : history_) {
        f << s.epoch << " " << s.stage << " " << s.loss;
        if (s.rot_error >= 0.0)
            f << " " << s.rot_error << " " << s.trans_error;
        else
            f << " - -";
        f << "\n";
    }
}

}  // namespace cq::train
