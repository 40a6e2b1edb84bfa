#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cryoquery/checkpoint.hpp"
#include "cryoquery/errors.hpp"
#include "cryoquery/imaging.hpp"
#include "cryoquery/model.hpp"
#include "cryoquery/phantom.hpp"
#include "cryoquery/render.hpp"
#include "cryoquery/trainer.hpp"
#include "support.hpp"

using namespace cq;

namespace {

ModelConfig tiny_model(int d = 8, int n = 2, int c = 4, std::uint64_t seed = 3000) {
    ModelConfig m;
    m.d = d;
    m.decoder.n_tokens = n;
    m.decoder.token_dim = c;
    m.decoder.blocks = 2;
    m.grid.levels = 4;
    m.grid.base_resolution = 4;
    m.grid.max_resolution = d;
    m.grid.log2_table_size = 8;
    m.grid.head_hidden = 8;
    m.grid.head_out = 8;
    m.encoder_layers = 2;
    m.encoder_width = 16;
    m.dz = 4;
    m.translation_range_px = 2.0;
    m.seed = seed;
    return m;
}

meta::ParticleDataset tiny_dataset(int d, int n_images, double snr, std::uint64_t seed,
                                   double trans_range = 0.0, int n_states = 1) {
    const auto states = phantom::make_states(d, 1.5, n_states);
    img::SimulateSpec spec;
    spec.n_images = n_images;
    spec.snr = snr;
    spec.ctf.kind = img::CtfKind::none;
    spec.translation_range_px = trans_range;
    spec.seed = seed;
    spec.threads = 2;
    return img::simulate_dataset(states, spec).data;
}

}  // namespace

TEST_CASE("image_loss: zero on identical inputs, 1x1 example, shape check") {
    ad::Tape tape;
    Tensor obs({1, 1});
    obs.values = {1.0f};
    Tensor pred_t({1, 1});
    pred_t.values = {3.0f};
    const int pred = tape.constant(pred_t);
    CHECK(tape.val(render::image_loss_node(tape, pred, obs)).values[0] == doctest::Approx(4.0));
    CHECK(tape.val(render::image_loss_node(tape, pred, pred_t)).values[0] == doctest::Approx(0.0));
    Tensor bad({2, 1});
    CHECK_THROWS_AS(render::image_loss_node(tape, pred, bad), DimensionError);
}

TEST_CASE("render: constant field integrates to the bias, CTF scales the DC term") {
    auto model = Model::build(tiny_model());
    for (size_t i = 0; i < model->store.size(); ++i)
        for (float& v : model->store.at(i).value.values) v = 0.0f;
    model->decoder.head_b2->value.values[0] = 0.5f;

    ad::Tape tape;
    render::RenderInputs in;
    Tensor r({3, 3});
    r.values = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    in.rotation = tape.constant(r);
    in.translation = tape.constant(Tensor({1, 2}));
    in.fd = model->deformation_tokens(tape, {});
    const int img_node = render::render_image_node(tape, *model, in, 8, 64);
    const auto& img = tape.val(img_node);
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x)
            CHECK(img.at(y, x) == doctest::Approx(0.5).epsilon(0.06));

    // rendering twice with fixed inputs is identical
    ad::Tape tape2;
    render::RenderInputs in2;
    in2.rotation = tape2.constant(r);
    in2.translation = tape2.constant(Tensor({1, 2}));
    in2.fd = model->deformation_tokens(tape2, {});
    const int img2 = render::render_image_node(tape2, *model, in2, 8, 64);
    CHECK(tape.val(img_node).values == tape2.val(img2).values);

    // with a CTF, the image mean is scaled by the DC response (-w)
    img::CtfParams cp;
    cp.amp_contrast = 0.1;
    auto transfer = std::make_shared<const std::vector<double>>(img::ctf_transfer(cp, 8, 1.5));
    ad::Tape tape3;
    render::RenderInputs in3;
    in3.rotation = tape3.constant(r);
    in3.translation = tape3.constant(Tensor({1, 2}));
    in3.fd = model->deformation_tokens(tape3, {});
    in3.ctf = transfer;
    const auto& img3 = tape3.val(render::render_image_node(tape3, *model, in3, 8, 64));
    double mean_pre = 0.0, mean_post = 0.0;
    for (size_t i = 0; i < img.values.size(); ++i) {
        mean_pre += img.values[i];
        mean_post += img3.values[i];
    }
    CHECK(mean_post == doctest::Approx(-0.1 * mean_pre).epsilon(1e-3));
}

TEST_CASE("render-to-loss gradients match the double reference (given pose)") {
    auto model = Model::build(tiny_model());
    for (auto* t : model->field.tables)
        for (float& v : t->value.values) v *= 1e4f;  // wake the field
    Rng rng(3001, "fd_render");

    geo::Pose pose;
    pose.rotation = geo::sample_uniform_rotation(rng);
    img::CtfParams cp;
    auto transfer = std::make_shared<const std::vector<double>>(img::ctf_transfer(cp, 8, 1.5));
    Tensor obs = support::random_tensor({8, 8}, rng, 0.3, false);
    const std::vector<float> z = {0.2f, -0.1f, 0.4f, 0.3f};

    ad::Tape tape;
    render::RenderInputs in;
    Tensor rt({3, 3});
    rt.requires_grad = true;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            rt.values[static_cast<size_t>(i) * 3 + j] = static_cast<float>(pose.rotation(i, j));
    Tensor tt({1, 2});
    tt.requires_grad = true;
    tt.values = {0.7f, -0.4f};
    double rot9[9], trans2[2] = {0.7, -0.4};
    for (int i = 0; i < 9; ++i) rot9[i] = rt.values[static_cast<size_t>(i)];
    const int rot_node = tape.leaf(std::move(rt));
    const int trans_node = tape.leaf(std::move(tt));
    in.rotation = rot_node;
    in.translation = trans_node;
    in.fd = model->deformation_tokens(tape, z);
    in.ctf = transfer;
    const int pred = render::render_image_node(tape, *model, in, 8, 6);
    const int loss = render::image_loss_node(tape, pred, obs);
    tape.backward(loss);
    ad::GradSet gs;
    tape.export_grads(gs);

    ref::Params rp = ref::Params::from(model->store);
    const ref::vecd robs(obs.values.begin(), obs.values.end());
    const ref::vecd rz(z.begin(), z.end());
    ref::RenderSpec spec;
    spec.d = 8;
    spec.depth = 6;
    const ref::vecd ctf_ref(transfer->begin(), transfer->end());
    spec.ctf = &ctf_ref;
    auto dense_flags = std::vector<bool>(model->field.dense.begin(), model->field.dense.end());
    auto eval_ref = [&](const ref::Params& p, const double* rot, const double* trans) {
        return ref::render_loss(p, model->cfg, model->field.resolutions, dense_flags, rot, trans,
                                rz, robs, spec);
    };

    CHECK(tape.val(loss).values[0] == doctest::Approx(eval_ref(rp, rot9, trans2)).epsilon(2e-3));

    support::GradStats stats;
    const double h = 1e-4;
    Rng pick(3002, "pick");
    for (const char* name :
         {"field.table.00", "field.table.03", "field.head.w1", "field.expand.w", "dec.queries",
          "dec.b0.ffn.w1", "dec.lnsp.g", "dec.head.w1", "dec.head.b2", "enc.deform.expand.w"}) {
        ad::Param* p = model->store.find(name);
        REQUIRE(p != nullptr);
        const auto* g = gs.grad_for(*p);
        REQUIRE(g != nullptr);
        for (int rep = 0; rep < 4; ++rep) {
            const size_t k = pick.uniform_index(g->size());
            ref::Params plus = rp, minus = rp;
            plus[name][k] += h;
            minus[name][k] -= h;
            stats.compare((*g)[k],
                          (eval_ref(plus, rot9, trans2) - eval_ref(minus, rot9, trans2)) / (2 * h),
                          1e-3, 2e-5);
        }
    }
    // pose gradients flow through the ray coordinates
    const Tensor gr = tape.grad_tensor(rot_node);
    for (int k = 0; k < 9; ++k) {
        double p9[9], m9[9];
        std::copy(rot9, rot9 + 9, p9);
        std::copy(rot9, rot9 + 9, m9);
        p9[k] += h;
        m9[k] -= h;
        stats.compare(gr.values[static_cast<size_t>(k)],
                      (eval_ref(rp, p9, trans2) - eval_ref(rp, m9, trans2)) / (2 * h), 2e-3, 2e-5);
    }
    const Tensor gtr = tape.grad_tensor(trans_node);
    for (int k = 0; k < 2; ++k) {
        double pt[2] = {trans2[0], trans2[1]}, mt[2] = {trans2[0], trans2[1]};
        pt[k] += h;
        mt[k] -= h;
        stats.compare(gtr.values[static_cast<size_t>(k)],
                      (eval_ref(rp, rot9, pt) - eval_ref(rp, rot9, mt)) / (2 * h), 2e-3, 2e-5);
    }
    CAPTURE(stats.fail_analytic);
    CAPTURE(stats.fail_numeric);
    CHECK(stats.ok());
}

TEST_CASE("full encoder-to-loss path matches the reference") {
    auto model = Model::build(tiny_model(8, 2, 4, 3100));
    for (auto* t : model->field.tables)
        for (float& v : t->value.values) v *= 1e4f;
    Rng rng(3003, "fd_enc");
    Tensor image = support::random_tensor({1, 64}, rng, 0.5, false);
    Tensor obs = support::random_tensor({8, 8}, rng, 0.3, false);

    ad::Tape tape;
    const int img_node = tape.constant(image);
    const int codes = model->orient.codes(tape, img_node);
    const auto pose = enc::decode_pose(tape, codes, model->cfg.translation_range_px);
    render::RenderInputs in;
    in.rotation = pose.rotation;
    in.translation = pose.translation;
    const int zl = model->deform.latent(tape, img_node);
    in.fd = model->deform.tokens_from_latent(tape, zl);
    const int pred = render::render_image_node(tape, *model, in, 8, 6);
    const int loss = render::image_loss_node(tape, pred, obs);
    tape.backward(loss);
    ad::GradSet gs;
    tape.export_grads(gs);

    ref::Params rp = ref::Params::from(model->store);
    const ref::vecd rimg(image.values.begin(), image.values.end());
    const ref::vecd robs(obs.values.begin(), obs.values.end());
    ref::RenderSpec spec;
    spec.d = 8;
    spec.depth = 6;
    auto dense_flags = std::vector<bool>(model->field.dense.begin(), model->field.dense.end());
    auto eval_ref = [&](const ref::Params& p) {
        return ref::encoder_render_loss(p, model->cfg, model->field.resolutions, dense_flags, rimg,
                                        robs, spec);
    };
    CHECK(tape.val(loss).values[0] == doctest::Approx(eval_ref(rp)).epsilon(2e-3));

    support::GradStats stats;
    const double h = 1e-4;
    Rng pick(3004, "pick");
    for (const char* name : {"enc.orient.w00", "enc.orient.w02", "enc.orient.b01",
                             "enc.deform.w00", "field.table.00", "dec.queries"}) {
        ad::Param* p = model->store.find(name);
        REQUIRE(p != nullptr);
        const auto* g = gs.grad_for(*p);
        REQUIRE(g != nullptr);
        for (int rep = 0; rep < 4; ++rep) {
            const size_t k = pick.uniform_index(g->size());
            ref::Params plus = rp, minus = rp;
            plus[name][k] += h;
            minus[name][k] -= h;
            stats.compare((*g)[k], (eval_ref(plus) - eval_ref(minus)) / (2 * h), 2e-3, 2e-5);
        }
    }
    CAPTURE(stats.fail_analytic);
    CAPTURE(stats.fail_numeric);
    CHECK(stats.ok());
}

TEST_CASE("gradient flows to every trainable parameter group") {
    auto model = Model::build(tiny_model());
    meta::ParticleDataset data = tiny_dataset(8, 2, 10.0, 3200);
    train::TrainConfig tc;
    tc.batch = 2;
    tc.epochs = 1;
    tc.pretrain_epochs = 0;
    tc.threads = 2;
    tc.depth_steps = 6;
    tc.pose_source = train::TrainConfig::PoseSource::encoder;
    train::Trainer trainer(*model, data, tc);
    trainer.train();
    bool tables_moved = false, model_moved = false, orient_moved = false;
    auto fresh = Model::build(tiny_model());
    for (size_t i = 0; i < model->store.size(); ++i) {
        if (model->store.at(i).value.values == fresh->store.at(i).value.values) continue;
        const std::string& g = model->store.at(i).group;
        if (g == "tables") tables_moved = true;
        if (g == "model") model_moved = true;
        if (g == "orient") orient_moved = true;
    }
    CHECK(tables_moved);
    CHECK(model_moved);
    CHECK(orient_moved);
}

TEST_CASE("training is bitwise deterministic and thread-count independent") {
    auto run = [&](int threads) {
        auto model = Model::build(tiny_model(8, 2, 4, 3300));
        meta::ParticleDataset data = tiny_dataset(8, 5, 10.0, 3300);
        train::TrainConfig tc;
        tc.batch = 3;
        tc.epochs = 2;
        tc.pretrain_epochs = 3;
        tc.threads = threads;
        tc.depth_steps = 6;
        tc.pose_source = train::TrainConfig::PoseSource::encoder;
        train::Trainer trainer(*model, data, tc);
        std::vector<geo::Pose> poses;
        for (const auto& r : data.records) poses.push_back(r.pose());
        trainer.pretrain_orientation(poses);
        trainer.train();
        std::vector<float> flat;
        for (size_t i = 0; i < model->store.size(); ++i)
            flat.insert(flat.end(), model->store.at(i).value.values.begin(),
                        model->store.at(i).value.values.end());
        return flat;
    };
    const auto a = run(2);
    const auto b = run(2);
    const auto c = run(1);
    CHECK(a == b);
    CHECK(a == c);
}

TEST_CASE("checkpoint: bitwise round trip including optimizer state") {
    auto model = Model::build(tiny_model(8, 2, 4, 3400));
    meta::ParticleDataset data = tiny_dataset(8, 3, 10.0, 3400);
    train::TrainConfig tc;
    tc.batch = 3;
    tc.epochs = 1;
    tc.threads = 2;
    tc.depth_steps = 6;
    tc.pose_source = train::TrainConfig::PoseSource::given;
    train::Trainer trainer(*model, data, tc);
    trainer.train();

    const std::string path = (std::filesystem::temp_directory_path() / "roundtrip.ckpt").string();
    ckpt::save_checkpoint(model->store, &trainer.optimizer(), {1, 0xabcdefULL, 7, 2}, path);

    auto other = Model::build(tiny_model(8, 2, 4, 9999));  // different init
    train::Trainer t2(*other, data, tc);
    const auto info = ckpt::load_checkpoint(other->store, &t2.optimizer(), path);
    CHECK(info.config_hash == 0xabcdefULL);
    CHECK(info.epoch == 7);
    for (size_t i = 0; i < model->store.size(); ++i) {
        CHECK(model->store.at(i).value.values == other->store.at(i).value.values);
        CHECK(trainer.optimizer().state(i).m == t2.optimizer().state(i).m);
        CHECK(trainer.optimizer().state(i).v == t2.optimizer().state(i).v);
        CHECK(trainer.optimizer().state(i).step == t2.optimizer().state(i).step);
    }
}

TEST_CASE("zero epochs leave the model at its initialization") {
    auto model = Model::build(tiny_model(8, 2, 4, 3500));
    auto fresh = Model::build(tiny_model(8, 2, 4, 3500));
    meta::ParticleDataset data = tiny_dataset(8, 2, 10.0, 3500);
    train::TrainConfig tc;
    tc.epochs = 0;
    tc.pretrain_epochs = 0;
    tc.threads = 1;
    tc.pose_source = train::TrainConfig::PoseSource::given;
    train::Trainer trainer(*model, data, tc);
    trainer.train();
    for (size_t i = 0; i < model->store.size(); ++i)
        CHECK(model->store.at(i).value.values == fresh->store.at(i).value.values);
}

TEST_CASE("single noiseless image is overfit to under 1% of its variance") {
    const int d = 8;
    auto model = Model::build(tiny_model(d, 2, 8, 3600));
    meta::ParticleDataset data =
        tiny_dataset(d, 1, std::numeric_limits<double>::infinity(), 3600);

    train::TrainConfig tc;
    tc.batch = 1;
    tc.epochs = 300;
    tc.threads = 1;
    tc.depth_steps = 8;
    tc.lr_tables = 3e-2;
    tc.lr_model = 3e-3;
    tc.pose_source = train::TrainConfig::PoseSource::given;
    train::Trainer trainer(*model, data, tc);
    trainer.train();

    const double final_loss = trainer.history().back().loss;  // sum of squares per image
    double mean = 0.0, var = 0.0;
    const float* img = data.stack.image(0);
    for (int i = 0; i < d * d; ++i) mean += img[i];
    mean /= d * d;
    for (int i = 0; i < d * d; ++i) var += (img[i] - mean) * (img[i] - mean);
    var /= d * d;
    const double mse = final_loss / (d * d);
    CHECK(mse < 0.01 * var);
}

TEST_CASE("divergence aborts with the last good parameters restored") {
    auto model = Model::build(tiny_model(8, 2, 4, 3700));
    meta::ParticleDataset data = tiny_dataset(8, 4, 10.0, 3700);
    train::TrainConfig tc;
    tc.batch = 1;
    tc.epochs = 2;
    tc.threads = 1;
    tc.depth_steps = 6;
    tc.lr_tables = 1e22;  // genuine blow-up after the first update
    tc.lr_model = 1e22;
    tc.pose_source = train::TrainConfig::PoseSource::given;
    train::Trainer trainer(*model, data, tc);

    std::vector<std::vector<float>> entry;
    for (size_t i = 0; i < model->store.size(); ++i)
        entry.push_back(model->store.at(i).value.values);

    CHECK_THROWS_AS(trainer.train(), DivergenceError);
    for (size_t i = 0; i < model->store.size(); ++i)
        CHECK(model->store.at(i).value.values == entry[i]);
}
