// Command-line front end: one binary, one subcommand per pipeline stage.
// Every subcommand takes --config/--set/--seed/--threads/--deterministic/--out
// and writes its artifacts plus the resolved configuration into the output
// directory. Exit codes: 0 ok, 2 usage/config, 3 missing input, 4 bad file
// format, 5 training divergence, 6 internal numeric error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "cryoquery/checkpoint.hpp"
#include "cryoquery/config.hpp"
#include "cryoquery/errors.hpp"
#include "cryoquery/fsc.hpp"
#include "cryoquery/imaging.hpp"
#include "cryoquery/latents.hpp"
#include "cryoquery/model.hpp"
#include "cryoquery/mrc.hpp"
#include "cryoquery/phantom.hpp"
#include "cryoquery/report.hpp"
#include "cryoquery/trainer.hpp"

namespace fs = std::filesystem;
using namespace cq;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    long seed = -1;
    int threads = -1;
    int deterministic = -1;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "key=value configuration file");
    cmd->add_option("--set", c.sets, "override a config key, e.g. --set train.epochs=5");
    cmd->add_option("--seed", c.seed, "root seed (overrides run.seed)");
    cmd->add_option("--threads", c.threads, "worker threads (overrides run.threads)");
    cmd->add_option("--deterministic", c.deterministic,
                    "1/0: bitwise-reproducible mode (overrides run.deterministic)");
    cmd->add_option("--out", c.out, "output directory (overrides run.out)");
}

cfg::RunConfig resolve(const Common& c) {
    cfg::RunConfig rc = cfg::RunConfig::defaults();
    if (!c.config_path.empty()) rc.load_file(c.config_path);
    for (const auto& s : c.sets) {
        const size_t eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        rc.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (c.seed >= 0) rc.set("run.seed", std::to_string(c.seed));
    if (c.threads >= 0) rc.set("run.threads", std::to_string(c.threads));
    if (c.deterministic >= 0) rc.set("run.deterministic", c.deterministic ? "true" : "false");
    if (!c.out.empty()) rc.set("run.out", c.out);
    return rc;
}

std::string prepare_out(const cfg::RunConfig& rc) {
    const std::string out = rc.str("run.out");
    fs::create_directories(out);
    rc.write_echo(out + "/config.resolved.txt");
    return out;
}

meta::ParticleDataset load_dataset_from(const cfg::RunConfig& rc) {
    const std::string stack = rc.str("dataset.stack");
    const std::string meta_path = rc.str("dataset.metadata");
    if (stack.empty() || meta_path.empty())
        throw ConfigError("dataset.stack and dataset.metadata must be set");
    return meta::load_dataset(stack, meta_path);
}

std::vector<geo::Pose> poses_from_records(const std::vector<meta::ParticleRecord>& recs) {
    std::vector<geo::Pose> out;
    out.reserve(recs.size());
    for (const auto& r : recs) out.push_back(r.pose());
    return out;
}

// Latent selection shared by export-volume and attention.
struct LatentSel {
    std::string latent_csv;  // explicit comma-separated values
    long image = -1;
    long state = -1;
};

std::vector<float> resolve_latent(const LatentSel& sel, const Model& model,
                                  const meta::ParticleDataset* data, train::Trainer* trainer) {
    if (!sel.latent_csv.empty()) {
        std::vector<float> z;
        std::stringstream ss(sel.latent_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) z.push_back(std::stof(tok));
        if (static_cast<int>(z.size()) != model.cfg.dz)
            throw ValidationError("--latent: expected " + std::to_string(model.cfg.dz) +
                                  " values, got " + std::to_string(z.size()));
        return z;
    }
    if (sel.image >= 0 || sel.state >= 0) {
        if (!data || !trainer)
            throw ConfigError("--image/--state latent selection needs a dataset");
        const auto zs = trainer->deformation_latents();
        if (sel.image >= 0) {
            if (sel.image >= static_cast<long>(zs.size()))
                throw ValidationError("--image index out of range");
            return zs[static_cast<size_t>(sel.image)];
        }
        // mean latent over the images of one ground-truth state
        std::vector<float> mean(static_cast<size_t>(model.cfg.dz), 0.0f);
        long count = 0;
        for (size_t i = 0; i < zs.size(); ++i) {
            const auto& rec = data->records[i];
            if (!rec.state_id || *rec.state_id != sel.state) continue;
            for (size_t k = 0; k < mean.size(); ++k) mean[k] += zs[i][k];
            ++count;
        }
        if (count == 0) throw ValidationError("--state: no images with that state id");
        for (auto& v : mean) v /= static_cast<float>(count);
        return mean;
    }
    return {};  // zero deformation
}

int run(int argc, char** argv) {
    CLI::App app{
        "cryoquery: desk-scale heterogeneous cryo-EM reconstruction with a real-domain\n"
        "hash-grid field and a query-token transformer decoder.\n\n"
        "Exit codes: 0 ok, 2 usage/config error, 3 missing input, 4 bad file format,\n"
        "5 training divergence, 6 internal numeric error."};
    app.require_subcommand(1);

    Common c_sim, c_pre, c_train, c_exp, c_fsc, c_res, c_lat, c_att, c_rep;

    auto* sim = app.add_subcommand("simulate", "simulate a particle dataset from state volumes");
    add_common(sim, c_sim);

    auto* pre = app.add_subcommand("pretrain-pose", "pre-train the orientation encoder");
    add_common(pre, c_pre);

    auto* tr = app.add_subcommand("train", "joint training of field, decoder and encoders");
    add_common(tr, c_train);
    std::string init_ckpt;
    tr->add_option("--init", init_ckpt, "checkpoint to start from (e.g. pretrained.ckpt)");

    auto* ex = app.add_subcommand("export-volume", "evaluate the learned density on a voxel grid");
    add_common(ex, c_exp);
    std::string ex_ckpt, ex_mrc;
    LatentSel ex_sel;
    long ex_grid = 0;
    ex->add_option("--checkpoint", ex_ckpt, "trained checkpoint")->required();
    ex->add_option("--mrc", ex_mrc, "output MRC path")->required();
    ex->add_option("--latent", ex_sel.latent_csv, "explicit latent, comma-separated");
    ex->add_option("--image", ex_sel.image, "use the latent of this image index");
    ex->add_option("--state", ex_sel.state, "mean latent over a ground-truth state id");
    ex->add_option("--grid", ex_grid, "grid size (default: image size)");

    auto* fc = app.add_subcommand("fsc", "Fourier shell correlation between two maps");
    add_common(fc, c_fsc);
    std::string fsc_a, fsc_b, fsc_csv;
    double fsc_thr = 0.5;
    fc->add_option("map_a", fsc_a)->required();
    fc->add_option("map_b", fsc_b)->required();
    fc->add_option("--csv", fsc_csv, "output CSV (default <out>/fsc.csv)");
    fc->add_option("--threshold", fsc_thr, "threshold for the printed resolution");

    auto* rs = app.add_subcommand("resolution", "resolution readout from an FSC curve CSV");
    add_common(rs, c_res);
    std::string res_csv;
    double res_thr = 0.5;
    rs->add_option("--csv", res_csv, "FSC curve CSV")->required();
    rs->add_option("--threshold", res_thr);

    auto* lt = app.add_subcommand("latents", "deformation latents + PCA + K-means");
    add_common(lt, c_lat);
    std::string lat_ckpt;
    long lat_k = 10;
    lt->add_option("--checkpoint", lat_ckpt)->required();
    lt->add_option("--k", lat_k, "K-means cluster count");

    auto* at = app.add_subcommand("attention", "spatial attention-weight volume for one channel");
    add_common(at, c_att);
    std::string att_ckpt, att_mrc;
    LatentSel att_sel;
    long att_channel = 0;
    long att_grid = 0;
    at->add_option("--checkpoint", att_ckpt)->required();
    at->add_option("--mrc", att_mrc)->required();
    at->add_option("--channel", att_channel, "key-token channel (0..N-1)");
    at->add_option("--latent", att_sel.latent_csv);
    at->add_option("--image", att_sel.image);
    at->add_option("--state", att_sel.state);
    at->add_option("--grid", att_grid);

    auto* rp = app.add_subcommand("report", "summarize run artifacts in a directory");
    add_common(rp, c_rep);

    CLI11_PARSE(app, argc, argv);

    if (sim->parsed()) {
        cfg::RunConfig rc = resolve(c_sim);
        const std::string out = prepare_out(rc);
        std::vector<DensityVolume> states;
        std::stringstream ss(rc.str("simulate.volumes"));
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) states.push_back(mrc::read_volume(tok));
        }
        if (states.empty()) throw ConfigError("simulate.volumes: no input volumes given");
        img::SimulatedDataset ds = img::simulate_dataset(states, rc.simulate_spec());
        mrc::write_stack(ds.data.stack, out + "/particles.mrcs");
        meta::write_metadata(ds.data.records, out + "/particles.csv");
        if (!ds.initial_poses.empty())
            meta::write_metadata(ds.initial_poses, out + "/initial_poses.csv");
        std::printf("simulate: %d images (D=%d) -> %s/particles.mrcs\n", ds.data.stack.count,
                    ds.data.stack.d, out.c_str());
        return 0;
    }

    if (pre->parsed()) {
        cfg::RunConfig rc = resolve(c_pre);
        const std::string out = prepare_out(rc);
        meta::ParticleDataset data = load_dataset_from(rc);
        const std::string init_path = rc.str("dataset.initial_poses");
        std::vector<geo::Pose> targets;
        if (!init_path.empty()) {
            meta::MetadataFile mf = meta::read_metadata(init_path);
            if (mf.records.size() != static_cast<size_t>(data.size()))
                throw ValidationError("initial poses row count does not match the dataset");
            targets = poses_from_records(mf.records);
        } else {
            if (!data.has_poses())
                throw ConfigError("pretrain-pose: no initial poses (dataset or initial_poses)");
            targets = poses_from_records(data.records);
        }
        auto model = Model::build(rc.model_config(data.d()));
        train::Trainer trainer(*model, data, rc.train_config());
        trainer.pretrain_orientation(targets);
        ckpt::save_checkpoint(model->store, &trainer.optimizer(),
                              {1, rc.hash(), trainer.config().pretrain_epochs, 1},
                              out + "/pretrained.ckpt");
        trainer.write_loss_log(out + "/pretrain_loss.txt");
        std::printf("pretrain-pose: %d epochs -> %s/pretrained.ckpt\n",
                    trainer.config().pretrain_epochs, out.c_str());
        return 0;
    }

    if (tr->parsed()) {
        cfg::RunConfig rc = resolve(c_train);
        const std::string out = prepare_out(rc);
        meta::ParticleDataset data = load_dataset_from(rc);
        auto model = Model::build(rc.model_config(data.d()));
        train::Trainer trainer(*model, data, rc.train_config());
        if (!init_ckpt.empty()) {
            const auto info = ckpt::load_checkpoint(model->store, nullptr, init_ckpt);
            if (info.config_hash != rc.hash())
                std::fprintf(stderr, "warning: checkpoint config hash differs from this run\n");
        }
        try {
            trainer.train();
        } catch (const DivergenceError&) {
            ckpt::save_checkpoint(model->store, &trainer.optimizer(), {1, rc.hash(), -1, 2},
                                  out + "/last_good.ckpt");
            trainer.write_loss_log(out + "/loss_log.txt");
            throw;
        }
        ckpt::save_checkpoint(model->store, &trainer.optimizer(),
                              {1, rc.hash(), trainer.config().epochs, 2}, out + "/model.ckpt");
        trainer.write_loss_log(out + "/loss_log.txt");
        if (!trainer.history().empty()) {
            const auto& last = trainer.history().back();
            std::printf("train: final loss %.6g", last.loss);
            if (last.rot_error >= 0)
                std::printf(", rot err %.4g, trans err %.4g", last.rot_error, last.trans_error);
            std::printf(" -> %s/model.ckpt\n", out.c_str());
        }
        return 0;
    }

    auto build_from_ckpt = [](const cfg::RunConfig& rc, const std::string& path,
                              meta::ParticleDataset* data) {
        const int d = data ? data->d() : static_cast<int>(rc.integer("model.max_resolution"));
        if (d <= 0) throw ConfigError("cannot infer the image size: provide a dataset");
        auto model = Model::build(rc.model_config(d));
        const auto info = ckpt::load_checkpoint(model->store, nullptr, path);
        if (info.config_hash != rc.hash())
            std::fprintf(stderr, "warning: checkpoint config hash differs from this run\n");
        return model;
    };

    if (ex->parsed()) {
        cfg::RunConfig rc = resolve(c_exp);
        prepare_out(rc);
        meta::ParticleDataset data;
        bool have_data = !rc.str("dataset.stack").empty();
        if (have_data) data = load_dataset_from(rc);
        auto model = build_from_ckpt(rc, ex_ckpt, have_data ? &data : nullptr);
        std::unique_ptr<train::Trainer> trainer;
        if (have_data)
            trainer = std::make_unique<train::Trainer>(*model, data, rc.train_config());
        const std::vector<float> z =
            resolve_latent(ex_sel, *model, have_data ? &data : nullptr, trainer.get());
        const int grid = ex_grid > 0 ? static_cast<int>(ex_grid) : model->cfg.d;
        const double px = have_data ? data.pixel_size() : 1.0;
        DensityVolume v = model->export_volume(z, grid, px, rc.train_config().threads);
        mrc::write_volume(v, ex_mrc);
        std::printf("export-volume: %d^3 -> %s\n", grid, ex_mrc.c_str());
        return 0;
    }

    if (fc->parsed()) {
        cfg::RunConfig rc = resolve(c_fsc);
        const std::string out = prepare_out(rc);
        const DensityVolume a = mrc::read_volume(fsc_a);
        const DensityVolume b = mrc::read_volume(fsc_b);
        const eval::FscCurve curve = eval::fsc(a, b);
        const std::string csv = fsc_csv.empty() ? out + "/fsc.csv" : fsc_csv;
        eval::write_fsc_csv(curve, csv);
        const auto r = eval::resolution(curve, fsc_thr);
        if (r.unresolved)
            std::printf("fsc: unresolved at threshold %.3g (curve in %s)\n", fsc_thr, csv.c_str());
        else
            std::printf("fsc: resolution %.4g A at threshold %.3g%s (curve in %s)\n", r.angstrom,
                        fsc_thr, r.at_nyquist ? " [Nyquist-limited]" : "", csv.c_str());
        return 0;
    }

    if (rs->parsed()) {
        resolve(c_res);
        const eval::FscCurve curve = eval::read_fsc_csv(res_csv);
        const auto r = eval::resolution(curve, res_thr);
        if (r.unresolved)
            std::printf("resolution: unresolved at threshold %.3g\n", res_thr);
        else
            std::printf("resolution: %.4g A at threshold %.3g%s\n", r.angstrom, res_thr,
                        r.at_nyquist ? " [Nyquist-limited]" : "");
        return 0;
    }

    if (lt->parsed()) {
        cfg::RunConfig rc = resolve(c_lat);
        const std::string out = prepare_out(rc);
        meta::ParticleDataset data = load_dataset_from(rc);
        auto model = build_from_ckpt(rc, lat_ckpt, &data);
        train::Trainer trainer(*model, data, rc.train_config());
        const auto zs = trainer.deformation_latents();
        {
            std::ofstream f(out + "/latents.csv");
            f << "idx";
            for (int k = 0; k < model->cfg.dz; ++k) f << ",z" << k;
            f << "\n";
            for (size_t i = 0; i < zs.size(); ++i) {
                f << i;
                for (float v : zs[i]) f << "," << v;
                f << "\n";
            }
        }
        const int k = static_cast<int>(std::min<long>(lat_k, static_cast<long>(zs.size())));
        const auto analysis =
            eval::latent_pca_kmeans(zs, k, static_cast<std::uint64_t>(rc.integer("run.seed")));
        std::vector<int> state_ids;
        if (data.has_states())
            for (const auto& r : data.records) state_ids.push_back(*r.state_id);
        eval::write_pca_scatter(analysis, zs, state_ids.empty() ? nullptr : &state_ids,
                                out + "/pca_scatter.csv");
        std::printf("latents: %zu points, k=%d, inertia %.6g", zs.size(), k, analysis.inertia);
        if (!state_ids.empty())
            std::printf(", purity %.4g", eval::cluster_purity(analysis.assignments, state_ids));
        std::printf(" -> %s/pca_scatter.csv\n", out.c_str());
        return 0;
    }

    if (at->parsed()) {
        cfg::RunConfig rc = resolve(c_att);
        prepare_out(rc);
        meta::ParticleDataset data;
        bool have_data = !rc.str("dataset.stack").empty();
        if (have_data) data = load_dataset_from(rc);
        auto model = build_from_ckpt(rc, att_ckpt, have_data ? &data : nullptr);
        std::unique_ptr<train::Trainer> trainer;
        if (have_data)
            trainer = std::make_unique<train::Trainer>(*model, data, rc.train_config());
        const std::vector<float> z =
            resolve_latent(att_sel, *model, have_data ? &data : nullptr, trainer.get());
        const int grid = att_grid > 0 ? static_cast<int>(att_grid) : model->cfg.d;
        const double px = have_data ? data.pixel_size() : 1.0;
        DensityVolume v = model->attention_volume(z, grid, px, static_cast<int>(att_channel),
                                                  rc.train_config().threads);
        mrc::write_volume(v, att_mrc);
        std::printf("attention: channel %ld on %d^3 -> %s\n", att_channel, grid, att_mrc.c_str());
        return 0;
    }

    if (rp->parsed()) {
        cfg::RunConfig rc = resolve(c_rep);
        const std::string out = prepare_out(rc);
        eval::ReportInputs in;
        eval::FscCurve curve;
        if (fs::exists(out + "/fsc.csv")) {
            curve = eval::read_fsc_csv(out + "/fsc.csv");
            in.fsc_curve = &curve;
        }
        eval::write_report(in, out);
        std::printf("report: %s/summary.txt\n", out.c_str());
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "ERROR config: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "ERROR missing-input: %s\n", e.what());
        return 3;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "ERROR bad-format: %s\n", e.what());
        return 4;
    } catch (const UnsupportedFormatError& e) {
        std::fprintf(stderr, "ERROR bad-format: %s\n", e.what());
        return 4;
    } catch (const CorruptFileError& e) {
        std::fprintf(stderr, "ERROR bad-format: %s\n", e.what());
        return 4;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "ERROR bad-format: %s\n", e.what());
        return 4;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "ERROR bad-format: %s\n", e.what());
        return 4;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "ERROR divergence: %s\n", e.what());
        return 5;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "ERROR internal: %s\n", e.what());
        return 6;
    }
}
