#include "cryoquery/report.hpp"

#include <cstdio>
#include <fstream>

#include "cryoquery/errors.hpp"

namespace cq::eval {

void write_pca_scatter(const LatentAnalysis& analysis,
                       const std::vector<std::vector<float>>& latents,
                       const std::vector<int>* state_ids, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << "idx,pc1,pc2" << (state_ids ? ",cluster,state_id" : ",cluster") << "\n";
    const int dim = static_cast<int>(analysis.mean.size());
    const int axes = std::min(2, dim);
    char buf[128];
    for (size_t i = 0; i < latents.size(); ++i) {
        Eigen::VectorXd x(dim);
        for (int j = 0; j < dim; ++j) x(j) = latents[i][static_cast<size_t>(j)];
        const Eigen::VectorXd p = analysis.project(x, axes);
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%d", i, p(0), axes > 1 ? p(1) : 0.0,
                      analysis.assignments[i]);
        f << buf;
        if (state_ids) f << "," << (*state_ids)[i];
        f << "\n";
    }
}

void write_report(const ReportInputs& in, const std::string& out_dir) {
    std::ofstream s(out_dir + "/summary.txt");
    if (!s) throw IoError("cannot open '" + out_dir + "/summary.txt' for writing");
    s << "== run summary ==\n\n";

    s << "[reconstruction]\n";
    if (in.fsc_curve && !in.fsc_curve->frequency.empty()) {
        write_fsc_csv(*in.fsc_curve, out_dir + "/fsc.csv");
        const ResolutionResult r = resolution(*in.fsc_curve, in.fsc_threshold);
        s << "fsc shells: " << in.fsc_curve->frequency.size() << " (curve in fsc.csv)\n";
        if (r.unresolved)
            s << "resolution @" << in.fsc_threshold << ": unresolved\n";
        else
            s << "resolution @" << in.fsc_threshold << ": " << r.angstrom << " A"
              << (r.at_nyquist ? " (Nyquist-limited)" : "") << "\n";
    } else {
        s << "no metrics\n";
    }
    s << "\n[pose]\n";
    if (in.rot_error >= 0.0) {
        s << "rotation error (mean squared Frobenius): " << in.rot_error << "\n";
        s << "translation error (mean L2 / D): " << in.trans_error << "\n";
    } else {
        s << "no metrics\n";
    }
    s << "\n[latents]\n";
    if (in.latents && !in.latents->assignments.empty()) {
        s << "clusters: " << in.latents->centers.rows() << ", inertia " << in.latents->inertia
          << "\n";
        s << "explained variance (top 2): " << in.latents->explained_variance[0] << ", "
          << (in.latents->explained_variance.size() > 1 ? in.latents->explained_variance[1] : 0.0)
          << "\n";
        if (in.state_ids)
            s << "purity vs ground-truth states: "
              << cluster_purity(in.latents->assignments, *in.state_ids) << "\n";
    } else {
        s << "no metrics\n";
    }
    s << "\n[training]\n";
    if (in.history && !in.history->empty()) {
        std::ofstream lc(out_dir + "/loss_curve.csv");
        lc << "epoch,stage,loss\n";
        for (const auto& e : *in.history) lc << e.epoch << "," << e.stage << "," << e.loss << "\n";
        s << "epochs logged: " << in.history->size() << " (curve in loss_curve.csv)\n";
        s << "final loss: " << in.history->back().loss << "\n";
    } else {
        s << "no metrics\n";
    }
}

}  // namespace cq::eval
