#pragma once

#include <string>
#include <vector>

#include "cryoquery/fsc.hpp"
#include "cryoquery/latents.hpp"
#include "cryoquery/trainer.hpp"

// Aggregates run artifacts into plot-ready CSVs plus one human-readable
// summary. Every input is optional; missing pieces produce explicit
// "no metrics" stanzas.

namespace cq::eval {

struct ReportInputs {
    const FscCurve* fsc_curve = nullptr;
    double fsc_threshold = 0.5;
    const LatentAnalysis* latents = nullptr;
    const std::vector<int>* state_ids = nullptr;  // optional, for purity
    const std::vector<train::EpochStats>* history = nullptr;
    double rot_error = -1.0;
    double trans_error = -1.0;
};

void write_report(const ReportInputs& in, const std::string& out_dir);

// Scatter of latents along PC1/PC2 with cluster labels:
// idx,pc1,pc2,cluster[,state_id]
void write_pca_scatter(const LatentAnalysis& analysis,
                       const std::vector<std::vector<float>>& latents,
                       const std::vector<int>* state_ids, const std::string& path);

}  // namespace cq::eval
