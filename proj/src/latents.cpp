#include "cryoquery/latents.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

#include "cryoquery/errors.hpp"
#include "cryoquery/rng.hpp"

namespace cq::eval {

namespace {

struct KmeansResult {
    std::vector<int> assignments;
    Eigen::MatrixXd centers;
    double inertia = 0.0;
};

KmeansResult kmeans_once(const Eigen::MatrixXd& x, int k, Rng& rng) {
    const int n = static_cast<int>(x.rows());
    const int dim = static_cast<int>(x.cols());

    // k-means++ seeding
    Eigen::MatrixXd centers(k, dim);
    std::vector<double> d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    centers.row(0) = x.row(static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n))));
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = (x.row(i) - centers.row(c - 1)).squaredNorm();
            d2[static_cast<size_t>(i)] = std::min(d2[static_cast<size_t>(i)], d);
            total += d2[static_cast<size_t>(i)];
        }
        double pick = rng.uniform() * total;
        int chosen = n - 1;
        for (int i = 0; i < n; ++i) {
            pick -= d2[static_cast<size_t>(i)];
            if (pick <= 0.0) {
                chosen = i;
                break;
            }
        }
        centers.row(c) = x.row(chosen);
    }

    std::vector<int> assign(static_cast<size_t>(n), -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (x.row(i) - centers.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double d = (x.row(i) - centers.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[static_cast<size_t>(i)] != best) {
                assign[static_cast<size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, dim);
        std::vector<int> counts(static_cast<size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            sums.row(assign[static_cast<size_t>(i)]) += x.row(i);
            counts[static_cast<size_t>(assign[static_cast<size_t>(i)])] += 1;
        }
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<size_t>(c)] > 0)
                centers.row(c) = sums.row(c) / counts[static_cast<size_t>(c)];
    }

    double inertia = 0.0;
    for (int i = 0; i < n; ++i)
        inertia += (x.row(i) - centers.row(assign[static_cast<size_t>(i)])).squaredNorm();
    return {std::move(assign), std::move(centers), inertia};
}

}  // namespace

LatentAnalysis latent_pca_kmeans(const std::vector<std::vector<float>>& latents, int k,
                                 std::uint64_t seed, int restarts) {
    const int n = static_cast<int>(latents.size());
    if (n == 0) throw ValidationError("latent analysis: no latents");
    if (k > n) throw ValidationError("latent analysis: k exceeds the number of points");
    const int dim = static_cast<int>(latents.front().size());

    Eigen::MatrixXd x(n, dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j) x(i, j) = latents[static_cast<size_t>(i)][static_cast<size_t>(j)];

    LatentAnalysis out;
    out.mean = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - out.mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / std::max(1, n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    // eigenvalues ascending; flip to variance-descending
    out.components.resize(dim, dim);
    out.explained_variance.resize(static_cast<size_t>(dim));
    for (int i = 0; i < dim; ++i) {
        out.components.row(i) = eig.eigenvectors().col(dim - 1 - i).transpose();
        out.explained_variance[static_cast<size_t>(i)] =
            std::max(0.0, eig.eigenvalues()(dim - 1 - i));
    }

    KmeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        Rng rng(seed, "kmeans", static_cast<std::uint64_t>(r));
        KmeansResult res = kmeans_once(x, k, rng);
        if (res.inertia < best.inertia) best = std::move(res);
    }
    out.assignments = std::move(best.assignments);
    out.centers = std::move(best.centers);
    out.inertia = best.inertia;
    return out;
}

double cluster_purity(const std::vector<int>& assignments, const std::vector<int>& labels) {
    if (assignments.size() != labels.size() || assignments.empty())
        throw ValidationError("cluster_purity: size mismatch");
    int max_cluster = 0, max_label = 0;
    for (int a : assignments) max_cluster = std::max(max_cluster, a);
    for (int l : labels) max_label = std::max(max_label, l);
    std::vector<std::vector<long>> table(static_cast<size_t>(max_cluster) + 1,
                                         std::vector<long>(static_cast<size_t>(max_label) + 1, 0));
    for (size_t i = 0; i < assignments.size(); ++i)
        table[static_cast<size_t>(assignments[i])][static_cast<size_t>(labels[i])] += 1;
    long correct = 0;
    for (const auto& row : table) correct += *std::max_element(row.begin(), row.end());
    return static_cast<double>(correct) / static_cast<double>(assignments.size());
}

}  // namespace cq::eval
