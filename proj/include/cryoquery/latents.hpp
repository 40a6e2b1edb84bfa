#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

// Latent-space analysis: exact PCA via covariance eigendecomposition and
// K-means with k-means++ seeding over a fixed number of restarts.

namespace cq::eval {

struct LatentAnalysis {
    Eigen::VectorXd mean;
    Eigen::MatrixXd components;              // rows, orthonormal, variance-descending
    std::vector<double> explained_variance;  // eigenvalues
    std::vector<int> assignments;
    Eigen::MatrixXd centers;                 // k x dim
    double inertia = 0.0;

    // coordinates of one latent along the first n_axes principal axes
    Eigen::VectorXd project(const Eigen::VectorXd& x, int n_axes) const {
        return components.topRows(n_axes) * (x - mean);
    }
};

LatentAnalysis latent_pca_kmeans(const std::vector<std::vector<float>>& latents, int k,
                                 std::uint64_t seed, int restarts = 50);

// Fraction of points whose cluster's majority label matches their own.
double cluster_purity(const std::vector<int>& assignments, const std::vector<int>& labels);

}  // namespace cq::eval
