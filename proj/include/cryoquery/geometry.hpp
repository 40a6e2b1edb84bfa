#pragma once

#include <Eigen/Core>

#include <array>
#include <vector>

#include "cryoquery/rng.hpp"
#include "cryoquery/tape.hpp"

// Rotations, the 6-D rotation representation and its inverse, Haar-uniform
// sampling, pose perturbation for ablation studies, and pose error metrics.

namespace cq::geo {

struct Pose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector2d translation = Eigen::Vector2d::Zero();  // pixels
};

// ||R^T R - I||_F
double orthogonality_defect(const Eigen::Matrix3d& r);

bool is_rotation(const Eigen::Matrix3d& r, double tol = 1e-6);

// Gram-Schmidt construction: b1 = normalize(a1), b2 = normalize(a2 - (b1.a2) b1),
// b3 = b1 x b2; columns [b1 b2 b3]. Throws DegenerateCodeError when a1 is
// (near) zero or a2 is (near) parallel to a1.
Eigen::Matrix3d rotation_from_6d(const std::array<double, 6>& code);

// Canonical inverse: the first two columns of R. Validates R in SO(3).
std::array<double, 6> rotation_to_6d(const Eigen::Matrix3d& r);

// Haar-uniform rotation via a uniform unit quaternion.
Eigen::Matrix3d sample_uniform_rotation(Rng& rng);

// Nearest rotation in Frobenius norm (polar decomposition, det fixed to +1).
Eigen::Matrix3d project_to_so3(const Eigen::Matrix3d& m);

// rotation <- project_to_so3(R + E), E_ij ~ N(0, rot_sigma^2);
// translation <- translation + U([-trans_range, trans_range]^2)
Pose perturb_pose(const Pose& pose, double rot_sigma, double trans_range, Rng& rng);

// mean_i || Rhat_i - R_i ||_F^2
double rotation_error(const std::vector<Eigen::Matrix3d>& pred,
                      const std::vector<Eigen::Matrix3d>& gt);

// mean_i || that_i - t_i ||_2 / D
double translation_error(const std::vector<Eigen::Vector2d>& pred,
                         const std::vector<Eigen::Vector2d>& gt, int image_size);

// Differentiable 6-D -> SO(3) map on the tape; code6 is a [1,6] (or [6])
// node, result is a [3,3] node. Performs the same degeneracy check as
// rotation_from_6d on the eagerly computed values.
int rotation_from_6d_node(ad::Tape& tape, int code6);

}  // namespace cq::geo
