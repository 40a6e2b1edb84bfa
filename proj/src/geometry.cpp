#include "cryoquery/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "cryoquery/errors.hpp"

namespace cq::geo {

namespace {
constexpr double kDegenerateTol = 1e-9;
}

double orthogonality_defect(const Eigen::Matrix3d& r) {
    return (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
}

bool is_rotation(const Eigen::Matrix3d& r, double tol) {
    return orthogonality_defect(r) < tol && r.determinant() > 0.0;
}

Eigen::Matrix3d rotation_from_6d(const std::array<double, 6>& code) {
    const Eigen::Vector3d a1(code[0], code[1], code[2]);
    const Eigen::Vector3d a2(code[3], code[4], code[5]);
    const double n1 = a1.norm();
    if (n1 < kDegenerateTol)
        throw DegenerateCodeError("rotation_from_6d: first 3-vector is (near) zero");
    const Eigen::Vector3d b1 = a1 / n1;
    const Eigen::Vector3d u2 = a2 - b1.dot(a2) * b1;
    const double n2 = u2.norm();
    if (n2 < kDegenerateTol * std::max(1.0, a2.norm()))
        throw DegenerateCodeError("rotation_from_6d: input 3-vectors are (near) parallel");
    const Eigen::Vector3d b2 = u2 / n2;
    const Eigen::Vector3d b3 = b1.cross(b2);
    Eigen::Matrix3d r;
    r.col(0) = b1;
    r.col(1) = b2;
    r.col(2) = b3;
    return r;
}

std::array<double, 6> rotation_to_6d(const Eigen::Matrix3d& r) {
    if (!is_rotation(r, 1e-5))
        throw ValidationError("rotation_to_6d: matrix is not a rotation");
    return {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
}

Eigen::Matrix3d sample_uniform_rotation(Rng& rng) {
    // A 4-D Gaussian normalized to the unit sphere is Haar-uniform on SO(3).
    double q[4];
    double nn = 0.0;
    do {
        nn = 0.0;
        for (double& c : q) {
            c = rng.gaussian();
            nn += c * c;
        }
    } while (nn < 1e-12);
    const double inv = 1.0 / std::sqrt(nn);
    const double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
         2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
         2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::Matrix3d project_to_so3(const Eigen::Matrix3d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
    return u * v.transpose();
}

Pose perturb_pose(const Pose& pose, double rot_sigma, double trans_range, Rng& rng) {
    Pose out = pose;
    if (rot_sigma > 0.0) {
        Eigen::Matrix3d e;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) e(i, j) = rng.gaussian(0.0, rot_sigma);
        out.rotation = project_to_so3(pose.rotation + e);
    }
    if (trans_range > 0.0) {
        out.translation.x() += rng.uniform(-trans_range, trans_range);
        out.translation.y() += rng.uniform(-trans_range, trans_range);
    }
    return out;
}

double rotation_error(const std::vector<Eigen::Matrix3d>& pred,
                      const std::vector<Eigen::Matrix3d>& gt) {
    if (pred.empty() || pred.size() != gt.size())
        throw DimensionError("rotation_error: empty or mismatched lists");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - gt[i]).squaredNorm();
    return acc / static_cast<double>(pred.size());
}

double translation_error(const std::vector<Eigen::Vector2d>& pred,
                         const std::vector<Eigen::Vector2d>& gt, int image_size) {
    if (pred.empty() || pred.size() != gt.size())
        throw DimensionError("translation_error: empty or mismatched lists");
    if (image_size <= 0) throw ValidationError("translation_error: image size must be positive");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - gt[i]).norm();
    return acc / static_cast<double>(pred.size()) / static_cast<double>(image_size);
}

int rotation_from_6d_node(ad::Tape& tape, int code6) {
    if (tape.val(code6).numel() != 6)
        throw DimensionError("rotation_from_6d_node: code must have 6 entries");
    const int flat = tape.reshape(code6, {1, 6});
    const int a1 = tape.slice_cols(flat, 0, 3);
    const int a2 = tape.slice_cols(flat, 3, 6);
    const int n1 = tape.sqrt_(tape.sum_all(tape.square(a1)));
    if (tape.val(n1).values[0] < static_cast<float>(kDegenerateTol))
        throw DegenerateCodeError("rotation_from_6d_node: first 3-vector is (near) zero");
    const int b1 = tape.div_scalar_node(a1, n1);
    const int d = tape.dot(b1, a2);
    const int u2 = tape.sub(a2, tape.mul_scalar_node(b1, d));
    const int n2 = tape.sqrt_(tape.sum_all(tape.square(u2)));
    if (tape.val(n2).values[0] < 1e-7f)
        throw DegenerateCodeError("rotation_from_6d_node: input 3-vectors are (near) parallel");
    const int b2 = tape.div_scalar_node(u2, n2);
    const int b3 = tape.cross3(b1, b2);
    return tape.columns3(b1, b2, b3);
}

}  // namespace cq::geo
