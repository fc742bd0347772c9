#ifndef LMMREG_GEOMETRY_HPP
#define LMMREG_GEOMETRY_HPP

#include <Eigen/Core>

namespace lmmreg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rigid motion p -> R*p + t with R in SO(3).
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidTransform identity() { return {}; }
};

/// Skew-symmetric matrix of r, so that skew(r)*p == r x p.
Mat3 skew(const Vec3& r);

/// Rodrigues' rotation formula: exp of the skew matrix of r.
/// Falls back to the Taylor expansion of sin(t)/t and (1-cos t)/t^2
/// below t = 1e-8.
Mat3 exp_map(const Vec3& r);

Vec3 apply(const RigidTransform& T, const Vec3& p);

/// Applies T2 first, then T1.
RigidTransform compose(const RigidTransform& T1, const RigidTransform& T2);

RigidTransform inverse(const RigidTransform& T);

/// Geodesic distance on SO(3), in [0, pi]. The arccos argument is clamped
/// to [-1, 1]; tr() can drift past 3 by ~1e-15.
double rotation_error(const Mat3& R_est, const Mat3& R_gt);

double translation_error(const Vec3& t_est, const Vec3& t_gt);

/// True iff R'R = I and det R = +1 within tol (Frobenius).
bool is_rotation(const Mat3& R, double tol = 1e-9);

}  // namespace lmmreg

#endif
