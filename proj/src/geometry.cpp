#include "lmmreg/geometry.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>

namespace lmmreg {

Mat3 skew(const Vec3& r) {
    Mat3 m;
    m << 0.0, -r.z(), r.y(),
         r.z(), 0.0, -r.x(),
        -r.y(), r.x(), 0.0;
    return m;
}

Mat3 exp_map(const Vec3& r) {
    const double theta = r.norm();
    const Mat3 K = skew(r);
    double a, b;  // sin(t)/t and (1-cos t)/t^2
    if (theta < 1e-8) {
        const double t2 = theta * theta;
        a = 1.0 - t2 / 6.0;
        b = 0.5 - t2 / 24.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / (theta * theta);
    }
    return Mat3::Identity() + a * K + b * (K * K);
}

Vec3 apply(const RigidTransform& T, const Vec3& p) {
    return T.rotation * p + T.translation;
}

RigidTransform compose(const RigidTransform& T1, const RigidTransform& T2) {
    RigidTransform out;
    out.rotation = T1.rotation * T2.rotation;
    out.translation = T1.rotation * T2.translation + T1.translation;
    return out;
}

RigidTransform inverse(const RigidTransform& T) {
    RigidTransform out;
    out.rotation = T.rotation.transpose();
    out.translation = -(out.rotation * T.translation);
    return out;
}

double rotation_error(const Mat3& R_est, const Mat3& R_gt) {
    const double tr = (R_est * R_gt.transpose()).trace();
    const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c);
}

double translation_error(const Vec3& t_est, const Vec3& t_gt) {
    return (t_est - t_gt).norm();
}

bool is_rotation(const Mat3& R, double tol) {
    const double ortho = (R.transpose() * R - Mat3::Identity()).norm();
    return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

}  // namespace lmmreg
