#pragma once

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "sslam/types.hpp"

namespace sslam {

template <typename S>
using TwistT = Eigen::Matrix<S, 6, 1>;

/// Tangent-space increment ordered (rx, ry, rz, tx, ty, tz).
using Twist = TwistT<Scalar>;

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 3> skew(const Eigen::MatrixBase<Derived>& v) {
    using S = typename Derived::Scalar;
    Eigen::Matrix<S, 3, 3> m;
    m << S(0), -v(2), v(1),
         v(2), S(0), -v(0),
        -v(1), v(0), S(0);
    return m;
}

/// Rigid SE(3) transform stored as a unit quaternion and a translation.
/// The quaternion is renormalized whenever a new pose is built.
template <typename S>
class PoseT {
public:
    using Quat = Eigen::Quaternion<S>;
    using V3 = Eigen::Matrix<S, 3, 1>;
    using M3 = Eigen::Matrix<S, 3, 3>;
    using M4 = Eigen::Matrix<S, 4, 4>;

    PoseT() : q_(Quat::Identity()), t_(V3::Zero()) {}
    PoseT(const Quat& q, const V3& t) : q_(q.normalized()), t_(t) {}
    PoseT(const M3& r, const V3& t) : q_(Quat(r).normalized()), t_(t) {}

    static PoseT Identity() { return PoseT(); }
    static PoseT FromMatrix(const M4& m) {
        return PoseT(M3(m.template topLeftCorner<3, 3>()), V3(m.template topRightCorner<3, 1>()));
    }
    static PoseT Translation(const V3& t) { return PoseT(Quat::Identity(), t); }
    static PoseT Rotation(const Eigen::AngleAxis<S>& aa) { return PoseT(Quat(aa), V3::Zero()); }

    const Quat& quaternion() const { return q_; }
    M3 rotation() const { return q_.toRotationMatrix(); }
    const V3& translation() const { return t_; }

    M4 matrix() const {
        M4 m = M4::Identity();
        m.template topLeftCorner<3, 3>() = rotation();
        m.template topRightCorner<3, 1>() = t_;
        return m;
    }

    PoseT inverse() const {
        const Quat qi = q_.conjugate();
        return PoseT(qi, -(qi * t_));
    }

    PoseT operator*(const PoseT& other) const { return PoseT(q_ * other.q_, q_ * other.t_ + t_); }

    V3 operator*(const V3& p) const { return q_ * p + t_; }

    /// Rotation angle in radians, in [0, pi].
    S angle() const {
        const S w = std::min(S(1), std::abs(q_.w()));
        const S vn = q_.vec().norm();
        return S(2) * std::atan2(vn, w);
    }

    template <typename T>
    PoseT<T> cast() const {
        return PoseT<T>(q_.template cast<T>(), t_.template cast<T>());
    }

    bool isApprox(const PoseT& other, S tol) const {
        return (matrix() - other.matrix()).cwiseAbs().maxCoeff() <= tol;
    }

private:
    Quat q_;
    V3 t_;
};

using Pose = PoseT<Scalar>;

namespace detail {

// Coefficients of V = I + b [w] + c [w]^2, the translation coupling of the SE(3) exponential.
template <typename S>
void se3_coefficients(S theta, S& b, S& c) {
    const S t2 = theta * theta;
    if (theta < S(1e-5)) {
        b = S(0.5) - t2 / S(24);
        c = S(1) / S(6) - t2 / S(120);
    } else {
        b = (S(1) - std::cos(theta)) / t2;
        c = (theta - std::sin(theta)) / (t2 * theta);
    }
}

}  // namespace detail

/// Exponential map: Rodrigues rotation and coupled translation V * (tx, ty, tz).
template <typename S>
PoseT<S> se3_exp(const TwistT<S>& xi) {
    using V3 = Eigen::Matrix<S, 3, 1>;
    using M3 = Eigen::Matrix<S, 3, 3>;
    const V3 w = xi.template head<3>();
    const V3 v = xi.template tail<3>();
    const S theta = w.norm();
    S b, c;
    detail::se3_coefficients(theta, b, c);
    const M3 W = skew(w);
    const M3 V = M3::Identity() + b * W + c * W * W;
    Eigen::Quaternion<S> q;
    if (theta < S(1e-12)) {
        q = Eigen::Quaternion<S>(S(1), w(0) / 2, w(1) / 2, w(2) / 2);
    } else {
        q = Eigen::Quaternion<S>(Eigen::AngleAxis<S>(theta, w / theta));
    }
    return PoseT<S>(q, V * v);
}

/// Logarithm map, inverse of se3_exp for rotation angles below pi.
template <typename S>
TwistT<S> se3_log(const PoseT<S>& pose) {
    using V3 = Eigen::Matrix<S, 3, 1>;
    using M3 = Eigen::Matrix<S, 3, 3>;
    Eigen::Quaternion<S> q = pose.quaternion();
    if (q.w() < S(0)) q.coeffs() = -q.coeffs();
    const S vn = q.vec().norm();
    const S theta = S(2) * std::atan2(vn, q.w());
    V3 w;
    if (vn < S(1e-12)) {
        w = S(2) * q.vec() / q.w();
    } else {
        w = theta * q.vec() / vn;
    }
    S b, c;
    detail::se3_coefficients(theta, b, c);
    const M3 W = skew(w);
    const M3 V = M3::Identity() + b * W + c * W * W;
    TwistT<S> xi;
    xi.template head<3>() = w;
    xi.template tail<3>() = V.partialPivLu().solve(pose.translation());
    return xi;
}

/// Angle (radians) of the relative rotation between two poses.
template <typename S>
S rotation_distance(const PoseT<S>& a, const PoseT<S>& b) {
    return (a.inverse() * b).angle();
}

template <typename S>
S translation_distance(const PoseT<S>& a, const PoseT<S>& b) {
    return (a.translation() - b.translation()).norm();
}

inline constexpr Scalar kPi = 3.14159265358979323846;
inline constexpr Scalar deg2rad(Scalar d) { return d * kPi / 180.0; }
inline constexpr Scalar rad2deg(Scalar r) { return r * 180.0 / kPi; }

}  // namespace sslam
