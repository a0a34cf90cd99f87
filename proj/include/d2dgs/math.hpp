#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>

namespace d2dgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double y) { return std::log(y / (1.0 - y)); }
inline double softplus(double x) {
    return x > 30.0 ? x : std::log1p(std::exp(x));
}
inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

// Quaternions are stored (w, x, y, z).
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    static Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }

    Quat normalized() const {
        const double n = norm();
        return {w / n, x / n, y / n, z / n};
    }

    Quat operator*(double s) const { return {w * s, x * s, y * s, z * s}; }
    Quat operator+(const Quat& o) const { return {w + o.w, x + o.x, y + o.y, z + o.z}; }
    Quat operator-() const { return {-w, -x, -y, -z}; }

    Vec4 vec() const { return {w, x, y, z}; }
    static Quat from_vec(const Vec4& v) { return {v[0], v[1], v[2], v[3]}; }
};

// Hamilton product a ⊗ b.
inline Quat quat_mul(const Quat& a, const Quat& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

// Rotation matrix of a unit quaternion; columns are the rotated basis vectors.
inline Mat3 quat_to_matrix(const Quat& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

inline Vec3 quat_rotate(const Quat& q, const Vec3& v) {
    return quat_to_matrix(q) * v;
}

// Adjoint of quat_to_matrix: maps dL/dR into dL/dq for a unit quaternion input.
inline Vec4 quat_to_matrix_backward(const Quat& q, const Mat3& g) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Vec4 gq = Vec4::Zero();
    // dR/dw
    gq[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    // dR/dx
    gq[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
    // dR/dy
    gq[2] = 2.0 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
    // dR/dz
    gq[3] = 2.0 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return gq;
}

// Adjoint of q.normalized(): g flows back through the projection (I - q̂q̂ᵀ)/|q|.
inline Vec4 quat_normalize_backward(const Quat& raw, const Vec4& g_hat) {
    const Vec4 v = raw.vec();
    const double n = v.norm();
    const Vec4 hat = v / n;
    return (g_hat - hat * hat.dot(g_hat)) / n;
}

// Left/right Hamilton product matrices: quat_mul(a,b).vec() == lmat(a)*b.vec() == rmat(b)*a.vec().
inline Eigen::Matrix4d quat_lmat(const Quat& a) {
    Eigen::Matrix4d m;
    m << a.w, -a.x, -a.y, -a.z,
        a.x, a.w, -a.z, a.y,
        a.y, a.z, a.w, -a.x,
        a.z, -a.y, a.x, a.w;
    return m;
}

inline Eigen::Matrix4d quat_rmat(const Quat& b) {
    Eigen::Matrix4d m;
    m << b.w, -b.x, -b.y, -b.z,
        b.x, b.w, b.z, -b.y,
        b.y, -b.z, b.w, b.x,
        b.z, b.y, -b.x, b.w;
    return m;
}

}  // namespace d2dgs
