#pragma once

#include <stdexcept>
#include <vector>

#include "d2dgs/math.hpp"
#include "d2dgs/sh.hpp"

namespace d2dgs {

// One canonical oriented Gaussian disk. Constrained quantities are stored as
// unconstrained raw parameters (log scales, opacity logit, unnormalized
// quaternion) so optimization never leaves the valid domain.
struct Surfel {
    Vec3 center = Vec3::Zero();
    Quat rot_raw = Quat::identity();
    Vec2 log_scales = Vec2::Zero();
    double opacity_logit = 0.0;
    std::vector<double> sh;  // layout: channel-major, sh[ch * basis + b]

    Quat orientation() const { return rot_raw.normalized(); }
    Vec2 scales() const { return {std::exp(log_scales[0]), std::exp(log_scales[1])}; }
    double opacity() const { return sigmoid(opacity_logit); }

    int sh_basis() const { return int(sh.size() / 3); }
    double sh_at(int channel, int b) const { return sh[size_t(channel) * sh_basis() + b]; }
};

struct SurfelFrame {
    Vec3 t_u, t_v, t_w;
};

// Tangent frame of a surfel: first two rotation columns plus the normal.
inline SurfelFrame surfel_frame(const Surfel& s) {
    const Mat3 r = quat_to_matrix(s.orientation());
    return {r.col(0), r.col(1), r.col(2)};
}

// World point at tangent-plane coordinates (u, v).
inline Vec3 point_on_surfel(const Surfel& s, double u, double v) {
    const SurfelFrame f = surfel_frame(s);
    const Vec2 sc = s.scales();
    return s.center + sc[0] * f.t_u * u + sc[1] * f.t_v * v;
}

struct ControlPoint {
    Vec3 position = Vec3::Zero();
    double log_radius = 0.0;

    double radius() const { return std::exp(log_radius); }
};

struct ControlPointSet {
    std::vector<ControlPoint> points;

    size_t size() const { return points.size(); }
    const ControlPoint& operator[](size_t i) const { return points[i]; }
    ControlPoint& operator[](size_t i) { return points[i]; }
};

// Pinhole camera with a world-to-camera rigid pose. Camera axes: x right,
// y down, z forward; pixels are sampled at their centers.
struct CameraView {
    int width = 0, height = 0;
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    Mat3 rot_w2c = Mat3::Identity();
    Vec3 t_w2c = Vec3::Zero();
    double time = 0.0;

    Vec3 world_to_cam(const Vec3& p) const { return rot_w2c * p + t_w2c; }
    Vec3 cam_position() const { return -rot_w2c.transpose() * t_w2c; }

    // Unit ray direction (camera space) through the center of pixel (px, py).
    Vec3 pixel_ray(int px, int py) const {
        return Vec3((px + 0.5 - cx) / fx, (py + 0.5 - cy) / fy, 1.0).normalized();
    }

    Vec2 project(const Vec3& p_cam) const {
        return {fx * p_cam[0] / p_cam[2] + cx, fy * p_cam[1] / p_cam[2] + cy};
    }

    void validate() const {
        if (width <= 0 || height <= 0) throw std::invalid_argument("camera: bad image size");
        if (fx <= 0.0 || fy <= 0.0) throw std::invalid_argument("camera: focal lengths must be positive");
        const double ortho = (rot_w2c.transpose() * rot_w2c - Mat3::Identity()).cwiseAbs().maxCoeff();
        if (ortho >= 1e-6) throw std::invalid_argument("camera: rotation not orthonormal");
        if (time < 0.0 || time > 1.0) throw std::invalid_argument("camera: timestamp out of range");
    }
};

struct SceneConfig {
    int n_control_points = 1024;
    int neighbor_count = 4;  // K
    Vec3 background = Vec3::Ones();
    int sh_degree = 1;
    uint64_t seed = 0;

    static SceneConfig desk_default() {
        SceneConfig c;
        c.n_control_points = 32;
        return c;
    }
};

struct SceneModel {
    std::vector<Surfel> surfels;
    ControlPointSet controls;
    SceneConfig config;
};

// Builds surfels from point samples and control points by farthest-point
// sampling. Deterministic for a fixed config seed.
SceneModel init_scene(const std::vector<Vec3>& points, const std::vector<Vec3>& colors,
                      const SceneConfig& config);

// Farthest-point sampling; returns selected indices.
std::vector<int> farthest_point_sample(const std::vector<Vec3>& points, int count,
                                       uint64_t seed);

}  // namespace d2dgs
