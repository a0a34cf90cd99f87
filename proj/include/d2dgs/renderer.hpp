#pragma once

#include <optional>
#include <vector>

#include "d2dgs/image.hpp"
#include "d2dgs/math.hpp"
#include "d2dgs/scene.hpp"

namespace d2dgs {

struct RenderConfig {
    double near_plane = 0.01;
    double cutoff_sq = 9.0;           // 3-sigma extent in (u,v)
    double screen_sigma = 0.5;        // px, low-pass floor
    double screen_radius = 1.5;       // px, relaxed keep radius
    double early_stop = 1e-4;         // transmittance threshold
    int tile_size = 16;
    Vec3 background = Vec3(1.0, 1.0, 1.0);
    bool keep_records = true;
    bool debug_verify = false;        // check fragment ordering in composite
    bool brute_force = false;         // bypass tile binning (oracle path)
};

// A surfel prepared for one view: camera-space frame plus the view-evaluated
// color and camera-facing normal.
struct ViewSurfel {
    int index = -1;
    Vec3 center = Vec3::Zero();  // camera space
    Vec3 tu = Vec3::UnitX(), tv = Vec3::UnitY(), tw = Vec3::UnitZ();
    double su = 1.0, sv = 1.0;
    double opacity = 1.0;
    Vec3 color = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();  // camera space, flipped toward the camera
};

struct Intersection {
    int surfel = -1;
    double u = 0.0, v = 0.0;
    double z = 0.0;      // camera-space depth of the hit
    double gauss = 0.0;  // effective Gaussian value
    double a = 0.0;      // opacity * gauss
};

// One composited intersection retained for the loss terms.
struct Fragment {
    int surfel = -1;
    double z = 0.0;
    double a = 0.0;
    double weight = 0.0;  // omega_i, filled by composite_pixel
    Vec3 color = Vec3::Zero();
    Vec3 normal = Vec3::Zero();
};

struct PixelComposite {
    Vec3 color = Vec3::Zero();
    double alpha = 0.0;
    double depth_expected = 0.0;
    double depth_median = 0.0;
    Vec3 normal = Vec3::Zero();
};

struct RenderTargets {
    int width = 0, height = 0;
    Image rgb;             // H x W x 3
    Image depth_expected;  // H x W x 1
    Image depth_median;    // H x W x 1
    Image normal;          // H x W x 3
    Image alpha;           // H x W x 1
    std::vector<std::vector<Fragment>> records;  // per pixel, composited order

    const std::vector<Fragment>& at(int y, int x) const {
        return records[static_cast<size_t>(y) * width + x];
    }
};

double gaussian_value(double u, double v);

ViewSurfel make_view_surfel(const Surfel& s, const CameraView& cam, int index);

std::vector<ViewSurfel> prepare_view_surfels(const std::vector<Surfel>& surfels,
                                             const CameraView& cam);

// Plane intersection with the object-space 3-sigma cutoff; dir is a unit
// camera-space ray from the origin.
std::optional<Intersection> ray_splat_intersect(const Vec3& dir, const ViewSurfel& s,
                                                double near_plane = 0.01,
                                                double cutoff_sq = 9.0);

// Renderer-internal variant: keeps hits within the relaxed screen radius of
// the projected center and applies the low-pass floor to the Gaussian.
std::optional<Intersection> intersect_view_surfel(const ViewSurfel& s, const Vec3& dir,
                                                  double pixel_x, double pixel_y,
                                                  const CameraView& cam,
                                                  const RenderConfig& config);

// Front-to-back blending over fragments sorted by (z, surfel index);
// writes each fragment's blend weight back into `frags`.
PixelComposite composite_pixel(std::vector<Fragment>& frags, const Vec3& background,
                               const RenderConfig& config);

RenderTargets render_view(const std::vector<Surfel>& surfels, const CameraView& cam,
                          const RenderConfig& config);

}  // namespace d2dgs
