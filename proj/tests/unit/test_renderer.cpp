#include "doctest.h"

#include <cmath>

#include "d2dgs/renderer.hpp"
#include "d2dgs/rng.hpp"
#include "d2dgs/sh.hpp"

using namespace d2dgs;

namespace {

CameraView basic_camera(int w, int h, double f) {
    CameraView cam;
    cam.width = w;
    cam.height = h;
    cam.fx = cam.fy = f;
    cam.cx = w / 2.0 - 0.5;
    cam.cy = h / 2.0 - 0.5;
    return cam;
}

Surfel colored_surfel(const Vec3& center, const Vec3& color, double scale, double opacity) {
    Surfel s;
    s.center = center;
    s.log_scales = Vec2(std::log(scale), std::log(scale));
    s.opacity_logit = logit(opacity);
    s.sh.assign(3, 0.0);
    for (int ch = 0; ch < 3; ++ch) s.sh[ch] = (color[ch] - 0.5) / sh::kC0;
    return s;
}

ViewSurfel facing_surfel(double z, double su, double sv, double opacity = 1.0) {
    ViewSurfel vs;
    vs.index = 0;
    vs.center = Vec3(0, 0, z);
    vs.tu = Vec3(1, 0, 0);
    vs.tv = Vec3(0, 1, 0);
    vs.tw = Vec3(0, 0, -1);  // facing the camera
    vs.su = su;
    vs.sv = sv;
    vs.opacity = opacity;
    return vs;
}

}  // namespace

TEST_CASE("gaussian_value examples") {
    CHECK(gaussian_value(0, 0) == 1.0);
    CHECK(gaussian_value(1, 0) == doctest::Approx(0.606531).epsilon(1e-5));
    CHECK(gaussian_value(3, 4) == doctest::Approx(3.727e-6).epsilon(1e-3));
}

TEST_CASE("ray_splat_intersect center hit") {
    ViewSurfel vs = facing_surfel(2.0, 1.0, 1.0);
    auto hit = ray_splat_intersect(Vec3(0, 0, 1), vs);
    REQUIRE(hit.has_value());
    CHECK(hit->u == doctest::Approx(0.0));
    CHECK(hit->v == doctest::Approx(0.0));
    CHECK(hit->z == doctest::Approx(2.0));
    CHECK(hit->gauss == doctest::Approx(1.0));
}

TEST_CASE("ray_splat_intersect parallel ray is none") {
    ViewSurfel vs = facing_surfel(2.0, 1.0, 1.0);
    vs.tw = Vec3(1, 0, 0);
    vs.tu = Vec3(0, 0, 1);
    vs.tv = Vec3(0, 1, 0);
    vs.center = Vec3(1, 0, 2);
    auto hit = ray_splat_intersect(Vec3(0, 0, 1), vs);
    CHECK(!hit.has_value());
}

TEST_CASE("ray_splat_intersect off-center analytic case") {
    ViewSurfel vs = facing_surfel(2.0, 1.0, 1.0);
    Vec3 dir = Vec3(1, 0, 2).normalized();  // hits the plane z=2 at (1,0,2)
    auto hit = ray_splat_intersect(dir, vs);
    REQUIRE(hit.has_value());
    CHECK(hit->u == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(hit->v == doctest::Approx(0.0));
    CHECK(hit->z == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(hit->gauss == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
}

TEST_CASE("ray_splat_intersect cutoff and near plane") {
    ViewSurfel vs = facing_surfel(2.0, 1.0, 1.0);
    Vec3 dir = Vec3(4, 0, 2).normalized();  // u = 4 > 3 sigma
    CHECK(!ray_splat_intersect(dir, vs).has_value());

    ViewSurfel behind = facing_surfel(-1.0, 1.0, 1.0);
    CHECK(!ray_splat_intersect(Vec3(0, 0, 1), behind).has_value());
}

TEST_CASE("composite_pixel examples") {
    RenderConfig cfg;
    Vec3 bg(0, 0, 0);

    SUBCASE("empty list") {
        std::vector<Fragment> frags;
        PixelComposite pc = composite_pixel(frags, Vec3(0.2, 0.4, 0.6), cfg);
        CHECK(pc.color == Vec3(0.2, 0.4, 0.6));
        CHECK(pc.alpha == 0.0);
        CHECK(pc.depth_expected == 0.0);
        CHECK(pc.depth_median == 0.0);
        CHECK(pc.normal.norm() == 0.0);
    }

    SUBCASE("single opaque intersection") {
        std::vector<Fragment> frags(1);
        frags[0].surfel = 0;
        frags[0].z = 2.0;
        frags[0].a = 1.0;
        frags[0].color = Vec3(1, 0, 0);
        frags[0].normal = Vec3(0, 0, -1);
        PixelComposite pc = composite_pixel(frags, bg, cfg);
        CHECK((pc.color - Vec3(1, 0, 0)).norm() < 1e-12);
        CHECK(pc.alpha == doctest::Approx(1.0));
        CHECK(pc.depth_expected == doctest::Approx(2.0));
        CHECK(pc.depth_median == doctest::Approx(2.0));
    }

    SUBCASE("two half-opacity intersections") {
        std::vector<Fragment> frags(2);
        Vec3 c1(0.9, 0.1, 0.2), c2(0.2, 0.8, 0.4);
        frags[0] = {0, 1.0, 0.5, 0.0, c1, Vec3(0, 0, -1)};
        frags[1] = {1, 2.0, 0.5, 0.0, c2, Vec3(0, 0, -1)};
        PixelComposite pc = composite_pixel(frags, bg, cfg);
        CHECK((pc.color - (0.5 * c1 + 0.25 * c2)).norm() < 1e-12);
        CHECK(pc.alpha == doctest::Approx(0.75));
        CHECK(pc.depth_expected == doctest::Approx(4.0 / 3.0));
        CHECK(pc.depth_median == doctest::Approx(1.0));
        CHECK(frags[0].weight == doctest::Approx(0.5));
        CHECK(frags[1].weight == doctest::Approx(0.25));
    }

    SUBCASE("unsorted input detected in debug mode") {
        RenderConfig dbg = cfg;
        dbg.debug_verify = true;
        std::vector<Fragment> frags(2);
        frags[0] = {0, 2.0, 0.5, 0.0, Vec3::Zero(), Vec3::Zero()};
        frags[1] = {1, 1.0, 0.5, 0.0, Vec3::Zero(), Vec3::Zero()};
        CHECK_THROWS_AS(composite_pixel(frags, bg, dbg), std::logic_error);
    }
}

TEST_CASE("render_view empty scene gives background") {
    CameraView cam = basic_camera(8, 8, 8.0);
    RenderConfig cfg;
    cfg.background = Vec3(1, 1, 1);
    RenderTargets rt = render_view({}, cam, cfg);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            CHECK(rt.rgb.rgb(y, x) == Vec3(1, 1, 1));
            CHECK(rt.alpha.at(y, x, 0) == 0.0);
            CHECK(rt.depth_expected.at(y, x, 0) == 0.0);
            CHECK(rt.normal.rgb(y, x).norm() == 0.0);
        }
}

TEST_CASE("render_view opaque red disc") {
    CameraView cam = basic_camera(16, 16, 16.0);
    // pixel (7,7) center projects exactly through the optical axis
    Surfel s = colored_surfel(Vec3(0, 0, 2), Vec3(1, 0, 0), 0.35, 0.999999);
    RenderConfig cfg;
    cfg.background = Vec3(1, 1, 1);
    RenderTargets rt = render_view({s}, cam, cfg);

    Vec3 center = rt.rgb.rgb(7, 7);
    CHECK((center - Vec3(1, 0, 0)).norm() < 1e-3);
    CHECK(rt.alpha.at(7, 7, 0) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(rt.depth_expected.at(7, 7, 0) == doctest::Approx(2.0).epsilon(1e-6));
    // camera-facing normal at the center points along -z
    CHECK(rt.normal.rgb(7, 7)[2] == doctest::Approx(-1.0).epsilon(1e-6));

    CHECK((rt.rgb.rgb(0, 0) - Vec3(1, 1, 1)).norm() < 1e-9);
    CHECK(rt.alpha.at(0, 0, 0) == 0.0);
}

TEST_CASE("tile binning equals brute force") {
    Rng rng(71);
    for (int trial = 0; trial < 4; ++trial) {
        int n = 20 + int(rng.uniform_index(80));
        std::vector<Surfel> surfels;
        for (int i = 0; i < n; ++i) {
            Vec3 c(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(1.0, 4.0));
            Vec3 col(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
            Surfel s = colored_surfel(c, col, rng.uniform(0.02, 0.4), rng.uniform(0.1, 0.95));
            s.rot_raw = Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
            if (s.rot_raw.norm() < 0.3) s.rot_raw = Quat::identity();
            surfels.push_back(s);
        }
        CameraView cam = basic_camera(32, 32, 24.0);
        RenderConfig tiled, brute;
        brute.brute_force = true;
        RenderTargets a = render_view(surfels, cam, tiled);
        RenderTargets b = render_view(surfels, cam, brute);
        double dmax = 0.0;
        for (size_t i = 0; i < a.rgb.raw().size(); ++i)
            dmax = std::max(dmax, std::abs(a.rgb.raw()[i] - b.rgb.raw()[i]));
        for (size_t i = 0; i < a.alpha.raw().size(); ++i) {
            dmax = std::max(dmax, std::abs(a.alpha.raw()[i] - b.alpha.raw()[i]));
            dmax = std::max(dmax, std::abs(a.depth_expected.raw()[i] - b.depth_expected.raw()[i]));
            dmax = std::max(dmax, std::abs(a.depth_median.raw()[i] - b.depth_median.raw()[i]));
        }
        CHECK(dmax <= 1e-6);
    }
}

TEST_CASE("renderer invariants on a random scene") {
    Rng rng(73);
    std::vector<Surfel> surfels;
    double cmax = 0.0;
    for (int i = 0; i < 30; ++i) {
        Vec3 c(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1.5, 3.5));
        Vec3 col(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
        cmax = std::max({cmax, col[0], col[1], col[2]});
        surfels.push_back(colored_surfel(c, col, rng.uniform(0.05, 0.3), rng.uniform(0.2, 0.9)));
    }
    CameraView cam = basic_camera(24, 24, 20.0);
    RenderConfig cfg;
    cfg.background = Vec3(0, 0, 0);
    RenderTargets rt = render_view(surfels, cam, cfg);

    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
            double al = rt.alpha.at(y, x, 0);
            CHECK(al >= 0.0);
            CHECK(al <= 1.0 + 1e-12);
            for (int ch = 0; ch < 3; ++ch) CHECK(rt.rgb.at(y, x, ch) <= cmax + 1e-9);

            // omega recovery: sum of weights + final transmittance == 1
            const auto& frags = rt.at(y, x);
            double wsum = 0.0, T = 1.0;
            bool terminated = false;
            for (const auto& f : frags) {
                if (T < cfg.early_stop) {
                    terminated = true;
                    break;
                }
                wsum += f.weight;
                T *= (1.0 - f.a);
            }
            CHECK(std::abs(wsum + T - 1.0) < (terminated ? 1e-3 : 1e-5));
        }
}

TEST_CASE("opaque occluder zeroes rear weights") {
    CameraView cam = basic_camera(16, 16, 16.0);
    Surfel rear = colored_surfel(Vec3(0, 0, 3), Vec3(0, 1, 0), 0.5, 0.9);
    Surfel front = colored_surfel(Vec3(0, 0, 1.5), Vec3(1, 0, 0), 0.5, 0.999999);
    RenderConfig cfg;

    RenderTargets rt = render_view({rear, front}, cam, cfg);
    const auto& frags = rt.at(7, 7);
    REQUIRE(frags.size() == 2);
    CHECK(frags[0].surfel == 1);  // front surfel composited first
    bool rear_found = false;
    for (const auto& f : frags)
        if (f.surfel == 0) {
            rear_found = true;
            CHECK(f.weight < 1e-5);
        }
    CHECK(rear_found);
}
