#include "doctest.h"

#include <cmath>

#include "d2dgs/losses.hpp"
#include "d2dgs/rng.hpp"

using namespace d2dgs;

namespace {

Image random_image(int h, int w, int c, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Image img(h, w, c);
    for (double& v : img.raw()) v = rng.uniform(lo, hi);
    return img;
}

RenderTargets targets_with_records(int h, int w, std::vector<std::vector<Fragment>> recs) {
    RenderTargets rt;
    rt.width = w;
    rt.height = h;
    rt.records = std::move(recs);
    return rt;
}

}  // namespace

TEST_CASE("loss_l1") {
    Image a(4, 4, 3, 0.0), b(4, 4, 3, 0.5);
    CHECK(loss_l1(a, a) == 0.0);
    CHECK(loss_l1(a, b) == doctest::Approx(0.5));
    CHECK(loss_l1(a, b) == loss_l1(b, a));

    Image c(4, 5, 3);
    CHECK_THROWS_AS(loss_l1(a, c), std::invalid_argument);
}

TEST_CASE("loss_l1 backward matches finite differences") {
    Rng rng(3);
    Image a = random_image(5, 5, 3, rng), b = random_image(5, 5, 3, rng);
    Image g(5, 5, 3);
    loss_l1_backward(a, b, 1.0, g);
    const double h = 1e-6;
    for (int i = 0; i < 10; ++i) {
        size_t idx = rng.uniform_index(a.raw().size());
        Image ap = a, am = a;
        ap.raw()[idx] += h;
        am.raw()[idx] -= h;
        double fd = (loss_l1(ap, b) - loss_l1(am, b)) / (2 * h);
        CHECK(g.raw()[idx] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("ssim losses") {
    Rng rng(5);
    Image a = random_image(16, 16, 3, rng);
    CHECK(loss_ssim(a, a) == doctest::Approx(0.0).epsilon(1e-12));

    Image zeros(16, 16, 1, 0.0), ones(16, 16, 1, 1.0);
    // constant images: SSIM = C1/(1 + C1)
    double expected = 1.0 - 1e-4 / (1.0 + 1e-4);
    CHECK(loss_ssim(zeros, ones) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(loss_ssim(zeros, ones) == doctest::Approx(0.9999).epsilon(1e-4));

    Image b = random_image(16, 16, 3, rng);
    CHECK(loss_ssim(a, b) == doctest::Approx(loss_ssim(b, a)).epsilon(1e-12));

    Image tiny(8, 8, 3);
    CHECK_THROWS_WITH_AS(loss_ssim(tiny, tiny), "loss_ssim: images smaller than window",
                         std::invalid_argument);
}

TEST_CASE("ssim backward matches finite differences") {
    Rng rng(7);
    Image a = random_image(13, 14, 2, rng), b = random_image(13, 14, 2, rng);
    Image g(13, 14, 2);
    loss_ssim_backward(a, b, 1.0, g);
    const double h = 1e-5;
    for (int i = 0; i < 12; ++i) {
        size_t idx = rng.uniform_index(a.raw().size());
        Image ap = a, am = a;
        ap.raw()[idx] += h;
        am.raw()[idx] -= h;
        double fd = (loss_ssim(ap, b) - loss_ssim(am, b)) / (2 * h);
        CHECK(g.raw()[idx] == doctest::Approx(fd).epsilon(1e-3));
    }
}

TEST_CASE("loss_depth_distortion examples") {
    SUBCASE("single intersection is zero") {
        auto rt = targets_with_records(1, 1, {{Fragment{0, 2.0, 0.5, 0.7, {}, {}}}});
        CHECK(loss_depth_distortion(rt) == 0.0);
    }
    SUBCASE("two equal depths are zero") {
        auto rt = targets_with_records(
            1, 1, {{Fragment{0, 2.0, 0.5, 0.5, {}, {}}, Fragment{1, 2.0, 0.5, 0.25, {}, {}}}});
        CHECK(loss_depth_distortion(rt) == 0.0);
    }
    SUBCASE("unordered pair convention") {
        auto rt = targets_with_records(
            1, 2, {{Fragment{0, 1.0, 0.5, 0.5, {}, {}}, Fragment{1, 2.0, 0.5, 0.5, {}, {}}},
                   {}});
        // omega = (0.5, 0.5), z = (1, 2): 0.5 * 0.5 * 1 = 0.25; empty pixel excluded
        CHECK(loss_depth_distortion(rt) == doctest::Approx(0.25));
    }
    SUBCASE("averaged over pixels with intersections") {
        auto rt = targets_with_records(
            1, 2, {{Fragment{0, 1.0, 0.5, 0.5, {}, {}}, Fragment{1, 2.0, 0.5, 0.5, {}, {}}},
                   {Fragment{2, 3.0, 0.5, 0.9, {}, {}}}});
        CHECK(loss_depth_distortion(rt) == doctest::Approx(0.125));
    }
}

TEST_CASE("loss_depth_distortion backward matches finite differences") {
    Rng rng(11);
    std::vector<std::vector<Fragment>> recs(4);
    for (auto& pix : recs) {
        int n = 1 + int(rng.uniform_index(4));
        double z = 1.0;
        for (int i = 0; i < n; ++i) {
            z += rng.uniform(0.1, 0.5);
            pix.push_back(Fragment{i, z, 0.3, rng.uniform(0.05, 0.4), {}, {}});
        }
    }
    auto rt = targets_with_records(2, 2, recs);
    double base = loss_depth_distortion(rt);
    (void)base;

    std::vector<std::vector<double>> g_w(4), g_z(4);
    for (int p = 0; p < 4; ++p) {
        g_w[p].assign(rt.records[p].size(), 0.0);
        g_z[p].assign(rt.records[p].size(), 0.0);
    }
    loss_depth_distortion_backward(rt, 1.0, g_w, g_z);

    const double h = 1e-6;
    for (int p = 0; p < 4; ++p) {
        for (size_t k = 0; k < rt.records[p].size(); ++k) {
            auto rp = rt, rm = rt;
            rp.records[p][k].weight += h;
            rm.records[p][k].weight -= h;
            double fd = (loss_depth_distortion(rp) - loss_depth_distortion(rm)) / (2 * h);
            CHECK(g_w[p][k] == doctest::Approx(fd).epsilon(1e-5));

            rp = rt;
            rm = rt;
            rp.records[p][k].z += h;
            rm.records[p][k].z -= h;
            fd = (loss_depth_distortion(rp) - loss_depth_distortion(rm)) / (2 * h);
            CHECK(g_z[p][k] == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("normal_from_depth planes") {
    CameraView cam;
    cam.width = 12;
    cam.height = 12;
    cam.fx = cam.fy = 12.0;
    cam.cx = cam.cy = 6.0;

    SUBCASE("fronto-parallel plane") {
        Image depth(12, 12, 1, 2.0);
        Image n = normal_from_depth(depth, cam);
        for (int y = 2; y < 9; ++y)
            for (int x = 2; x < 9; ++x) {
                CHECK(n.at(y, x, 0) == doctest::Approx(0.0).epsilon(1e-9));
                CHECK(n.at(y, x, 1) == doctest::Approx(0.0).epsilon(1e-9));
                CHECK(n.at(y, x, 2) == doctest::Approx(-1.0));
            }
    }

    SUBCASE("isolated valid pixel has zero normal") {
        Image depth(12, 12, 1, 0.0);
        depth.at(5, 5, 0) = 2.0;
        Image n = normal_from_depth(depth, cam);
        CHECK(n.rgb(5, 5).norm() == 0.0);
    }

    SUBCASE("45-degree tilted plane") {
        // plane z = 1 + X in world: depth D = 1 / (1 - rx)
        Image depth(12, 12, 1);
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x) {
                double rx = (x + 0.5 - cam.cx) / cam.fx;
                depth.at(y, x, 0) = 1.0 / (1.0 - rx);
            }
        Image n = normal_from_depth(depth, cam);
        Vec3 expect = Vec3(1, 0, -1).normalized();
        for (int y = 3; y < 9; ++y)
            for (int x = 3; x < 9; ++x) CHECK((n.rgb(y, x) - expect).norm() < 1e-3);
    }
}

TEST_CASE("normal_from_depth backward matches finite differences") {
    Rng rng(13);
    CameraView cam;
    cam.width = 6;
    cam.height = 6;
    cam.fx = cam.fy = 6.0;
    cam.cx = cam.cy = 3.0;
    Image depth(6, 6, 1);
    for (double& d : depth.raw()) d = rng.uniform(1.0, 3.0);
    depth.at(1, 1, 0) = 0.0;  // a hole

    Image g_n(6, 6, 3);
    for (double& v : g_n.raw()) v = rng.normal();

    auto loss_of = [&](const Image& d) {
        Image n = normal_from_depth(d, cam);
        double l = 0.0;
        for (size_t i = 0; i < n.raw().size(); ++i) l += n.raw()[i] * g_n.raw()[i];
        return l;
    };

    Image g_d = normal_from_depth_backward(depth, cam, g_n);
    const double h = 1e-6;
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
            if (depth.at(y, x, 0) == 0.0) continue;
            Image dp = depth, dm = depth;
            dp.at(y, x, 0) += h;
            dm.at(y, x, 0) -= h;
            double fd = (loss_of(dp) - loss_of(dm)) / (2 * h);
            CHECK(g_d.at(y, x, 0) == doctest::Approx(fd).epsilon(1e-4));
        }
}

TEST_CASE("loss_normal_consistency examples") {
    Image n_map(1, 1, 3);

    SUBCASE("aligned normals give zero") {
        n_map.set_rgb(0, 0, Vec3(0, 0, -1));
        auto rt = targets_with_records(1, 1, {{Fragment{0, 1, 0.5, 1.0, {}, Vec3(0, 0, -1)}}});
        CHECK(loss_normal_consistency(rt, n_map) == doctest::Approx(0.0));
    }
    SUBCASE("perpendicular, weight 1") {
        n_map.set_rgb(0, 0, Vec3(1, 0, 0));
        auto rt = targets_with_records(1, 1, {{Fragment{0, 1, 0.5, 1.0, {}, Vec3(0, 0, -1)}}});
        CHECK(loss_normal_consistency(rt, n_map) == doctest::Approx(1.0));
    }
    SUBCASE("45 degrees, weight 0.5") {
        double c = std::cos(M_PI / 4);
        n_map.set_rgb(0, 0, Vec3(std::sin(M_PI / 4), 0, -c));
        auto rt = targets_with_records(1, 1, {{Fragment{0, 1, 0.5, 0.5, {}, Vec3(0, 0, -1)}}});
        double expect = 0.5 * (1.0 - c);
        CHECK(loss_normal_consistency(rt, n_map) == doctest::Approx(expect).epsilon(1e-9));
        CHECK(loss_normal_consistency(rt, n_map) == doctest::Approx(0.14645).epsilon(1e-4));
    }
    SUBCASE("invalid normals excluded from the average") {
        Image nm(1, 2, 3);
        nm.set_rgb(0, 0, Vec3(0, 0, -1));
        auto rt = targets_with_records(
            1, 2, {{Fragment{0, 1, 0.5, 1.0, {}, Vec3(1, 0, 0)}}, {Fragment{1, 1, 0.5, 1.0, {}, Vec3(1, 0, 0)}}});
        CHECK(loss_normal_consistency(rt, nm) == doctest::Approx(1.0));
    }
}

TEST_CASE("loss_normal_consistency backward matches finite differences") {
    Rng rng(17);
    Image n_map(2, 2, 3);
    std::vector<std::vector<Fragment>> recs(4);
    for (int p = 0; p < 4; ++p) {
        if (p == 3) continue;  // leave one pixel invalid
        Vec3 nv(rng.normal(), rng.normal(), rng.normal());
        n_map.set_rgb(p / 2, p % 2, nv.normalized());
        int n = 1 + int(rng.uniform_index(3));
        for (int i = 0; i < n; ++i) {
            Vec3 fn(rng.normal(), rng.normal(), rng.normal());
            recs[p].push_back(Fragment{i, 1.0, 0.3, rng.uniform(0.1, 0.5), {}, fn.normalized()});
        }
    }
    auto rt = targets_with_records(2, 2, recs);

    std::vector<std::vector<double>> g_w(4);
    std::vector<std::vector<Vec3>> g_n(4);
    for (int p = 0; p < 4; ++p) {
        g_w[p].assign(rt.records[p].size(), 0.0);
        g_n[p].assign(rt.records[p].size(), Vec3::Zero());
    }
    Image g_map(2, 2, 3);
    loss_normal_consistency_backward(rt, n_map, 1.0, g_w, g_n, g_map);

    const double h = 1e-6;
    for (int p = 0; p < 4; ++p) {
        for (size_t k = 0; k < rt.records[p].size(); ++k) {
            auto rp = rt, rm = rt;
            rp.records[p][k].weight += h;
            rm.records[p][k].weight -= h;
            double fd = (loss_normal_consistency(rp, n_map) - loss_normal_consistency(rm, n_map)) /
                        (2 * h);
            CHECK(g_w[p][k] == doctest::Approx(fd).epsilon(1e-5));

            for (int c = 0; c < 3; ++c) {
                rp = rt;
                rm = rt;
                rp.records[p][k].normal[c] += h;
                rm.records[p][k].normal[c] -= h;
                fd = (loss_normal_consistency(rp, n_map) - loss_normal_consistency(rm, n_map)) /
                     (2 * h);
                CHECK(g_n[p][k][c] == doctest::Approx(fd).epsilon(1e-5));
            }
        }
    }
    // depth-normal map gradient (only at valid pixels; perturbation keeps validity)
    for (int p = 0; p < 3; ++p) {
        for (int c = 0; c < 3; ++c) {
            Image mp = n_map, mm = n_map;
            mp.at(p / 2, p % 2, c) += h;
            mm.at(p / 2, p % 2, c) -= h;
            double fd =
                (loss_normal_consistency(rt, mp) - loss_normal_consistency(rt, mm)) / (2 * h);
            CHECK(g_map.at(p / 2, p % 2, c) == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("loss_total") {
    LossWeights w;  // paper defaults
    CHECK(w.lambda_s == 1.0);
    CHECK(w.lambda_n == 0.02);
    CHECK(w.lambda_d == 1000.0);

    LossComponents zero;
    CHECK(loss_total(zero, w) == 0.0);

    LossComponents c{0.1, 0.05, 0.01, 0.0001};
    CHECK(loss_total(c, w) == doctest::Approx(0.2502).epsilon(1e-12));

    LossWeights w2 = w;
    w2.lambda_d *= 2.0;
    CHECK(loss_total(c, w2) - loss_total(c, w) == doctest::Approx(1000.0 * 0.0001));
}
