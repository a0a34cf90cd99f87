#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "d2dgs/kdtree.hpp"
#include "d2dgs/metrics.hpp"
#include "doctest.h"

using namespace d2dgs;

namespace {

TriangleMesh quad_mesh(const Vec3& origin, double side) {
    TriangleMesh m;
    m.vertices = {origin, origin + Vec3(side, 0, 0), origin + Vec3(side, side, 0),
                  origin + Vec3(0, side, 0)};
    m.triangles = {{0, 1, 2}, {0, 2, 3}};
    return m;
}

PointSample random_cloud(int n, uint64_t seed, double spread = 1.0) {
    Rng rng(seed);
    PointSample s;
    for (int i = 0; i < n; ++i)
        s.points.push_back(Vec3(rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                                rng.uniform(-spread, spread)));
    return s;
}

}  // namespace

TEST_CASE("psnr oracle values") {
    Image a(8, 8, 3, 0.5), b(8, 8, 3, 0.5);
    CHECK(std::isinf(psnr(a, b)));
    CHECK(psnr(a, b) > 0);

    // Uniform error of 0.1 everywhere: MSE = 0.01 -> 20 dB.
    Image c(8, 8, 3, 0.6);
    CHECK(psnr(a, c) == doctest::Approx(20.0).epsilon(1e-12));

    // 0 vs 0.5: MSE = 0.25 -> 10*log10(4).
    Image zero(8, 8, 3, 0.0);
    CHECK(psnr(zero, a) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-12));

    Image wrong(8, 9, 3, 0.5);
    CHECK_THROWS_AS(psnr(a, wrong), std::invalid_argument);
}

TEST_CASE("ssim constant-image closed form") {
    Image a(16, 16, 1, 0.2), b(16, 16, 1, 0.4);
    // Zero variance everywhere: SSIM = (2*mu_x*mu_y + C1)/(mu_x^2 + mu_y^2 + C1).
    const double expect = (2.0 * 0.2 * 0.4 + 1e-4) / (0.04 + 0.16 + 1e-4);
    CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-10));
    CHECK(ssim(b, a) == doctest::Approx(ssim(a, b)).epsilon(1e-14));
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sample_mesh places points on the surface") {
    TriangleMesh tri;
    tri.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    tri.triangles = {{0, 1, 2}};

    const PointSample s = sample_mesh(tri, 500, 7);
    REQUIRE(s.size() == 500);
    for (const Vec3& p : s.points) {
        CHECK(p.z() == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(p.x() >= -1e-12);
        CHECK(p.y() >= -1e-12);
        CHECK(p.x() + p.y() <= 1.0 + 1e-12);
    }

    const PointSample again = sample_mesh(tri, 500, 7);
    for (size_t i = 0; i < s.size(); ++i) CHECK(s.points[i] == again.points[i]);
    const PointSample other = sample_mesh(tri, 500, 8);
    bool all_same = true;
    for (size_t i = 0; i < s.size(); ++i)
        if (s.points[i] != other.points[i]) all_same = false;
    CHECK(!all_same);
}

TEST_CASE("sample_mesh is area weighted") {
    // Two triangles with area ratio 1:3; the second sits in the z=5 plane.
    TriangleMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0),
                  Vec3(0, 0, 5), Vec3(3, 0, 5), Vec3(0, 1, 5)};
    m.triangles = {{0, 1, 2}, {3, 4, 5}};

    const PointSample s = sample_mesh(m, 4000, 11);
    int hi = 0;
    for (const Vec3& p : s.points)
        if (p.z() > 2.5) ++hi;
    CHECK(hi > 3000 - 150);
    CHECK(hi < 3000 + 150);

    TriangleMesh empty;
    CHECK_THROWS_AS(sample_mesh(empty, 10, 0), std::invalid_argument);
    TriangleMesh degenerate;
    degenerate.vertices = {Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2)};
    degenerate.triangles = {{0, 1, 2}};
    CHECK_THROWS_AS(sample_mesh(degenerate, 10, 0), std::invalid_argument);
}

TEST_CASE("chamfer oracle and brute-force agreement") {
    PointSample a, b;
    a.points = {Vec3(0, 0, 0)};
    b.points = {Vec3(1, 0, 0)};
    CHECK(chamfer(a, b) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(chamfer(a, a) == doctest::Approx(0.0).epsilon(1e-15));

    const PointSample x = random_cloud(200, 3);
    const PointSample y = random_cloud(180, 4);
    double brute = 0.0;
    for (const Vec3& p : x.points) {
        double best = 1e300;
        for (const Vec3& q : y.points) best = std::min(best, (p - q).norm());
        brute += best / double(x.size());
    }
    for (const Vec3& q : y.points) {
        double best = 1e300;
        for (const Vec3& p : x.points) best = std::min(best, (p - q).norm());
        brute += best / double(y.size());
    }
    CHECK(chamfer(x, y) == doctest::Approx(brute).epsilon(1e-9));
    CHECK(chamfer(y, x) == doctest::Approx(chamfer(x, y)).epsilon(1e-12));

    PointSample none;
    CHECK_THROWS_AS(chamfer(none, a), std::invalid_argument);
}

TEST_CASE("emd exact solver") {
    PointSample a, b;
    a.points = {Vec3(0, 0, 0)};
    b.points = {Vec3(1, 0, 0)};
    EmdResult r = emd(a, b);
    CHECK(r.value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.mode == "exact");
    CHECK(emd(a, a).value == doctest::Approx(0.0).epsilon(1e-15));

    SUBCASE("beats greedy pairing") {
        // Greedy from the left matches 0->1, stranding 2 at cost 3; optimal
        // crosses: (0->1, 2->2) ... two points each on a line.
        PointSample p, q;
        p.points = {Vec3(0, 0, 0), Vec3(2, 0, 0)};
        q.points = {Vec3(1, 0, 0), Vec3(2.1, 0, 0)};
        // Optimal: |0-1| + |2-2.1| = 1.1, mean 0.55.
        CHECK(emd(p, q).value == doctest::Approx(0.55).epsilon(1e-12));
    }

    SUBCASE("permutation and order invariance") {
        PointSample x = random_cloud(64, 5);
        PointSample y = random_cloud(64, 6);
        PointSample y_shuf = y;
        Rng rng(9);
        for (size_t i = y_shuf.points.size(); i > 1; --i)
            std::swap(y_shuf.points[i - 1], y_shuf.points[rng.uniform_index(i)]);
        CHECK(emd(x, y).value == doctest::Approx(emd(x, y_shuf).value).epsilon(1e-9));
        CHECK(emd(x, y).value == doctest::Approx(emd(y, x).value).epsilon(1e-12));
    }

    SUBCASE("rigid motion invariance") {
        PointSample x = random_cloud(96, 12);
        PointSample y = random_cloud(96, 13);
        const double base = emd(x, y).value;
        const double c = std::cos(0.7), s = std::sin(0.7);
        Mat3 R;
        R << c, -s, 0, s, c, 0, 0, 0, 1;
        const Vec3 t(0.4, -0.2, 1.5);
        PointSample xr = x, yr = y;
        for (Vec3& p : xr.points) p = R * p + t;
        for (Vec3& p : yr.points) p = R * p + t;
        CHECK(emd(xr, yr).value == doctest::Approx(base).epsilon(1e-9));
    }

    SUBCASE("unequal counts subsample to the smaller set") {
        PointSample p, q;
        p.points = {Vec3(0, 0, 0)};
        q.points = {Vec3(3, 0, 0), Vec3(100, 0, 0)};
        CHECK(emd(p, q).value == doctest::Approx(3.0).epsilon(1e-12));
    }

    PointSample none;
    CHECK_THROWS_AS(emd(none, a), std::invalid_argument);
}

TEST_CASE("emd auction path") {
    // b = a + t has EMD exactly |t|: the identity matching attains it and the
    // centroid displacement is a lower bound.
    PointSample a = random_cloud(600, 21);
    PointSample b = a;
    const Vec3 t(0.3, 0, 0);
    for (Vec3& p : b.points) p += t;

    EmdResult r = emd(a, b);
    CHECK(r.mode == "auction");
    CHECK(r.value >= 0.3 - 1e-9);
    CHECK(r.value == doctest::Approx(0.3).epsilon(2e-3));
    CHECK(emd(b, a).value == doctest::Approx(r.value).epsilon(1e-12));

    SUBCASE("cd is bounded by twice the emd") {
        PointSample x = random_cloud(700, 31);
        PointSample y = random_cloud(700, 32);
        CHECK(chamfer(x, y) <= 2.0 * emd(x, y).value + 1e-9);
    }
}

TEST_CASE("emd subsampled path") {
    PointSample a = random_cloud(5000, 41);
    PointSample b = a;
    for (Vec3& p : b.points) p += Vec3(0, 0.25, 0);
    EmdResult r = emd(a, b);
    CHECK(r.mode == "auction-subsampled");
    CHECK(r.value == doctest::Approx(0.25).epsilon(2e-3));
}

TEST_CASE("evaluate_sequence") {
    const TriangleMesh quad = quad_mesh(Vec3(0, 0, 0), 1.0);
    std::vector<double> ts = {0.0, 0.5, 1.0};
    std::vector<TriangleMesh> pred = {quad, quad, quad};
    std::vector<TriangleMesh> gt = pred;
    std::vector<Image> imgs(3, Image(16, 16, 3, 0.5));

    SequenceReport rep = evaluate_sequence(ts, pred, gt, imgs, imgs);
    REQUIRE(rep.rows.size() == 3);
    CHECK(rep.emd_mode == "exact");
    double cd_sum = 0.0;
    for (size_t i = 0; i < 3; ++i) {
        CHECK(rep.rows[i].t == ts[i]);
        // Identical geometry sampled with different seeds: only the sampling
        // noise floor remains (spacing ~ 1/sqrt(10000) on a unit quad).
        CHECK(rep.rows[i].cd < 0.05);
        CHECK(rep.rows[i].emd < 0.15);
        CHECK(std::isinf(rep.rows[i].psnr));
        CHECK(rep.rows[i].ssim == doctest::Approx(1.0).epsilon(1e-12));
        cd_sum += rep.rows[i].cd;
    }
    CHECK(rep.mean.cd == doctest::Approx(cd_sum / 3.0).epsilon(1e-12));
    CHECK(std::isnan(rep.mean.t));

    SUBCASE("repeat runs are identical") {
        SequenceReport again = evaluate_sequence(ts, pred, gt, imgs, imgs);
        for (size_t i = 0; i < 3; ++i) {
            CHECK(again.rows[i].cd == rep.rows[i].cd);
            CHECK(again.rows[i].emd == rep.rows[i].emd);
        }
    }

    SUBCASE("missing images report nan") {
        SequenceReport r2 = evaluate_sequence(ts, pred, gt, {}, {});
        CHECK(std::isnan(r2.rows[0].psnr));
        CHECK(std::isnan(r2.rows[0].ssim));
        CHECK(std::isnan(r2.mean.psnr));
        CHECK(r2.rows[0].cd == rep.rows[0].cd);
    }

    SUBCASE("offset geometry is detected") {
        std::vector<TriangleMesh> far = {quad_mesh(Vec3(2, 0, 0), 1.0), quad, quad};
        SequenceReport r3 = evaluate_sequence(ts, far, gt, {}, {});
        CHECK(r3.rows[0].cd > 1.0);
        CHECK(r3.rows[0].emd > 1.0);
        CHECK(r3.rows[1].cd < 0.05);
    }

    SUBCASE("length mismatches throw") {
        CHECK_THROWS_AS(evaluate_sequence({0.0, 1.0}, pred, gt, {}, {}), std::invalid_argument);
        CHECK_THROWS_AS(evaluate_sequence(ts, pred, gt, imgs, {}), std::invalid_argument);
        std::vector<Image> two(2, Image(16, 16, 3, 0.5));
        CHECK_THROWS_AS(evaluate_sequence(ts, pred, gt, two, two), std::invalid_argument);
        CHECK_THROWS_AS(evaluate_sequence({}, {}, {}, {}, {}), std::invalid_argument);
    }
}

TEST_CASE("report csv and text formatting") {
    SequenceReport rep;
    rep.rows.push_back({0.0, 0.125, 0.0625, std::numeric_limits<double>::infinity(), 1.0});
    rep.rows.push_back({1.0, 0.25, 0.125, std::numeric_limits<double>::quiet_NaN(),
                        std::numeric_limits<double>::quiet_NaN()});
    rep.mean = {std::numeric_limits<double>::quiet_NaN(), 0.1875, 0.09375,
                std::numeric_limits<double>::infinity(), 1.0};
    rep.emd_mode = "exact";

    const std::string path = "test_metrics_report.csv";
    write_report_csv(path, rep);
    std::ifstream f(path);
    REQUIRE(f.good());
    std::string line;
    std::getline(f, line);
    CHECK(line == "t,cd,emd,psnr,ssim");
    std::getline(f, line);
    CHECK(line == "0,0.125,0.0625,inf,1");
    std::getline(f, line);
    CHECK(line == "1,0.25,0.125,nan,nan");
    std::getline(f, line);
    CHECK(line == "mean,0.1875,0.09375,inf,1");
    CHECK(!std::getline(f, line));
    std::remove(path.c_str());

    const std::string text = format_report(rep);
    CHECK(text.find("mean") != std::string::npos);
    CHECK(text.find("emd mode: exact") != std::string::npos);
    CHECK(text.find("0.125000") != std::string::npos);
}
