#include "doctest.h"

#include <cmath>

#include "d2dgs/deform.hpp"
#include "d2dgs/rng.hpp"

using namespace d2dgs;

namespace {

ControlPointSet make_controls(const std::vector<Vec3>& positions, double log_radius = 0.0) {
    ControlPointSet c;
    for (const Vec3& p : positions) c.points.push_back({p, log_radius});
    return c;
}

FieldConfig small_field_config() {
    FieldConfig cfg;
    cfg.hidden_width = 8;
    cfg.hidden_layers = 2;
    cfg.pe_position = 2;
    cfg.pe_time = 2;
    cfg.seed = 17;
    return cfg;
}

}  // namespace

TEST_CASE("predict_signals zero-init gives exact identity") {
    FieldConfig cfg = small_field_config();
    DeformationField field(cfg);
    ControlPointSet controls = make_controls({Vec3(0, 0, 0), Vec3(1, 2, 3), Vec3(-1, 0.5, 2)});

    ControlSignals s = predict_signals(field, controls, 0.37);
    REQUIRE(s.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(s.rotations[i].w == 1.0);
        CHECK(s.rotations[i].x == 0.0);
        CHECK(s.rotations[i].y == 0.0);
        CHECK(s.rotations[i].z == 0.0);
        CHECK(s.translations[i].norm() == 0.0);
        CHECK((s.rot_matrices[i] - Mat3::Identity()).norm() == 0.0);
    }
}

TEST_CASE("predict_signals deterministic and range-checked") {
    DeformationField field(small_field_config());
    ControlPointSet controls = make_controls({Vec3(0.3, -0.2, 1.0)});
    ControlSignals a = predict_signals(field, controls, 0.5);
    ControlSignals b = predict_signals(field, controls, 0.5);
    CHECK(a.rotations[0].vec() == b.rotations[0].vec());
    CHECK(a.translations[0] == b.translations[0]);

    CHECK_THROWS_WITH_AS(predict_signals(field, controls, 1.5), "timestamp out of range",
                         std::invalid_argument);
    CHECK_THROWS_AS(predict_signals(field, controls, -0.1), std::invalid_argument);
}

TEST_CASE("hand-set single-layer network forward oracle") {
    FieldConfig cfg;
    cfg.hidden_width = 2;
    cfg.hidden_layers = 1;
    cfg.pe_position = 0;
    cfg.pe_time = 0;
    cfg.activation = Activation::Softplus;
    DeformationField field(cfg);
    REQUIRE(field.input_dim() == 4);  // (x, y, z, t)

    // hidden: 2x4 weight, final: 7x2
    auto& layers = field.layers();
    REQUIRE(layers.size() == 2);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) layers[0].weight[r * 4 + c] = 0.1 * (r + 1) * (c + 1);
    layers[0].bias = {0.05, -0.02};
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < 2; ++c) layers[1].weight[r * 2 + c] = 0.01 * (r + 1) - 0.003 * c;
    for (int r = 0; r < 7; ++r) layers[1].bias[r] = 0.001 * r;

    Vec3 p(0.5, -1.0, 0.25);
    double t = 0.5;
    double out[7];
    field.forward(p, t, out);

    // independent scalar recomputation
    double in[4] = {0.5, -1.0, 0.25, 0.5};
    double hidden[2];
    for (int r = 0; r < 2; ++r) {
        double z = layers[0].bias[r];
        for (int c = 0; c < 4; ++c) z += layers[0].weight[r * 4 + c] * in[c];
        hidden[r] = std::log1p(std::exp(z));
    }
    for (int r = 0; r < 7; ++r) {
        double z = layers[1].bias[r];
        for (int c = 0; c < 2; ++c) z += layers[1].weight[r * 2 + c] * hidden[c];
        CHECK(out[r] == doctest::Approx(z).epsilon(1e-12));
    }
}

TEST_CASE("field backward matches finite differences") {
    FieldConfig cfg = small_field_config();
    DeformationField field(cfg);
    // perturb the zero-initialized final layer so gradients are nontrivial
    Rng rng(23);
    for (auto& l : field.layers())
        for (auto& w : l.weight) w += 0.05 * rng.normal();

    Vec3 p(0.4, -0.3, 0.8);
    double t = 0.6;
    double g_out[7];
    for (double& g : g_out) g = rng.normal();

    double out[7];
    std::vector<std::vector<double>> cache;
    field.forward_cached(p, t, out, cache);
    auto grads = field.zero_grads();
    Vec3 g_pos = field.backward(cache, g_out, grads);

    auto loss_at = [&](const DeformationField& f, const Vec3& pos) {
        double o[7];
        f.forward(pos, t, o);
        double l = 0.0;
        for (int i = 0; i < 7; ++i) l += o[i] * g_out[i];
        return l;
    };

    const double h = 1e-5;
    // a sample of weight entries in every layer
    for (size_t li = 0; li < field.layers().size(); ++li) {
        const Linear& lay = field.layers()[li];
        for (size_t wi = 0; wi < lay.weight.size(); wi += std::max<size_t>(1, lay.weight.size() / 7)) {
            DeformationField fp = field, fm = field;
            fp.layers()[li].weight[wi] += h;
            fm.layers()[li].weight[wi] -= h;
            double fd = (loss_at(fp, p) - loss_at(fm, p)) / (2 * h);
            CHECK(grads[li].weight[wi] == doctest::Approx(fd).epsilon(1e-4));
        }
        for (size_t bi = 0; bi < lay.bias.size(); bi += 3) {
            DeformationField fp = field, fm = field;
            fp.layers()[li].bias[bi] += h;
            fm.layers()[li].bias[bi] -= h;
            double fd = (loss_at(fp, p) - loss_at(fm, p)) / (2 * h);
            CHECK(grads[li].bias[bi] == doctest::Approx(fd).epsilon(1e-4));
        }
    }
    // position input gradient
    for (int c = 0; c < 3; ++c) {
        Vec3 pp = p, pm = p;
        pp[c] += h;
        pm[c] -= h;
        double fd = (loss_at(field, pp) - loss_at(field, pm)) / (2 * h);
        CHECK(g_pos[c] == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("bind_surfels basics and brute-force oracle") {
    std::vector<Surfel> surfels(1);
    surfels[0].center = Vec3(0, 0, 0);

    ControlPointSet one = make_controls({Vec3(0.5, 0, 0)});
    SkinningBinding b1 = bind_surfels(surfels, one, 1);
    CHECK(b1.index(0, 0) == 0);
    CHECK(b1.distance(0, 0) == doctest::Approx(0.5));

    ControlPointSet two = make_controls({Vec3(1, 0, 0), Vec3(2, 0, 0)});
    SkinningBinding b2 = bind_surfels(surfels, two, 1);
    CHECK(b2.index(0, 0) == 0);

    CHECK_THROWS_AS(bind_surfels(surfels, two, 3), std::invalid_argument);
    CHECK_THROWS_AS(bind_surfels(surfels, two, 0), std::invalid_argument);

    // 50 random surfels, 8 controls, K=3 vs exhaustive search
    Rng rng(31);
    std::vector<Surfel> many(50);
    for (auto& s : many) s.center = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    std::vector<Vec3> cpos(8);
    for (auto& p : cpos) p = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    ControlPointSet controls = make_controls(cpos);

    SkinningBinding b = bind_surfels(many, controls, 3);
    for (size_t j = 0; j < many.size(); ++j) {
        std::vector<std::pair<double, int>> all;
        for (int i = 0; i < 8; ++i) all.push_back({(cpos[i] - many[j].center).norm(), i});
        std::sort(all.begin(), all.end());
        for (int i = 0; i < 3; ++i) {
            CHECK(b.index(j, i) == all[i].second);
            CHECK(b.distance(j, i) == doctest::Approx(all[i].first).epsilon(1e-12));
        }
    }
}

TEST_CASE("skinning_weights examples") {
    std::vector<Surfel> surfels(1);

    // K=1 -> weight 1
    ControlPointSet one = make_controls({Vec3(0.7, 0, 0)});
    SkinningBinding b1 = bind_surfels(surfels, one, 1);
    SkinningWeights w1 = skinning_weights(b1, one);
    CHECK(w1.at(0, 0) == doctest::Approx(1.0));

    // equal distance, equal radius -> 0.5 each
    ControlPointSet sym = make_controls({Vec3(1, 0, 0), Vec3(-1, 0, 0)});
    SkinningBinding b2 = bind_surfels(surfels, sym, 2);
    SkinningWeights w2 = skinning_weights(b2, sym);
    CHECK(w2.at(0, 0) == doctest::Approx(0.5));
    CHECK(w2.at(0, 1) == doctest::Approx(0.5));

    // d=(1,2), o=(1,1): w_hat = (e^-0.5, e^-2)
    ControlPointSet asym = make_controls({Vec3(1, 0, 0), Vec3(2, 0, 0)});
    SkinningBinding b3 = bind_surfels(surfels, asym, 2);
    SkinningWeights w3 = skinning_weights(b3, asym);
    double wh0 = std::exp(-0.5), wh1 = std::exp(-2.0);
    CHECK(w3.at(0, 0) == doctest::Approx(wh0 / (wh0 + wh1)).epsilon(1e-12));
    CHECK(w3.at(0, 1) == doctest::Approx(wh1 / (wh0 + wh1)).epsilon(1e-12));
    CHECK(w3.at(0, 0) == doctest::Approx(0.8176).epsilon(1e-4));
    CHECK(w3.at(0, 1) == doctest::Approx(0.1824).epsilon(1e-4));

    // rows always sum to 1
    CHECK(w3.at(0, 0) + w3.at(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("skinning_weights underflow fallback") {
    std::vector<Surfel> surfels(1);
    surfels[0].center = Vec3(0, 0, 0);
    ControlPointSet far = make_controls({Vec3(1000, 0, 0), Vec3(0, 1000, 0)}, std::log(0.1));
    SkinningBinding b = bind_surfels(surfels, far, 2);
    SkinningWeights w = skinning_weights(b, far);
    CHECK(w.uniform_rows[0] == 1);
    CHECK(w.at(0, 0) == doctest::Approx(0.5));
    CHECK(w.at(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("warp_surfels identity and rigid motion") {
    Rng rng(41);
    std::vector<Surfel> surfels(5);
    for (auto& s : surfels) {
        s.center = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        s.rot_raw = Quat{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        if (s.rot_raw.norm() < 0.3) s.rot_raw = Quat::identity();
        s.log_scales = Vec2(-1, -1);
        s.sh.assign(3, 0.0);
    }
    std::vector<Vec3> cpos = {Vec3(1, 0, 0), Vec3(-1, 0.5, 0), Vec3(0, -1, 0.5), Vec3(0.2, 0.7, -0.5)};
    ControlPointSet controls = make_controls(cpos, std::log(1.5));
    SkinningBinding binding = bind_surfels(surfels, controls, 3);
    SkinningWeights weights = skinning_weights(binding, controls);

    SUBCASE("identity signals keep surfels") {
        ControlSignals id = ControlSignals::identity(controls);
        auto out = warp_surfels(surfels, binding, weights, id);
        for (size_t j = 0; j < surfels.size(); ++j) {
            CHECK((out[j].center - surfels[j].center).norm() < 1e-6);
            double d = std::abs(out[j].orientation().dot(surfels[j].orientation()));
            CHECK(d == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(out[j].log_scales == surfels[j].log_scales);
            CHECK(out[j].opacity_logit == surfels[j].opacity_logit);
        }
    }

    SUBCASE("shared rigid motion moves every surfel rigidly") {
        double ang = 0.8;
        Quat r{std::cos(ang / 2), 0, std::sin(ang / 2) * 1, 0};
        Mat3 R = quat_to_matrix(r);
        Vec3 T(0.3, -0.2, 0.5);
        ControlSignals sig;
        for (const Vec3& p : cpos) {
            sig.positions.push_back(p);
            sig.rotations.push_back(r);
            sig.rot_matrices.push_back(R);
            sig.translations.push_back((R - Mat3::Identity()) * p + T);
        }
        auto out = warp_surfels(surfels, binding, weights, sig);
        for (size_t j = 0; j < surfels.size(); ++j) {
            Vec3 expect = R * surfels[j].center + T;
            CHECK((out[j].center - expect).norm() < 1e-9);
            Quat qe = quat_mul(r, surfels[j].orientation());
            CHECK(std::abs(out[j].orientation().dot(qe)) == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("warp_surfels degenerate blend error") {
    std::vector<Surfel> surfels(1);
    SkinningBinding binding;
    binding.k = 3;
    binding.indices = {0, 1, 2};
    binding.distances = {1.0, 1.0, 1.0};
    SkinningWeights weights;
    weights.k = 3;
    weights.values = {0.0, 0.5, 0.5};
    weights.uniform_rows = {0};

    ControlSignals sig;
    sig.positions = {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
    sig.rotations = {Quat{1, 0, 0, 0}, Quat{0, 1, 0, 0}, Quat{0, -1, 0, 0}};
    sig.translations.assign(3, Vec3::Zero());
    for (const Quat& q : sig.rotations) sig.rot_matrices.push_back(quat_to_matrix(q));

    CHECK_THROWS_WITH_AS(warp_surfels(surfels, binding, weights, sig),
                         "degenerate quaternion blend", std::runtime_error);
}

TEST_CASE("warp_backward matches finite differences") {
    Rng rng(53);
    const int ns = 3, nc = 4, K = 2;
    std::vector<Surfel> surfels(ns);
    for (auto& s : surfels) {
        s.center = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        s.rot_raw = Quat{1.0 + 0.3 * rng.normal(), 0.3 * rng.normal(), 0.3 * rng.normal(),
                         0.3 * rng.normal()};
        s.sh.assign(3, 0.0);
    }
    std::vector<Vec3> cpos(nc);
    for (auto& p : cpos) p = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    ControlPointSet controls = make_controls(cpos, std::log(0.9));
    SkinningBinding binding = bind_surfels(surfels, controls, K);
    SkinningWeights weights = skinning_weights(binding, controls);

    ControlSignals sig;
    for (int i = 0; i < nc; ++i) {
        Quat r{1.0 + 0.2 * rng.normal(), 0.2 * rng.normal(), 0.2 * rng.normal(), 0.2 * rng.normal()};
        r = r.normalized();
        sig.positions.push_back(cpos[i]);
        sig.rotations.push_back(r);
        sig.rot_matrices.push_back(quat_to_matrix(r));
        sig.translations.push_back(Vec3(0.1 * rng.normal(), 0.1 * rng.normal(), 0.1 * rng.normal()));
    }

    // random linear loss over outputs
    std::vector<Vec3> lc(ns);
    std::vector<Vec4> lq(ns);
    for (auto& v : lc) v = Vec3(rng.normal(), rng.normal(), rng.normal());
    for (auto& v : lq) v = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());

    auto loss_of = [&](const std::vector<Surfel>& sf, const SkinningWeights& w,
                       const ControlSignals& sg) {
        auto out = warp_surfels(sf, binding, w, sg);
        double l = 0.0;
        for (int j = 0; j < ns; ++j) {
            l += lc[j].dot(out[j].center);
            l += lq[j].dot(out[j].rot_raw.vec());
        }
        return l;
    };

    WarpGrads up;
    up.g_center = lc;
    up.g_rot_raw = lq;
    std::vector<Vec3> g_center(ns, Vec3::Zero());
    std::vector<Vec4> g_rot(ns, Vec4::Zero());
    std::vector<double> g_w(ns * K, 0.0);
    std::vector<Vec3> g_cpos(nc, Vec3::Zero());
    SignalGrads g_sig;
    g_sig.rotations.assign(nc, Vec4::Zero());
    g_sig.translations.assign(nc, Vec3::Zero());
    warp_backward(surfels, binding, weights, sig, up, g_center, g_rot, g_w, g_cpos, g_sig);

    const double h = 1e-6;
    for (int j = 0; j < ns; ++j) {
        for (int c = 0; c < 3; ++c) {
            auto sp = surfels, sm = surfels;
            sp[j].center[c] += h;
            sm[j].center[c] -= h;
            double fd = (loss_of(sp, weights, sig) - loss_of(sm, weights, sig)) / (2 * h);
            CHECK(g_center[j][c] == doctest::Approx(fd).epsilon(1e-4));
        }
        for (int c = 0; c < 4; ++c) {
            auto sp = surfels, sm = surfels;
            Vec4 vp = sp[j].rot_raw.vec(), vm = sm[j].rot_raw.vec();
            vp[c] += h;
            vm[c] -= h;
            sp[j].rot_raw = Quat::from_vec(vp);
            sm[j].rot_raw = Quat::from_vec(vm);
            double fd = (loss_of(sp, weights, sig) - loss_of(sm, weights, sig)) / (2 * h);
            CHECK(g_rot[j][c] == doctest::Approx(fd).epsilon(1e-4));
        }
    }
    for (int j = 0; j < ns; ++j)
        for (int i = 0; i < K; ++i) {
            auto wp = weights, wm = weights;
            wp.values[j * K + i] += h;
            wm.values[j * K + i] -= h;
            double fd = (loss_of(surfels, wp, sig) - loss_of(surfels, wm, sig)) / (2 * h);
            CHECK(g_w[j * K + i] == doctest::Approx(fd).epsilon(1e-4));
        }
    for (int i = 0; i < nc; ++i) {
        for (int c = 0; c < 3; ++c) {
            auto sp = sig, sm = sig;
            sp.positions[i][c] += h;
            sm.positions[i][c] -= h;
            double fd = (loss_of(surfels, weights, sp) - loss_of(surfels, weights, sm)) / (2 * h);
            CHECK(g_cpos[i][c] == doctest::Approx(fd).epsilon(1e-4));
        }
        for (int c = 0; c < 3; ++c) {
            auto sp = sig, sm = sig;
            sp.translations[i][c] += h;
            sm.translations[i][c] -= h;
            double fd = (loss_of(surfels, weights, sp) - loss_of(surfels, weights, sm)) / (2 * h);
            CHECK(g_sig.translations[i][c] == doctest::Approx(fd).epsilon(1e-4));
        }
        for (int c = 0; c < 4; ++c) {
            auto sp = sig, sm = sig;
            Vec4 vp = sp.rotations[i].vec(), vm = sm.rotations[i].vec();
            vp[c] += h;
            vm[c] -= h;
            sp.rotations[i] = Quat::from_vec(vp);
            sm.rotations[i] = Quat::from_vec(vm);
            sp.rot_matrices[i] = quat_to_matrix(sp.rotations[i]);
            sm.rot_matrices[i] = quat_to_matrix(sm.rotations[i]);
            double fd = (loss_of(surfels, weights, sp) - loss_of(surfels, weights, sm)) / (2 * h);
            CHECK(g_sig.rotations[i][c] == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("skinning_weights_backward matches finite differences") {
    Rng rng(67);
    const int ns = 4, nc = 5, K = 3;
    std::vector<Surfel> surfels(ns);
    for (auto& s : surfels)
        s.center = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    std::vector<Vec3> cpos(nc);
    for (auto& p : cpos) p = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    ControlPointSet controls = make_controls(cpos, 0.0);
    for (int i = 0; i < nc; ++i) controls.points[i].log_radius = 0.2 * rng.normal();

    SkinningBinding binding = bind_surfels(surfels, controls, K);
    std::vector<double> g_w(ns * K);
    for (double& g : g_w) g = rng.normal();

    auto loss_of = [&](const ControlPointSet& ctrl) {
        SkinningWeights w = skinning_weights(binding, ctrl);
        double l = 0.0;
        for (size_t i = 0; i < w.values.size(); ++i) l += g_w[i] * w.values[i];
        return l;
    };

    SkinningWeights weights = skinning_weights(binding, controls);
    std::vector<double> g_lr(nc, 0.0);
    skinning_weights_backward(binding, controls, weights, g_w, g_lr);

    const double h = 1e-6;
    for (int i = 0; i < nc; ++i) {
        ControlPointSet cp = controls, cm = controls;
        cp.points[i].log_radius += h;
        cm.points[i].log_radius -= h;
        double fd = (loss_of(cp) - loss_of(cm)) / (2 * h);
        CHECK(g_lr[i] == doctest::Approx(fd).epsilon(1e-4));
    }
}
