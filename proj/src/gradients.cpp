#include "d2dgs/gradients.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "d2dgs/sh.hpp"

namespace d2dgs {

GradientSet GradientSet::zeros_like(const SceneModel& scene, const DeformationField& field) {
    GradientSet g;
    size_t s = scene.surfels.size();
    g.center.assign(s, Vec3::Zero());
    g.rot_raw.assign(s, Vec4::Zero());
    g.log_scales.assign(s, Vec2::Zero());
    g.opacity_logit.assign(s, 0.0);
    g.sh.resize(s);
    for (size_t i = 0; i < s; ++i) g.sh[i].assign(scene.surfels[i].sh.size(), 0.0);
    g.control_position.assign(scene.controls.size(), Vec3::Zero());
    g.control_log_radius.assign(scene.controls.size(), 0.0);
    g.field = field.zero_grads();
    return g;
}

void GradientSet::scale(double s) {
    for (Vec3& v : center) v *= s;
    for (Vec4& v : rot_raw) v *= s;
    for (Vec2& v : log_scales) v *= s;
    for (double& v : opacity_logit) v *= s;
    for (auto& row : sh)
        for (double& v : row) v *= s;
    for (Vec3& v : control_position) v *= s;
    for (double& v : control_log_radius) v *= s;
    for (Linear& l : field) {
        for (double& v : l.weight) v *= s;
        for (double& v : l.bias) v *= s;
    }
}

void GradientSet::check_finite() const {
    auto fail = [](const char* group) {
        throw std::runtime_error(std::string("non-finite gradient in group ") + group);
    };
    for (const Vec3& v : center)
        if (!v.allFinite()) fail("surfel centers");
    for (const Vec4& v : rot_raw)
        if (!v.allFinite()) fail("surfel rotations");
    for (const Vec2& v : log_scales)
        if (!v.allFinite()) fail("surfel scales");
    for (double v : opacity_logit)
        if (!std::isfinite(v)) fail("surfel opacities");
    for (const auto& row : sh)
        for (double v : row)
            if (!std::isfinite(v)) fail("surfel sh");
    for (const Vec3& v : control_position)
        if (!v.allFinite()) fail("control positions");
    for (double v : control_log_radius)
        if (!std::isfinite(v)) fail("control radii");
    for (const Linear& l : field) {
        for (double v : l.weight)
            if (!std::isfinite(v)) fail("deformation field");
        for (double v : l.bias)
            if (!std::isfinite(v)) fail("deformation field");
    }
}

namespace {

LossComponents loss_forward(const RenderTargets& rt, const Image& depth_normal, const Image& truth) {
    LossComponents c;
    c.l1 = loss_l1(rt.rgb, truth);
    c.ssim = loss_ssim(rt.rgb, truth);
    c.ld = loss_depth_distortion(rt);
    c.ln = loss_normal_consistency(rt, depth_normal);
    return c;
}

void require_inputs(const EvalContext& ctx) {
    if (!ctx.binding) throw std::invalid_argument("training loss: missing skinning binding");
    if (!ctx.truth) throw std::invalid_argument("training loss: missing ground-truth image");
}

}  // namespace

LossComponents training_forward(const SceneModel& scene, const DeformationField& field,
                                const EvalContext& ctx, double* total) {
    require_inputs(ctx);
    SkinningWeights weights = skinning_weights(*ctx.binding, scene.controls);
    ControlSignals signals = predict_signals(field, scene.controls, ctx.camera.time);
    std::vector<Surfel> deformed = warp_surfels(scene.surfels, *ctx.binding, weights, signals);

    RenderConfig rc = ctx.render;
    rc.keep_records = true;
    RenderTargets rt = render_view(deformed, ctx.camera, rc);
    Image depth_normal = normal_from_depth(rt.depth_expected, ctx.camera);

    LossComponents c = loss_forward(rt, depth_normal, *ctx.truth);
    if (total) *total = loss_total(c, ctx.weights);
    return c;
}

LossOutputs compute_gradients(const SceneModel& scene, const DeformationField& field,
                              const EvalContext& ctx) {
    require_inputs(ctx);
    const CameraView& cam = ctx.camera;
    cam.validate();
    const size_t n_surfels = scene.surfels.size();
    const size_t n_controls = scene.controls.size();
    const double t = cam.time;

    LossOutputs out;
    out.grads = GradientSet::zeros_like(scene, field);

    // --- forward, keeping everything backward needs ---
    SkinningWeights weights = skinning_weights(*ctx.binding, scene.controls);

    std::vector<std::array<double, DeformationField::kOutputDim>> raws(n_controls);
    std::vector<std::vector<std::vector<double>>> caches(n_controls);
    ControlSignals signals;
    signals.positions.resize(n_controls);
    signals.rotations.resize(n_controls);
    signals.translations.resize(n_controls);
    signals.rot_matrices.resize(n_controls);
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("timestamp out of range");
    for (size_t i = 0; i < n_controls; ++i) {
        signals.positions[i] = scene.controls.points[i].position;
        field.forward_cached(scene.controls.points[i].position, t, raws[i].data(), caches[i]);
        decode_signal(raws[i].data(), signals.rotations[i], signals.translations[i]);
        signals.rot_matrices[i] = quat_to_matrix(signals.rotations[i]);
    }

    std::vector<Surfel> deformed = warp_surfels(scene.surfels, *ctx.binding, weights, signals);

    RenderConfig rc = ctx.render;
    rc.keep_records = true;
    RenderTargets rt = render_view(deformed, cam, rc);
    Image depth_normal = normal_from_depth(rt.depth_expected, cam);

    out.components = loss_forward(rt, depth_normal, *ctx.truth);
    out.total = loss_total(out.components, ctx.weights);

    // --- loss adjoints on the render outputs ---
    Image g_rgb(cam.height, cam.width, 3);
    loss_l1_backward(rt.rgb, *ctx.truth, 1.0, g_rgb);
    if (ctx.weights.lambda_s != 0.0) loss_ssim_backward(rt.rgb, *ctx.truth, ctx.weights.lambda_s, g_rgb);

    const size_t n_px = static_cast<size_t>(cam.width) * cam.height;
    std::vector<std::vector<double>> g_w(n_px), g_z(n_px);
    std::vector<std::vector<Vec3>> g_nfrag(n_px);
    for (size_t p = 0; p < n_px; ++p) {
        g_w[p].assign(rt.records[p].size(), 0.0);
        g_z[p].assign(rt.records[p].size(), 0.0);
        g_nfrag[p].assign(rt.records[p].size(), Vec3::Zero());
    }
    Image g_depth(cam.height, cam.width, 1);
    if (ctx.weights.lambda_d != 0.0) loss_depth_distortion_backward(rt, ctx.weights.lambda_d, g_w, g_z);
    if (ctx.weights.lambda_n != 0.0) {
        Image g_dn(cam.height, cam.width, 3);
        loss_normal_consistency_backward(rt, depth_normal, ctx.weights.lambda_n, g_w, g_nfrag, g_dn);
        g_depth = normal_from_depth_backward(rt.depth_expected, cam, g_dn);
    }

    // --- renderer backward: pixels -> per-surfel camera-space gradients ---
    std::vector<ViewSurfel> vs = prepare_view_surfels(deformed, cam);

    std::vector<Vec3> g_center_c(n_surfels, Vec3::Zero());
    std::vector<Vec3> g_tu(n_surfels, Vec3::Zero());
    std::vector<Vec3> g_tv(n_surfels, Vec3::Zero());
    std::vector<Vec3> g_tw(n_surfels, Vec3::Zero());
    std::vector<Vec3> g_color_vs(n_surfels, Vec3::Zero());
    std::vector<Vec3> g_normal_vs(n_surfels, Vec3::Zero());
    std::vector<double> g_opacity(n_surfels, 0.0);

    const double sig2 = 2.0 * rc.screen_sigma * rc.screen_sigma;
    std::vector<double> transmit;
    for (int py = 0; py < cam.height; ++py) {
        for (int px = 0; px < cam.width; ++px) {
            size_t p = static_cast<size_t>(py) * cam.width + px;
            const std::vector<Fragment>& frags = rt.records[p];
            const Vec3 grgb(g_rgb.at(py, px, 0), g_rgb.at(py, px, 1), g_rgb.at(py, px, 2));
            if (frags.empty()) continue;  // pure background: no parameter touches this pixel
            const double gde = g_depth.at(py, px, 0);
            const Vec3 dir = cam.pixel_ray(px, py);

            // Transmittance before each processed fragment, as in compositing.
            double T = 1.0;
            transmit.assign(frags.size(), 0.0);
            size_t processed = 0;
            double alpha = 0.0, depth_acc = 0.0;
            for (size_t k = 0; k < frags.size(); ++k) {
                if (T < rc.early_stop) break;
                transmit[k] = T;
                alpha += frags[k].weight;
                depth_acc += frags[k].weight * frags[k].z;
                T *= (1.0 - frags[k].a);
                processed = k + 1;
            }
            const double A = std::max(alpha, 1e-8);
            const bool alpha_live = alpha > 1e-8;

            // dL/da_k = g_w_k T_k - (sum_{m>k} g_w_m w_m + g_T T_N) / (1 - a_k)
            double acc = grgb.dot(rc.background) * T;
            for (size_t k = processed; k-- > 0;) {
                const Fragment& f = frags[k];
                double gw = g_w[p][k] + grgb.dot(f.color);
                if (gde != 0.0) gw += gde * (f.z / A - (alpha_live ? depth_acc / (A * A) : 0.0));
                double gz = g_z[p][k] + gde * (f.weight / A);

                g_color_vs[f.surfel] += f.weight * grgb;
                g_normal_vs[f.surfel] += g_nfrag[p][k];

                double ga = gw * transmit[k] - acc / std::max(1.0 - f.a, 1e-12);
                acc += gw * f.weight;
                if (ga == 0.0 && gz == 0.0) continue;

                // Redo the intersection chain for this fragment.
                const ViewSurfel& s = vs[f.surfel];
                const int i = f.surfel;
                const double denom = dir.dot(s.tw);
                const double tau = s.center.dot(s.tw) / denom;
                const Vec3 rel = tau * dir - s.center;
                const double u = rel.dot(s.tu) / s.su;
                const double v = rel.dot(s.tv) / s.sv;
                const double g_obj = std::exp(-0.5 * (u * u + v * v));

                double rho_sq = std::numeric_limits<double>::infinity();
                double dx = 0.0, dy = 0.0;
                if (s.center.z() > rc.near_plane) {
                    double cpx = cam.fx * s.center.x() / s.center.z() + cam.cx;
                    double cpy = cam.fy * s.center.y() / s.center.z() + cam.cy;
                    dx = cpx - (px + 0.5);
                    dy = cpy - (py + 0.5);
                    rho_sq = dx * dx + dy * dy;
                }
                const double g_scr = std::isfinite(rho_sq) ? std::exp(-rho_sq / sig2) : 0.0;
                const double geff = std::max(g_obj, g_scr);

                g_opacity[i] += ga * geff;
                const double gG = ga * s.opacity;

                double gu = 0.0, gv = 0.0;
                if (g_obj >= g_scr) {
                    gu = -u * g_obj * gG;
                    gv = -v * g_obj * gG;
                } else {
                    // Screen-space floor: gradient flows through the projected center.
                    const double grho2 = -g_scr / sig2 * gG;
                    const double gpx = grho2 * 2.0 * dx;
                    const double gpy = grho2 * 2.0 * dy;
                    const double zc = s.center.z();
                    g_center_c[i] += Vec3(cam.fx / zc * gpx, cam.fy / zc * gpy,
                                          -(cam.fx * s.center.x() * gpx + cam.fy * s.center.y() * gpy) /
                                              (zc * zc));
                }

                const double gtau =
                    gz * dir.z() + gu * dir.dot(s.tu) / s.su + gv * dir.dot(s.tv) / s.sv;
                g_center_c[i] += gtau / denom * s.tw - gu / s.su * s.tu - gv / s.sv * s.tv;
                g_tu[i] += gu / s.su * rel;
                g_tv[i] += gv / s.sv * rel;
                g_tw[i] += -gtau / denom * rel;
                out.grads.log_scales[i][0] += -u * gu;
                out.grads.log_scales[i][1] += -v * gv;
            }
        }
    }

    // --- per-surfel view quantities back to deformed parameters ---
    std::vector<Vec3> g_center_w(n_surfels, Vec3::Zero());
    std::vector<Vec4> g_rot_raw_d(n_surfels, Vec4::Zero());
    const Mat3 rot_c2w = cam.rot_w2c.transpose();
    const Vec3 cam_pos = cam.cam_position();
    for (size_t i = 0; i < n_surfels; ++i) {
        const ViewSurfel& s = vs[i];
        const Surfel& d = deformed[i];

        const double a = s.opacity;
        out.grads.opacity_logit[i] += g_opacity[i] * a * (1.0 - a);

        if (!g_color_vs[i].isZero(0.0)) {
            Vec3 off = d.center - cam_pos;
            const double nn = off.norm();
            const Vec3 dir = nn > 0.0 ? Vec3(off / nn) : Vec3(0.0, 0.0, 1.0);
            const int nb = d.sh_basis();
            const int degree = static_cast<int>(std::lround(std::sqrt(static_cast<double>(nb)))) - 1;
            double basis[16];
            Vec3 dbasis[16];
            sh::eval_basis(degree, dir, basis);
            sh::eval_basis_grad(degree, dir, dbasis);
            Vec3 gdir = Vec3::Zero();
            for (int ch = 0; ch < 3; ++ch) {
                double acc = 0.5;
                for (int b = 0; b < nb; ++b) acc += d.sh[ch * nb + b] * basis[b];
                if (acc <= 0.0 || acc >= 1.0) continue;  // clamped channel
                const double gc = g_color_vs[i][ch];
                for (int b = 0; b < nb; ++b) {
                    out.grads.sh[i][ch * nb + b] += gc * basis[b];
                    gdir += gc * d.sh[ch * nb + b] * dbasis[b];
                }
            }
            if (nn > 0.0) g_center_w[i] += (gdir - dir * dir.dot(gdir)) / nn;
        }

        const double flip = (s.tw.dot(s.center) > 0.0) ? -1.0 : 1.0;
        const Vec3 gtw_total = g_tw[i] + flip * g_normal_vs[i];

        Mat3 g_rot;
        g_rot.col(0) = rot_c2w * g_tu[i];
        g_rot.col(1) = rot_c2w * g_tv[i];
        g_rot.col(2) = rot_c2w * gtw_total;
        const Vec4 g_qhat = quat_to_matrix_backward(d.orientation(), g_rot);
        g_rot_raw_d[i] = quat_normalize_backward(d.rot_raw, g_qhat);

        g_center_w[i] += rot_c2w * g_center_c[i];
    }

    // --- deformation backward ---
    WarpGrads upstream;
    upstream.g_center = std::move(g_center_w);
    upstream.g_rot_raw = std::move(g_rot_raw_d);
    std::vector<double> g_weights(weights.values.size(), 0.0);
    SignalGrads g_signals;
    g_signals.rotations.assign(n_controls, Vec4::Zero());
    g_signals.translations.assign(n_controls, Vec3::Zero());
    warp_backward(scene.surfels, *ctx.binding, weights, signals, upstream, out.grads.center,
                  out.grads.rot_raw, g_weights, out.grads.control_position, g_signals);
    skinning_weights_backward(*ctx.binding, scene.controls, weights, g_weights,
                              out.grads.control_log_radius);

    for (size_t i = 0; i < n_controls; ++i) {
        double g_raw[DeformationField::kOutputDim];
        decode_signal_backward(raws[i].data(), g_signals.rotations[i], g_signals.translations[i],
                               g_raw);
        Vec3 g_pos = field.backward(caches[i], g_raw, out.grads.field);
        out.grads.control_position[i] += g_pos;
    }

    // --- frozen groups ---
    const ParamFlags& fl = ctx.flags;
    if (!fl.centers)
        for (Vec3& v : out.grads.center) v.setZero();
    if (!fl.rotations)
        for (Vec4& v : out.grads.rot_raw) v.setZero();
    if (!fl.scales)
        for (Vec2& v : out.grads.log_scales) v.setZero();
    if (!fl.opacities)
        for (double& v : out.grads.opacity_logit) v = 0.0;
    if (!fl.sh)
        for (auto& row : out.grads.sh) std::fill(row.begin(), row.end(), 0.0);
    if (!fl.control_positions)
        for (Vec3& v : out.grads.control_position) v.setZero();
    if (!fl.control_radii)
        for (double& v : out.grads.control_log_radius) v = 0.0;
    if (!fl.field)
        for (Linear& l : out.grads.field) {
            std::fill(l.weight.begin(), l.weight.end(), 0.0);
            std::fill(l.bias.begin(), l.bias.end(), 0.0);
        }

    out.grads.check_finite();
    return out;
}

}  // namespace d2dgs
