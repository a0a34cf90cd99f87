#include "d2dgs/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace d2dgs {

AdamState AdamState::init(const SceneModel& scene, const DeformationField& field) {
    AdamState s;
    s.m = GradientSet::zeros_like(scene, field);
    s.v = GradientSet::zeros_like(scene, field);
    return s;
}

StepRates resolve_rates(const TrainConfig& cfg, double scene_extent, int iteration) {
    StepRates r;
    r.position = cfg.lr_position * scene_extent;
    r.rotation = cfg.lr_rotation;
    r.scale = cfg.lr_scale;
    r.opacity = cfg.lr_opacity;
    r.sh_dc = cfg.lr_sh;
    r.sh_rest = cfg.lr_sh / 20.0;
    r.control_position = cfg.lr_control_position * scene_extent;
    r.control_radius = cfg.lr_control_radius;
    double frac = cfg.iterations > 1
                      ? static_cast<double>(iteration - 1) / (cfg.iterations - 1)
                      : 0.0;
    r.field = cfg.lr_field * std::pow(cfg.field_lr_decay, frac);
    return r;
}

namespace {

inline void adam_scalar(double& p, double g, double& m, double& v, double lr, double bc1,
                        double bc2, const TrainConfig& cfg) {
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
    v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
    p -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
}

}  // namespace

void adam_step(SceneModel& scene, DeformationField& field, const GradientSet& grads,
               AdamState& state, const StepRates& rates, const TrainConfig& cfg) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));

    for (size_t i = 0; i < scene.surfels.size(); ++i) {
        Surfel& s = scene.surfels[i];
        for (int c = 0; c < 3; ++c)
            adam_scalar(s.center[c], grads.center[i][c], state.m.center[i][c],
                        state.v.center[i][c], rates.position, bc1, bc2, cfg);
        double* q[4] = {&s.rot_raw.w, &s.rot_raw.x, &s.rot_raw.y, &s.rot_raw.z};
        for (int c = 0; c < 4; ++c)
            adam_scalar(*q[c], grads.rot_raw[i][c], state.m.rot_raw[i][c], state.v.rot_raw[i][c],
                        rates.rotation, bc1, bc2, cfg);
        for (int c = 0; c < 2; ++c)
            adam_scalar(s.log_scales[c], grads.log_scales[i][c], state.m.log_scales[i][c],
                        state.v.log_scales[i][c], rates.scale, bc1, bc2, cfg);
        adam_scalar(s.opacity_logit, grads.opacity_logit[i], state.m.opacity_logit[i],
                    state.v.opacity_logit[i], rates.opacity, bc1, bc2, cfg);
        const int nb = s.sh_basis();
        for (size_t j = 0; j < s.sh.size(); ++j) {
            double lr = (static_cast<int>(j) % nb == 0) ? rates.sh_dc : rates.sh_rest;
            adam_scalar(s.sh[j], grads.sh[i][j], state.m.sh[i][j], state.v.sh[i][j], lr, bc1, bc2,
                        cfg);
        }
    }
    for (size_t i = 0; i < scene.controls.size(); ++i) {
        ControlPoint& c = scene.controls.points[i];
        for (int d = 0; d < 3; ++d)
            adam_scalar(c.position[d], grads.control_position[i][d],
                        state.m.control_position[i][d], state.v.control_position[i][d],
                        rates.control_position, bc1, bc2, cfg);
        adam_scalar(c.log_radius, grads.control_log_radius[i], state.m.control_log_radius[i],
                    state.v.control_log_radius[i], rates.control_radius, bc1, bc2, cfg);
    }
    std::vector<Linear>& layers = field.layers();
    for (size_t l = 0; l < layers.size(); ++l) {
        for (size_t j = 0; j < layers[l].weight.size(); ++j)
            adam_scalar(layers[l].weight[j], grads.field[l].weight[j], state.m.field[l].weight[j],
                        state.v.field[l].weight[j], rates.field, bc1, bc2, cfg);
        for (size_t j = 0; j < layers[l].bias.size(); ++j)
            adam_scalar(layers[l].bias[j], grads.field[l].bias[j], state.m.field[l].bias[j],
                        state.v.field[l].bias[j], rates.field, bc1, bc2, cfg);
    }
}

void DensifyStats::reset(size_t n) {
    grad_norm_sum.assign(n, 0.0);
    counts.assign(n, 0);
}

void DensifyStats::accumulate(const GradientSet& grads) {
    for (size_t i = 0; i < grads.center.size() && i < grad_norm_sum.size(); ++i) {
        double n = grads.center[i].norm();
        if (n > 0.0) {
            grad_norm_sum[i] += n;
            counts[i] += 1;
        }
    }
}

namespace {

// Moves one surfel's Adam rows into a rebuilt state (or zeros for children).
struct AdamRows {
    Vec3 mc = Vec3::Zero(), vc = Vec3::Zero();
    Vec4 mq = Vec4::Zero(), vq = Vec4::Zero();
    Vec2 ms = Vec2::Zero(), vs = Vec2::Zero();
    double mo = 0.0, vo = 0.0;
    std::vector<double> msh, vsh;
};

AdamRows take_rows(const AdamState& a, size_t i) {
    AdamRows r;
    r.mc = a.m.center[i];
    r.vc = a.v.center[i];
    r.mq = a.m.rot_raw[i];
    r.vq = a.v.rot_raw[i];
    r.ms = a.m.log_scales[i];
    r.vs = a.v.log_scales[i];
    r.mo = a.m.opacity_logit[i];
    r.vo = a.v.opacity_logit[i];
    r.msh = a.m.sh[i];
    r.vsh = a.v.sh[i];
    return r;
}

}  // namespace

DensifyReport density_control(SceneModel& scene, AdamState& adam, const DensifyStats& stats,
                              const TrainConfig& cfg, double scene_extent, Rng& rng) {
    DensifyReport rep;
    const size_t n = scene.surfels.size();
    const double split_threshold = cfg.split_scale_fraction * scene_extent;

    std::vector<Surfel> kept;
    std::vector<AdamRows> kept_rows;
    kept.reserve(n);
    kept_rows.reserve(n);

    for (size_t i = 0; i < n; ++i) {
        const Surfel& s = scene.surfels[i];
        if (s.opacity() < cfg.prune_opacity) {
            ++rep.pruned;
            continue;
        }
        double mean_grad =
            (i < stats.counts.size() && stats.counts[i] > 0)
                ? stats.grad_norm_sum[i] / stats.counts[i]
                : 0.0;
        bool densify = mean_grad > cfg.densify_grad_threshold &&
                       n + rep.cloned + rep.split < cfg.max_surfels;
        if (!densify) {
            kept.push_back(s);
            kept_rows.push_back(take_rows(adam, i));
            continue;
        }
        Vec2 sc = s.scales();
        if (std::max(sc[0], sc[1]) > split_threshold) {
            // Split: two children sampled from the parent footprint, shrunk.
            for (int c = 0; c < 2; ++c) {
                Surfel child = s;
                child.center = point_on_surfel(s, rng.normal(), rng.normal());
                child.log_scales[0] -= std::log(cfg.split_scale_divisor);
                child.log_scales[1] -= std::log(cfg.split_scale_divisor);
                kept.push_back(std::move(child));
                kept_rows.push_back(AdamRows{});
                kept_rows.back().msh.assign(s.sh.size(), 0.0);
                kept_rows.back().vsh.assign(s.sh.size(), 0.0);
            }
            ++rep.split;
        } else {
            // Clone: keep the parent (with its moments), add a fresh copy.
            kept.push_back(s);
            kept_rows.push_back(take_rows(adam, i));
            kept.push_back(s);
            kept_rows.push_back(AdamRows{});
            kept_rows.back().msh.assign(s.sh.size(), 0.0);
            kept_rows.back().vsh.assign(s.sh.size(), 0.0);
            ++rep.cloned;
        }
    }

    scene.surfels = std::move(kept);
    const size_t m = scene.surfels.size();
    AdamState fresh;
    fresh.step = adam.step;
    fresh.m = GradientSet::zeros_like(scene, DeformationField());
    fresh.v = GradientSet::zeros_like(scene, DeformationField());
    // zeros_like with a default field gives empty field grads; keep the old ones.
    fresh.m.field = adam.m.field;
    fresh.v.field = adam.v.field;
    fresh.m.control_position = adam.m.control_position;
    fresh.v.control_position = adam.v.control_position;
    fresh.m.control_log_radius = adam.m.control_log_radius;
    fresh.v.control_log_radius = adam.v.control_log_radius;
    for (size_t i = 0; i < m; ++i) {
        fresh.m.center[i] = kept_rows[i].mc;
        fresh.v.center[i] = kept_rows[i].vc;
        fresh.m.rot_raw[i] = kept_rows[i].mq;
        fresh.v.rot_raw[i] = kept_rows[i].vq;
        fresh.m.log_scales[i] = kept_rows[i].ms;
        fresh.v.log_scales[i] = kept_rows[i].vs;
        fresh.m.opacity_logit[i] = kept_rows[i].mo;
        fresh.v.opacity_logit[i] = kept_rows[i].vo;
        fresh.m.sh[i] = kept_rows[i].msh;
        fresh.v.sh[i] = kept_rows[i].vsh;
    }
    adam = std::move(fresh);
    return rep;
}

double scene_extent_of(const SceneModel& scene) {
    if (scene.surfels.empty()) return 1.0;
    Vec3 lo = scene.surfels[0].center, hi = lo;
    for (const Surfel& s : scene.surfels) {
        lo = lo.cwiseMin(s.center);
        hi = hi.cwiseMax(s.center);
    }
    double d = (hi - lo).norm();
    return d > 1e-9 ? d : 1.0;
}

void write_loss_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write loss log: " + path);
    f << "iteration,l1,ssim,ln,ld,total,num_surfels\n";
    f.precision(10);
    for (const TrainLogRow& r : rows)
        f << r.iteration << ',' << r.l1 << ',' << r.ssim << ',' << r.ln << ',' << r.ld << ','
          << r.total << ',' << r.num_surfels << '\n';
}

TrainResult train(const std::vector<TrainFrame>& frames, SceneModel& scene,
                  DeformationField& field, const TrainConfig& cfg, const CheckpointFn& checkpoint) {
    if (frames.empty()) throw std::invalid_argument("training requires a non-empty dataset");
    if (cfg.iterations <= 0) throw std::invalid_argument("iteration count must be positive");
    for (const TrainFrame& f : frames) f.camera.validate();

    TrainResult result;
    result.scene_extent = scene_extent_of(scene);
    result.binding = bind_surfels(scene.surfels, scene.controls, scene.config.neighbor_count);

    AdamState adam = AdamState::init(scene, field);
    DensifyStats stats;
    stats.reset(scene.surfels.size());
    Rng rng = Rng(cfg.seed).fork("train");

    const int warmup = cfg.warmup_iterations >= 0 ? cfg.warmup_iterations : cfg.iterations / 10;

    for (int it = 1; it <= cfg.iterations; ++it) {
        size_t pick = rng.uniform_index(frames.size());
        const TrainFrame& frame = frames[pick];

        EvalContext ctx;
        ctx.binding = &result.binding;
        ctx.camera = frame.camera;
        ctx.truth = &frame.image;
        ctx.weights = cfg.loss;
        if (it <= warmup) {
            ctx.weights.lambda_n = 0.0;
            ctx.weights.lambda_d = 0.0;
        }
        ctx.render = cfg.render;

        auto abort_run = [&](const LossComponents& comp, const std::string& note) {
            if (!cfg.snapshot_path.empty()) {
                std::ofstream snap(cfg.snapshot_path);
                snap << "iteration " << it << "\nl1 " << comp.l1 << "\nssim " << comp.ssim
                     << "\nln " << comp.ln << "\nld " << comp.ld << "\nsurfels "
                     << scene.surfels.size() << "\nframe " << pick << "\n";
                if (!note.empty()) snap << "note " << note << "\n";
            }
            if (!cfg.log_path.empty()) write_loss_log(cfg.log_path, result.log);
            throw std::runtime_error("training aborted: non-finite loss at iteration " +
                                     std::to_string(it));
        };

        LossOutputs out;
        try {
            out = compute_gradients(scene, field, ctx);
        } catch (const std::runtime_error& e) {
            if (std::string(e.what()).find("non-finite") == std::string::npos) throw;
            abort_run(out.components, e.what());
        }
        if (!std::isfinite(out.total)) abort_run(out.components, "");

        StepRates rates = resolve_rates(cfg, result.scene_extent, it);
        adam_step(scene, field, out.grads, adam, rates, cfg);
        stats.accumulate(out.grads);

        TrainLogRow row;
        row.iteration = it;
        row.l1 = out.components.l1;
        row.ssim = out.components.ssim;
        row.ln = out.components.ln;
        row.ld = out.components.ld;
        row.total = out.total;
        row.num_surfels = scene.surfels.size();
        result.log.push_back(row);

        if (cfg.densify_interval > 0 && it % cfg.densify_interval == 0 && it < cfg.iterations) {
            density_control(scene, adam, stats, cfg, result.scene_extent, rng);
            stats.reset(scene.surfels.size());
            result.binding =
                bind_surfels(scene.surfels, scene.controls, scene.config.neighbor_count);
        }

        if (checkpoint && cfg.checkpoint_interval > 0 && it % cfg.checkpoint_interval == 0)
            checkpoint(it, scene, field);
    }

    if (!cfg.log_path.empty()) write_loss_log(cfg.log_path, result.log);
    return result;
}

}  // namespace d2dgs
