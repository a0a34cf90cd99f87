#pragma once

#include <functional>
#include <string>
#include <vector>

#include "d2dgs/gradients.hpp"
#include "d2dgs/rng.hpp"

namespace d2dgs {

struct TrainFrame {
    CameraView camera;
    Image image;
};

struct TrainConfig {
    int iterations = 2000;
    int warmup_iterations = -1;  // < 0: first 10% of iterations
    int densify_interval = 400;  // 0 disables density control
    double densify_grad_threshold = 2e-4;
    double prune_opacity = 0.005;
    double split_scale_fraction = 0.01;  // of scene extent
    double split_scale_divisor = 1.6;
    size_t max_surfels = 200000;
    uint64_t seed = 0;
    LossWeights loss;
    RenderConfig render;

    // Per-group Adam learning rates. Position rates scale with scene extent;
    // the field rate decays exponentially to field_lr_decay x initial.
    double lr_position = 1.6e-4;
    double lr_rotation = 1e-3;
    double lr_scale = 5e-3;
    double lr_opacity = 5e-2;
    double lr_sh = 2.5e-3;  // rest bands get 1/20 of this
    double lr_control_position = 1.6e-4;
    double lr_control_radius = 1e-3;
    double lr_field = 1e-4;
    double field_lr_decay = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    int checkpoint_interval = 0;  // 0: only via caller at the end
    std::string log_path;        // loss CSV; empty = in-memory only
    std::string snapshot_path;   // diagnostic dump on non-finite loss
};

struct AdamState {
    GradientSet m, v;
    int64_t step = 0;

    static AdamState init(const SceneModel& scene, const DeformationField& field);
};

// Resolved learning rates for one step (extent and decay already applied).
struct StepRates {
    double position = 0.0, rotation = 0.0, scale = 0.0, opacity = 0.0;
    double sh_dc = 0.0, sh_rest = 0.0;
    double control_position = 0.0, control_radius = 0.0;
    double field = 0.0;
};

StepRates resolve_rates(const TrainConfig& cfg, double scene_extent, int iteration);

void adam_step(SceneModel& scene, DeformationField& field, const GradientSet& grads,
               AdamState& state, const StepRates& rates, const TrainConfig& cfg);

// Mean positional-gradient statistics accumulated between density controls.
struct DensifyStats {
    std::vector<double> grad_norm_sum;
    std::vector<int> counts;

    void reset(size_t n);
    void accumulate(const GradientSet& grads);
};

struct DensifyReport {
    size_t pruned = 0, cloned = 0, split = 0;
};

// Prunes transparent surfels and clones/splits high-gradient ones; Adam rows
// follow the surfels (children start with zero moments). Bindings must be
// refreshed by the caller afterwards.
DensifyReport density_control(SceneModel& scene, AdamState& adam, const DensifyStats& stats,
                              const TrainConfig& cfg, double scene_extent, Rng& rng);

struct TrainLogRow {
    int iteration = 0;
    double l1 = 0.0, ssim = 0.0, ln = 0.0, ld = 0.0, total = 0.0;
    size_t num_surfels = 0;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    SkinningBinding binding;
    double scene_extent = 0.0;
};

double scene_extent_of(const SceneModel& scene);

void write_loss_log(const std::string& path, const std::vector<TrainLogRow>& rows);

using CheckpointFn =
    std::function<void(int iteration, const SceneModel&, const DeformationField&)>;

TrainResult train(const std::vector<TrainFrame>& frames, SceneModel& scene,
                  DeformationField& field, const TrainConfig& cfg,
                  const CheckpointFn& checkpoint = {});

}  // namespace d2dgs
