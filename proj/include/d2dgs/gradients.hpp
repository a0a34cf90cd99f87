#pragma once

#include "d2dgs/deform.hpp"
#include "d2dgs/losses.hpp"
#include "d2dgs/renderer.hpp"
#include "d2dgs/scene.hpp"

namespace d2dgs {

// Gradients for every learnable parameter, in raw (unconstrained) space.
struct GradientSet {
    std::vector<Vec3> center;
    std::vector<Vec4> rot_raw;
    std::vector<Vec2> log_scales;
    std::vector<double> opacity_logit;
    std::vector<std::vector<double>> sh;
    std::vector<Vec3> control_position;
    std::vector<double> control_log_radius;
    std::vector<Linear> field;

    static GradientSet zeros_like(const SceneModel& scene, const DeformationField& field);
    void scale(double s);
    // Throws naming the offending group if any entry is non-finite.
    void check_finite() const;
};

// Which parameter groups receive gradients; frozen groups come back zero.
struct ParamFlags {
    bool centers = true;
    bool rotations = true;
    bool scales = true;
    bool opacities = true;
    bool sh = true;
    bool control_positions = true;
    bool control_radii = true;
    bool field = true;
};

struct EvalContext {
    const SkinningBinding* binding = nullptr;
    CameraView camera;
    const Image* truth = nullptr;
    LossWeights weights;
    RenderConfig render;
    ParamFlags flags;
};

struct LossOutputs {
    LossComponents components;
    double total = 0.0;
    GradientSet grads;
};

// Forward-only training loss at one (view, timestamp); the oracle path for
// finite differences. Timestamp comes from ctx.camera.time.
LossComponents training_forward(const SceneModel& scene, const DeformationField& field,
                                const EvalContext& ctx, double* total = nullptr);

// Forward plus hand-derived adjoints through the renderer, warp, skinning
// weights, and network.
LossOutputs compute_gradients(const SceneModel& scene, const DeformationField& field,
                              const EvalContext& ctx);

}  // namespace d2dgs
