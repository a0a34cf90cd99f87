#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d2dgs/math.hpp"
#include "d2dgs/scene.hpp"

namespace d2dgs {

enum class Activation { Softplus, Relu, Tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct FieldConfig {
    int hidden_width = 64;
    int hidden_layers = 4;
    int pe_position = 10;  // frequency count for the control-point position
    int pe_time = 6;       // frequency count for the timestamp
    Activation activation = Activation::Softplus;
    uint64_t seed = 0;
};

struct Linear {
    int in = 0, out = 0;
    std::vector<double> weight;  // row-major, out x in
    std::vector<double> bias;    // out
};

// Time-conditioned network mapping (control position, t) to a raw 7-vector:
// 4 quaternion offsets (zero decodes to identity) and 3 translations.
class DeformationField {
public:
    DeformationField() = default;
    explicit DeformationField(const FieldConfig& config);

    const FieldConfig& config() const { return config_; }
    int input_dim() const;
    static constexpr int kOutputDim = 7;

    const std::vector<Linear>& layers() const { return layers_; }
    std::vector<Linear>& layers() { return layers_; }

    size_t num_params() const;

    // Raw network output for one control point.
    void forward(const Vec3& position, double t, double out[kOutputDim]) const;

    // Forward pass that keeps the per-layer values needed by backward():
    // cache holds [input, pre-activations of each hidden layer].
    void forward_cached(const Vec3& position, double t, double out[kOutputDim],
                        std::vector<std::vector<double>>& cache) const;

    // Accumulates parameter gradients into grads (same layout as layers())
    // and returns the gradient with respect to the 3D position input.
    Vec3 backward(const std::vector<std::vector<double>>& cache,
                  const double g_out[kOutputDim], std::vector<Linear>& grads) const;

    std::vector<Linear> zero_grads() const;

    void encode_input(const Vec3& position, double t, std::vector<double>& enc) const;

private:
    FieldConfig config_;
    std::vector<Linear> layers_;
};

// Per-control-point rigid transforms at one timestamp. Carries the canonical
// pivot positions so the warp is self-contained.
struct ControlSignals {
    std::vector<Vec3> positions;      // canonical control positions (pivots)
    std::vector<Quat> rotations;      // unit quaternions
    std::vector<Vec3> translations;
    std::vector<Mat3> rot_matrices;   // cached matrix form

    size_t size() const { return rotations.size(); }

    static ControlSignals identity(const ControlPointSet& controls);
};

// K nearest control points per surfel with canonical distances, fixed while
// optimizing and refreshed after densification.
struct SkinningBinding {
    int k = 0;
    std::vector<int> indices;       // surfel-major, size S*K
    std::vector<double> distances;  // size S*K

    size_t num_surfels() const { return k > 0 ? indices.size() / k : 0; }
    int index(size_t surfel, int j) const { return indices[surfel * k + j]; }
    double distance(size_t surfel, int j) const { return distances[surfel * k + j]; }
};

struct SkinningWeights {
    int k = 0;
    std::vector<double> values;          // surfel-major, size S*K, rows sum to 1
    std::vector<uint8_t> uniform_rows;   // rows where underflow forced 1/K

    double at(size_t surfel, int j) const { return values[surfel * k + j]; }
};

ControlSignals predict_signals(const DeformationField& field, const ControlPointSet& controls,
                               double t);

SkinningBinding bind_surfels(const std::vector<Surfel>& surfels, const ControlPointSet& controls,
                             int k);

SkinningWeights skinning_weights(const SkinningBinding& binding, const ControlPointSet& controls);

std::vector<Surfel> warp_surfels(const std::vector<Surfel>& surfels, const SkinningBinding& binding,
                                 const SkinningWeights& weights, const ControlSignals& signals);

// --- adjoints used by the training gradients ---

// Decodes one raw network output into a signal pair.
void decode_signal(const double raw[DeformationField::kOutputDim], Quat& rotation,
                   Vec3& translation);

// Maps gradients on (unit rotation, translation) back onto the raw 7-vector.
void decode_signal_backward(const double raw[DeformationField::kOutputDim], const Vec4& g_rotation,
                            const Vec3& g_translation, double g_raw[DeformationField::kOutputDim]);

struct SignalGrads {
    std::vector<Vec4> rotations;     // d/d(unit quaternion), per control
    std::vector<Vec3> translations;  // d/d(translation), per control
};

struct WarpGrads {
    // Per-surfel gradients on the deformed parameters (inputs to backward).
    std::vector<Vec3> g_center;
    std::vector<Vec4> g_rot_raw;
};

// Pulls gradients on deformed centers/orientations back to canonical surfel
// parameters, skinning weights, control positions, and signals.
// g_weights has binding layout (S*K); other outputs are accumulated in place.
void warp_backward(const std::vector<Surfel>& surfels, const SkinningBinding& binding,
                   const SkinningWeights& weights, const ControlSignals& signals,
                   const WarpGrads& upstream, std::vector<Vec3>& g_surfel_center,
                   std::vector<Vec4>& g_surfel_rot_raw, std::vector<double>& g_weights,
                   std::vector<Vec3>& g_control_pos, SignalGrads& g_signals);

// Maps weight gradients back to control log-radii (distances are cached
// constants of the binding).
void skinning_weights_backward(const SkinningBinding& binding, const ControlPointSet& controls,
                               const SkinningWeights& weights, const std::vector<double>& g_weights,
                               std::vector<double>& g_log_radius);

}  // namespace d2dgs
