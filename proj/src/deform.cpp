#include "d2dgs/deform.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "d2dgs/kdtree.hpp"
#include "d2dgs/parallel.hpp"
#include "d2dgs/rng.hpp"

namespace d2dgs {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Softplus: return "softplus";
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
    }
    throw std::logic_error("unknown activation");
}

Activation activation_from_string(const std::string& s) {
    if (s == "softplus") return Activation::Softplus;
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    throw std::invalid_argument("unknown activation: " + s);
}

namespace {

double activate(Activation a, double x) {
    switch (a) {
        case Activation::Softplus: return x > 30.0 ? x : std::log1p(std::exp(x));
        case Activation::Relu: return x > 0.0 ? x : 0.0;
        case Activation::Tanh: return std::tanh(x);
    }
    return x;
}

double activate_grad(Activation a, double x) {
    switch (a) {
        case Activation::Softplus: return sigmoid(x);
        case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::Tanh: {
            double y = std::tanh(x);
            return 1.0 - y * y;
        }
    }
    return 1.0;
}

void linear_forward(const Linear& l, const double* in, double* out) {
    for (int r = 0; r < l.out; ++r) {
        double acc = l.bias[r];
        const double* w = l.weight.data() + static_cast<size_t>(r) * l.in;
        for (int c = 0; c < l.in; ++c) acc += w[c] * in[c];
        out[r] = acc;
    }
}

}  // namespace

DeformationField::DeformationField(const FieldConfig& config) : config_(config) {
    if (config_.hidden_layers < 1) throw std::invalid_argument("hidden_layers must be >= 1");
    if (config_.hidden_width < 1) throw std::invalid_argument("hidden_width must be >= 1");
    if (config_.pe_position < 0 || config_.pe_time < 0)
        throw std::invalid_argument("encoding frequency counts must be >= 0");

    Rng rng = Rng(config_.seed).fork("field");
    int in = input_dim();
    for (int l = 0; l < config_.hidden_layers; ++l) {
        Linear layer;
        layer.in = in;
        layer.out = config_.hidden_width;
        layer.weight.resize(static_cast<size_t>(layer.in) * layer.out);
        layer.bias.assign(layer.out, 0.0);
        double bound = std::sqrt(6.0 / (layer.in + layer.out));
        for (double& w : layer.weight) w = rng.uniform(-bound, bound);
        layers_.push_back(std::move(layer));
        in = config_.hidden_width;
    }
    Linear final;
    final.in = in;
    final.out = kOutputDim;
    final.weight.assign(static_cast<size_t>(final.in) * final.out, 0.0);
    final.bias.assign(final.out, 0.0);
    layers_.push_back(std::move(final));
}

int DeformationField::input_dim() const {
    return 3 + 6 * config_.pe_position + 1 + 2 * config_.pe_time;
}

size_t DeformationField::num_params() const {
    size_t n = 0;
    for (const Linear& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

void DeformationField::encode_input(const Vec3& position, double t,
                                    std::vector<double>& enc) const {
    enc.clear();
    enc.reserve(input_dim());
    for (int c = 0; c < 3; ++c) enc.push_back(position[c]);
    for (int f = 0; f < config_.pe_position; ++f) {
        double s = std::ldexp(1.0, f);  // 2^f
        for (int c = 0; c < 3; ++c) {
            enc.push_back(std::sin(s * position[c]));
            enc.push_back(std::cos(s * position[c]));
        }
    }
    enc.push_back(t);
    for (int f = 0; f < config_.pe_time; ++f) {
        double s = std::ldexp(1.0, f);
        enc.push_back(std::sin(s * t));
        enc.push_back(std::cos(s * t));
    }
}

void DeformationField::forward(const Vec3& position, double t, double out[kOutputDim]) const {
    std::vector<double> a, z;
    encode_input(position, t, a);
    z.resize(config_.hidden_width);
    for (int l = 0; l < config_.hidden_layers; ++l) {
        linear_forward(layers_[l], a.data(), z.data());
        a.resize(z.size());
        for (size_t i = 0; i < z.size(); ++i) a[i] = activate(config_.activation, z[i]);
    }
    linear_forward(layers_.back(), a.data(), out);
}

void DeformationField::forward_cached(const Vec3& position, double t, double out[kOutputDim],
                                      std::vector<std::vector<double>>& cache) const {
    cache.assign(config_.hidden_layers + 1, {});
    encode_input(position, t, cache[0]);
    std::vector<double> a = cache[0];
    for (int l = 0; l < config_.hidden_layers; ++l) {
        cache[l + 1].resize(config_.hidden_width);
        linear_forward(layers_[l], a.data(), cache[l + 1].data());
        a.resize(cache[l + 1].size());
        for (size_t i = 0; i < a.size(); ++i) a[i] = activate(config_.activation, cache[l + 1][i]);
    }
    linear_forward(layers_.back(), a.data(), out);
}

Vec3 DeformationField::backward(const std::vector<std::vector<double>>& cache,
                                const double g_out[kOutputDim], std::vector<Linear>& grads) const {
    int width = config_.hidden_width;
    std::vector<double> a_last(width);
    for (int i = 0; i < width; ++i)
        a_last[i] = activate(config_.activation, cache[config_.hidden_layers][i]);

    const Linear& fin = layers_.back();
    Linear& gfin = grads.back();
    std::vector<double> g_a(width, 0.0);
    for (int r = 0; r < fin.out; ++r) {
        gfin.bias[r] += g_out[r];
        double* gw = gfin.weight.data() + static_cast<size_t>(r) * fin.in;
        const double* w = fin.weight.data() + static_cast<size_t>(r) * fin.in;
        for (int c = 0; c < fin.in; ++c) {
            gw[c] += g_out[r] * a_last[c];
            g_a[c] += w[c] * g_out[r];
        }
    }

    std::vector<double> g_z(width), g_prev;
    for (int l = config_.hidden_layers - 1; l >= 0; --l) {
        const Linear& lay = layers_[l];
        Linear& glay = grads[l];
        const std::vector<double>& z = cache[l + 1];
        for (int i = 0; i < lay.out; ++i)
            g_z[i] = g_a[i] * activate_grad(config_.activation, z[i]);

        const std::vector<double>& below = cache[l];
        std::vector<double> a_in(lay.in);
        if (l == 0) {
            a_in = below;
        } else {
            for (int i = 0; i < lay.in; ++i) a_in[i] = activate(config_.activation, below[i]);
        }

        g_prev.assign(lay.in, 0.0);
        for (int r = 0; r < lay.out; ++r) {
            glay.bias[r] += g_z[r];
            double* gw = glay.weight.data() + static_cast<size_t>(r) * lay.in;
            const double* w = lay.weight.data() + static_cast<size_t>(r) * lay.in;
            for (int c = 0; c < lay.in; ++c) {
                gw[c] += g_z[r] * a_in[c];
                g_prev[c] += w[c] * g_z[r];
            }
        }
        g_a = g_prev;
    }

    const std::vector<double>& enc = cache[0];
    Vec3 g_pos(g_a[0], g_a[1], g_a[2]);
    int idx = 3;
    for (int f = 0; f < config_.pe_position; ++f) {
        double s = std::ldexp(1.0, f);
        for (int c = 0; c < 3; ++c) {
            double sv = enc[idx], cv = enc[idx + 1];
            g_pos[c] += s * (cv * g_a[idx] - sv * g_a[idx + 1]);
            idx += 2;
        }
    }
    return g_pos;
}

std::vector<Linear> DeformationField::zero_grads() const {
    std::vector<Linear> g = layers_;
    for (Linear& l : g) {
        std::fill(l.weight.begin(), l.weight.end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    return g;
}

ControlSignals ControlSignals::identity(const ControlPointSet& controls) {
    size_t n = controls.points.size();
    ControlSignals s;
    s.positions.resize(n);
    for (size_t i = 0; i < n; ++i) s.positions[i] = controls.points[i].position;
    s.rotations.assign(n, Quat::identity());
    s.translations.assign(n, Vec3::Zero());
    s.rot_matrices.assign(n, Mat3::Identity());
    return s;
}

void decode_signal(const double raw[DeformationField::kOutputDim], Quat& rotation,
                   Vec3& translation) {
    Quat q{1.0 + raw[0], raw[1], raw[2], raw[3]};
    double n = q.norm();
    if (n < 1e-12) throw std::runtime_error("degenerate quaternion in signal decode");
    rotation = Quat{q.w / n, q.x / n, q.y / n, q.z / n};
    translation = Vec3(raw[4], raw[5], raw[6]);
}

void decode_signal_backward(const double raw[DeformationField::kOutputDim], const Vec4& g_rotation,
                            const Vec3& g_translation, double g_raw[DeformationField::kOutputDim]) {
    Quat q{1.0 + raw[0], raw[1], raw[2], raw[3]};
    Vec4 gq = quat_normalize_backward(q, g_rotation);
    for (int i = 0; i < 4; ++i) g_raw[i] = gq[i];
    for (int i = 0; i < 3; ++i) g_raw[4 + i] = g_translation[i];
}

ControlSignals predict_signals(const DeformationField& field, const ControlPointSet& controls,
                               double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("timestamp out of range");
    size_t n = controls.points.size();
    ControlSignals out;
    out.positions.resize(n);
    out.rotations.resize(n);
    out.translations.resize(n);
    out.rot_matrices.resize(n);
    parallel_for(n, [&](size_t i) {
        out.positions[i] = controls.points[i].position;
        double raw[DeformationField::kOutputDim];
        field.forward(controls.points[i].position, t, raw);
        decode_signal(raw, out.rotations[i], out.translations[i]);
        out.rot_matrices[i] = quat_to_matrix(out.rotations[i]);
    });
    return out;
}

SkinningBinding bind_surfels(const std::vector<Surfel>& surfels, const ControlPointSet& controls,
                             int k) {
    if (k <= 0) throw std::invalid_argument("neighbor count must be positive");
    if (static_cast<size_t>(k) > controls.points.size())
        throw std::invalid_argument("neighbor count exceeds control point count");

    std::vector<Vec3> pts(controls.points.size());
    for (size_t i = 0; i < pts.size(); ++i) pts[i] = controls.points[i].position;
    KdTree tree(pts);

    SkinningBinding b;
    b.k = k;
    b.indices.resize(surfels.size() * k);
    b.distances.resize(surfels.size() * k);
    parallel_for(surfels.size(), [&](size_t j) {
        auto hits = tree.knn(surfels[j].center, k);
        for (int i = 0; i < k; ++i) {
            b.indices[j * k + i] = hits[i].index;
            b.distances[j * k + i] = hits[i].dist;
        }
    });
    return b;
}

SkinningWeights skinning_weights(const SkinningBinding& binding, const ControlPointSet& controls) {
    size_t s = binding.num_surfels();
    int k = binding.k;
    SkinningWeights w;
    w.k = k;
    w.values.resize(s * k);
    w.uniform_rows.assign(s, 0);
    parallel_for(s, [&](size_t j) {
        double sum = 0.0;
        for (int i = 0; i < k; ++i) {
            double d = binding.distance(j, i);
            double o = controls.points[binding.index(j, i)].radius();
            double v = std::exp(-d * d / (2.0 * o * o));
            w.values[j * k + i] = v;
            sum += v;
        }
        if (sum == 0.0) {
            for (int i = 0; i < k; ++i) w.values[j * k + i] = 1.0 / k;
            w.uniform_rows[j] = 1;
        } else {
            for (int i = 0; i < k; ++i) w.values[j * k + i] /= sum;
        }
    });
    return w;
}

std::vector<Surfel> warp_surfels(const std::vector<Surfel>& surfels, const SkinningBinding& binding,
                                 const SkinningWeights& weights, const ControlSignals& signals) {
    if (binding.num_surfels() != surfels.size())
        throw std::invalid_argument("binding does not match surfel count");
    // Exact identity signals (e.g. a freshly initialized field) must reproduce
    // the canonical surfels bit for bit; the blend arithmetic only gets there
    // up to rounding, so short-circuit.
    bool is_identity = true;
    for (size_t c = 0; c < signals.size() && is_identity; ++c) {
        const Quat& r = signals.rotations[c];
        is_identity = r.w == 1.0 && r.x == 0.0 && r.y == 0.0 && r.z == 0.0 &&
                      signals.translations[c] == Vec3::Zero();
    }
    if (is_identity) return surfels;
    std::vector<Surfel> out(surfels.size());
    std::atomic<bool> degenerate{false};
    parallel_for(surfels.size(), [&](size_t j) {
        const Surfel& s = surfels[j];
        int k = binding.k;
        Vec3 center = Vec3::Zero();
        const Quat& r_first = signals.rotations[binding.index(j, 0)];
        Quat blend{0.0, 0.0, 0.0, 0.0};
        for (int i = 0; i < k; ++i) {
            int c = binding.index(j, i);
            double wv = weights.at(j, i);
            const Vec3& p = signals.positions[c];
            const Mat3& R = signals.rot_matrices[c];
            center += wv * (R * (s.center - p) + p + signals.translations[c]);
            const Quat& r = signals.rotations[c];
            double sign = (r.dot(r_first) < 0.0) ? -1.0 : 1.0;
            blend.w += wv * sign * r.w;
            blend.x += wv * sign * r.x;
            blend.y += wv * sign * r.y;
            blend.z += wv * sign * r.z;
        }
        double nb = blend.norm();
        if (nb < 1e-8) {
            degenerate.store(true);
            return;
        }
        Quat bhat{blend.w / nb, blend.x / nb, blend.y / nb, blend.z / nb};
        Quat qhat = s.rot_raw.normalized();

        Surfel& d = out[j];
        d = s;
        d.center = center;
        d.rot_raw = quat_mul(bhat, qhat);
    });
    if (degenerate.load()) throw std::runtime_error("degenerate quaternion blend");
    return out;
}

void warp_backward(const std::vector<Surfel>& surfels, const SkinningBinding& binding,
                   const SkinningWeights& weights, const ControlSignals& signals,
                   const WarpGrads& upstream, std::vector<Vec3>& g_surfel_center,
                   std::vector<Vec4>& g_surfel_rot_raw, std::vector<double>& g_weights,
                   std::vector<Vec3>& g_control_pos, SignalGrads& g_signals) {
    size_t s_count = surfels.size();
    int k = binding.k;
    for (size_t j = 0; j < s_count; ++j) {
        const Surfel& s = surfels[j];
        const Vec3& g_mu = upstream.g_center[j];
        const Vec4& g_qd = upstream.g_rot_raw[j];

        // Recompute the blend for this surfel.
        const Quat& r_first = signals.rotations[binding.index(j, 0)];
        Quat blend{0.0, 0.0, 0.0, 0.0};
        std::vector<double> sign(k);
        for (int i = 0; i < k; ++i) {
            int c = binding.index(j, i);
            double wv = weights.at(j, i);
            const Quat& r = signals.rotations[c];
            sign[i] = (r.dot(r_first) < 0.0) ? -1.0 : 1.0;
            blend.w += wv * sign[i] * r.w;
            blend.x += wv * sign[i] * r.x;
            blend.y += wv * sign[i] * r.y;
            blend.z += wv * sign[i] * r.z;
        }
        double nb = blend.norm();
        Quat bhat{blend.w / nb, blend.x / nb, blend.y / nb, blend.z / nb};
        Quat qhat = s.rot_raw.normalized();

        // q' = bhat ⊗ qhat: split the upstream quaternion gradient.
        Vec4 g_bhat = quat_rmat(qhat).transpose() * g_qd;
        Vec4 g_qhat = quat_lmat(bhat).transpose() * g_qd;
        g_surfel_rot_raw[j] += quat_normalize_backward(s.rot_raw, g_qhat);
        Vec4 bh = bhat.vec();
        Vec4 g_blend = (g_bhat - bh * bh.dot(g_bhat)) / nb;

        for (int i = 0; i < k; ++i) {
            int c = binding.index(j, i);
            double wv = weights.at(j, i);
            const Vec3& p = signals.positions[c];
            const Mat3& R = signals.rot_matrices[c];
            const Quat& r = signals.rotations[c];
            Vec3 rel = s.center - p;
            Vec3 y = R * rel + p + signals.translations[c];

            double gw = g_mu.dot(y);
            g_surfel_center[j] += wv * (R.transpose() * g_mu);
            g_control_pos[c] += wv * (g_mu - R.transpose() * g_mu);
            g_signals.translations[c] += wv * g_mu;

            Mat3 g_R = wv * g_mu * rel.transpose();
            g_signals.rotations[c] += quat_to_matrix_backward(r, g_R);

            gw += sign[i] * (r.vec().dot(g_blend));
            g_signals.rotations[c] += wv * sign[i] * g_blend;

            g_weights[j * k + i] += gw;
        }
    }
}

void skinning_weights_backward(const SkinningBinding& binding, const ControlPointSet& controls,
                               const SkinningWeights& weights, const std::vector<double>& g_weights,
                               std::vector<double>& g_log_radius) {
    size_t s = binding.num_surfels();
    int k = binding.k;
    for (size_t j = 0; j < s; ++j) {
        if (weights.uniform_rows[j]) continue;
        double sum = 0.0;
        std::vector<double> what(k);
        for (int i = 0; i < k; ++i) {
            double d = binding.distance(j, i);
            double o = controls.points[binding.index(j, i)].radius();
            what[i] = std::exp(-d * d / (2.0 * o * o));
            sum += what[i];
        }
        double inner = 0.0;
        for (int i = 0; i < k; ++i) inner += g_weights[j * k + i] * weights.at(j, i);
        for (int i = 0; i < k; ++i) {
            double g_what = (g_weights[j * k + i] - inner) / sum;
            double d = binding.distance(j, i);
            double o = controls.points[binding.index(j, i)].radius();
            g_log_radius[binding.index(j, i)] += g_what * what[i] * d * d / (o * o);
        }
    }
}

}  // namespace d2dgs
