#include "d2dgs/losses.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace d2dgs {

double loss_l1(const Image& rendered, const Image& truth) {
    rendered.require_same_shape(truth, "loss_l1");
    const std::vector<double>& a = rendered.raw();
    const std::vector<double>& b = truth.raw();
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / a.size();
}

void loss_l1_backward(const Image& rendered, const Image& truth, double g, Image& g_rendered) {
    rendered.require_same_shape(truth, "loss_l1_backward");
    const std::vector<double>& a = rendered.raw();
    const std::vector<double>& b = truth.raw();
    double s = g / a.size();
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        if (d > 0.0)
            g_rendered.raw()[i] += s;
        else if (d < 0.0)
            g_rendered.raw()[i] -= s;
        // sign(0) = 0 subgradient
    }
}

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 1e-4;   // (0.01)^2
constexpr double kC2 = 9e-4;   // (0.03)^2

std::array<double, kWin> ssim_kernel() {
    std::array<double, kWin> k{};
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        double d = i - (kWin - 1) / 2.0;
        k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Valid-mode separable windowed mean of one channel. out is (H-10) x (W-10).
void conv_valid(const Image& img, int ch, std::vector<double>& out, std::vector<double>& scratch) {
    static const std::array<double, kWin> k = ssim_kernel();
    int h = img.height(), w = img.width();
    int ow = w - kWin + 1, oh = h - kWin + 1;
    scratch.assign(static_cast<size_t>(h) * ow, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i) acc += k[i] * img.at(y, x + i, ch);
            scratch[static_cast<size_t>(y) * ow + x] = acc;
        }
    out.assign(static_cast<size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWin; ++i) acc += k[i] * scratch[static_cast<size_t>(y + i) * ow + x];
            out[static_cast<size_t>(y) * ow + x] = acc;
        }
}

// Transpose of conv_valid: scatters a valid-region map back to image domain,
// accumulating into channel ch of g_img.
void conv_valid_transpose(const std::vector<double>& map, int oh, int ow, Image& g_img, int ch) {
    static const std::array<double, kWin> k = ssim_kernel();
    int h = g_img.height();
    std::vector<double> t(static_cast<size_t>(h) * ow, 0.0);
    for (int y = 0; y < h; ++y) {
        int r0 = std::max(0, y - kWin + 1), r1 = std::min(oh - 1, y);
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int r = r0; r <= r1; ++r) acc += k[y - r] * map[static_cast<size_t>(r) * ow + x];
            t[static_cast<size_t>(y) * ow + x] = acc;
        }
    }
    int w = g_img.width();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int c0 = std::max(0, x - kWin + 1), c1 = std::min(ow - 1, x);
            double acc = 0.0;
            for (int c = c0; c <= c1; ++c) acc += k[x - c] * t[static_cast<size_t>(y) * ow + c];
            g_img.at(y, x, ch) += acc;
        }
}

void require_window(const Image& a) {
    if (a.height() < kWin || a.width() < kWin)
        throw std::invalid_argument("loss_ssim: images smaller than window");
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    a.require_same_shape(b, "ssim");
    require_window(a);
    std::vector<double> mu_x, mu_y, e_xx, e_yy, e_xy, scratch;
    double total = 0.0;
    size_t count = 0;
    Image tmp(a.height(), a.width(), 1);
    for (int ch = 0; ch < a.channels(); ++ch) {
        conv_valid(a, ch, mu_x, scratch);
        conv_valid(b, ch, mu_y, scratch);
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) tmp.at(y, x, 0) = a.at(y, x, ch) * a.at(y, x, ch);
        conv_valid(tmp, 0, e_xx, scratch);
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) tmp.at(y, x, 0) = b.at(y, x, ch) * b.at(y, x, ch);
        conv_valid(tmp, 0, e_yy, scratch);
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) tmp.at(y, x, 0) = a.at(y, x, ch) * b.at(y, x, ch);
        conv_valid(tmp, 0, e_xy, scratch);

        for (size_t i = 0; i < mu_x.size(); ++i) {
            double sx = e_xx[i] - mu_x[i] * mu_x[i];
            double sy = e_yy[i] - mu_y[i] * mu_y[i];
            double sxy = e_xy[i] - mu_x[i] * mu_y[i];
            double n1 = 2.0 * mu_x[i] * mu_y[i] + kC1;
            double n2 = 2.0 * sxy + kC2;
            double d1 = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kC1;
            double d2 = sx + sy + kC2;
            total += (n1 * n2) / (d1 * d2);
        }
        count += mu_x.size();
    }
    return total / count;
}

double loss_ssim(const Image& rendered, const Image& truth) { return 1.0 - ssim(rendered, truth); }

void loss_ssim_backward(const Image& rendered, const Image& truth, double g, Image& g_rendered) {
    rendered.require_same_shape(truth, "loss_ssim_backward");
    require_window(rendered);
    const Image& a = rendered;
    const Image& b = truth;
    int oh = a.height() - kWin + 1, ow = a.width() - kWin + 1;
    size_t n_valid = static_cast<size_t>(oh) * ow;
    double scale = -g / (n_valid * a.channels());  // d(1-ssim) = -d(ssim)

    std::vector<double> mu_x, mu_y, e_xx, e_yy, e_xy, scratch;
    std::vector<double> c1(n_valid), c2(n_valid), c3(n_valid);
    Image tmp(a.height(), a.width(), 1);
    for (int ch = 0; ch < a.channels(); ++ch) {
        conv_valid(a, ch, mu_x, scratch);
        conv_valid(b, ch, mu_y, scratch);
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) tmp.at(y, x, 0) = a.at(y, x, ch) * a.at(y, x, ch);
        conv_valid(tmp, 0, e_xx, scratch);
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) tmp.at(y, x, 0) = b.at(y, x, ch) * b.at(y, x, ch);
        conv_valid(tmp, 0, e_yy, scratch);
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) tmp.at(y, x, 0) = a.at(y, x, ch) * b.at(y, x, ch);
        conv_valid(tmp, 0, e_xy, scratch);

        for (size_t i = 0; i < n_valid; ++i) {
            double sx = e_xx[i] - mu_x[i] * mu_x[i];
            double sy = e_yy[i] - mu_y[i] * mu_y[i];
            double sxy = e_xy[i] - mu_x[i] * mu_y[i];
            double n1 = 2.0 * mu_x[i] * mu_y[i] + kC1;
            double n2 = 2.0 * sxy + kC2;
            double d1 = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kC1;
            double d2 = sx + sy + kC2;
            double s = (n1 * n2) / (d1 * d2);
            c1[i] = scale * (2.0 * mu_y[i] * (n2 - n1) / (d1 * d2) +
                             2.0 * s * mu_x[i] * (1.0 / d2 - 1.0 / d1));
            c2[i] = scale * (-2.0 * s / d2);
            c3[i] = scale * (2.0 * n1 / (d1 * d2));
        }
        // g_a(q) += (w*c1)(q) + a(q)(w*c2)(q) + b(q)(w*c3)(q)
        Image spread(a.height(), a.width(), 3);
        conv_valid_transpose(c1, oh, ow, spread, 0);
        conv_valid_transpose(c2, oh, ow, spread, 1);
        conv_valid_transpose(c3, oh, ow, spread, 2);
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) {
                g_rendered.at(y, x, ch) += spread.at(y, x, 0) +
                                           a.at(y, x, ch) * spread.at(y, x, 1) +
                                           b.at(y, x, ch) * spread.at(y, x, 2);
            }
    }
}

double loss_depth_distortion(const RenderTargets& rt) {
    double total = 0.0;
    size_t pixels = 0;
    for (const std::vector<Fragment>& frags : rt.records) {
        if (frags.empty()) continue;
        ++pixels;
        double w_acc = 0.0, wz_acc = 0.0;
        for (const Fragment& f : frags) {
            total += f.weight * (f.z * w_acc - wz_acc);
            w_acc += f.weight;
            wz_acc += f.weight * f.z;
        }
    }
    return pixels ? total / pixels : 0.0;
}

void loss_depth_distortion_backward(const RenderTargets& rt, double g,
                                    std::vector<std::vector<double>>& g_weight,
                                    std::vector<std::vector<double>>& g_z) {
    size_t pixels = 0;
    for (const std::vector<Fragment>& frags : rt.records)
        if (!frags.empty()) ++pixels;
    if (!pixels) return;
    double s = g / pixels;
    for (size_t p = 0; p < rt.records.size(); ++p) {
        const std::vector<Fragment>& frags = rt.records[p];
        size_t n = frags.size();
        if (!n) continue;
        // prefix sums below index k and suffix sums above
        double w_below = 0.0, wz_below = 0.0;
        std::vector<double> w_above(n + 1, 0.0), wz_above(n + 1, 0.0);
        for (size_t k = n; k-- > 0;) {
            w_above[k] = w_above[k + 1] + frags[k].weight;
            wz_above[k] = wz_above[k + 1] + frags[k].weight * frags[k].z;
        }
        for (size_t k = 0; k < n; ++k) {
            double w = frags[k].weight, z = frags[k].z;
            g_weight[p][k] += s * ((z * w_below - wz_below) + (wz_above[k + 1] - z * w_above[k + 1]));
            g_z[p][k] += s * w * (w_below - w_above[k + 1]);
            w_below += w;
            wz_below += w * z;
        }
    }
}

namespace {

inline Vec3 backproject_ray(const CameraView& cam, int px, int py) {
    return Vec3((px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0);
}

}  // namespace

Image normal_from_depth(const Image& depth, const CameraView& cam) {
    int h = depth.height(), w = depth.width();
    Image out(h, w, 3);
    for (int y = 0; y + 1 < h; ++y) {
        for (int x = 0; x + 1 < w; ++x) {
            double d0 = depth.at(y, x, 0);
            double dx = depth.at(y, x + 1, 0);
            double dy = depth.at(y + 1, x, 0);
            if (d0 <= 0.0 || dx <= 0.0 || dy <= 0.0) continue;
            Vec3 p0 = d0 * backproject_ray(cam, x, y);
            Vec3 px = dx * backproject_ray(cam, x + 1, y);
            Vec3 py = dy * backproject_ray(cam, x, y + 1);
            Vec3 c = (py - p0).cross(px - p0);
            double n = c.norm();
            if (n < 1e-12) continue;
            out.set_rgb(y, x, c / n);
        }
    }
    return out;
}

Image normal_from_depth_backward(const Image& depth, const CameraView& cam,
                                 const Image& g_normal) {
    int h = depth.height(), w = depth.width();
    Image g_depth(h, w, 1);
    for (int y = 0; y + 1 < h; ++y) {
        for (int x = 0; x + 1 < w; ++x) {
            double d0 = depth.at(y, x, 0);
            double dxv = depth.at(y, x + 1, 0);
            double dyv = depth.at(y + 1, x, 0);
            if (d0 <= 0.0 || dxv <= 0.0 || dyv <= 0.0) continue;
            Vec3 r0 = backproject_ray(cam, x, y);
            Vec3 rx = backproject_ray(cam, x + 1, y);
            Vec3 ry = backproject_ray(cam, x, y + 1);
            Vec3 p0 = d0 * r0, px = dxv * rx, py = dyv * ry;
            Vec3 a = py - p0, b = px - p0;
            Vec3 c = a.cross(b);
            double n = c.norm();
            if (n < 1e-12) continue;
            Vec3 chat = c / n;
            Vec3 gN(g_normal.at(y, x, 0), g_normal.at(y, x, 1), g_normal.at(y, x, 2));
            Vec3 gc = (gN - chat * chat.dot(gN)) / n;
            Vec3 ga = b.cross(gc);
            Vec3 gb = gc.cross(a);
            // a = py - p0, b = px - p0
            g_depth.at(y + 1, x, 0) += ga.dot(ry);
            g_depth.at(y, x + 1, 0) += gb.dot(rx);
            g_depth.at(y, x, 0) -= (ga + gb).dot(r0);
        }
    }
    return g_depth;
}

double loss_normal_consistency(const RenderTargets& rt, const Image& depth_normal) {
    double total = 0.0;
    size_t valid = 0;
    for (int y = 0; y < rt.height; ++y) {
        for (int x = 0; x < rt.width; ++x) {
            Vec3 N(depth_normal.at(y, x, 0), depth_normal.at(y, x, 1), depth_normal.at(y, x, 2));
            if (N.squaredNorm() < 1e-12) continue;
            ++valid;
            for (const Fragment& f : rt.at(y, x)) total += f.weight * (1.0 - f.normal.dot(N));
        }
    }
    return valid ? total / valid : 0.0;
}

void loss_normal_consistency_backward(const RenderTargets& rt, const Image& depth_normal, double g,
                                      std::vector<std::vector<double>>& g_weight,
                                      std::vector<std::vector<Vec3>>& g_normal,
                                      Image& g_depth_normal) {
    size_t valid = 0;
    for (int y = 0; y < rt.height; ++y)
        for (int x = 0; x < rt.width; ++x) {
            Vec3 N(depth_normal.at(y, x, 0), depth_normal.at(y, x, 1), depth_normal.at(y, x, 2));
            if (N.squaredNorm() >= 1e-12) ++valid;
        }
    if (!valid) return;
    double s = g / valid;
    for (int y = 0; y < rt.height; ++y) {
        for (int x = 0; x < rt.width; ++x) {
            Vec3 N(depth_normal.at(y, x, 0), depth_normal.at(y, x, 1), depth_normal.at(y, x, 2));
            if (N.squaredNorm() < 1e-12) continue;
            size_t p = static_cast<size_t>(y) * rt.width + x;
            Vec3 gN = Vec3::Zero();
            const std::vector<Fragment>& frags = rt.records[p];
            for (size_t k = 0; k < frags.size(); ++k) {
                const Fragment& f = frags[k];
                g_weight[p][k] += s * (1.0 - f.normal.dot(N));
                g_normal[p][k] -= s * f.weight * N;
                gN -= s * f.weight * f.normal;
            }
            g_depth_normal.at(y, x, 0) += gN[0];
            g_depth_normal.at(y, x, 1) += gN[1];
            g_depth_normal.at(y, x, 2) += gN[2];
        }
    }
}

double loss_total(const LossComponents& c, const LossWeights& w) {
    return c.l1 + w.lambda_s * c.ssim + w.lambda_n * c.ln + w.lambda_d * c.ld;
}

}  // namespace d2dgs
