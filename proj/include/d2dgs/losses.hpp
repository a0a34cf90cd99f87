#pragma once

#include "d2dgs/image.hpp"
#include "d2dgs/renderer.hpp"
#include "d2dgs/scene.hpp"

namespace d2dgs {

struct LossWeights {
    double lambda_s = 1.0;     // SSIM
    double lambda_n = 0.02;    // normal consistency
    double lambda_d = 1000.0;  // depth distortion
};

struct LossComponents {
    double l1 = 0.0;
    double ssim = 0.0;  // 1 - SSIM
    double ln = 0.0;
    double ld = 0.0;
};

double loss_l1(const Image& rendered, const Image& truth);
void loss_l1_backward(const Image& rendered, const Image& truth, double g, Image& g_rendered);

// Mean SSIM over channels, 11x11 Gaussian window sigma=1.5, valid region only.
double ssim(const Image& a, const Image& b);
double loss_ssim(const Image& rendered, const Image& truth);
// Accumulates d(1 - SSIM)/d(rendered) * g into g_rendered.
void loss_ssim_backward(const Image& rendered, const Image& truth, double g, Image& g_rendered);

// Depth distortion over per-pixel intersection records (unordered pairs),
// averaged over pixels with at least one intersection.
double loss_depth_distortion(const RenderTargets& rt);
// g_weight/g_z mirror the records layout (per pixel, per fragment).
void loss_depth_distortion_backward(const RenderTargets& rt, double g,
                                    std::vector<std::vector<double>>& g_weight,
                                    std::vector<std::vector<double>>& g_z);

// Back-projected forward-difference normals; zero where undefined.
Image normal_from_depth(const Image& depth, const CameraView& cam);
// Returns dL/d(depth) given dL/d(normal map).
Image normal_from_depth_backward(const Image& depth, const CameraView& cam,
                                 const Image& g_normal);

// Per-pixel sum of omega_i (1 - n_i . N), averaged over pixels with valid N.
double loss_normal_consistency(const RenderTargets& rt, const Image& depth_normal);
void loss_normal_consistency_backward(const RenderTargets& rt, const Image& depth_normal, double g,
                                      std::vector<std::vector<double>>& g_weight,
                                      std::vector<std::vector<Vec3>>& g_normal,
                                      Image& g_depth_normal);

double loss_total(const LossComponents& c, const LossWeights& w);

}  // namespace d2dgs
