#pragma once

#include <string>
#include <vector>

#include "d2dgs/image.hpp"
#include "d2dgs/losses.hpp"
#include "d2dgs/meshing.hpp"
#include "d2dgs/rng.hpp"

namespace d2dgs {

// 10*log10(1/MSE) for images in [0,1]; identical images give +infinity.
double psnr(const Image& a, const Image& b);

struct PointSample {
    std::vector<Vec3> points;

    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

// Area-weighted triangle selection with uniform barycentric placement.
PointSample sample_mesh(const TriangleMesh& mesh, size_t n, uint64_t seed);

// CD = mean_a min_b |x-y| + mean_b min_a |x-y| (no squaring).
double chamfer(const PointSample& a, const PointSample& b);

struct EmdResult {
    double value = 0.0;
    std::string mode;  // "exact", "auction", "auction-subsampled"
};

// Mean matching distance under a minimum-cost perfect matching: exact
// assignment for n <= 512, epsilon-scaling auction up to 4096, deterministic
// subsampling beyond.
EmdResult emd(const PointSample& a, const PointSample& b);

struct EvalConfig {
    int cd_samples = 10000;
    int emd_samples = 512;  // kept in the exact-assignment regime
    uint64_t seed = 0;
};

struct FrameEval {
    double t = 0.0;
    double cd = 0.0;
    double emd = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct SequenceReport {
    std::vector<FrameEval> rows;
    FrameEval mean;
    std::string emd_mode;
};

// Image lists may be empty (metrics reported as NaN) but must otherwise align
// with the timestamp list.
SequenceReport evaluate_sequence(const std::vector<double>& timestamps,
                                 const std::vector<TriangleMesh>& pred,
                                 const std::vector<TriangleMesh>& gt,
                                 const std::vector<Image>& pred_images,
                                 const std::vector<Image>& gt_images,
                                 const EvalConfig& cfg = {});

void write_report_csv(const std::string& path, const SequenceReport& report);
std::string format_report(const SequenceReport& report);

}  // namespace d2dgs
