#include "d2dgs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "d2dgs/kdtree.hpp"
#include "d2dgs/parallel.hpp"

namespace d2dgs {

double psnr(const Image& a, const Image& b) {
    a.require_same_shape(b, "psnr");
    if (a.empty()) throw std::invalid_argument("psnr: empty image");
    double mse = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a.raw()[i] - b.raw()[i];
        mse += d * d;
    }
    mse /= double(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

PointSample sample_mesh(const TriangleMesh& mesh, size_t n, uint64_t seed) {
    if (mesh.triangles.empty()) throw std::invalid_argument("sample_mesh: empty mesh");
    std::vector<double> cdf(mesh.triangles.size());
    double total = 0.0;
    for (size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        const Vec3 e1 = mesh.vertices[t[1]] - mesh.vertices[t[0]];
        const Vec3 e2 = mesh.vertices[t[2]] - mesh.vertices[t[0]];
        total += 0.5 * e1.cross(e2).norm();
        cdf[i] = total;
    }
    if (total <= 0.0) throw std::invalid_argument("sample_mesh: zero surface area");

    Rng rng = Rng(seed).fork("sample_mesh");
    PointSample out;
    out.points.reserve(n);
    for (size_t k = 0; k < n; ++k) {
        const double r = rng.uniform(0.0, total);
        const size_t i = std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin();
        const auto& t = mesh.triangles[std::min(i, mesh.triangles.size() - 1)];
        const double s = std::sqrt(rng.uniform());
        const double v = rng.uniform();
        const double wa = 1.0 - s, wb = s * (1.0 - v), wc = s * v;
        out.points.push_back(wa * mesh.vertices[t[0]] + wb * mesh.vertices[t[1]] +
                             wc * mesh.vertices[t[2]]);
    }
    return out;
}

double chamfer(const PointSample& a, const PointSample& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty point set");
    const KdTree ta(a.points), tb(b.points);
    double ab = 0.0, ba = 0.0;
    for (const Vec3& p : a.points) ab += tb.nearest(p).dist;
    for (const Vec3& p : b.points) ba += ta.nearest(p).dist;
    return ab / double(a.size()) + ba / double(b.size());
}

namespace {

// Assignment problem via shortest augmenting paths with potentials; returns
// the minimum total cost. cost is a dense n*n row-major matrix.
double solve_assignment(const std::vector<double>& cost, int n) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j)
                if (!used[j]) {
                    const double cur = cost[size_t(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if (cur < minv[j]) {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if (minv[j] < delta) {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    double total = 0.0;
    for (int j = 1; j <= n; ++j) total += cost[size_t(p[j] - 1) * n + (j - 1)];
    return total;
}

// Forward auction with epsilon scaling; returns the matched total cost, which
// is within n*eps_final of the optimum. Distances are computed on the fly.
double auction_matching(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    const int n = int(a.size());
    double cmax = 0.0;
    for (int i = 0; i < n; i += std::max(1, n / 64))
        for (int j = 0; j < n; j += std::max(1, n / 64))
            cmax = std::max(cmax, (a[i] - b[j]).norm());
    if (cmax <= 0.0) cmax = 1.0;

    std::vector<double> price(n, 0.0);
    std::vector<int> owner(n, -1), match(n, -1);
    const double eps_final = 1e-6 * cmax;
    for (double eps = 0.25 * cmax; ; eps *= 0.2) {
        if (eps < eps_final) eps = eps_final;
        std::fill(owner.begin(), owner.end(), -1);
        std::fill(match.begin(), match.end(), -1);
        std::vector<int> queue(n);
        std::iota(queue.begin(), queue.end(), 0);
        while (!queue.empty()) {
            const int i = queue.back();
            queue.pop_back();
            int best = -1;
            double w1 = -std::numeric_limits<double>::infinity(), w2 = w1;
            for (int j = 0; j < n; ++j) {
                const double value = -(a[i] - b[j]).norm() - price[j];
                if (value > w1) {
                    w2 = w1;
                    w1 = value;
                    best = j;
                } else if (value > w2) {
                    w2 = value;
                }
            }
            price[best] += (w1 - w2) + eps;
            if (owner[best] >= 0) {
                match[owner[best]] = -1;
                queue.push_back(owner[best]);
            }
            owner[best] = i;
            match[i] = best;
        }
        if (eps <= eps_final) break;
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += (a[i] - b[match[i]]).norm();
    return total;
}

std::vector<Vec3> even_subsample(const std::vector<Vec3>& pts, size_t m) {
    std::vector<Vec3> out;
    out.reserve(m);
    for (size_t k = 0; k < m; ++k) out.push_back(pts[k * pts.size() / m]);
    return out;
}

}  // namespace

EmdResult emd(const PointSample& a, const PointSample& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("emd: empty point set");
    std::vector<Vec3> pa = a.points, pb = b.points;
    EmdResult res;
    const size_t m = std::min(pa.size(), pb.size());
    if (pa.size() != pb.size()) {
        pa = even_subsample(pa, m);
        pb = even_subsample(pb, m);
    }
    if (m > 4096) {
        pa = even_subsample(pa, 4096);
        pb = even_subsample(pb, 4096);
        res.mode = "auction-subsampled";
    }
    // Canonical argument order keeps the approximate path exactly symmetric.
    auto less = [](const std::vector<Vec3>& x, const std::vector<Vec3>& y) {
        for (size_t i = 0; i < x.size(); ++i)
            for (int c = 0; c < 3; ++c)
                if (x[i][c] != y[i][c]) return x[i][c] < y[i][c];
        return false;
    };
    if (less(pb, pa)) std::swap(pa, pb);

    const int n = int(pa.size());
    if (n <= 512) {
        std::vector<double> cost(size_t(n) * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) cost[size_t(i) * n + j] = (pa[i] - pb[j]).norm();
        res.value = solve_assignment(cost, n) / double(n);
        res.mode = "exact";
    } else {
        res.value = auction_matching(pa, pb) / double(n);
        if (res.mode.empty()) res.mode = "auction";
    }
    return res;
}

SequenceReport evaluate_sequence(const std::vector<double>& timestamps,
                                 const std::vector<TriangleMesh>& pred,
                                 const std::vector<TriangleMesh>& gt,
                                 const std::vector<Image>& pred_images,
                                 const std::vector<Image>& gt_images,
                                 const EvalConfig& cfg) {
    const size_t n = timestamps.size();
    if (pred.size() != n || gt.size() != n)
        throw std::invalid_argument("evaluate_sequence: mesh/timestamp length mismatch");
    if (pred_images.size() != gt_images.size())
        throw std::invalid_argument("evaluate_sequence: image list length mismatch");
    if (!pred_images.empty() && pred_images.size() != n)
        throw std::invalid_argument("evaluate_sequence: image/timestamp length mismatch");
    if (n == 0) throw std::invalid_argument("evaluate_sequence: empty sequence");

    SequenceReport report;
    report.rows.resize(n);
    std::vector<std::string> modes(n);
    parallel_for(int64_t(n), [&](int64_t i) {
        FrameEval& row = report.rows[i];
        row.t = timestamps[i];
        Rng child = Rng(cfg.seed).fork("eval").fork(std::to_string(i));
        const uint64_t seed = child.next_u64();
        PointSample sp = sample_mesh(pred[i], size_t(cfg.cd_samples), seed);
        PointSample sg = sample_mesh(gt[i], size_t(cfg.cd_samples), seed + 1);
        row.cd = chamfer(sp, sg);
        PointSample ep = sample_mesh(pred[i], size_t(cfg.emd_samples), seed + 2);
        PointSample eg = sample_mesh(gt[i], size_t(cfg.emd_samples), seed + 3);
        EmdResult er = emd(ep, eg);
        row.emd = er.value;
        modes[i] = er.mode;
        if (!pred_images.empty()) {
            row.psnr = psnr(pred_images[i], gt_images[i]);
            row.ssim = ssim(pred_images[i], gt_images[i]);
        } else {
            row.psnr = std::numeric_limits<double>::quiet_NaN();
            row.ssim = std::numeric_limits<double>::quiet_NaN();
        }
    });
    report.emd_mode = modes[0];

    FrameEval& mean = report.mean;
    mean.t = std::numeric_limits<double>::quiet_NaN();
    for (const FrameEval& row : report.rows) {
        mean.cd += row.cd / double(n);
        mean.emd += row.emd / double(n);
        mean.psnr += row.psnr / double(n);
        mean.ssim += row.ssim / double(n);
    }
    return report;
}

namespace {

std::string fmt_metric(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream ss;
    ss << std::setprecision(10) << v;
    return ss.str();
}

}  // namespace

void write_report_csv(const std::string& path, const SequenceReport& report) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << "t,cd,emd,psnr,ssim\n";
    for (const FrameEval& r : report.rows)
        f << fmt_metric(r.t) << "," << fmt_metric(r.cd) << "," << fmt_metric(r.emd) << ","
          << fmt_metric(r.psnr) << "," << fmt_metric(r.ssim) << "\n";
    const FrameEval& m = report.mean;
    f << "mean," << fmt_metric(m.cd) << "," << fmt_metric(m.emd) << "," << fmt_metric(m.psnr)
      << "," << fmt_metric(m.ssim) << "\n";
    if (!f) throw std::runtime_error("failed writing " + path);
}

std::string format_report(const SequenceReport& report) {
    auto cell = [](double v) {
        if (std::isnan(v)) return std::string("nan");
        if (std::isinf(v)) return std::string(v > 0 ? "inf" : "-inf");
        std::ostringstream ss;
        ss << std::fixed << std::setprecision(6) << v;
        return ss.str();
    };
    std::ostringstream out;
    out << std::left << std::setw(10) << "t" << std::setw(14) << "cd" << std::setw(14) << "emd"
        << std::setw(12) << "psnr" << std::setw(12) << "ssim" << "\n";
    auto line = [&](const std::string& label, const FrameEval& r) {
        out << std::left << std::setw(10) << label << std::setw(14) << cell(r.cd) << std::setw(14)
            << cell(r.emd) << std::setw(12) << cell(r.psnr) << std::setw(12) << cell(r.ssim)
            << "\n";
    };
    for (const FrameEval& r : report.rows) {
        std::ostringstream t;
        t << std::fixed << std::setprecision(4) << r.t;
        line(t.str(), r);
    }
    line("mean", report.mean);
    out << "emd mode: " << report.emd_mode << "\n";
    return out.str();
}

}  // namespace d2dgs
