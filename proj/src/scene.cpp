#include "d2dgs/scene.hpp"

#include <algorithm>
#include <limits>

#include "d2dgs/kdtree.hpp"
#include "d2dgs/rng.hpp"

namespace d2dgs {

std::vector<int> farthest_point_sample(const std::vector<Vec3>& points, int count,
                                       uint64_t seed) {
    const int n = int(points.size());
    count = std::min(count, n);
    std::vector<int> picked;
    if (count <= 0) return picked;
    picked.reserve(count);

    Rng rng = Rng(seed).fork("fps");
    picked.push_back(int(rng.uniform_index(n)));

    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    while (int(picked.size()) < count) {
        const Vec3& last = points[picked.back()];
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], (points[i] - last).norm());
            if (dist[i] > best_d) {
                best_d = dist[i];
                best = i;
            }
        }
        picked.push_back(best);
    }
    return picked;
}

SceneModel init_scene(const std::vector<Vec3>& points, const std::vector<Vec3>& colors,
                      const SceneConfig& config) {
    if (points.empty()) throw std::invalid_argument("empty point set");
    if (colors.size() != points.size())
        throw std::invalid_argument("init_scene: colors length mismatch");

    const int n = int(points.size());
    KdTree tree(points);

    SceneModel scene;
    scene.config = config;
    scene.surfels.reserve(n);

    const int basis = sh::basis_count(config.sh_degree);
    for (int i = 0; i < n; ++i) {
        Surfel s;
        s.center = points[i];

        // Scale from mean distance to the 3 nearest distinct points.
        auto hits = tree.knn(points[i], 4);
        double sum = 0.0;
        int cnt = 0;
        for (const auto& h : hits) {
            if (h.index == i) continue;
            sum += h.dist;
            if (++cnt == 3) break;
        }
        const double mean_d = cnt > 0 ? std::max(sum / cnt, 1e-8) : 0.1;
        s.log_scales = Vec2::Constant(std::log(mean_d));

        s.opacity_logit = logit(0.1);
        s.sh.assign(size_t(3) * basis, 0.0);
        for (int ch = 0; ch < 3; ++ch)
            s.sh[size_t(ch) * basis] = (colors[i][ch] - 0.5) / sh::kC0;
        scene.surfels.push_back(std::move(s));
    }

    const auto picked = farthest_point_sample(points, config.n_control_points, config.seed);
    scene.controls.points.reserve(picked.size());
    for (const int idx : picked) {
        ControlPoint cp;
        cp.position = points[idx];
        scene.controls.points.push_back(cp);
    }

    // Shared initial radius: mean spacing between each control and its nearest peer.
    double radius = 0.1;
    if (picked.size() >= 2) {
        std::vector<Vec3> cp_pos;
        cp_pos.reserve(picked.size());
        for (const int idx : picked) cp_pos.push_back(points[idx]);
        KdTree cp_tree(cp_pos);
        double sum = 0.0;
        for (size_t i = 0; i < cp_pos.size(); ++i) {
            auto hits = cp_tree.knn(cp_pos[i], 2);
            for (const auto& h : hits)
                if (h.index != int(i)) {
                    sum += h.dist;
                    break;
                }
        }
        radius = std::max(sum / double(cp_pos.size()), 1e-8);
    } else {
        Vec3 lo = points[0], hi = points[0];
        for (const auto& p : points) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        radius = std::max((hi - lo).norm() * 0.5, 0.1);
    }
    for (auto& cp : scene.controls.points) cp.log_radius = std::log(radius);

    return scene;
}

}  // namespace d2dgs
