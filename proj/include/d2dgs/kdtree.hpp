#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "d2dgs/math.hpp"

namespace d2dgs {

// Static median-split kd-tree over 3D points. Neighbor results are ordered by
// (distance, index) so ties resolve to the lower index.
class KdTree {
public:
    KdTree() = default;

    explicit KdTree(std::vector<Vec3> points) : pts_(std::move(points)) {
        order_.resize(pts_.size());
        std::iota(order_.begin(), order_.end(), 0);
        nodes_.reserve(pts_.size());
        if (!pts_.empty()) root_ = build(0, int(pts_.size()), 0);
    }

    size_t size() const { return pts_.size(); }

    struct Hit {
        int index;
        double dist;
    };

    // k nearest neighbors of q, closest first.
    std::vector<Hit> knn(const Vec3& q, int k) const {
        std::vector<Hit> best;
        if (k <= 0 || pts_.empty()) return best;
        best.reserve(k + 1);
        search(root_, q, k, best);
        std::sort(best.begin(), best.end(), hit_less);
        return best;
    }

    Hit nearest(const Vec3& q) const {
        auto v = knn(q, 1);
        return v.empty() ? Hit{-1, std::numeric_limits<double>::infinity()} : v[0];
    }

private:
    struct Node {
        int point = -1;
        int axis = 0;
        int left = -1, right = -1;
    };

    static bool hit_less(const Hit& a, const Hit& b) {
        return a.dist < b.dist || (a.dist == b.dist && a.index < b.index);
    }

    int build(int begin, int end, int depth) {
        if (begin >= end) return -1;
        const int axis = depth % 3;
        const int mid = (begin + end) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](int a, int b) {
                             const double pa = pts_[a][axis], pb = pts_[b][axis];
                             return pa < pb || (pa == pb && a < b);
                         });
        Node n;
        n.point = order_[mid];
        n.axis = axis;
        const int self = int(nodes_.size());
        nodes_.push_back(n);
        nodes_[self].left = build(begin, mid, depth + 1);
        nodes_[self].right = build(mid + 1, end, depth + 1);
        return self;
    }

    void search(int node, const Vec3& q, int k, std::vector<Hit>& best) const {
        if (node < 0) return;
        const Node& n = nodes_[node];
        const Vec3& p = pts_[n.point];
        consider(Hit{n.point, (p - q).norm()}, k, best);

        const double delta = q[n.axis] - p[n.axis];
        const int near = delta <= 0 ? n.left : n.right;
        const int far = delta <= 0 ? n.right : n.left;
        search(near, q, k, best);
        if (int(best.size()) < k || std::abs(delta) <= worst(best))
            search(far, q, k, best);
    }

    static double worst(const std::vector<Hit>& best) {
        double m = 0.0;
        for (const auto& h : best) m = std::max(m, h.dist);
        return m;
    }

    void consider(const Hit& h, int k, std::vector<Hit>& best) const {
        if (int(best.size()) < k) {
            best.push_back(h);
            return;
        }
        // Replace the current worst if strictly better under (dist, index).
        int wi = 0;
        for (int i = 1; i < int(best.size()); ++i)
            if (hit_less(best[wi], best[i])) wi = i;
        if (hit_less(h, best[wi])) best[wi] = h;
    }

    std::vector<Vec3> pts_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace d2dgs
