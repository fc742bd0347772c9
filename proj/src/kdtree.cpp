#include "lmmreg/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lmmreg/errors.hpp"

namespace lmmreg {

KdTree::KdTree(std::vector<Vec3> points, int leaf_capacity)
    : points_(std::move(points)), leaf_capacity_(std::max(1, leaf_capacity)) {
    if (points_.empty()) throw EmptyCloud("KdTree: empty point set");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * points_.size() / leaf_capacity_ + 2);
    root_ = build(0, static_cast<std::int32_t>(points_.size()));
}

std::int32_t KdTree::build(std::int32_t begin, std::int32_t end) {
    const std::int32_t id = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= leaf_capacity_) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }

    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::int32_t i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);

    const std::int32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end,
                     [&](std::int32_t a, std::int32_t b) {
                         return points_[a][axis] < points_[b][axis];
                     });
    const double split = points_[order_[mid]][axis];

    // Degenerate spread: all coordinates equal on every axis, keep as leaf.
    if (!(lo[axis] < hi[axis])) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }

    nodes_[id].axis = axis;
    nodes_[id].split = split;
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

void KdTree::search(std::int32_t node, const Vec3& query, std::size_t& best_idx,
                    double& best_dist) const {
    const Node& n = nodes_[node];
    if (n.axis < 0) {
        for (std::int32_t i = n.begin; i < n.end; ++i) {
            const std::size_t idx = static_cast<std::size_t>(order_[i]);
            const double d = l1_distance(query, points_[idx]);
            if (d < best_dist || (d == best_dist && idx < best_idx)) {
                best_dist = d;
                best_idx = idx;
            }
        }
        return;
    }
    const double delta = query[n.axis] - n.split;
    const std::int32_t near = delta <= 0.0 ? n.left : n.right;
    const std::int32_t far = delta <= 0.0 ? n.right : n.left;
    search(near, query, best_idx, best_dist);
    // |delta| lower-bounds the L1 distance to anything across the split
    // plane; <= rather than < so equal-distance ties still get visited and
    // the smallest-index rule stays exact.
    if (std::abs(delta) <= best_dist) search(far, query, best_idx, best_dist);
}

std::pair<std::size_t, double> KdTree::nearest_l1(const Vec3& query) const {
    std::size_t best_idx = std::numeric_limits<std::size_t>::max();
    double best_dist = std::numeric_limits<double>::infinity();
    search(root_, query, best_idx, best_dist);
    return {best_idx, best_dist};
}

std::vector<std::vector<std::size_t>> KdTree::leaves() const {
    std::vector<std::vector<std::size_t>> out;
    for (const Node& n : nodes_) {
        if (n.axis >= 0) continue;
        std::vector<std::size_t> leaf;
        for (std::int32_t i = n.begin; i < n.end; ++i)
            leaf.push_back(static_cast<std::size_t>(order_[i]));
        out.push_back(std::move(leaf));
    }
    return out;
}

}  // namespace lmmreg
