#ifndef LMMREG_KDTREE_HPP
#define LMMREG_KDTREE_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "lmmreg/geometry.hpp"

namespace lmmreg {

/// Static kd-tree with exact nearest-neighbor queries under the L1 metric.
/// Split axis is the axis of largest extent, split value the median
/// coordinate. Immutable after build; concurrent queries are safe.
class KdTree {
  public:
    /// Throws EmptyCloud on an empty input. leaf_capacity must be >= 1.
    KdTree(std::vector<Vec3> points, int leaf_capacity = 16);

    /// Index and L1 distance of the closest indexed point. Ties go to the
    /// smallest index, matching a linear scan with the same rule.
    std::pair<std::size_t, double> nearest_l1(const Vec3& query) const;

    const std::vector<Vec3>& points() const { return points_; }
    std::size_t size() const { return points_.size(); }

    /// Leaf membership check support: indices grouped by leaf, for tests.
    std::vector<std::vector<std::size_t>> leaves() const;

  private:
    struct Node {
        int axis = -1;         // -1 marks a leaf
        double split = 0.0;
        std::int32_t left = -1, right = -1;   // children (internal nodes)
        std::int32_t begin = 0, end = 0;      // index range (leaves)
    };

    std::int32_t build(std::int32_t begin, std::int32_t end);
    void search(std::int32_t node, const Vec3& query, std::size_t& best_idx,
                double& best_dist) const;

    std::vector<Vec3> points_;
    std::vector<std::int32_t> order_;  // permutation of point indices, leaf-grouped
    std::vector<Node> nodes_;
    std::int32_t root_ = -1;
    int leaf_capacity_;
};

inline double l1_distance(const Vec3& a, const Vec3& b) {
    return std::abs(a.x() - b.x()) + std::abs(a.y() - b.y()) +
           std::abs(a.z() - b.z());
}

}  // namespace lmmreg

#endif
