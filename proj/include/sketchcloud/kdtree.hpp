#pragma once

#include <cstddef>
#include <vector>

#include "sketchcloud/geometry.hpp"

namespace sketchcloud {

struct Neighbor {
  std::size_t index = 0;
  double squared_distance = 0;
};

// Static 3-D k-d tree over a borrowed point set (the cloud must outlive the
// tree). Ties on distance resolve to the lowest point index, matching a
// linear scan.
class KdTree {
 public:
  explicit KdTree(const PointCloud& points);

  Neighbor nearest(const Point3& query) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::size_t begin, end;  // range in order_
    std::size_t left = 0, right = 0;  // child node ids; 0 = none (root is 0 and never a child)
    int axis = -1;                    // -1 for leaves
    double split = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end);
  void search(std::size_t node, const Point3& q, Neighbor& best) const;

  const PointCloud& points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

// Linear scan reference with the same tie-breaking rule.
Neighbor brute_force_nearest(const PointCloud& points, const Point3& query);

}  // namespace sketchcloud
