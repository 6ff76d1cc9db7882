#include "sketchcloud/kdtree.hpp"

#include <algorithm>
#include <limits>

#include "sketchcloud/errors.hpp"

namespace sketchcloud {

namespace {

constexpr std::size_t kLeafSize = 8;

double coord(const Point3& p, int axis) { return axis == 0 ? p.x : axis == 1 ? p.y : p.z; }

double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

void consider(const PointCloud& pts, std::size_t i, const Point3& q, Neighbor& best) {
  const double d = squared_distance(pts[i], q);
  if (d < best.squared_distance || (d == best.squared_distance && i < best.index)) best = {i, d};
}

}  // namespace

KdTree::KdTree(const PointCloud& points) : points_(points), order_(points.size()) {
  if (points.empty()) throw DataError("kd-tree: empty point set");
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * points.size() / kLeafSize + 2);
  build(0, order_.size());
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  // Split on the widest axis at the median.
  double lo[3] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity()};
  double hi[3] = {-lo[0], -lo[1], -lo[2]};
  for (std::size_t i = begin; i < end; ++i) {
    for (int a = 0; a < 3; ++a) {
      const double c = coord(points_[order_[i]], a);
      lo[a] = std::min(lo[a], c);
      hi[a] = std::max(hi[a], c);
    }
  }
  int axis = 0;
  for (int a = 1; a < 3; ++a) {
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  }
  if (hi[axis] - lo[axis] == 0) return id;  // all points coincide

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<long>(begin), order_.begin() + static_cast<long>(mid),
                   order_.begin() + static_cast<long>(end), [&](std::size_t a, std::size_t b) {
                     const double ca = coord(points_[a], axis), cb = coord(points_[b], axis);
                     return ca < cb || (ca == cb && a < b);
                   });
  const double split = coord(points_[order_[mid]], axis);
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  auto& node = nodes_[id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

void KdTree::search(std::size_t id, const Point3& q, Neighbor& best) const {
  const Node& node = nodes_[id];
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) consider(points_, order_[i], q, best);
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double diff = coord(q, node.axis) - node.split;
  const std::size_t near = diff < 0 ? node.left : node.right;
  const std::size_t far = diff < 0 ? node.right : node.left;
  search(near, q, best);
  // Equal distances must still be explored for the lowest-index tie rule.
  if (diff * diff <= best.squared_distance) search(far, q, best);
}

Neighbor KdTree::nearest(const Point3& query) const {
  Neighbor best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()};
  search(0, query, best);
  return best;
}

Neighbor brute_force_nearest(const PointCloud& points, const Point3& query) {
  if (points.empty()) throw DataError("nearest neighbor: empty point set");
  Neighbor best{0, squared_distance(points[0], query)};
  for (std::size_t i = 1; i < points.size(); ++i) consider(points, i, query, best);
  return best;
}

}  // namespace sketchcloud
