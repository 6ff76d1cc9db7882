#include "sketchcloud/losses.hpp"

#include <cmath>
#include <string>

#include "sketchcloud/errors.hpp"
#include "sketchcloud/kdtree.hpp"

namespace sketchcloud {

template <typename T>
BasicTensor<T> density_l1(const BasicTensor<T>& predicted, const DensityMap& target) {
  if (predicted.numel() != target.grid().size()) {
    throw DimensionError("density_l1: prediction " + shape_string(predicted.shape()) + " does not match " +
                         std::to_string(target.grid().width()) + "x" + std::to_string(target.grid().height()) +
                         " target grid");
  }
  const auto& p = target.values();
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(predicted.values()[i]) - p[i];
    total += std::abs(d);
    if (detail::branch_recording()) detail::record_branch(d > 0 ? 2 : (d < 0 ? 0 : 1));
  }
  return autograd::make_result<T>({1}, {static_cast<T>(total)}, {predicted}, [p](detail::Node<T>& node) {
    auto& x = *node.inputs[0];
    if (!x.requires_grad) return;
    auto& g = x.ensure_grad();
    const T up = node.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = static_cast<double>(x.value[i]) - p[i];
      if (d > 0) g[i] += up;
      else if (d < 0) g[i] -= up;
    }
  });
}

template <typename T>
BasicTensor<T> chamfer_loss(const BasicTensor<T>& predicted, const PointCloud& target) {
  if (predicted.rank() != 2 || predicted.dim(1) != 3) {
    throw DimensionError("chamfer_loss: predicted points must be N×3, got " + shape_string(predicted.shape()));
  }
  if (target.empty()) throw DataError("chamfer_loss: empty target cloud");
  const std::size_t n = predicted.dim(0), m = target.size();
  PointCloud pred(n);
  const auto v = predicted.values();
  for (std::size_t i = 0; i < n; ++i) pred[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};

  const KdTree target_tree(target);
  const KdTree pred_tree(pred);
  std::vector<std::size_t> to_target(n), to_pred(m);
  double forward = 0, reverse = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = target_tree.nearest(pred[i]);
    to_target[i] = nb.index;
    detail::record_branch(nb.index);
    forward += nb.squared_distance;
  }
  for (std::size_t j = 0; j < m; ++j) {
    const auto nb = pred_tree.nearest(target[j]);
    to_pred[j] = nb.index;
    detail::record_branch(nb.index);
    reverse += nb.squared_distance;
  }
  const double value = forward / static_cast<double>(n) + reverse / static_cast<double>(m);

  return autograd::make_result<T>(
      {1}, {static_cast<T>(value)}, {predicted},
      [pred = std::move(pred), target, to_target = std::move(to_target), to_pred = std::move(to_pred)](
          detail::Node<T>& node) {
        auto& x = *node.inputs[0];
        if (!x.requires_grad) return;
        auto& g = x.ensure_grad();
        const double up = static_cast<double>(node.grad[0]);
        const double wn = 2.0 * up / static_cast<double>(pred.size());
        const double wm = 2.0 * up / static_cast<double>(target.size());
        std::vector<double> acc(3 * pred.size(), 0.0);
        for (std::size_t i = 0; i < pred.size(); ++i) {
          const auto& t = target[to_target[i]];
          acc[3 * i] += wn * (pred[i].x - t.x);
          acc[3 * i + 1] += wn * (pred[i].y - t.y);
          acc[3 * i + 2] += wn * (pred[i].z - t.z);
        }
        for (std::size_t j = 0; j < target.size(); ++j) {
          const std::size_t i = to_pred[j];
          acc[3 * i] += wm * (pred[i].x - target[j].x);
          acc[3 * i + 1] += wm * (pred[i].y - target[j].y);
          acc[3 * i + 2] += wm * (pred[i].z - target[j].z);
        }
        for (std::size_t k = 0; k < acc.size(); ++k) g[k] += static_cast<T>(acc[k]);
      });
}

double total_loss(double chamfer_value, double density_value, const LossWeights& weights) {
  return weights.chamfer * chamfer_value + weights.density * density_value;
}

template <typename T>
BasicTensor<T> total_loss(const BasicTensor<T>& chamfer_value, const BasicTensor<T>& density_value,
                          const LossWeights& weights) {
  return add(scale(chamfer_value, static_cast<T>(weights.chamfer)), scale(density_value, static_cast<T>(weights.density)));
}

#define SKETCHCLOUD_INSTANTIATE(T)                                                         \
  template BasicTensor<T> density_l1<T>(const BasicTensor<T>&, const DensityMap&);         \
  template BasicTensor<T> chamfer_loss<T>(const BasicTensor<T>&, const PointCloud&);       \
  template BasicTensor<T> total_loss<T>(const BasicTensor<T>&, const BasicTensor<T>&, const LossWeights&);

SKETCHCLOUD_INSTANTIATE(float)
SKETCHCLOUD_INSTANTIATE(double)

#undef SKETCHCLOUD_INSTANTIATE

}  // namespace sketchcloud
