#pragma once

// Differentiable training losses.

#include "sketchcloud/geometry.hpp"
#include "sketchcloud/tensor.hpp"

namespace sketchcloud {

struct LossWeights {
  double chamfer = 1.0;   // λ1
  double density = 1e4;   // λ2
};

// Σ_bins |p̂ − p| between a predicted map (any shape holding H·W values in
// row-v order) and the target. Subgradient 0 where the two agree exactly.
template <typename T>
BasicTensor<T> density_l1(const BasicTensor<T>& predicted, const DensityMap& target);

// Symmetric Chamfer distance between predicted points (N×3) and a fixed
// target cloud. Nearest neighbors are recomputed on every call.
template <typename T>
BasicTensor<T> chamfer_loss(const BasicTensor<T>& predicted, const PointCloud& target);

double total_loss(double chamfer_value, double density_value, const LossWeights& weights);

// λ1·chamfer + λ2·density as a graph node.
template <typename T>
BasicTensor<T> total_loss(const BasicTensor<T>& chamfer_value, const BasicTensor<T>& density_value,
                          const LossWeights& weights);

}  // namespace sketchcloud
