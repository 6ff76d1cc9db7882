#pragma once

// Dense row-major arrays with define-by-run reverse-mode differentiation.
//
// A BasicTensor is a cheap handle onto a shared graph node. Every op returns a
// fresh node that remembers its inputs and a backward rule whenever at least
// one input requires a gradient; the graph is rebuilt on every forward pass
// and freed when the last handle goes away.
//
// Kernels are templated on the scalar type. Models and training run on
// float; the finite-difference checker re-evaluates the same code in double.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sketchcloud {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class BasicTensor;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

std::uint64_t next_node_id();

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// While alive, nondifferentiable decisions made by ops on this thread (ReLU
// signs, L1 signs, nearest-neighbor choices, normalization fallback) are
// folded into a signature. Two evaluations with equal signatures took the
// same branches, so a finite difference between them is meaningful.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  std::uint64_t signature() const { return signature_; }

 private:
  std::uint64_t signature_;
  std::uint64_t* previous_;
};

namespace detail {
bool branch_recording();
void record_branch(std::uint64_t value);
}  // namespace detail

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor() = default;

  static BasicTensor constant(Shape shape, std::vector<T> values);
  static BasicTensor zeros(Shape shape);
  static BasicTensor full(Shape shape, T value);
  static BasicTensor scalar(T value);
  // Leaf that accumulates gradients.
  static BasicTensor parameter(Shape shape, std::vector<T> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }
  std::uint64_t node_id() const { return node_->id; }

  std::span<const T> values() const { return node_->value; }
  // Only leaves may be mutated in place (optimizer updates, checkpoint loads).
  std::span<T> mutable_values();

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();

  T item() const;

  const NodePtr& node() const { return node_; }
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<float>;

namespace autograd {

// Builds an op result. The backward rule is attached only when grad mode is
// on and some input requires a gradient.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> values,
                           std::vector<BasicTensor<T>> inputs,
                           std::function<void(detail::Node<T>&)> backward_fn);

// Adds `delta` into the node's gradient when it participates in the graph.
template <typename T>
void accumulate(detail::Node<T>& node, std::span<const T> delta);

}  // namespace autograd

// Populates grad on every node reachable from `loss`. Leaves accumulate across
// calls; interior nodes are reset first. Returns the number of nodes visited.
template <typename T>
std::size_t backward(const BasicTensor<T>& loss);

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding);

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

// log(1 + e^x), computed without overflow.
template <typename T>
BasicTensor<T> softplus(const BasicTensor<T>& input);

// Align-corners bilinear resampling of a C×H×W grid.
template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& input, std::size_t out_h,
                               std::size_t out_w);

// Bilinear lookup of per-channel values at continuous pixel positions
// (column, row) of a C×H×W grid; returns N×C. Positions are clamped to the grid.
struct SamplePosition {
  double col;
  double row;
};

template <typename T>
BasicTensor<T> sample_bilinear(const BasicTensor<T>& grid,
                               std::span<const SamplePosition> positions);

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> inputs);

// Stacks N×D_i matrices side by side into N×ΣD_i.
template <typename T>
BasicTensor<T> concat_columns(std::span<const BasicTensor<T>> inputs);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);

template <typename T>
BasicTensor<T> stop_gradient(const BasicTensor<T>& a);

// x / (Σx + eps). When Σx < eps the result is the uniform array 1/n and no
// gradient flows.
template <typename T>
BasicTensor<T> normalize_sum(const BasicTensor<T>& a, double eps);

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return add(a, b);
}

template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return mul(a, b);
}

// Converts values between scalar types; the result is a constant.
template <typename To, typename From>
BasicTensor<To> cast_constant(const BasicTensor<From>& a) {
  std::vector<To> out(a.values().begin(), a.values().end());
  return BasicTensor<To>::constant(a.shape(), std::move(out));
}

// True iff every value (and gradient, when present) is finite.
template <typename T>
bool all_finite(const BasicTensor<T>& a);

}  // namespace sketchcloud
