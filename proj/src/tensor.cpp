#include "sketchcloud/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "sketchcloud/errors.hpp"

namespace sketchcloud {

namespace {

thread_local bool g_grad_enabled = true;

std::string dims_message(const char* op, const std::string& detail) {
  return std::string(op) + ": " + detail;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

namespace {
thread_local std::uint64_t* g_branch_signature = nullptr;
}  // namespace

BranchRecorder::BranchRecorder() : signature_(0x84222325cbf29ce4ULL), previous_(g_branch_signature) {
  g_branch_signature = &signature_;
}
BranchRecorder::~BranchRecorder() { g_branch_signature = previous_; }

namespace detail {

bool branch_recording() { return g_branch_signature != nullptr; }

void record_branch(std::uint64_t value) {
  if (!g_branch_signature) return;
  std::uint64_t x = *g_branch_signature ^ (value + 0x9e3779b97f4a7c15ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  *g_branch_signature = x ^ (x >> 31);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BasicTensor
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> BasicTensor<T>::constant(Shape shape, std::vector<T> values) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor: zero-sized dimension in " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->id = detail::next_node_id();
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  const auto n = shape_numel(shape);
  return constant(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return constant({1}, {value});
}

template <typename T>
BasicTensor<T> BasicTensor<T>::parameter(Shape shape, std::vector<T> values) {
  auto t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_values() {
  if (!node_->is_leaf()) throw DimensionError("tensor: cannot mutate a non-leaf node in place");
  return node_->value;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  node_->grad.clear();
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item: tensor " + shape_string(shape()) + " is not a scalar");
  return node_->value[0];
}

template <typename T>
bool all_finite(const BasicTensor<T>& a) {
  for (T v : a.values()) {
    if (!std::isfinite(v)) return false;
  }
  for (T v : a.grad()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Graph plumbing
// ---------------------------------------------------------------------------

namespace autograd {

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> values,
                           std::vector<BasicTensor<T>> inputs,
                           std::function<void(detail::Node<T>&)> backward_fn) {
  auto out = BasicTensor<T>::constant(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (auto& in : inputs) node.inputs.push_back(in.node());
  node.backward_fn = std::move(backward_fn);
  return out;
}

template <typename T>
void accumulate(detail::Node<T>& node, std::span<const T> delta) {
  if (!node.requires_grad) return;
  auto& g = node.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace autograd

template <typename T>
std::size_t backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar, got " +
                         (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  using NodeT = detail::Node<T>;
  NodeT* root = loss.node().get();
  if (!root->requires_grad) return 0;

  // Iterative post-order DFS gives a topological order with inputs first.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  root->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
  return order.size();
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

// y[0..n) += a * x[0..n)
template <typename T>
inline void axpy(std::size_t n, T a, const T* __restrict x, T* __restrict y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

struct ConvGeometry {
  std::size_t channels, height, width, kernel, out_h, out_w;
  int stride, padding;
};

// cols[(c*k + ki)*k + kj][oy*out_w + ox]
template <typename T>
std::vector<T> im2col(const T* x, const ConvGeometry& g) {
  const std::size_t plane = g.out_h * g.out_w;
  std::vector<T> cols(g.channels * g.kernel * g.kernel * plane, T(0));
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = &cols[((c * g.kernel + ki) * g.kernel + kj) * plane];
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.padding + static_cast<long>(ki);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          const T* src = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.padding + static_cast<long>(kj);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            row[oy * g.out_w + ox] = src[ix];
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* gx) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = &cols[((c * g.kernel + ki) * g.kernel + kj) * plane];
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.padding + static_cast<long>(ki);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* dst = gx + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.padding + static_cast<long>(kj);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            dst[ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

// Out-of-place transpose of a rows×cols row-major matrix.
template <typename T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = std::min(rows, r0 + kBlock);
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) t[c * rows + r] = a[r * cols + c];
      }
    }
  }
  return t;
}

struct BilinearTap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

// Align-corners source coordinate for output index `o` of `out` samples over
// an axis of `in` samples.
double align_corners_source(std::size_t o, std::size_t out, std::size_t in) {
  if (out < 2 || in < 2) return 0.0;
  return static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

BilinearTap tap_at(double pos, std::size_t in) {
  const double hi = static_cast<double>(in - 1);
  pos = std::clamp(pos, 0.0, hi);
  auto i0 = static_cast<std::size_t>(std::floor(pos));
  if (i0 > in - 1) i0 = in - 1;
  const std::size_t i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, pos - static_cast<double>(i0)};
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding) {
  if (input.rank() != 3) throw DimensionError(dims_message("conv2d", "input must be C×H×W, got " + shape_string(input.shape())));
  if (weight.rank() != 4) throw DimensionError(dims_message("conv2d", "weight must be O×C×k×k, got " + shape_string(weight.shape())));
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t c_out = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c_in) {
    throw DimensionError(dims_message("conv2d", "weight expects " + std::to_string(weight.dim(1)) +
                                                    " input channels, input has " + std::to_string(c_in)));
  }
  if (weight.dim(3) != k || k % 2 == 0) throw DimensionError(dims_message("conv2d", "kernel must be square and odd, got " + shape_string(weight.shape())));
  if (bias.numel() != c_out) throw DimensionError(dims_message("conv2d", "bias has " + std::to_string(bias.numel()) + " entries for " + std::to_string(c_out) + " output channels"));
  if (stride < 1 || padding < 0) throw DimensionError(dims_message("conv2d", "stride must be >= 1 and padding >= 0"));
  const long span_h = static_cast<long>(h) + 2L * padding - static_cast<long>(k);
  const long span_w = static_cast<long>(w) + 2L * padding - static_cast<long>(k);
  if (span_h < 0 || span_w < 0) throw DimensionError(dims_message("conv2d", "kernel " + std::to_string(k) + " larger than padded input " + shape_string(input.shape())));

  ConvGeometry g{c_in, h, w, k,
                 static_cast<std::size_t>(span_h / stride + 1),
                 static_cast<std::size_t>(span_w / stride + 1), stride, padding};
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t depth = c_in * k * k;

  auto cols = std::make_shared<std::vector<T>>(im2col(input.values().data(), g));
  std::vector<T> out(c_out * plane);
  const T* wv = weight.values().data();
  const T* bv = bias.values().data();
  for (std::size_t o = 0; o < c_out; ++o) {
    T* dst = &out[o * plane];
    std::fill(dst, dst + plane, bv[o]);
    for (std::size_t j = 0; j < depth; ++j) axpy(plane, wv[o * depth + j], &(*cols)[j * plane], dst);
  }

  return autograd::make_result<T>(
      {c_out, g.out_h, g.out_w}, std::move(out), {input, weight, bias},
      [g, cols, c_out, plane, depth](detail::Node<T>& node) {
        auto& x = *node.inputs[0];
        auto& wt = *node.inputs[1];
        auto& b = *node.inputs[2];
        const T* gout = node.grad.data();
        if (b.requires_grad) {
          auto& gb = b.ensure_grad();
          for (std::size_t o = 0; o < c_out; ++o) {
            T s = 0;
            for (std::size_t p = 0; p < plane; ++p) s += gout[o * plane + p];
            gb[o] += s;
          }
        }
        if (wt.requires_grad) {
          auto& gw = wt.ensure_grad();
          const auto cols_t = transpose(cols->data(), depth, plane);
          for (std::size_t o = 0; o < c_out; ++o) {
            for (std::size_t p = 0; p < plane; ++p) {
              axpy(depth, gout[o * plane + p], &cols_t[p * depth], &gw[o * depth]);
            }
          }
        }
        if (x.requires_grad) {
          std::vector<T> gcols(depth * plane, T(0));
          const T* wv = wt.value.data();
          for (std::size_t o = 0; o < c_out; ++o) {
            for (std::size_t j = 0; j < depth; ++j) axpy(plane, wv[o * depth + j], gout + o * plane, &gcols[j * plane]);
          }
          col2im_add(gcols.data(), g, x.ensure_grad().data());
        }
      });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  if (input.rank() != 2 || weight.rank() != 2) {
    throw DimensionError(dims_message("linear", "expected N×D_in input and D_out×D_in weight, got " +
                                                    shape_string(input.shape()) + " and " + shape_string(weight.shape())));
  }
  const std::size_t n = input.dim(0), d_in = input.dim(1), d_out = weight.dim(0);
  if (weight.dim(1) != d_in) {
    throw DimensionError(dims_message("linear", "inner dimensions disagree: input " + shape_string(input.shape()) +
                                                    ", weight " + shape_string(weight.shape())));
  }
  if (bias.numel() != d_out) throw DimensionError(dims_message("linear", "bias has " + std::to_string(bias.numel()) + " entries, expected " + std::to_string(d_out)));

  const T* x = input.values().data();
  const T* bv = bias.values().data();
  const auto wt = transpose(weight.values().data(), d_out, d_in);  // d_in × d_out
  std::vector<T> out(n * d_out);
  for (std::size_t r = 0; r < n; ++r) {
    T* dst = &out[r * d_out];
    std::copy(bv, bv + d_out, dst);
    for (std::size_t i = 0; i < d_in; ++i) axpy(d_out, x[r * d_in + i], &wt[i * d_out], dst);
  }

  return autograd::make_result<T>(
      {n, d_out}, std::move(out), {input, weight, bias},
      [n, d_in, d_out](detail::Node<T>& node) {
        auto& xin = *node.inputs[0];
        auto& w = *node.inputs[1];
        auto& b = *node.inputs[2];
        const T* g = node.grad.data();
        if (b.requires_grad) {
          auto& gb = b.ensure_grad();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t o = 0; o < d_out; ++o) gb[o] += g[r * d_out + o];
        }
        if (w.requires_grad) {
          auto& gw = w.ensure_grad();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t o = 0; o < d_out; ++o) axpy(d_in, g[r * d_out + o], &xin.value[r * d_in], &gw[o * d_in]);
        }
        if (xin.requires_grad) {
          auto& gx = xin.ensure_grad();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t o = 0; o < d_out; ++o) axpy(d_in, g[r * d_out + o], &w.value[o * d_in], &gx[r * d_in]);
        }
      });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  std::vector<T> out(input.values().begin(), input.values().end());
  for (auto& v : out) v = v <= T(0) ? T(0) : v;  // NaN passes through
  if (detail::branch_recording()) {
    for (T v : input.values()) detail::record_branch(v > T(0) ? 1 : 0);
  }
  return autograd::make_result<T>(input.shape(), std::move(out), {input}, [](detail::Node<T>& node) {
    auto& x = *node.inputs[0];
    if (!x.requires_grad) return;
    auto& gx = x.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (x.value[i] > T(0)) gx[i] += node.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> softplus(const BasicTensor<T>& input) {
  std::vector<T> out(input.values().size());
  const auto& xs = input.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xs[i];
    out[i] = v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  }
  return autograd::make_result<T>(input.shape(), std::move(out), {input}, [](detail::Node<T>& node) {
    auto& x = *node.inputs[0];
    if (!x.requires_grad) return;
    auto& gx = x.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i] / (T(1) + std::exp(-x.value[i]));
  });
}

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& input, std::size_t out_h, std::size_t out_w) {
  if (input.rank() != 3) throw DimensionError(dims_message("bilinear_resize", "input must be C×H×W, got " + shape_string(input.shape())));
  if (out_h < 1 || out_w < 1) throw DimensionError(dims_message("bilinear_resize", "output size must be positive"));
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  std::vector<BilinearTap> ty(out_h), tx(out_w);
  for (std::size_t o = 0; o < out_h; ++o) ty[o] = tap_at(align_corners_source(o, out_h, h), h);
  for (std::size_t o = 0; o < out_w; ++o) tx[o] = tap_at(align_corners_source(o, out_w, w), w);

  const T* x = input.values().data();
  std::vector<T> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = x + ch * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
        const T top = src[a.i0 * w + b.i0] * wx0 + src[a.i0 * w + b.i1] * wx1;
        const T bot = src[a.i1 * w + b.i0] * wx0 + src[a.i1 * w + b.i1] * wx1;
        out[(ch * out_h + oy) * out_w + ox] = top * wy0 + bot * wy1;
      }
    }
  }

  return autograd::make_result<T>(
      {c, out_h, out_w}, std::move(out), {input},
      [c, h, w, out_h, out_w, ty, tx](detail::Node<T>& node) {
        auto& xin = *node.inputs[0];
        if (!xin.requires_grad) return;
        auto& gx = xin.ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch) {
          T* dst = &gx[ch * h * w];
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[oy];
            const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const auto& b = tx[ox];
              const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
              const T g = node.grad[(ch * out_h + oy) * out_w + ox];
              dst[a.i0 * w + b.i0] += g * wy0 * wx0;
              dst[a.i0 * w + b.i1] += g * wy0 * wx1;
              dst[a.i1 * w + b.i0] += g * wy1 * wx0;
              dst[a.i1 * w + b.i1] += g * wy1 * wx1;
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> sample_bilinear(const BasicTensor<T>& grid, std::span<const SamplePosition> positions) {
  if (grid.rank() != 3) throw DimensionError(dims_message("sample_bilinear", "grid must be C×H×W, got " + shape_string(grid.shape())));
  if (positions.empty()) throw DimensionError(dims_message("sample_bilinear", "no sample positions"));
  const std::size_t c = grid.dim(0), h = grid.dim(1), w = grid.dim(2);
  const std::size_t n = positions.size();
  struct Taps {
    BilinearTap y, x;
  };
  std::vector<Taps> taps(n);
  for (std::size_t i = 0; i < n; ++i) taps[i] = {tap_at(positions[i].row, h), tap_at(positions[i].col, w)};

  const T* g = grid.values().data();
  std::vector<T> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [a, b] = taps[i];
    const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
    const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = g + ch * h * w;
      const T top = src[a.i0 * w + b.i0] * wx0 + src[a.i0 * w + b.i1] * wx1;
      const T bot = src[a.i1 * w + b.i0] * wx0 + src[a.i1 * w + b.i1] * wx1;
      out[i * c + ch] = top * wy0 + bot * wy1;
    }
  }

  return autograd::make_result<T>(
      {n, c}, std::move(out), {grid}, [c, h, w, n, taps](detail::Node<T>& node) {
        auto& gin = *node.inputs[0];
        if (!gin.requires_grad) return;
        auto& gg = gin.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const auto& [a, b] = taps[i];
          const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
          const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
          for (std::size_t ch = 0; ch < c; ++ch) {
            T* dst = &gg[ch * h * w];
            const T gv = node.grad[i * c + ch];
            dst[a.i0 * w + b.i0] += gv * wy0 * wx0;
            dst[a.i0 * w + b.i1] += gv * wy0 * wx1;
            dst[a.i1 * w + b.i0] += gv * wy1 * wx0;
            dst[a.i1 * w + b.i1] += gv * wy1 * wx1;
          }
        }
      });
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> inputs) {
  if (inputs.empty()) throw DimensionError(dims_message("concat_channels", "no inputs"));
  const auto& first = inputs.front();
  if (first.rank() != 3) throw DimensionError(dims_message("concat_channels", "inputs must be C×H×W, got " + shape_string(first.shape())));
  const std::size_t h = first.dim(1), w = first.dim(2);
  std::size_t total = 0;
  for (const auto& t : inputs) {
    if (t.rank() != 3 || t.dim(1) != h || t.dim(2) != w) {
      throw DimensionError(dims_message("concat_channels", "spatial mismatch: " + shape_string(first.shape()) +
                                                               " vs " + shape_string(t.shape())));
    }
    total += t.dim(0);
  }
  std::vector<T> out;
  out.reserve(total * h * w);
  std::vector<std::size_t> offsets;
  for (const auto& t : inputs) {
    offsets.push_back(out.size());
    out.insert(out.end(), t.values().begin(), t.values().end());
  }
  return autograd::make_result<T>(
      {total, h, w}, std::move(out), std::vector<BasicTensor<T>>(inputs.begin(), inputs.end()),
      [offsets](detail::Node<T>& node) {
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
          auto& in = *node.inputs[i];
          autograd::accumulate<T>(in, std::span<const T>(node.grad).subspan(offsets[i], in.value.size()));
        }
      });
}

template <typename T>
BasicTensor<T> concat_columns(std::span<const BasicTensor<T>> inputs) {
  if (inputs.empty()) throw DimensionError(dims_message("concat_columns", "no inputs"));
  const std::size_t n = inputs.front().dim(0);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& t : inputs) {
    if (t.rank() != 2 || t.dim(0) != n) {
      throw DimensionError(dims_message("concat_columns", "row mismatch: " + shape_string(inputs.front().shape()) +
                                                              " vs " + shape_string(t.shape())));
    }
    widths.push_back(t.dim(1));
    total += t.dim(1);
  }
  std::vector<T> out(n * total);
  std::size_t col = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const T* src = inputs[i].values().data();
    for (std::size_t r = 0; r < n; ++r) std::copy(src + r * widths[i], src + (r + 1) * widths[i], &out[r * total + col]);
    col += widths[i];
  }
  return autograd::make_result<T>(
      {n, total}, std::move(out), std::vector<BasicTensor<T>>(inputs.begin(), inputs.end()),
      [n, total, widths](detail::Node<T>& node) {
        std::size_t col = 0;
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
          auto& in = *node.inputs[i];
          if (in.requires_grad) {
            auto& g = in.ensure_grad();
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t j = 0; j < widths[i]; ++j) g[r * widths[i] + j] += node.grad[r * total + col + j];
          }
          col += widths[i];
        }
      });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError(dims_message("add", shape_string(a.shape()) + " vs " + shape_string(b.shape())));
  std::vector<T> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  return autograd::make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& node) {
    autograd::accumulate<T>(*node.inputs[0], node.grad);
    autograd::accumulate<T>(*node.inputs[1], node.grad);
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError(dims_message("mul", shape_string(a.shape()) + " vs " + shape_string(b.shape())));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return autograd::make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& node) {
    auto& x = *node.inputs[0];
    auto& y = *node.inputs[1];
    const std::size_t n = node.grad.size();
    // Products are formed before accumulation so mul(x, x) sees both terms.
    std::vector<T> gx(n), gy(n);
    for (std::size_t i = 0; i < n; ++i) {
      gx[i] = node.grad[i] * y.value[i];
      gy[i] = node.grad[i] * x.value[i];
    }
    autograd::accumulate<T>(x, gx);
    autograd::accumulate<T>(y, gy);
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return autograd::make_result<T>(a.shape(), std::move(out), {a}, [factor](detail::Node<T>& node) {
    auto& x = *node.inputs[0];
    if (!x.requires_grad) return;
    auto& gx = x.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * node.grad[i];
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double s = 0;
  for (T v : a.values()) s += static_cast<double>(v);
  return autograd::make_result<T>({1}, {static_cast<T>(s)}, {a}, [](detail::Node<T>& node) {
    auto& x = *node.inputs[0];
    if (!x.requires_grad) return;
    auto& gx = x.ensure_grad();
    for (auto& g : gx) g += node.grad[0];
  });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError(dims_message("reshape", shape_string(a.shape()) + " cannot become " + shape_string(shape)));
  }
  return autograd::make_result<T>(std::move(shape), std::vector<T>(a.values().begin(), a.values().end()), {a},
                                  [](detail::Node<T>& node) { autograd::accumulate<T>(*node.inputs[0], node.grad); });
}

template <typename T>
BasicTensor<T> stop_gradient(const BasicTensor<T>& a) {
  return BasicTensor<T>::constant(a.shape(), std::vector<T>(a.values().begin(), a.values().end()));
}

template <typename T>
BasicTensor<T> normalize_sum(const BasicTensor<T>& a, double eps) {
  double s = 0;
  for (T v : a.values()) s += static_cast<double>(v);
  const std::size_t n = a.numel();
  detail::record_branch(s < eps ? 1 : 0);
  if (s < eps) return BasicTensor<T>::full(a.shape(), static_cast<T>(1.0 / static_cast<double>(n)));
  const double denom = s + eps;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(static_cast<double>(a.values()[i]) / denom);
  return autograd::make_result<T>(a.shape(), std::move(out), {a}, [denom](detail::Node<T>& node) {
    auto& x = *node.inputs[0];
    if (!x.requires_grad) return;
    // d(x_i/D)/dx_j = δ_ij/D - x_i/D²
    double dot = 0;
    for (std::size_t i = 0; i < node.grad.size(); ++i) dot += static_cast<double>(node.grad[i]) * static_cast<double>(x.value[i]);
    const double shift = dot / (denom * denom);
    auto& gx = x.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += static_cast<T>(static_cast<double>(node.grad[i]) / denom - shift);
    }
  });
}

// ---------------------------------------------------------------------------
// Instantiations
// ---------------------------------------------------------------------------

#define SKETCHCLOUD_INSTANTIATE(T)                                                                       \
  template class BasicTensor<T>;                                                                         \
  template bool all_finite<T>(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> autograd::make_result<T>(Shape, std::vector<T>, std::vector<BasicTensor<T>>,   \
                                                   std::function<void(detail::Node<T>&)>);               \
  template void autograd::accumulate<T>(detail::Node<T>&, std::span<const T>);                           \
  template std::size_t backward<T>(const BasicTensor<T>&);                                               \
  template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                    int, int);                                                           \
  template BasicTensor<T> linear<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                                \
  template BasicTensor<T> softplus<T>(const BasicTensor<T>&);                                                \
  template BasicTensor<T> bilinear_resize<T>(const BasicTensor<T>&, std::size_t, std::size_t);           \
  template BasicTensor<T> sample_bilinear<T>(const BasicTensor<T>&, std::span<const SamplePosition>);    \
  template BasicTensor<T> concat_channels<T>(std::span<const BasicTensor<T>>);                           \
  template BasicTensor<T> concat_columns<T>(std::span<const BasicTensor<T>>);                            \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                                            \
  template BasicTensor<T> sum<T>(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> reshape<T>(const BasicTensor<T>&, Shape);                                      \
  template BasicTensor<T> stop_gradient<T>(const BasicTensor<T>&);                                       \
  template BasicTensor<T> normalize_sum<T>(const BasicTensor<T>&, double);

SKETCHCLOUD_INSTANTIATE(float)
SKETCHCLOUD_INSTANTIATE(double)

#undef SKETCHCLOUD_INSTANTIATE

}  // namespace sketchcloud
