#include "sketchcloud/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "sketchcloud/losses.hpp"
#include "sketchcloud/model.hpp"
#include "sketchcloud/rng.hpp"
#include "sketchcloud/synthdata.hpp"
#include "sketchcloud/training.hpp"

namespace sketchcloud {

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

class Reducer {
 public:
  explicit Reducer(std::uint64_t seed) : seed_(seed) {}

  DTensor operator()(const DTensor& out) {
    if (out.numel() == 1) return reshape(out, {1});
    if (weights_.size() != out.numel()) {
      Rng rng(seed_);
      weights_.resize(out.numel());
      for (auto& w : weights_) w = rng.uniform(-1.0, 1.0);
    }
    return sum(mul(out, DTensor::constant(out.shape(), weights_)));
  }

 private:
  std::uint64_t seed_;
  std::vector<double> weights_;
};

Probe probe(const GradcheckCase& c, Reducer& reduce) {
  NoGradGuard no_grad;
  BranchRecorder rec;
  const double v = reduce(c.forward()).item();
  return {v, rec.signature()};
}

std::vector<std::size_t> pick_entries(std::size_t n, std::size_t max_entries, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= max_entries) return idx;
  for (std::size_t i = 0; i < max_entries; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(max_entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradcheckResult run_gradcheck(const GradcheckCase& c, const GradcheckOptions& options, std::uint64_t seed) {
  GradcheckResult result;
  result.name = c.name;
  Reducer reduce(derive_seed(seed, {0}));

  for (const auto& x : c.inputs) x.node()->grad.clear();
  std::uint64_t base_signature = 0;
  double abs_floor = options.floor;
  {
    BranchRecorder rec;
    const DTensor loss = reduce(c.forward());
    base_signature = rec.signature();
    abs_floor *= std::max(1.0, std::abs(loss.item()));
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& x : c.inputs) {
    if (x.has_grad()) analytic.emplace_back(x.grad().begin(), x.grad().end());
    else analytic.emplace_back(x.numel(), 0.0);
  }

  Rng rng(derive_seed(seed, {1}));
  for (std::size_t t = 0; t < c.inputs.size(); ++t) {
    DTensor x = c.inputs[t];
    auto values = x.mutable_values();
    double scale = 0;
    for (double g : analytic[t]) scale = std::max(scale, std::abs(g));
    for (std::size_t k : pick_entries(x.numel(), options.max_entries, rng)) {
      const double original = values[k];
      auto difference = [&](double h, double& estimate) {
        values[k] = original + h;
        const Probe plus = probe(c, reduce);
        values[k] = original - h;
        const Probe minus = probe(c, reduce);
        values[k] = original;
        if (plus.signature != base_signature || minus.signature != base_signature) return false;
        estimate = (plus.value - minus.value) / (2.0 * h);
        return true;
      };
      // Central differences at h and h/2 combined by Richardson extrapolation,
      // which cancels the h² truncation term of rational ops like normalize_sum.
      auto central = [&](double h, double& estimate) {
        double full = 0, half = 0;
        if (!difference(h, full) || !difference(0.5 * h, half)) return false;
        estimate = (4.0 * half - full) / 3.0;
        return true;
      };
      double numeric = 0;
      if (!central(options.step, numeric)) {
        bool found = false;
        for (double h : options.fallback_steps) {
          if ((found = difference(h, numeric))) break;
        }
        if (!found) {
          ++result.skipped;
          continue;
        }
        ++result.refined;
      }
      const double a = analytic[t][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.scale_floor * scale, abs_floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      result.max_abs_gradient = std::max(result.max_abs_gradient, std::abs(a));
      ++result.checked;
    }
  }
  // An all-zero gradient agrees with any flat function; it proves nothing.
  result.passed = result.checked > 0 && result.max_abs_gradient > 0 && result.max_rel_error < options.tolerance &&
                  4 * result.skipped <= result.checked + result.skipped;
  return result;
}

namespace {

DTensor random_parameter(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return DTensor::parameter(std::move(shape), std::move(v));
}

// Random sign and magnitude in [lo, hi].
DTensor away_from_zero(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return DTensor::parameter(std::move(shape), std::move(v));
}

PointCloud random_cloud(std::size_t n, Rng& rng) {
  PointCloud c(n);
  for (auto& p : c) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  return c;
}

DensityMap random_density(const GridSpec& grid, Rng& rng) {
  std::vector<double> v(grid.size());
  double s = 0;
  for (auto& x : v) s += (x = rng.uniform(0.05, 1.0));
  for (auto& x : v) x /= s;
  return DensityMap(grid, std::move(v));
}

ModelConfig miniature_config() {
  ModelConfig c;
  c.input_size = 8;
  c.encoder_channels = {3, 4};
  c.decoder_channels = {4, 3};
  c.density_channels = {3, 2};
  c.depth_width = 6;
  c.depth_blocks = 2;
  c.noise_dim = 3;
  return c;
}

std::vector<DTensor> leaves(const BasicModelParams<double>& p) {
  std::vector<DTensor> out;
  for (const auto& np : p.parameters()) out.push_back(np.tensor);
  return out;
}

std::vector<DTensor> group_leaves(const BasicModelParams<double>& p, std::initializer_list<ParameterGroup> groups) {
  std::vector<DTensor> out;
  for (const auto& np : p.parameters()) {
    for (auto g : groups) {
      if (np.group == g) out.push_back(np.tensor);
    }
  }
  return out;
}

// Random init can leave a 3-channel miniature fully dead or give the density
// head a total mass so small that a 1e-3 bias step changes it by tens of
// percent. Shift the hidden biases up and give the output layer mass O(1).
void condition(const BasicModelParams<double>& p) {
  auto shift = [](const std::vector<ConvLayer<double>>& layers) {
    for (const auto& l : layers) {
      DTensor b = l.bias;
      for (auto& v : b.mutable_values()) v += 0.1;
    }
  };
  shift(p.encoder);
  shift(p.decoder);
  shift(p.density_head);
  DTensor out_bias = p.density_head.back().bias;
  for (auto& b : out_bias.mutable_values()) b = 0.5;
}

}  // namespace

std::vector<GradcheckCase> standard_gradcheck_cases(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {100}));
  std::vector<GradcheckCase> cases;

  {
    auto x = random_parameter({2, 6, 6}, rng), w = random_parameter({3, 2, 3, 3}, rng), b = random_parameter({3}, rng);
    cases.push_back({"conv2d_stride1_pad1", {x, w, b}, [=] { return conv2d(x, w, b, 1, 1); }});
  }
  {
    auto x = random_parameter({2, 7, 7}, rng), w = random_parameter({3, 2, 3, 3}, rng), b = random_parameter({3}, rng);
    cases.push_back({"conv2d_stride2_pad1", {x, w, b}, [=] { return conv2d(x, w, b, 2, 1); }});
  }
  {
    auto x = random_parameter({3, 4, 5}, rng), w = random_parameter({2, 3, 1, 1}, rng), b = random_parameter({2}, rng);
    cases.push_back({"conv2d_1x1", {x, w, b}, [=] { return conv2d(x, w, b, 1, 0); }});
  }
  {
    auto x = random_parameter({4, 5}, rng), w = random_parameter({3, 5}, rng), b = random_parameter({3}, rng);
    cases.push_back({"linear", {x, w, b}, [=] { return linear(x, w, b); }});
  }
  {
    auto x = away_from_zero({4, 5}, rng, 0.05, 2.0);
    cases.push_back({"relu", {x}, [=] { return relu(x); }});
  }
  {
    auto x = random_parameter({4, 5}, rng, -4.0, 4.0);
    cases.push_back({"softplus", {x}, [=] { return softplus(x); }});
  }
  {
    auto x = random_parameter({2, 3, 4}, rng);
    cases.push_back({"bilinear_resize_up", {x}, [=] { return bilinear_resize(x, 5, 7); }});
  }
  {
    auto x = random_parameter({2, 6, 6}, rng);
    cases.push_back({"bilinear_resize_down", {x}, [=] { return bilinear_resize(x, 4, 3); }});
  }
  {
    auto g = random_parameter({3, 5, 6}, rng);
    std::vector<SamplePosition> pos;
    for (int i = 0; i < 7; ++i) pos.push_back({rng.uniform(0, 5), rng.uniform(0, 4)});
    cases.push_back({"sample_bilinear", {g}, [=] { return sample_bilinear<double>(g, pos); }});
  }
  {
    auto a = random_parameter({1, 3, 4}, rng), b = random_parameter({2, 3, 4}, rng);
    cases.push_back({"concat_channels", {a, b}, [=] {
                       const DTensor parts[] = {a, b};
                       return concat_channels<double>(parts);
                     }});
  }
  {
    auto a = random_parameter({3, 2}, rng), b = random_parameter({3, 4}, rng);
    cases.push_back({"concat_columns", {a, b}, [=] {
                       const DTensor parts[] = {a, b};
                       return concat_columns<double>(parts);
                     }});
  }
  {
    auto a = random_parameter({3, 4}, rng), b = random_parameter({3, 4}, rng);
    cases.push_back({"add", {a, b}, [=] { return add(a, b); }});
    cases.push_back({"mul", {a, b}, [=] { return mul(a, b); }});
    cases.push_back({"scale", {a}, [=] { return scale(a, -1.7); }});
    cases.push_back({"sum", {a}, [=] { return sum(mul(a, a)); }});
    cases.push_back({"reshape", {a}, [=] { return reshape(a, {2, 6}); }});
  }
  {
    auto a = random_parameter({1, 4, 5}, rng, 0.1, 2.0);
    cases.push_back({"normalize_sum", {a}, [=] { return normalize_sum(a, 1e-8); }});
  }
  {
    const GridSpec grid(5, 4);
    auto a = random_parameter({1, 4, 5}, rng, 0.1, 2.0);
    const DensityMap target = random_density(grid, rng);
    cases.push_back({"density_l1", {a}, [=] { return density_l1(normalize_sum(a, 1e-8), target); }});
  }
  {
    auto p = random_parameter({12, 3}, rng, -1.0, 1.0);
    const PointCloud target = random_cloud(15, rng);
    cases.push_back({"chamfer_loss", {p}, [=] { return chamfer_loss(p, target); }});
  }
  {
    const GridSpec grid(5, 4);
    auto p = random_parameter({10, 3}, rng, -1.0, 1.0);
    auto a = random_parameter({1, 4, 5}, rng, 0.1, 2.0);
    const PointCloud target = random_cloud(9, rng);
    const DensityMap density = random_density(grid, rng);
    const LossWeights weights{1.0, 10.0};
    cases.push_back({"total_loss", {p, a}, [=] {
                       return total_loss(chamfer_loss(p, target), density_l1(normalize_sum(a, 1e-8), density), weights);
                     }});
  }

  // Composite model paths on a miniature architecture.
  const ModelConfig mini = miniature_config();
  {
    const auto params = BasicModelParams<double>::initialize(mini, derive_seed(seed, {200}));
    condition(params);
    auto sketch = random_parameter({1, 8, 8}, rng, 0.0, 1.0);
    auto inputs = group_leaves(params, {ParameterGroup::translator});
    inputs.push_back(sketch);
    cases.push_back({"translator", inputs, [=] { return translate(sketch, params); }});
  }
  {
    ModelConfig skip = mini;
    skip.skip_connections = true;
    const auto params = BasicModelParams<double>::initialize(skip, derive_seed(seed, {201}));
    condition(params);
    auto sketch = random_parameter({1, 8, 8}, rng, 0.0, 1.0);
    cases.push_back({"translator_skip", group_leaves(params, {ParameterGroup::translator}),
                     [=] { return translate(sketch, params); }});
  }
  {
    ModelConfig enc = simple_encoder_config(mini);
    const auto params = BasicModelParams<double>::initialize(enc, derive_seed(seed, {202}));
    condition(params);
    auto sketch = random_parameter({1, 8, 8}, rng, 0.0, 1.0);
    cases.push_back({"translator_encoder_only", group_leaves(params, {ParameterGroup::translator}),
                     [=] { return translate(sketch, params); }});
  }
  {
    const auto params = BasicModelParams<double>::initialize(mini, derive_seed(seed, {203}));
    condition(params);
    auto features = random_parameter({mini.feature_channels(), 8, 8}, rng, 0.0, 1.0);
    const GridSpec grid(8, 8);
    const DensityMap target = random_density(grid, rng);
    auto inputs = group_leaves(params, {ParameterGroup::density_head});
    inputs.push_back(features);
    cases.push_back({"predict_density_l1", inputs,
                     [=] { return density_l1(predict_density(features, grid, params), target); }});
  }
  {
    // Every last-layer output below zero: the softplus recovery path.
    const auto params = BasicModelParams<double>::initialize(mini, derive_seed(seed, {204}));
    condition(params);
    auto weight = params.density_head.back().weight;
    for (auto& v : weight.mutable_values()) v *= 0.1;
    auto bias = params.density_head.back().bias;
    bias.mutable_values()[0] = -2.0;
    auto features = random_parameter({mini.feature_channels(), 8, 8}, rng, 0.0, 1.0);
    const GridSpec grid(8, 8);
    const DensityMap target = random_density(grid, rng);
    auto inputs = group_leaves(params, {ParameterGroup::density_head});
    inputs.push_back(features);
    cases.push_back({"predict_density_dead_l1", inputs,
                     [=] { return density_l1(predict_density(features, grid, params), target); }});
  }
  {
    auto features = random_parameter({3, 5, 5}, rng);
    const GridSpec grid(8, 8);
    std::vector<PixelIndex> px;
    for (int i = 0; i < 6; ++i) px.push_back({rng.index(8), rng.index(8)});
    cases.push_back({"local_features_resampled", {features}, [=] { return local_features<double>(features, px, grid); }});
  }
  {
    const auto params = BasicModelParams<double>::initialize(mini, derive_seed(seed, {204}));
    auto f = random_parameter({5, mini.feature_channels()}, rng, 0.0, 1.0);
    std::vector<double> n(5 * mini.noise_dim);
    for (auto& v : n) v = rng.uniform();
    const DTensor noise = DTensor::constant({5, mini.noise_dim}, n);
    auto inputs = group_leaves(params, {ParameterGroup::depth_generator});
    inputs.push_back(f);
    cases.push_back({"gen_depth", inputs, [=] { return gen_depth(f, noise, params); }});
  }
  {
    const auto params = BasicModelParams<double>::initialize(mini, derive_seed(seed, {205}));
    condition(params);
    DatasetOptions opts;
    opts.image_size = 8;
    opts.grid_size = 8;
    opts.points_per_shape = 48;
    opts.seed = derive_seed(seed, {206});
    const DatasetSample sample = make_sample(opts, 0, 0);
    TrainConfig tc;
    tc.points = 24;
    tc.weights = {1.0, 10.0};
    const GridSpec grid(8, 8);
    const CameraModel cam = CameraModel::orthographic(1.0);
    const std::uint64_t step_seed = derive_seed(seed, {207});
    cases.push_back({"training_loss", leaves(params), [=] {
                       return forward_losses<double>(params, sample, grid, cam, tc, step_seed).total;
                     }});
  }
  return cases;
}

bool GradcheckReport::all_passed() const {
  for (const auto& r : results) {
    if (!r.passed) return false;
  }
  return !results.empty();
}

GradcheckReport run_gradcheck_suite(const std::vector<GradcheckCase>& cases, const GradcheckOptions& options,
                                    std::uint64_t seed) {
  GradcheckReport report;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    report.results.push_back(run_gradcheck(cases[i], options, derive_seed(seed, {i})));
  }
  return report;
}

void print_gradcheck_report(const GradcheckReport& report, const GradcheckOptions& options, std::ostream& os) {
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %14s %8s %8s %8s  %s\n", "op", "max_rel_err", "checked", "refined",
                "skipped", "status");
  os << line;
  for (const auto& r : report.results) {
    std::snprintf(line, sizeof line, "%-28s %14.3e %8zu %8zu %8zu  %s\n", r.name.c_str(), r.max_rel_error, r.checked,
                  r.refined, r.skipped, r.passed ? "PASS" : "FAIL");
    os << line;
  }
  std::snprintf(line, sizeof line, "tolerance %.1e, step %.1e: %s\n", options.tolerance, options.step,
                report.all_passed() ? "all passed" : "FAILED");
  os << line;
}

}  // namespace sketchcloud
