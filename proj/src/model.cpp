#include "sketchcloud/model.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "sketchcloud/errors.hpp"
#include "sketchcloud/rng.hpp"

namespace sketchcloud {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

std::size_t ModelConfig::feature_channels() const {
  if (!use_decoder) return encoder_channels.back();
  std::size_t c = 0;
  for (auto d : decoder_channels) c += d;
  return c;
}

std::size_t ModelConfig::feature_size() const {
  std::size_t s = input_size >> encoder_channels.size();
  if (use_decoder) s <<= decoder_channels.size();
  return s;
}

void ModelConfig::validate() const {
  if (encoder_channels.empty()) throw DimensionError("model: need at least one encoder block");
  if (use_decoder && decoder_channels.empty()) throw DimensionError("model: decoder enabled but has no blocks");
  if (input_size % (std::size_t{1} << encoder_channels.size()) != 0 || (input_size >> encoder_channels.size()) < 1) {
    throw DimensionError("model: input size " + std::to_string(input_size) + " not divisible by 2^" +
                         std::to_string(encoder_channels.size()));
  }
  if (skip_connections && use_decoder && decoder_channels.size() != encoder_channels.size()) {
    throw DimensionError("model: skip connections need as many decoder as encoder blocks");
  }
  if (depth_width < 1 || noise_dim < 1) throw DimensionError("model: depth width and noise dimension must be positive");
  for (auto c : encoder_channels) if (c < 1) throw DimensionError("model: channel counts must be positive");
  for (auto c : decoder_channels) if (c < 1) throw DimensionError("model: channel counts must be positive");
  for (auto c : density_channels) if (c < 1) throw DimensionError("model: channel counts must be positive");
}

namespace {

struct LayerShape {
  std::size_t out, in, kernel;  // kernel 0 for linear
};

struct Layout {
  std::vector<LayerShape> encoder, decoder, density;
  LayerShape depth_input;
  std::vector<std::pair<LayerShape, LayerShape>> blocks;
  LayerShape depth_output;
};

Layout layout_of(const ModelConfig& c) {
  c.validate();
  Layout l;
  std::size_t prev = 1;
  for (auto ch : c.encoder_channels) {
    l.encoder.push_back({ch, prev, 3});
    prev = ch;
  }
  if (c.use_decoder) {
    const std::size_t d = c.encoder_channels.size();
    for (std::size_t i = 0; i < c.decoder_channels.size(); ++i) {
      std::size_t in = prev;
      if (c.skip_connections) in += (i + 2 <= d) ? c.encoder_channels[d - 2 - i] : 1;
      l.decoder.push_back({c.decoder_channels[i], in, 3});
      prev = c.decoder_channels[i];
    }
  }
  prev = c.feature_channels();
  for (auto ch : c.density_channels) {
    l.density.push_back({ch, prev, 3});
    prev = ch;
  }
  l.density.push_back({1, prev, 3});
  l.depth_input = {c.depth_width, c.feature_channels() + c.noise_dim, 0};
  for (std::size_t i = 0; i < c.depth_blocks; ++i) {
    l.blocks.push_back({{c.depth_width, c.depth_width, 0}, {c.depth_width, c.depth_width, 0}});
  }
  l.depth_output = {1, c.depth_width, 0};
  return l;
}

std::size_t weights_of(const LayerShape& s) {
  const std::size_t k = s.kernel ? s.kernel * s.kernel : 1;
  return s.out * s.in * k + s.out;
}

template <typename T>
BasicTensor<T> uniform_parameter(Shape shape, std::size_t fan_in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-a, a));
  return BasicTensor<T>::parameter(std::move(shape), std::move(v));
}

template <typename T>
ConvLayer<T> make_conv(const LayerShape& s, Rng& rng) {
  const std::size_t fan_in = s.in * s.kernel * s.kernel;
  return {uniform_parameter<T>({s.out, s.in, s.kernel, s.kernel}, fan_in, rng),
          BasicTensor<T>::parameter({s.out}, std::vector<T>(s.out, T(0)))};
}

template <typename T>
LinearLayer<T> make_linear(const LayerShape& s, Rng& rng) {
  return {uniform_parameter<T>({s.out, s.in}, s.in, rng), BasicTensor<T>::parameter({s.out}, std::vector<T>(s.out, T(0)))};
}

template <typename U, typename T>
BasicTensor<U> copy_leaf(const BasicTensor<T>& t) {
  return BasicTensor<U>::parameter(t.shape(), std::vector<U>(t.values().begin(), t.values().end()));
}

}  // namespace

std::size_t parameter_count(const ModelConfig& config) {
  const auto l = layout_of(config);
  std::size_t n = 0;
  for (const auto* group : {&l.encoder, &l.decoder, &l.density}) {
    for (const auto& s : *group) n += weights_of(s);
  }
  n += weights_of(l.depth_input) + weights_of(l.depth_output);
  for (const auto& [a, b] : l.blocks) n += weights_of(a) + weights_of(b);
  return n;
}

ModelConfig simple_encoder_config(const ModelConfig& base) {
  const std::size_t target = parameter_count(base);
  ModelConfig c = base;
  c.use_decoder = false;
  c.skip_connections = false;
  std::size_t best_width = base.depth_width;
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (std::size_t w = 1; w <= 4096; ++w) {
    c.depth_width = w;
    const std::size_t n = parameter_count(c);
    const std::size_t gap = n > target ? n - target : target - n;
    if (gap < best_gap) {
      best_gap = gap;
      best_width = w;
    }
    if (n > target) break;
  }
  c.depth_width = best_width;
  return c;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
BasicModelParams<T> BasicModelParams<T>::initialize(const ModelConfig& config, std::uint64_t seed) {
  const auto l = layout_of(config);
  BasicModelParams p;
  p.config_ = config;
  Rng rng(seed);
  for (const auto& s : l.encoder) p.encoder.push_back(make_conv<T>(s, rng));
  for (const auto& s : l.decoder) p.decoder.push_back(make_conv<T>(s, rng));
  for (const auto& s : l.density) p.density_head.push_back(make_conv<T>(s, rng));
  p.depth_input = make_linear<T>(l.depth_input, rng);
  for (const auto& [a, b] : l.blocks) p.depth_blocks.push_back({make_linear<T>(a, rng), make_linear<T>(b, rng)});
  p.depth_output = make_linear<T>(l.depth_output, rng);
  return p;
}

template <typename T>
std::vector<NamedParameter<T>> BasicModelParams<T>::parameters() const {
  std::vector<NamedParameter<T>> out;
  auto conv = [&](const std::string& prefix, const ConvLayer<T>& c, ParameterGroup g) {
    out.push_back({prefix + ".weight", g, c.weight});
    out.push_back({prefix + ".bias", g, c.bias});
  };
  auto lin = [&](const std::string& prefix, const LinearLayer<T>& c) {
    out.push_back({prefix + ".weight", ParameterGroup::depth_generator, c.weight});
    out.push_back({prefix + ".bias", ParameterGroup::depth_generator, c.bias});
  };
  for (std::size_t i = 0; i < encoder.size(); ++i) conv("translator.encoder." + std::to_string(i), encoder[i], ParameterGroup::translator);
  for (std::size_t i = 0; i < decoder.size(); ++i) conv("translator.decoder." + std::to_string(i), decoder[i], ParameterGroup::translator);
  for (std::size_t i = 0; i < density_head.size(); ++i) conv("density_head." + std::to_string(i), density_head[i], ParameterGroup::density_head);
  lin("depth.input", depth_input);
  for (std::size_t i = 0; i < depth_blocks.size(); ++i) {
    lin("depth.block." + std::to_string(i) + ".fc1", depth_blocks[i].first);
    lin("depth.block." + std::to_string(i) + ".fc2", depth_blocks[i].second);
  }
  lin("depth.output", depth_output);
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> BasicModelParams<T>::group(ParameterGroup g) const {
  std::vector<BasicTensor<T>> out;
  for (auto& p : parameters()) {
    if (p.group == g) out.push_back(p.tensor);
  }
  return out;
}

template <typename T>
void BasicModelParams<T>::zero_grad() const {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
template <typename U>
BasicModelParams<U> BasicModelParams<T>::cast() const {
  BasicModelParams<U> out;
  out.config_ = config_;
  auto conv = [](const ConvLayer<T>& c) { return ConvLayer<U>{copy_leaf<U>(c.weight), copy_leaf<U>(c.bias)}; };
  auto lin = [](const LinearLayer<T>& c) { return LinearLayer<U>{copy_leaf<U>(c.weight), copy_leaf<U>(c.bias)}; };
  for (const auto& c : encoder) out.encoder.push_back(conv(c));
  for (const auto& c : decoder) out.decoder.push_back(conv(c));
  for (const auto& c : density_head) out.density_head.push_back(conv(c));
  out.depth_input = lin(depth_input);
  for (const auto& b : depth_blocks) out.depth_blocks.push_back({lin(b.first), lin(b.second)});
  out.depth_output = lin(depth_output);
  return out;
}

namespace {

std::vector<float> as_floats(const std::vector<std::size_t>& v) { return std::vector<float>(v.begin(), v.end()); }

std::vector<std::size_t> as_sizes(const std::vector<float>& v) {
  std::vector<std::size_t> out;
  for (float f : v) {
    if (!(f >= 0) || f != std::floor(f)) throw DataError("checkpoint: malformed architecture entry");
    out.push_back(static_cast<std::size_t>(f));
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<NamedTensor> BasicModelParams<T>::to_named_tensors() const {
  const auto& c = config_;
  std::vector<NamedTensor> out;
  auto put = [&](const std::string& key, std::vector<float> v) {
    if (v.empty()) v.push_back(-1.0f);  // empty list marker; tensors need at least one value
    out.push_back({"config." + key, {v.size()}, std::move(v)});
  };
  put("input_size", {static_cast<float>(c.input_size)});
  put("encoder_channels", as_floats(c.encoder_channels));
  put("decoder_channels", as_floats(c.decoder_channels));
  put("use_decoder", {c.use_decoder ? 1.0f : 0.0f});
  put("skip_connections", {c.skip_connections ? 1.0f : 0.0f});
  put("density_channels", as_floats(c.density_channels));
  put("depth_width", {static_cast<float>(c.depth_width)});
  put("depth_blocks", {static_cast<float>(c.depth_blocks)});
  put("noise_dim", {static_cast<float>(c.noise_dim)});
  put("density_eps", {static_cast<float>(c.density_eps)});
  for (const auto& p : parameters()) {
    out.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.values().begin(), p.tensor.values().end())});
  }
  return out;
}

template <typename T>
BasicModelParams<T> BasicModelParams<T>::from_named_tensors(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto get = [&](const std::string& key) -> const std::vector<float>& {
    auto it = by_name.find("config." + key);
    if (it == by_name.end()) throw DataError("checkpoint: missing architecture entry '" + key + "'");
    return it->second->values;
  };
  auto list = [&](const std::string& key) {
    const auto& v = get(key);
    if (v.size() == 1 && v[0] == -1.0f) return std::vector<std::size_t>{};
    return as_sizes(v);
  };
  ModelConfig c;
  c.input_size = as_sizes(get("input_size")).at(0);
  c.encoder_channels = list("encoder_channels");
  c.decoder_channels = list("decoder_channels");
  c.use_decoder = get("use_decoder").at(0) != 0.0f;
  c.skip_connections = get("skip_connections").at(0) != 0.0f;
  c.density_channels = list("density_channels");
  c.depth_width = as_sizes(get("depth_width")).at(0);
  c.depth_blocks = as_sizes(get("depth_blocks")).at(0);
  c.noise_dim = as_sizes(get("noise_dim")).at(0);
  c.density_eps = get("density_eps").at(0);

  auto params = initialize(c, 0);
  for (auto& p : params.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError("checkpoint: missing tensor '" + p.name + "'");
    if (it->second->shape != p.tensor.shape()) {
      throw DataError("checkpoint: tensor '" + p.name + "' has shape " + shape_string(it->second->shape) +
                      ", model expects " + shape_string(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
  }
  return params;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> sketch_tensor(const SketchImage& sketch) {
  return BasicTensor<T>::constant({1, sketch.height, sketch.width},
                                  std::vector<T>(sketch.pixels.begin(), sketch.pixels.end()));
}

template <typename T>
BasicTensor<T> translate(const BasicTensor<T>& sketch, const BasicModelParams<T>& params) {
  const auto& c = params.config();
  if (sketch.rank() != 3 || sketch.dim(0) != 1 || sketch.dim(1) != c.input_size || sketch.dim(2) != c.input_size) {
    throw DimensionError("translate: expected a 1x" + std::to_string(c.input_size) + "x" +
                         std::to_string(c.input_size) + " sketch, got " + shape_string(sketch.shape()));
  }
  std::vector<BasicTensor<T>> encoded;
  BasicTensor<T> x = sketch;
  for (const auto& layer : params.encoder) {
    x = relu(conv2d(x, layer.weight, layer.bias, 2, 1));
    encoded.push_back(x);
  }
  if (!c.use_decoder) return x;

  std::vector<BasicTensor<T>> scales;
  const std::size_t depth = encoded.size();
  for (std::size_t i = 0; i < params.decoder.size(); ++i) {
    BasicTensor<T> up = bilinear_resize(x, 2 * x.dim(1), 2 * x.dim(2));
    if (c.skip_connections) {
      const BasicTensor<T>& skip = (i + 2 <= depth) ? encoded[depth - 2 - i] : sketch;
      const BasicTensor<T> parts[] = {up, skip};
      up = concat_channels<T>(parts);
    }
    x = relu(conv2d(up, params.decoder[i].weight, params.decoder[i].bias, 1, 1));
    scales.push_back(x);
  }
  const std::size_t h = x.dim(1), w = x.dim(2);
  for (auto& s : scales) {
    if (s.dim(1) != h || s.dim(2) != w) s = bilinear_resize(s, h, w);
  }
  return concat_channels<T>(scales);
}

template <typename T>
BasicTensor<T> predict_density(const BasicTensor<T>& features, const GridSpec& grid,
                               const BasicModelParams<T>& params) {
  BasicTensor<T> x = features;
  if (x.dim(1) != grid.height() || x.dim(2) != grid.width()) x = bilinear_resize(x, grid.height(), grid.width());
  const auto& head = params.density_head;
  for (std::size_t i = 0; i + 1 < head.size(); ++i) x = relu(conv2d(x, head[i].weight, head[i].bias, 1, 1));
  const BasicTensor<T> pre = conv2d(x, head.back().weight, head.back().bias, 1, 1);
  const BasicTensor<T> active = relu(pre);
  double total = 0;
  for (T v : active.values()) total += static_cast<double>(v);
  // A head with no positive output anywhere has zero gradient under ReLU and
  // never recovers. Softplus keeps the ordering of the pre-activations and
  // gives every bin a gradient until some of them cross zero again.
  if (total < params.config().density_eps) return normalize_sum(softplus(pre), params.config().density_eps);
  return normalize_sum(active, params.config().density_eps);
}

DensityMap to_density_map(const BasicTensor<float>& predicted, const GridSpec& grid) {
  if (predicted.numel() != grid.size()) throw DimensionError("to_density_map: size mismatch");
  return DensityMap(grid, std::vector<double>(predicted.values().begin(), predicted.values().end()));
}

std::vector<SamplePosition> feature_positions(std::span<const PixelIndex> pixels, const GridSpec& grid,
                                              std::size_t feature_height, std::size_t feature_width) {
  std::vector<SamplePosition> out;
  out.reserve(pixels.size());
  const bool same = feature_height == grid.height() && feature_width == grid.width();
  for (const auto& px : pixels) {
    if (px.u >= grid.width() || px.v >= grid.height()) {
      throw DimensionError("local_feature: bin (" + std::to_string(px.u) + ", " + std::to_string(px.v) +
                           ") outside the density grid");
    }
    if (same) {
      out.push_back({static_cast<double>(px.u), static_cast<double>(px.v)});
      continue;
    }
    const auto ip = pixel_to_image(px.u, px.v, grid);
    out.push_back({(ip.x + 1.0) * 0.5 * static_cast<double>(feature_width - 1),
                   (ip.y + 1.0) * 0.5 * static_cast<double>(feature_height - 1)});
  }
  return out;
}

template <typename T>
BasicTensor<T> local_features(const BasicTensor<T>& features, std::span<const PixelIndex> pixels,
                              const GridSpec& grid) {
  const auto positions = feature_positions(pixels, grid, features.dim(1), features.dim(2));
  return sample_bilinear<T>(features, positions);
}

template <typename T>
BasicTensor<T> local_feature(const BasicTensor<T>& features, std::size_t u, std::size_t v, const GridSpec& grid) {
  const PixelIndex px{u, v};
  return local_features<T>(features, std::span<const PixelIndex>(&px, 1), grid);
}

template <typename T>
BasicTensor<T> gen_depth(const BasicTensor<T>& features, const BasicTensor<T>& noise,
                         const BasicModelParams<T>& params) {
  const auto& c = params.config();
  if (features.rank() != 2 || features.dim(1) != c.feature_channels()) {
    throw DimensionError("gen_depth: features must be N×" + std::to_string(c.feature_channels()) + ", got " +
                         shape_string(features.shape()));
  }
  if (noise.rank() != 2 || noise.dim(1) != c.noise_dim || noise.dim(0) != features.dim(0)) {
    throw DimensionError("gen_depth: noise must be " + std::to_string(features.dim(0)) + "×" +
                         std::to_string(c.noise_dim) + ", got " + shape_string(noise.shape()));
  }
  const BasicTensor<T> parts[] = {features, noise};
  BasicTensor<T> h = relu(linear(concat_columns<T>(parts), params.depth_input.weight, params.depth_input.bias));
  for (const auto& block : params.depth_blocks) {
    const auto inner = relu(linear(h, block.first.weight, block.first.bias));
    h = add(h, linear(inner, block.second.weight, block.second.bias));
  }
  return linear(h, params.depth_output.weight, params.depth_output.bias);
}

// ---------------------------------------------------------------------------
// Instantiations
// ---------------------------------------------------------------------------

template class BasicModelParams<float>;
template class BasicModelParams<double>;
template BasicModelParams<double> BasicModelParams<float>::cast<double>() const;
template BasicModelParams<float> BasicModelParams<double>::cast<float>() const;
template BasicModelParams<float> BasicModelParams<float>::cast<float>() const;

#define SKETCHCLOUD_INSTANTIATE(T)                                                                              \
  template BasicTensor<T> sketch_tensor<T>(const SketchImage&);                                                 \
  template BasicTensor<T> translate<T>(const BasicTensor<T>&, const BasicModelParams<T>&);                      \
  template BasicTensor<T> predict_density<T>(const BasicTensor<T>&, const GridSpec&, const BasicModelParams<T>&); \
  template BasicTensor<T> local_features<T>(const BasicTensor<T>&, std::span<const PixelIndex>, const GridSpec&); \
  template BasicTensor<T> local_feature<T>(const BasicTensor<T>&, std::size_t, std::size_t, const GridSpec&);   \
  template BasicTensor<T> gen_depth<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicModelParams<T>&);

SKETCHCLOUD_INSTANTIATE(float)
SKETCHCLOUD_INSTANTIATE(double)

#undef SKETCHCLOUD_INSTANTIATE

}  // namespace sketchcloud
