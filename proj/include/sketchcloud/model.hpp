#pragma once

// The learnable parts: an encoder-decoder sketch translator with multi-scale
// fusion, a convolutional density head, and a noise-conditioned depth MLP
// whose parameters are shared across all image locations.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sketchcloud/geometry.hpp"
#include "sketchcloud/io.hpp"
#include "sketchcloud/synthdata.hpp"
#include "sketchcloud/tensor.hpp"

namespace sketchcloud {

struct ModelConfig {
  std::size_t input_size = 64;
  std::vector<std::size_t> encoder_channels{16, 32, 64, 128};
  std::vector<std::size_t> decoder_channels{128, 64, 32, 16};
  // false drops the decoder: the feature grid is the last encoder map.
  bool use_decoder = true;
  // Concatenate the same-resolution encoder map (or the sketch itself at
  // full resolution) into each decoder block's input.
  bool skip_connections = false;
  std::vector<std::size_t> density_channels{32, 16};  // hidden widths; a 1-channel layer follows
  std::size_t depth_width = 128;
  std::size_t depth_blocks = 4;
  std::size_t noise_dim = 8;
  double density_eps = 1e-8;

  std::size_t feature_channels() const;
  // Spatial size of the feature grid.
  std::size_t feature_size() const;
  // Throws DimensionError for inconsistent settings.
  void validate() const;
};

// Same translator without its decoder; the depth MLP is widened until the
// parameter count is as close as possible to `base`.
ModelConfig simple_encoder_config(const ModelConfig& base);

std::size_t parameter_count(const ModelConfig& config);

template <typename T>
struct ConvLayer {
  BasicTensor<T> weight;  // O×C×k×k
  BasicTensor<T> bias;    // O
};

template <typename T>
struct LinearLayer {
  BasicTensor<T> weight;  // D_out×D_in
  BasicTensor<T> bias;    // D_out
};

template <typename T>
struct ResidualBlock {
  LinearLayer<T> first;
  LinearLayer<T> second;
};

enum class ParameterGroup { translator, density_head, depth_generator };

template <typename T>
struct NamedParameter {
  std::string name;
  ParameterGroup group;
  BasicTensor<T> tensor;
};

template <typename T>
class BasicModelParams {
 public:
  // Weights uniform in [-a, a] with a = sqrt(6/fan-in), biases zero. The
  // narrower 1/sqrt(fan-in) range shrinks activations at every layer until
  // the density head's ReLU output is a near-constant sliver above zero that
  // the first few Adam steps push below it everywhere.
  static BasicModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  std::vector<NamedParameter<T>> parameters() const;
  std::vector<BasicTensor<T>> group(ParameterGroup g) const;
  void zero_grad() const;

  // Deep copy, converting the scalar type and creating fresh leaves.
  template <typename U>
  BasicModelParams<U> cast() const;

  std::vector<NamedTensor> to_named_tensors() const;
  static BasicModelParams from_named_tensors(const std::vector<NamedTensor>& tensors);

  std::vector<ConvLayer<T>> encoder;
  std::vector<ConvLayer<T>> decoder;
  std::vector<ConvLayer<T>> density_head;
  LinearLayer<T> depth_input;
  std::vector<ResidualBlock<T>> depth_blocks;
  LinearLayer<T> depth_output;

 private:
  template <typename U>
  friend class BasicModelParams;
  ModelConfig config_;
};

using ModelParams = BasicModelParams<float>;

// Sketch image as a 1×H×W constant.
template <typename T>
BasicTensor<T> sketch_tensor(const SketchImage& sketch);

// C_F×H_F×W_F feature grid.
template <typename T>
BasicTensor<T> translate(const BasicTensor<T>& sketch, const BasicModelParams<T>& params);

template <typename T>
BasicTensor<T> translate(const SketchImage& sketch, const BasicModelParams<T>& params) {
  return translate(sketch_tensor<T>(sketch), params);
}

// 1×H×W map of nonnegative values summing to 1: ReLU of the last layer,
// divided by its sum. When no bin is positive the map is the normalized
// softplus of the same pre-activations instead.
template <typename T>
BasicTensor<T> predict_density(const BasicTensor<T>& features, const GridSpec& grid,
                               const BasicModelParams<T>& params);

DensityMap to_density_map(const BasicTensor<float>& predicted, const GridSpec& grid);

// Feature-grid positions of density-grid bins, through normalized coordinates.
std::vector<SamplePosition> feature_positions(std::span<const PixelIndex> pixels, const GridSpec& grid,
                                              std::size_t feature_height, std::size_t feature_width);

// N×C_F features at the given density-grid bins.
template <typename T>
BasicTensor<T> local_features(const BasicTensor<T>& features, std::span<const PixelIndex> pixels,
                              const GridSpec& grid);

// 1×C_F feature at bin (u, v).
template <typename T>
BasicTensor<T> local_feature(const BasicTensor<T>& features, std::size_t u, std::size_t v, const GridSpec& grid);

// Depth for each row of (features N×C_F, noise N×d); returns N×1.
template <typename T>
BasicTensor<T> gen_depth(const BasicTensor<T>& features, const BasicTensor<T>& noise,
                         const BasicModelParams<T>& params);

}  // namespace sketchcloud
