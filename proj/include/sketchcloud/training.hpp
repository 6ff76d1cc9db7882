#pragma once

// Optimizer, the per-sample training step, the epoch loop and evaluation.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sketchcloud/geometry.hpp"
#include "sketchcloud/losses.hpp"
#include "sketchcloud/model.hpp"
#include "sketchcloud/sampler.hpp"
#include "sketchcloud/synthdata.hpp"

namespace sketchcloud {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  // Zeroed moments shaped like `params`.
  static AdamState for_parameters(std::span<const Tensor> params, double lr);
};

// w ← w − lr·m̂/(√v̂ + eps) for each leaf, reading its accumulated grad (a
// leaf without a grad counts as zero). Throws DimensionError when the state
// does not match the parameters.
void adam_step(std::span<const Tensor> params, AdamState& state);

struct TrainConfig {
  std::size_t epochs = 30;
  double lr = 1e-3;
  LossWeights weights;
  std::size_t points = 1024;  // predicted points per sample
  LocationSource location_source = LocationSource::gt_density;
  std::uint64_t seed = 0;
  bool freeze_translator = false;
  bool freeze_density_head = false;
  bool freeze_depth_generator = false;

  void validate() const;
};

template <typename T>
struct StepLosses {
  BasicTensor<T> chamfer;
  BasicTensor<T> density;
  BasicTensor<T> total;
};

// Forward pass of one training step: both losses and their weighted sum.
// Locations and noise come from `seed`, so repeated calls are identical.
template <typename T>
StepLosses<T> forward_losses(const BasicModelParams<T>& params, const DatasetSample& sample, const GridSpec& grid,
                             const CameraModel& cam, const TrainConfig& cfg, std::uint64_t seed);

struct StepResult {
  double chamfer = 0;
  double density = 0;
  double total = 0;
};

// Trainable leaves under the freeze flags.
std::vector<Tensor> trainable_parameters(const ModelParams& params, const TrainConfig& cfg);

// One forward, one backward and one Adam update. NumericalError on a
// non-finite loss or gradient.
StepResult train_step(const DatasetSample& sample, const ModelParams& params, AdamState& adam,
                      const GridSpec& grid, const CameraModel& cam, const TrainConfig& cfg,
                      std::uint64_t step_seed);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_chamfer = 0;
  double mean_density = 0;
  double mean_total = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
};

std::vector<DatasetSample> load_split(const DatasetManifest& manifest, bool train);

TrainResult train(const DatasetManifest& manifest, const ModelConfig& model_config, const TrainConfig& cfg);
TrainResult train(const std::vector<DatasetSample>& samples, const GridSpec& grid, const CameraModel& cam,
                  const ModelConfig& model_config, const TrainConfig& cfg);

// epoch,mean_l_cd,mean_l_d,mean_total
std::string loss_history_csv(const std::vector<EpochStats>& history);

// Pretty-printed JSON of the training and model settings.
std::string config_dump(const TrainConfig& cfg, const ModelConfig& model_config);

enum class EvalVariant { ours, homo, ours_real, gt };

std::string to_string(EvalVariant v);
EvalVariant eval_variant_from_string(const std::string& name);

struct EvalConfig {
  EvalVariant variant = EvalVariant::ours;
  std::vector<std::string> metrics{"cd", "emd", "iou", "fpd"};
  std::size_t points = 2048;
  std::uint64_t seed = 0;
  std::size_t emd_points = 512;
  std::size_t voxel_resolution = 32;
};

// Names accepted in EvalConfig::metrics.
const std::vector<std::string>& known_metrics();

struct EvalRow {
  std::string sample_id;
  std::map<std::string, double> values;
};

struct EvalTable {
  EvalVariant variant = EvalVariant::ours;
  std::vector<std::string> metrics;
  std::vector<EvalRow> rows;
  std::map<std::string, double> means;

  // variant,sample_id,metric,value with one row per sample and metric,
  // then one "mean" row per metric.
  std::string to_csv() const;
};

// The cloud a variant produces for one sample.
PointCloud generate_for_variant(const ModelParams& params, const DatasetSample& sample, const GridSpec& grid,
                                const CameraModel& cam, EvalVariant variant, std::size_t points,
                                std::uint64_t seed);

// DataError for an unknown metric name.
EvalTable evaluate(const ModelParams& params, const std::vector<DatasetEntry>& entries,
                   const std::vector<DatasetSample>& samples, const GridSpec& grid, const CameraModel& cam,
                   const EvalConfig& cfg);
EvalTable evaluate(const ModelParams& params, const DatasetManifest& manifest, bool train_split,
                   const EvalConfig& cfg);

}  // namespace sketchcloud
