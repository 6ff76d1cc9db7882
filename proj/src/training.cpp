#include "sketchcloud/training.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "sketchcloud/errors.hpp"
#include "sketchcloud/metrics.hpp"
#include "sketchcloud/rng.hpp"

namespace sketchcloud {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState AdamState::for_parameters(std::span<const Tensor> params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<const Tensor> params, AdamState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam: state holds " + std::to_string(state.m.size()) + " moment arrays for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw DimensionError("adam: moment shape mismatch for parameter " + std::to_string(i) + " " +
                           shape_string(params[i].shape()));
    }
    if (params[i].has_grad() && params[i].grad().size() != params[i].numel()) {
      throw DimensionError("adam: gradient shape mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    const bool has = p.has_grad();
    auto w = p.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = has ? static_cast<double>(p.grad()[k]) : 0.0;
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] = static_cast<float>(static_cast<double>(w[k]) - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw DataError("train: epochs must be at least 1");
  if (!(lr > 0)) throw DataError("train: learning rate must be positive");
  if (weights.chamfer < 0 || weights.density < 0) throw DataError("train: loss weights must be nonnegative");
  if (points < 1) throw DataError("train: points per sample must be at least 1");
}

template <typename T>
StepLosses<T> forward_losses(const BasicModelParams<T>& params, const DatasetSample& sample, const GridSpec& grid,
                             const CameraModel& cam, const TrainConfig& cfg, std::uint64_t seed) {
  const BasicTensor<T> features = translate(sketch_tensor<T>(sample.sketch), params);
  const BasicTensor<T> density = predict_density(features, grid, params);
  const BasicTensor<T> l_d = density_l1(density, sample.gt_density);

  // Locations are drawn from plain values, so no gradient reaches the density
  // head through this path.
  const DensityMap source =
      cfg.location_source == LocationSource::gt_density
          ? sample.gt_density
          : DensityMap(grid, std::vector<double>(density.values().begin(), density.values().end()));
  const CategoricalSampler sampler(source.values());
  const std::size_t n = cfg.points, dn = params.config().noise_dim;
  Rng rng(seed);
  std::vector<PixelIndex> pixels;
  std::vector<T> xy, noise;
  pixels.reserve(n);
  xy.reserve(2 * n);
  noise.reserve(n * dn);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t flat = sampler.draw(rng);
    const PixelIndex px{flat % grid.width(), flat / grid.width()};
    const Point3 p = invproj(pixel_to_image(px.u, px.v, grid), 0.0, cam);
    pixels.push_back(px);
    xy.push_back(static_cast<T>(p.x));
    xy.push_back(static_cast<T>(p.y));
    for (std::size_t k = 0; k < dn; ++k) noise.push_back(static_cast<T>(rng.uniform()));
  }
  const BasicTensor<T> local = local_features(features, pixels, grid);
  const BasicTensor<T> z = gen_depth(local, BasicTensor<T>::constant({n, dn}, std::move(noise)), params);
  const BasicTensor<T> parts[] = {BasicTensor<T>::constant({n, 2}, std::move(xy)), z};
  const BasicTensor<T> points = concat_columns<T>(parts);
  const BasicTensor<T> l_cd = chamfer_loss(points, sample.gt_cloud);
  return {l_cd, l_d, total_loss(l_cd, l_d, cfg.weights)};
}

template StepLosses<float> forward_losses<float>(const BasicModelParams<float>&, const DatasetSample&,
                                                 const GridSpec&, const CameraModel&, const TrainConfig&,
                                                 std::uint64_t);
template StepLosses<double> forward_losses<double>(const BasicModelParams<double>&, const DatasetSample&,
                                                   const GridSpec&, const CameraModel&, const TrainConfig&,
                                                   std::uint64_t);

std::vector<Tensor> trainable_parameters(const ModelParams& params, const TrainConfig& cfg) {
  std::vector<Tensor> out;
  for (const auto& p : params.parameters()) {
    if (p.group == ParameterGroup::translator && cfg.freeze_translator) continue;
    if (p.group == ParameterGroup::density_head && cfg.freeze_density_head) continue;
    if (p.group == ParameterGroup::depth_generator && cfg.freeze_depth_generator) continue;
    out.push_back(p.tensor);
  }
  return out;
}

StepResult train_step(const DatasetSample& sample, const ModelParams& params, AdamState& adam,
                      const GridSpec& grid, const CameraModel& cam, const TrainConfig& cfg,
                      std::uint64_t step_seed) {
  params.zero_grad();
  const auto losses = forward_losses<float>(params, sample, grid, cam, cfg, step_seed);
  StepResult r{losses.chamfer.item(), losses.density.item(), losses.total.item()};
  if (!std::isfinite(r.total)) throw NumericalError("train: loss is not finite");
  backward(losses.total);
  const auto trainable = trainable_parameters(params, cfg);
  for (const auto& p : trainable) {
    if (!all_finite(p)) throw NumericalError("train: gradient is not finite");
  }
  adam_step(trainable, adam);
  return r;
}

std::vector<DatasetSample> load_split(const DatasetManifest& manifest, bool train) {
  std::vector<DatasetSample> out;
  for (const auto* e : manifest.split(train)) out.push_back(load_sample(manifest, *e));
  return out;
}

TrainResult train(const std::vector<DatasetSample>& samples, const GridSpec& grid, const CameraModel& cam,
                  const ModelConfig& model_config, const TrainConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw DataError("train: no training samples");
  TrainResult result{ModelParams::initialize(model_config, derive_seed(cfg.seed, {1})), {}};
  const auto trainable = trainable_parameters(result.params, cfg);
  AdamState adam = AdamState::for_parameters(trainable, cfg.lr);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto r = train_step(samples[i], result.params, adam, grid, cam, cfg, derive_seed(cfg.seed, {2, epoch, i}));
      stats.mean_chamfer += r.chamfer;
      stats.mean_density += r.density;
      stats.mean_total += r.total;
    }
    const double n = static_cast<double>(samples.size());
    stats.mean_chamfer /= n;
    stats.mean_density /= n;
    stats.mean_total /= n;
    result.history.push_back(stats);
  }
  return result;
}

TrainResult train(const DatasetManifest& manifest, const ModelConfig& model_config, const TrainConfig& cfg) {
  ModelConfig mc = model_config;
  if (mc.input_size != manifest.image_width || manifest.image_width != manifest.image_height) {
    throw DataError("train: model input size " + std::to_string(mc.input_size) + " does not match " +
                    std::to_string(manifest.image_width) + "x" + std::to_string(manifest.image_height) +
                    " dataset sketches");
  }
  return train(load_split(manifest, true), manifest.grid(), manifest.camera(), mc, cfg);
}

namespace {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string loss_history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,mean_l_cd,mean_l_d,mean_total\n";
  for (const auto& e : history) {
    out += std::to_string(e.epoch) + "," + format_number(e.mean_chamfer) + "," + format_number(e.mean_density) +
           "," + format_number(e.mean_total) + "\n";
  }
  return out;
}

std::string config_dump(const TrainConfig& cfg, const ModelConfig& mc) {
  nlohmann::ordered_json j;
  j["train"] = {
      {"epochs", cfg.epochs},
      {"lr", cfg.lr},
      {"lambda_cd", cfg.weights.chamfer},
      {"lambda_d", cfg.weights.density},
      {"points", cfg.points},
      {"location_source", cfg.location_source == LocationSource::gt_density ? "gt-density" : "predicted-density"},
      {"seed", cfg.seed},
      {"freeze_translator", cfg.freeze_translator},
      {"freeze_density_head", cfg.freeze_density_head},
      {"freeze_depth_generator", cfg.freeze_depth_generator},
      {"optimizer", {{"name", "adam"}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
  };
  j["model"] = {
      {"input_size", mc.input_size},
      {"encoder_channels", mc.encoder_channels},
      {"decoder_channels", mc.decoder_channels},
      {"use_decoder", mc.use_decoder},
      {"skip_connections", mc.skip_connections},
      {"density_channels", mc.density_channels},
      {"depth_width", mc.depth_width},
      {"depth_blocks", mc.depth_blocks},
      {"noise_dim", mc.noise_dim},
      {"density_eps", mc.density_eps},
      {"parameter_count", parameter_count(mc)},
  };
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

std::string to_string(EvalVariant v) {
  switch (v) {
    case EvalVariant::ours: return "ours";
    case EvalVariant::homo: return "homo";
    case EvalVariant::ours_real: return "ours_real";
    case EvalVariant::gt: return "gt";
  }
  return "?";
}

EvalVariant eval_variant_from_string(const std::string& name) {
  for (auto v : {EvalVariant::ours, EvalVariant::homo, EvalVariant::ours_real, EvalVariant::gt}) {
    if (to_string(v) == name) return v;
  }
  throw DataError("unknown variant '" + name + "' (expected ours, homo, ours_real or gt)");
}

const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> names{"cd", "emd", "iou", "fpd"};
  return names;
}

PointCloud generate_for_variant(const ModelParams& params, const DatasetSample& sample, const GridSpec& grid,
                                const CameraModel& cam, EvalVariant variant, std::size_t points,
                                std::uint64_t seed) {
  if (variant == EvalVariant::gt) return sample.gt_cloud;
  NoGradGuard no_grad;
  const Tensor features = translate(sample.sketch, params);
  SamplerConfig sc;
  sc.points = points;
  sc.seed = seed;
  if (variant == EvalVariant::ours_real) {
    sc.source = LocationSource::gt_density;
    return generate_cloud(sample.gt_density, features, params, cam, sc);
  }
  const DensityMap predicted = to_density_map(predict_density(features, grid, params), grid);
  sc.mode = variant == EvalVariant::homo ? LocationMode::homo : LocationMode::multinomial;
  return generate_cloud(predicted, features, params, cam, sc);
}

EvalTable evaluate(const ModelParams& params, const std::vector<DatasetEntry>& entries,
                   const std::vector<DatasetSample>& samples, const GridSpec& grid, const CameraModel& cam,
                   const EvalConfig& cfg) {
  for (const auto& m : cfg.metrics) {
    bool ok = false;
    for (const auto& k : known_metrics()) ok = ok || k == m;
    if (!ok) throw DataError("unknown metric '" + m + "' (expected cd, emd, iou or fpd)");
  }
  if (entries.size() != samples.size()) throw DataError("evaluate: entry and sample counts differ");
  if (samples.empty()) throw DataError("evaluate: empty split");

  EvalTable table;
  table.variant = cfg.variant;
  table.metrics = cfg.metrics;
  const CoordinateFeatures features;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::uint64_t seed = derive_seed(cfg.seed, {i});
    const auto& gt = samples[i].gt_cloud;
    const PointCloud gen = generate_for_variant(params, samples[i], grid, cam, cfg.variant, cfg.points, seed);
    EvalRow row{entries[i].id, {}};
    for (const auto& m : cfg.metrics) {
      double v = 0;
      if (m == "cd") v = chamfer(gen, gt);
      else if (m == "emd") v = emd_resampled(gen, gt, cfg.emd_points, derive_seed(seed, {1}));
      else if (m == "iou") v = voxel_iou(gen, gt, cfg.voxel_resolution);
      else v = frechet_point_distance(gen, gt, features);
      row.values[m] = v;
    }
    table.rows.push_back(std::move(row));
  }
  for (const auto& m : cfg.metrics) {
    double s = 0;
    for (const auto& r : table.rows) s += r.values.at(m);
    table.means[m] = s / static_cast<double>(table.rows.size());
  }
  return table;
}

EvalTable evaluate(const ModelParams& params, const DatasetManifest& manifest, bool train_split,
                   const EvalConfig& cfg) {
  std::vector<DatasetEntry> entries;
  for (const auto* e : manifest.split(train_split)) entries.push_back(*e);
  return evaluate(params, entries, load_split(manifest, train_split), manifest.grid(), manifest.camera(), cfg);
}

std::string EvalTable::to_csv() const {
  std::string out = "variant,sample_id,metric,value\n";
  const std::string v = to_string(variant);
  for (const auto& r : rows) {
    for (const auto& m : metrics) out += v + "," + r.sample_id + "," + m + "," + format_number(r.values.at(m)) + "\n";
  }
  for (const auto& m : metrics) out += v + ",mean," + m + "," + format_number(means.at(m)) + "\n";
  return out;
}

}  // namespace sketchcloud
