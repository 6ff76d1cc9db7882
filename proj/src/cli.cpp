#include "sketchcloud/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sketchcloud/errors.hpp"
#include "sketchcloud/io.hpp"
#include "sketchcloud/model.hpp"
#include "sketchcloud/sampler.hpp"
#include "sketchcloud/synthdata.hpp"
#include "sketchcloud/training.hpp"

namespace sketchcloud {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

// Values from --config fill in every flag not given on the command line.
std::vector<std::string> apply_config_file(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty() || args.empty()) return args;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw IoError("config file '" + path + "' must hold a JSON object");

  std::vector<std::string> injected;
  for (const auto& [key, value] : j.items()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (flag == "--config" || has_flag(args, flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) {
        if (!joined.empty()) joined += ",";
        joined += v.is_string() ? v.get<std::string>() : v.dump();
      }
      injected.push_back(flag);
      injected.push_back(joined);
    } else {
      injected.push_back(flag);
      injected.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  std::vector<std::string> out{args.front()};
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

std::string sibling(const std::string& path, const std::string& suffix) { return path + suffix; }

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::size_t shapes = 10;
  std::size_t views = 5;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t image_size = 64;
  std::size_t grid_size = 64;
  std::size_t points = 2048;
  double scale = 1.0;
  std::string classes = "sphere,box,cylinder";
  double edge_threshold = 0.05;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  DatasetOptions o;
  o.n_shapes = a.shapes;
  o.views_per_shape = a.views;
  o.seed = a.seed;
  o.image_size = a.image_size;
  o.grid_size = a.grid_size;
  o.points_per_shape = a.points;
  o.camera_scale = a.scale;
  o.render.edge_threshold = a.edge_threshold;
  o.classes.clear();
  for (const auto& c : split_list(a.classes)) {
    try {
      o.classes.push_back(shape_class_from_string(c));
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }
  if (o.classes.empty()) throw UsageError("--classes must name at least one shape class");
  const auto manifest = make_dataset(o, a.out);
  out << (manifest.root / "manifest.json").string() << "\n";
  return kExitOk;
}

struct ModelArgs {
  std::vector<std::size_t> encoder_channels{16, 32, 64, 128};
  std::vector<std::size_t> decoder_channels{128, 64, 32, 16};
  std::vector<std::size_t> density_channels{32, 16};
  std::size_t depth_width = 128;
  std::size_t depth_blocks = 4;
  std::size_t noise_dim = 8;
  bool no_decoder = false;
  bool skip_connections = false;
  bool match_parameters = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--encoder-channels", encoder_channels, "Encoder block widths")->delimiter(',');
    cmd->add_option("--decoder-channels", decoder_channels, "Decoder block widths")->delimiter(',');
    cmd->add_option("--density-channels", density_channels, "Hidden widths of the density head")->delimiter(',');
    cmd->add_option("--depth-width", depth_width, "Depth MLP width")->check(CLI::PositiveNumber);
    cmd->add_option("--depth-blocks", depth_blocks, "Residual blocks in the depth MLP");
    cmd->add_option("--noise-dim", noise_dim, "Noise dimension")->check(CLI::PositiveNumber);
    cmd->add_flag("--no-decoder", no_decoder, "Use the last encoder map as the feature grid");
    cmd->add_flag("--skip-connections", skip_connections, "Feed encoder maps into the decoder");
    cmd->add_flag("--match-parameters", match_parameters,
                  "Drop the decoder and widen the depth MLP to the same parameter count");
  }

  ModelConfig build(std::size_t input_size) const {
    ModelConfig c;
    c.input_size = input_size;
    c.encoder_channels = encoder_channels;
    c.decoder_channels = decoder_channels;
    c.density_channels = density_channels;
    c.depth_width = depth_width;
    c.depth_blocks = depth_blocks;
    c.noise_dim = noise_dim;
    c.use_decoder = !no_decoder;
    c.skip_connections = skip_connections;
    c.validate();
    return match_parameters ? simple_encoder_config(c) : c;
  }
};

struct TrainArgs {
  std::string data;
  std::string out;
  std::size_t epochs = 30;
  double lr = 1e-3;
  double lambda_cd = 1.0;
  double lambda_d = 1e4;
  std::uint64_t seed = 0;
  std::size_t points = 1024;
  std::string location_source = "gt-density";
  std::string loss_csv;
  std::string config_dump;
  bool freeze_translator = false;
  bool freeze_density_head = false;
  bool freeze_depth_generator = false;
  ModelArgs model;
};

int train_command(const TrainArgs& a, std::ostream& out) {
  const auto manifest = load_manifest(a.data);
  if (manifest.image_width != manifest.image_height) throw DataError("train: sketches must be square");
  const ModelConfig mc = a.model.build(manifest.image_width);
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.lr = a.lr;
  tc.weights = {a.lambda_cd, a.lambda_d};
  tc.points = a.points;
  tc.location_source = a.location_source == "gt-density" ? LocationSource::gt_density : LocationSource::predicted_density;
  tc.seed = a.seed;
  tc.freeze_translator = a.freeze_translator;
  tc.freeze_density_head = a.freeze_density_head;
  tc.freeze_depth_generator = a.freeze_depth_generator;

  const auto result = train(manifest, mc, tc);
  char line[160];
  for (const auto& e : result.history) {
    std::snprintf(line, sizeof line, "epoch %zu  l_cd %.6g  l_d %.6g  total %.6g\n", e.epoch, e.mean_chamfer,
                  e.mean_density, e.mean_total);
    out << line;
  }
  write_checkpoint(a.out, result.params.to_named_tensors());
  const std::string csv = loss_history_csv(result.history);
  const std::string dump = config_dump(tc, mc);
  write_file_bytes(a.loss_csv.empty() ? sibling(a.out, ".loss.csv") : a.loss_csv,
                   std::vector<std::uint8_t>(csv.begin(), csv.end()));
  write_file_bytes(a.config_dump.empty() ? sibling(a.out, ".config.json") : a.config_dump,
                   std::vector<std::uint8_t>(dump.begin(), dump.end()));
  out << a.out << "\n";
  return kExitOk;
}

struct SampleArgs {
  std::string ckpt;
  std::string sketch;
  std::size_t points = 2048;
  std::uint64_t seed = 0;
  std::string out;
  std::string gt_density;
  std::string oracle_depths;
  bool homo = false;
  bool jitter = false;
  std::size_t grid_size = 64;
  double scale = 1.0;
};

int sample_command(const SampleArgs& a, std::ostream& out) {
  const bool oracle = !a.oracle_depths.empty();
  if (oracle && a.gt_density.empty()) throw UsageError("--oracle-depths needs --use-gt-density");
  if (a.ckpt.empty() && !oracle) throw UsageError("--ckpt is required unless sampling oracle depths");
  const CameraModel cam = CameraModel::orthographic(a.scale);

  SamplerConfig sc;
  sc.points = a.points;
  sc.seed = a.seed;
  sc.mode = a.homo ? LocationMode::homo : LocationMode::multinomial;
  sc.jitter = a.jitter;
  sc.source = a.gt_density.empty() ? LocationSource::predicted_density : LocationSource::gt_density;

  PointCloud cloud;
  if (oracle) {
    const DensityMap map = read_density_map(a.gt_density);
    const auto depths = render_depth_multisets(read_ply(a.oracle_depths), map.grid(), cam);
    cloud = generate_oracle_cloud(map, depths, cam, sc);
  } else {
    const auto params = ModelParams::from_named_tensors(read_checkpoint(a.ckpt));
    const SketchImage sketch = read_pgm(a.sketch);
    NoGradGuard no_grad;
    const Tensor features = translate(sketch, params);
    if (!all_finite(features)) throw NumericalError("sample: feature grid is not finite");
    if (!a.gt_density.empty()) {
      cloud = generate_cloud(read_density_map(a.gt_density), features, params, cam, sc);
    } else {
      const GridSpec grid(a.grid_size, a.grid_size);
      const Tensor density = predict_density(features, grid, params);
      if (!all_finite(density)) throw NumericalError("sample: density map is not finite");
      cloud = generate_cloud(to_density_map(density, grid), features, params, cam, sc);
    }
  }
  write_ply(a.out, cloud);
  out << a.out << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::string metrics = "cd,emd,iou,fpd";
  std::string out;
  std::string variant = "ours";
  std::size_t points = 2048;
  std::uint64_t seed = 0;
  std::size_t emd_points = 512;
  std::size_t voxel_resolution = 32;
};

int eval_command(const EvalArgs& a, std::ostream& out) {
  EvalConfig ec;
  try {
    ec.variant = eval_variant_from_string(a.variant);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  ec.metrics = split_list(a.metrics);
  if (ec.metrics.empty()) throw UsageError("--metrics must name at least one metric");
  for (const auto& m : ec.metrics) {
    const auto& known = known_metrics();
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw UsageError("unknown metric '" + m + "' (expected cd, emd, iou or fpd)");
    }
  }
  ec.points = a.points;
  ec.seed = a.seed;
  ec.emd_points = a.emd_points;
  ec.voxel_resolution = a.voxel_resolution;
  if (a.ckpt.empty() && ec.variant != EvalVariant::gt) throw UsageError("--ckpt is required for this variant");

  const auto manifest = load_manifest(a.data);
  const ModelParams params =
      a.ckpt.empty() ? ModelParams() : ModelParams::from_named_tensors(read_checkpoint(a.ckpt));
  const auto table = evaluate(params, manifest, a.split == "train", ec);
  const std::string csv = table.to_csv();
  write_file_bytes(a.out, std::vector<std::uint8_t>(csv.begin(), csv.end()));
  char line[128];
  for (const auto& m : ec.metrics) {
    std::snprintf(line, sizeof line, "%s mean %s %.6g\n", a.variant.c_str(), m.c_str(), table.means.at(m));
    out << line;
  }
  return kExitOk;
}

template <typename Fn>
int guarded(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace

int cmd_gradcheck(std::uint64_t seed, std::ostream& out, const std::vector<GradcheckCase>& extra) {
  auto cases = standard_gradcheck_cases(seed);
  cases.insert(cases.end(), extra.begin(), extra.end());
  const GradcheckOptions options;
  const auto report = run_gradcheck_suite(cases, options, seed);
  print_gradcheck_report(report, options, out);
  return report.all_passed() ? kExitOk : kExitUsage;
}

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  try {
    args = apply_config_file(raw_args);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }

  CLI::App app{"Sketch to point cloud reconstruction"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  const std::string config_help = "JSON file of flag values; explicit flags win";

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic sketch/point-cloud dataset");
  gen_cmd->add_option("--shapes", gen.shapes, "Number of shapes")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--views", gen.views, "Views per shape")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--image-size", gen.image_size, "Sketch size in pixels")->check(CLI::Range(2, 4096));
  gen_cmd->add_option("--grid-size", gen.grid_size, "Density grid size")->check(CLI::Range(2, 4096));
  gen_cmd->add_option("--points", gen.points, "Surface points per shape")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--scale", gen.scale, "Orthographic scale")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--classes", gen.classes, "Comma-separated shape classes");
  gen_cmd->add_option("--edge-threshold", gen.edge_threshold, "Depth jump that draws a contour");
  gen_cmd->add_option("--config", config_help);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset");
  train_cmd->add_option("--data", tr.data, "Dataset directory or manifest")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--epochs", tr.epochs, "Epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tr.lr, "Learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lambda-cd", tr.lambda_cd, "Chamfer loss weight")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--lambda-d", tr.lambda_d, "Density loss weight")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--seed", tr.seed, "Random seed");
  train_cmd->add_option("--points", tr.points, "Predicted points per sample")->check(CLI::PositiveNumber);
  train_cmd->add_option("--location-source", tr.location_source, "Where training locations come from")
      ->check(CLI::IsMember({"gt-density", "predicted-density"}));
  train_cmd->add_option("--loss-csv", tr.loss_csv, "Loss history path (default <out>.loss.csv)");
  train_cmd->add_option("--config-dump", tr.config_dump, "Settings dump path (default <out>.config.json)");
  train_cmd->add_flag("--freeze-translator", tr.freeze_translator, "Keep translator weights fixed");
  train_cmd->add_flag("--freeze-density-head", tr.freeze_density_head, "Keep density head weights fixed");
  train_cmd->add_flag("--freeze-depth-generator", tr.freeze_depth_generator, "Keep depth MLP weights fixed");
  tr.model.add_to(train_cmd);
  train_cmd->add_option("--config", config_help);

  SampleArgs sa;
  auto* sample_cmd = app.add_subcommand("sample", "Generate a point cloud from a sketch");
  sample_cmd->add_option("--ckpt", sa.ckpt, "Checkpoint");
  sample_cmd->add_option("--sketch", sa.sketch, "Sketch image (PGM)");
  sample_cmd->add_option("--points", sa.points, "Number of points")->check(CLI::PositiveNumber);
  sample_cmd->add_option("--seed", sa.seed, "Random seed");
  sample_cmd->add_option("--out", sa.out, "Output PLY")->required();
  sample_cmd->add_option("--use-gt-density", sa.gt_density, "Draw locations from this density map");
  sample_cmd->add_option("--oracle-depths", sa.oracle_depths,
                         "Draw depths from the points of this cloud instead of the depth generator");
  sample_cmd->add_flag("--homo", sa.homo, "Sample uniformly over the foreground");
  sample_cmd->add_flag("--jitter", sa.jitter, "Offset points uniformly within their bin");
  sample_cmd->add_option("--grid-size", sa.grid_size, "Density grid size")->check(CLI::Range(2, 4096));
  sample_cmd->add_option("--scale", sa.scale, "Orthographic scale")->check(CLI::PositiveNumber);
  sample_cmd->add_option("--config", config_help);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score generated clouds against a dataset split");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint");
  eval_cmd->add_option("--data", ev.data, "Dataset directory or manifest")->required();
  eval_cmd->add_option("--split", ev.split, "Split")->check(CLI::IsMember({"test", "train"}));
  eval_cmd->add_option("--metrics", ev.metrics, "Comma-separated metrics: cd, emd, iou, fpd");
  eval_cmd->add_option("--out", ev.out, "Output CSV")->required();
  eval_cmd->add_option("--variant", ev.variant, "ours, homo, ours_real or gt");
  eval_cmd->add_option("--points", ev.points, "Generated points per sample")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", ev.seed, "Random seed");
  eval_cmd->add_option("--emd-points", ev.emd_points, "Points per side for EMD")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--voxel-resolution", ev.voxel_resolution, "Voxels per axis")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--config", config_help);

  std::uint64_t gradcheck_seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every backward rule");
  grad_cmd->add_option("--seed", gradcheck_seed, "Random seed");
  grad_cmd->add_option("--config", config_help);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) err << sub->help();
    return kExitUsage;
  }

  if (gen_cmd->parsed()) return guarded([&] { return gen_data(gen, out); }, err);
  if (train_cmd->parsed()) return guarded([&] { return train_command(tr, out); }, err);
  if (sample_cmd->parsed()) {
    if (sa.sketch.empty() && sa.oracle_depths.empty()) {
      err << "error: --sketch is required\n";
      return kExitUsage;
    }
    return guarded([&] { return sample_command(sa, out); }, err);
  }
  if (eval_cmd->parsed()) return guarded([&] { return eval_command(ev, out); }, err);
  return guarded([&] { return cmd_gradcheck(gradcheck_seed, out); }, err);
}

}  // namespace sketchcloud
