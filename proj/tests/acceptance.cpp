// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "sketchcloud/cli.hpp"
#include "sketchcloud/errors.hpp"
#include "sketchcloud/gradcheck.hpp"
#include "sketchcloud/io.hpp"
#include "sketchcloud/metrics.hpp"
#include "sketchcloud/sampler.hpp"
#include "sketchcloud/synthdata.hpp"
#include "sketchcloud/training.hpp"

using namespace sketchcloud;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  failures += !o.pass;
  std::printf("%s %-22s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != kExitOk) std::cerr << "command failed (" << code << "): " << err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

PointCloud random_cloud(std::size_t n, Rng& rng, double lo = -1, double hi = 1) {
  PointCloud c(n);
  for (auto& p : c) p = {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return c;
}

double sq(const Point3& a, const Point3& b) {
  return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z);
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto start = Clock::now();
  const GradcheckOptions options;
  const auto report = run_gradcheck_suite(standard_gradcheck_cases(0), options, 0);
  const double t = seconds_since(start);
  double worst = 0;
  std::string failed;
  for (const auto& r : report.results) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed += " " + r.name;
  }
  return {report.all_passed() && t < 120,
          fmt("%zu cases, max rel err %.2e, %.1f s%s", report.results.size(), worst, t,
              failed.empty() ? "" : (" failed:" + failed).c_str())};
}

Outcome density_renderer() {
  const GridSpec g(64, 64);
  const auto cam = CameraModel::orthographic();
  Rng rng(101);
  double worst_sum = 0;
  std::size_t mismatched = 0;
  for (int c = 0; c < 100; ++c) {
    const auto cloud = random_cloud(1 + rng.index(500), rng);
    const auto m = render_density(cloud, g, cam);
    // Nearest bin center along each axis, border-clamped.
    std::map<std::pair<long, long>, int> counts;
    for (const auto& p : cloud) {
      const long u = std::clamp<long>(static_cast<long>(std::floor((p.x + 1) * 63 / 2 + 0.5)), 0, 63);
      const long v = std::clamp<long>(static_cast<long>(std::floor((p.y + 1) * 63 / 2 + 0.5)), 0, 63);
      ++counts[{u, v}];
    }
    double total = 0;
    for (std::size_t v = 0; v < 64; ++v)
      for (std::size_t u = 0; u < 64; ++u) {
        const auto it = counts.find({static_cast<long>(u), static_cast<long>(v)});
        const double expected = it == counts.end() ? 0.0 : static_cast<double>(it->second) / cloud.size();
        mismatched += m.at(u, v) != expected;
        total += m.at(u, v);
      }
    worst_sum = std::max(worst_sum, std::abs(total - 1));
  }
  return {mismatched == 0 && worst_sum <= 1e-6,
          fmt("100 clouds, %zu mismatched bins, max |sum-1| %.1e", mismatched, worst_sum)};
}

Outcome sampler_statistics() {
  const std::size_t draws = 100000;
  Rng rng(202);
  int passed = 0;
  double worst_ratio = 0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t w = 4 + rng.index(13), h = 4 + rng.index(13);
    const GridSpec g(w, h);
    std::vector<double> m(g.size());
    double total = 0;
    for (auto& x : m) total += (x = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.05, 1.0));
    for (auto& x : m) x /= total;
    const DensityMap map(g, m);
    std::vector<std::size_t> counts(g.size(), 0);
    bool zero_hit = false;
    for (const auto& p : sample_locations(map, draws, 300 + k)) {
      ++counts[g.flat(p.u, p.v)];
      zero_hit |= m[g.flat(p.u, p.v)] == 0;
    }
    double stat = 0;
    std::size_t bins = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] == 0) continue;
      const double e = m[i] * draws;
      stat += (counts[i] - e) * (counts[i] - e) / e;
      ++bins;
    }
    boost::math::chi_squared dist(static_cast<double>(bins - 1));
    const double critical = boost::math::quantile(boost::math::complement(dist, 0.001));
    worst_ratio = std::max(worst_ratio, stat / critical);
    passed += !zero_hit && stat < critical;
  }
  return {passed == 20, fmt("%d/20 maps below the 0.001 critical value, worst stat/critical %.2f", passed, worst_ratio)};
}

Outcome round_trip() {
  DatasetOptions opt;
  opt.seed = 303;
  opt.points_per_shape = 4096;
  const double bound = 2.0 / (63.0 * 63.0);
  double worst = 0;
  for (std::size_t shape = 0; shape < 10; ++shape) {
    const auto s = make_sample(opt, shape, shape % opt.views_per_shape);
    SamplerConfig cfg;
    cfg.points = 4096;
    cfg.seed = 400 + shape;
    cfg.source = LocationSource::gt_density;
    cfg.depth_source = DepthSource::oracle_multiset;
    const auto cloud = generate_oracle_cloud(s.gt_density, s.gt_depths, CameraModel::orthographic(), cfg);
    worst = std::max(worst, chamfer_one_sided(cloud, s.gt_cloud));
  }
  return {worst <= bound && worst < 1e-3,
          fmt("10 shapes, worst one-sided CD %.3e (bound %.3e)", worst, bound)};
}

Outcome metric_oracles() {
  Rng rng(404);
  double chamfer_err = 0;
  for (int k = 0; k < 50; ++k) {
    const auto s = random_cloud(1 + rng.index(300), rng), t = random_cloud(1 + rng.index(300), rng);
    auto side = [](const PointCloud& a, const PointCloud& b) {
      double acc = 0;
      for (const auto& p : a) {
        double best = INFINITY;
        for (const auto& q : b) best = std::min(best, sq(p, q));
        acc += best;
      }
      return acc / a.size();
    };
    chamfer_err = std::max(chamfer_err, std::abs(chamfer(s, t, NeighborSearch::kd_tree) - (side(s, t) + side(t, s))));
  }

  double emd_err = 0;
  for (std::size_t n = 1; n <= 7; ++n)
    for (int k = 0; k < 3; ++k) {
      const auto s = random_cloud(n, rng), t = random_cloud(n, rng);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      double best = INFINITY;
      do {
        double acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += std::sqrt(sq(s[i], t[perm[i]]));
        best = std::min(best, acc / n);
      } while (std::next_permutation(perm.begin(), perm.end()));
      emd_err = std::max(emd_err, std::abs(emd(s, t) - best));
    }

  std::size_t iou_mismatch = 0;
  for (int k = 0; k < 10; ++k) {
    const auto s = random_cloud(50 + rng.index(100), rng), t = random_cloud(50 + rng.index(100), rng);
    auto cells = [](const PointCloud& c) {
      std::set<std::tuple<int, int, int>> out;
      auto idx = [](double x) { return std::min(31, static_cast<int>(std::floor((x + 1) / 2 * 32))); };
      for (const auto& p : c) out.insert({idx(p.x), idx(p.y), idx(p.z)});
      return out;
    };
    const auto a = cells(s), b = cells(t);
    std::size_t both = 0;
    for (const auto& c : a) both += b.count(c);
    iou_mismatch += voxel_iou(s, t, 32) != static_cast<double>(both) / static_cast<double>(a.size() + b.size() - both);
  }

  // N(0, I) against N(μ, diag(σ²)): |μ|² + Σ (σ_i − 1)².
  std::mt19937_64 eng(405);
  std::normal_distribution<double> z;
  const std::size_t n = 100000;
  const double mu[3] = {1.0, -0.5, 0.0}, sd[3] = {2.0, 1.0, 0.5};
  FeatureSet a(n, std::vector<double>(3)), b(n, std::vector<double>(3));
  for (auto& row : a)
    for (auto& x : row) x = z(eng);
  for (auto& row : b)
    for (int d = 0; d < 3; ++d) row[d] = mu[d] + sd[d] * z(eng);
  double closed = 0;
  for (int d = 0; d < 3; ++d) closed += mu[d] * mu[d] + (sd[d] - 1) * (sd[d] - 1);
  const double fd_rel = std::abs(frechet_distance(a, b) - closed) / closed;

  return {chamfer_err <= 1e-6 && emd_err <= 1e-9 && iou_mismatch == 0 && fd_rel <= 0.05,
          fmt("chamfer err %.1e, emd err %.1e, iou mismatches %zu, frechet rel err %.3f", chamfer_err, emd_err,
              iou_mismatch, fd_rel)};
}

Outcome loss_configuration(const fs::path& dump_path) {
  const TrainConfig defaults;
  const bool struct_ok = defaults.weights.chamfer == 1.0 && defaults.weights.density == 1e4 &&
                         defaults.epochs == 30 && defaults.lr == 1e-3;
  const auto dump = nlohmann::json::parse(slurp(dump_path));
  const auto& t = dump.at("train");
  const bool dump_ok = t.at("lambda_cd") == 1.0 && t.at("lambda_d") == 1e4 && t.at("epochs") == 30 &&
                       t.at("lr") == 1e-3;
  return {struct_ok && dump_ok, fmt("defaults %s, emitted dump %s (lambda_cd %g, lambda_d %g, epochs %d, lr %g)",
                                    struct_ok ? "match" : "differ", dump_ok ? "matches" : "differs",
                                    t.at("lambda_cd").get<double>(), t.at("lambda_d").get<double>(),
                                    t.at("epochs").get<int>(), t.at("lr").get<double>())};
}

std::vector<std::vector<double>> read_loss_csv(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

double mean_cd(const fs::path& csv) {
  std::ifstream in(csv);
  for (std::string line; std::getline(in, line);) {
    if (line.find(",mean,cd,") != std::string::npos) return std::stod(line.substr(line.rfind(',') + 1));
  }
  throw DataError("no mean cd row in " + csv.string());
}

// The toy model is narrower than the defaults so that two 30-epoch runs fit
// the time budget on one core.
Outcome toy_training(const fs::path& dir) {
  const auto start = Clock::now();
  const auto data = dir / "toy", cfg = dir / "toy_model.json";
  {
    std::ofstream out(cfg);
    out << R"({"encoder_channels": [8, 16, 32, 64], "decoder_channels": [64, 32, 16, 8], "depth_width": 64, "points": 1024})";
  }
  if (cli({"gen-data", "--shapes", "15", "--views", "5", "--seed", "11", "--classes", "sphere,box,cylinder", "--out",
           data.string()}) != kExitOk)
    return {false, "gen-data failed"};
  const auto manifest = load_manifest(data);
  const std::size_t n_train = manifest.split(true).size(), n_test = manifest.split(false).size();

  for (const auto& [name, extra] : std::vector<std::pair<std::string, std::vector<std::string>>>{
           {"ours", {}}, {"simenc", {"--match-parameters"}}}) {
    std::vector<std::string> args{"train", "--data", data.string(), "--config", cfg.string(), "--seed", "5", "--out",
                                  (dir / (name + ".sksm")).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    if (cli(args) != kExitOk) return {false, "training " + name + " failed"};
  }
  auto eval = [&](const std::string& ckpt, const std::string& variant) {
    const auto out = dir / ("eval_" + ckpt + "_" + variant + ".csv");
    if (cli({"eval", "--ckpt", (dir / (ckpt + ".sksm")).string(), "--data", data.string(), "--split", "test",
             "--metrics", "cd", "--variant", variant, "--points", "1024", "--seed", "3", "--out", out.string()}) !=
        kExitOk)
      throw DataError("eval " + ckpt + " " + variant + " failed");
    return mean_cd(out);
  };
  const double ours = eval("ours", "ours"), homo = eval("ours", "homo"), real = eval("ours", "ours_real"),
               simenc = eval("simenc", "ours");
  const auto history = read_loss_csv(dir / "ours.sksm.loss.csv");
  const double first = history.front().at(1), last = history.back().at(1);
  const double t = seconds_since(start);

  const bool a = history.size() == 30 && last <= 0.5 * first, b = ours < homo, c = real <= 1.1 * ours,
             d = simenc > ours, timely = t <= 900;
  std::string detail = fmt(
      "%zu train / %zu test, %.0f s; (a) train CD %.4f -> %.4f %s; (b) ours %.5f vs homo %.5f %s; "
      "(c) ours_real %.5f %s; (d) simenc %.5f %s",
      n_train, n_test, t, first, last, a ? "ok" : "FAIL", ours, homo, b ? "ok" : "FAIL", real, c ? "ok" : "FAIL",
      simenc, d ? "ok" : "FAIL");
  return {a && b && c && d && timely && n_train == 60 && n_test == 15, detail};
}

Outcome determinism(const fs::path& dir) {
  const auto data = dir / "det";
  if (cli({"gen-data", "--shapes", "5", "--views", "2", "--seed", "21", "--out", data.string()}) != kExitOk)
    return {false, "gen-data failed"};
  const std::vector<std::string> model{"--encoder-channels", "8,16", "--decoder-channels", "16,8", "--depth-width",
                                       "32",                 "--epochs", "2",               "--points",           "256",
                                       "--seed",             "8"};
  for (const std::string name : {"a", "b"}) {
    std::vector<std::string> args{"train", "--data", data.string(), "--out", (dir / (name + ".sksm")).string()};
    args.insert(args.end(), model.begin(), model.end());
    if (cli(args) != kExitOk) return {false, "train failed"};
    if (cli({"sample", "--ckpt", (dir / (name + ".sksm")).string(), "--sketch",
             (data / "samples" / "shape0000_view00.pgm").string(), "--points", "2048", "--seed", "13", "--out",
             (dir / (name + ".ply")).string()}) != kExitOk)
      return {false, "sample failed"};
  }
  const bool ckpt = slurp(dir / "a.sksm") == slurp(dir / "b.sksm");
  const bool ply = slurp(dir / "a.ply") == slurp(dir / "b.ply");
  return {ckpt && ply && !slurp(dir / "a.ply").empty(),
          fmt("checkpoints %s, point clouds %s", ckpt ? "identical" : "differ", ply ? "identical" : "differ")};
}

}  // namespace

int main() {
  const auto dir = fs::temp_directory_path() / "sketchcloud_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  report("gradient_suite", gradient_suite);
  report("density_renderer", density_renderer);
  report("sampler_statistics", sampler_statistics);
  report("round_trip_bound", round_trip);
  report("metric_oracles", metric_oracles);
  report("toy_training", [&] { return toy_training(dir); });
  report("loss_configuration", [&] { return loss_configuration(dir / "ours.sksm.config.json"); });
  report("determinism", [&] { return determinism(dir); });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
