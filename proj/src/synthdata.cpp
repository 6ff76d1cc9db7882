#include "sketchcloud/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "sketchcloud/errors.hpp"
#include "sketchcloud/io.hpp"
#include "sketchcloud/rng.hpp"

namespace sketchcloud {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kShapeBound = 0.9;

Point3 operator+(const Point3& a, const Point3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Point3 operator-(const Point3& a, const Point3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Point3 operator*(double s, const Point3& a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(const Point3& a, const Point3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Point3 cross(const Point3& a, const Point3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double norm(const Point3& a) { return std::sqrt(dot(a, a)); }
Point3 normalized(const Point3& a) { return (1.0 / norm(a)) * a; }

Point3 rotate_z(const Point3& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y, s * p.x + c * p.y, p.z};
}

// Orthonormal pair perpendicular to unit vector a.
void basis_for(const Point3& a, Point3& e1, Point3& e2) {
  const Point3 helper = std::abs(a.x) < 0.9 ? Point3{1, 0, 0} : Point3{0, 1, 0};
  e1 = normalized(cross(a, helper));
  e2 = cross(a, e1);
}

double surface_area(const Primitive& p) {
  switch (p.kind) {
    case PrimitiveKind::sphere:
      return 4.0 * kPi * p.size.x * p.size.x;
    case PrimitiveKind::box:
      return 8.0 * (p.size.x * p.size.y + p.size.y * p.size.z + p.size.x * p.size.z);
    case PrimitiveKind::cylinder:
      return 2.0 * kPi * p.size.x * (2.0 * p.size.y) + 2.0 * kPi * p.size.x * p.size.x;
  }
  return 0.0;
}

// Point on the primitive's surface in its own (unrotated) placement.
Point3 sample_primitive(const Primitive& p, Rng& rng) {
  switch (p.kind) {
    case PrimitiveKind::sphere: {
      // Archimedes: z uniform on [-1, 1] is area-uniform on the sphere.
      const double z = rng.uniform(-1.0, 1.0);
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      return p.center + p.size.x * Point3{r * std::cos(phi), r * std::sin(phi), z};
    }
    case PrimitiveKind::box: {
      const double hx = p.size.x, hy = p.size.y, hz = p.size.z;
      const double areas[3] = {hy * hz, hx * hz, hx * hy};  // faces normal to x, y, z
      double pick = rng.uniform(0.0, areas[0] + areas[1] + areas[2]);
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
      Point3 q;
      if (pick < areas[0]) {
        q = {sign * hx, a * hy, b * hz};
      } else if ((pick -= areas[0]) < areas[1]) {
        q = {a * hx, sign * hy, b * hz};
      } else {
        q = {a * hx, b * hy, sign * hz};
      }
      return p.center + q;
    }
    case PrimitiveKind::cylinder: {
      const double r = p.size.x, h = p.size.y;
      Point3 e1, e2;
      basis_for(p.axis, e1, e2);
      const double side = 2.0 * kPi * r * 2.0 * h;
      const double caps = 2.0 * kPi * r * r;
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      if (rng.uniform(0.0, side + caps) < side) {
        const double t = rng.uniform(-h, h);
        return p.center + t * p.axis + r * std::cos(phi) * e1 + r * std::sin(phi) * e2;
      }
      const double rad = r * std::sqrt(rng.uniform());
      const double t = rng.uniform() < 0.5 ? -h : h;
      return p.center + t * p.axis + rad * std::cos(phi) * e1 + rad * std::sin(phi) * e2;
    }
  }
  return p.center;
}

// Strict interior test in the primitive's own placement.
bool strictly_inside(const Primitive& p, const Point3& q) {
  constexpr double kTol = 1e-9;
  const Point3 d = q - p.center;
  switch (p.kind) {
    case PrimitiveKind::sphere:
      return norm(d) < p.size.x - kTol;
    case PrimitiveKind::box:
      return std::abs(d.x) < p.size.x - kTol && std::abs(d.y) < p.size.y - kTol && std::abs(d.z) < p.size.z - kTol;
    case PrimitiveKind::cylinder: {
      const double t = dot(d, p.axis);
      const Point3 radial = d - t * p.axis;
      return std::abs(t) < p.size.y - kTol && norm(radial) < p.size.x - kTol;
    }
  }
  return false;
}

// Smallest ray parameter t >= -inf where the ray origin + t·(0,0,1) enters
// the primitive; origin is given in the primitive's own placement.
double ray_entry(const Primitive& p, double x, double y) {
  switch (p.kind) {
    case PrimitiveKind::sphere: {
      const double dx = x - p.center.x, dy = y - p.center.y;
      const double rr = p.size.x * p.size.x - dx * dx - dy * dy;
      if (rr < 0) return kInf;
      return p.center.z - std::sqrt(rr);
    }
    case PrimitiveKind::box: {
      if (std::abs(x - p.center.x) > p.size.x || std::abs(y - p.center.y) > p.size.y) return kInf;
      return p.center.z - p.size.z;
    }
    case PrimitiveKind::cylinder: {
      const double r = p.size.x, h = p.size.y;
      const Point3 o{x - p.center.x, y - p.center.y, -p.center.z};  // ray point at t = 0, relative to center
      const Point3 e{0, 0, 1};
      const Point3& a = p.axis;
      double best = kInf;
      const double oa = dot(o, a), ea = a.z;
      const Point3 w = o - oa * a;
      const Point3 dv = e - ea * a;
      const double qa = dot(dv, dv);
      if (qa > 1e-12) {
        const double qb = 2.0 * dot(w, dv), qc = dot(w, w) - r * r;
        const double disc = qb * qb - 4.0 * qa * qc;
        if (disc >= 0) {
          const double sq = std::sqrt(disc);
          for (double t : {(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)}) {
            if (std::abs(oa + t * ea) <= h) best = std::min(best, t);
          }
        }
      }
      if (std::abs(ea) > 1e-12) {
        for (double cap : {-h, h}) {
          const double t = (cap - oa) / ea;
          const Point3 hit = o + t * e;
          const Point3 radial = hit - dot(hit, a) * a;
          if (dot(radial, radial) <= r * r) best = std::min(best, t);
        }
      }
      return best;
    }
  }
  return kInf;
}

// Rotation-invariant extents: radial distance from the z axis and |z|.
void extents(const Primitive& p, double& radial, double& vertical) {
  const double cxy = std::hypot(p.center.x, p.center.y);
  switch (p.kind) {
    case PrimitiveKind::sphere:
      radial = cxy + p.size.x;
      vertical = std::abs(p.center.z) + p.size.x;
      return;
    case PrimitiveKind::box:
      radial = cxy + std::hypot(p.size.x, p.size.y);
      vertical = std::abs(p.center.z) + p.size.z;
      return;
    case PrimitiveKind::cylinder: {
      const double axy = std::hypot(p.axis.x, p.axis.y);
      radial = cxy + p.size.y * axy + p.size.x;
      vertical = std::abs(p.center.z) + p.size.y * std::abs(p.axis.z) +
                 p.size.x * std::sqrt(std::max(0.0, 1.0 - p.axis.z * p.axis.z));
      return;
    }
  }
}

Primitive random_primitive(PrimitiveKind kind, Rng& rng) {
  Primitive p;
  p.kind = kind;
  p.center = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
  switch (kind) {
    case PrimitiveKind::sphere:
      p.size = {rng.uniform(0.35, 0.75), 0, 0};
      break;
    case PrimitiveKind::box:
      p.size = {rng.uniform(0.2, 0.55), rng.uniform(0.2, 0.55), rng.uniform(0.2, 0.55)};
      break;
    case PrimitiveKind::cylinder: {
      p.size = {rng.uniform(0.2, 0.4), rng.uniform(0.3, 0.65), 0};
      const double z = rng.uniform(-1.0, 1.0);
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
      p.axis = {s * std::cos(phi), s * std::sin(phi), z};
      break;
    }
  }
  return p;
}

}  // namespace

std::size_t SketchImage::stroke_count() const {
  return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](float v) { return v > 0.0f; }));
}

void ShapeSpec::validate() const {
  if (primitives.empty()) throw DataError("shape: no primitives");
  for (const auto& p : primitives) {
    const bool ok = p.kind == PrimitiveKind::sphere ? p.size.x > 0
                  : p.kind == PrimitiveKind::box    ? (p.size.x > 0 && p.size.y > 0 && p.size.z > 0)
                                                    : (p.size.x > 0 && p.size.y > 0);
    if (!ok) throw DataError("shape: primitive sizes must be positive");
    if (p.kind == PrimitiveKind::cylinder && std::abs(norm(p.axis) - 1.0) > 1e-6) {
      throw DataError("shape: cylinder axis must be a unit vector");
    }
  }
}

std::string to_string(ShapeClass c) {
  switch (c) {
    case ShapeClass::sphere: return "sphere";
    case ShapeClass::box: return "box";
    case ShapeClass::cylinder: return "cylinder";
    case ShapeClass::union_of_primitives: return "union";
  }
  return "unknown";
}

ShapeClass shape_class_from_string(const std::string& name) {
  if (name == "sphere") return ShapeClass::sphere;
  if (name == "box") return ShapeClass::box;
  if (name == "cylinder") return ShapeClass::cylinder;
  if (name == "union") return ShapeClass::union_of_primitives;
  throw DataError("unknown shape class '" + name + "'");
}

ShapeSpec random_shape(ShapeClass shape_class, std::uint64_t seed) {
  Rng rng(seed);
  ShapeSpec spec;
  switch (shape_class) {
    case ShapeClass::sphere: spec.primitives.push_back(random_primitive(PrimitiveKind::sphere, rng)); break;
    case ShapeClass::box: spec.primitives.push_back(random_primitive(PrimitiveKind::box, rng)); break;
    case ShapeClass::cylinder: spec.primitives.push_back(random_primitive(PrimitiveKind::cylinder, rng)); break;
    case ShapeClass::union_of_primitives: {
      for (int i = 0; i < 2; ++i) {
        auto p = random_primitive(static_cast<PrimitiveKind>(rng.index(3)), rng);
        p.size = 0.7 * p.size;
        p.center = p.center + Point3{i == 0 ? -0.25 : 0.25, rng.uniform(-0.15, 0.15), 0};
        spec.primitives.push_back(p);
      }
      break;
    }
  }
  double extent = 0;
  for (const auto& p : spec.primitives) {
    double radial = 0, vertical = 0;
    extents(p, radial, vertical);
    extent = std::max({extent, radial, vertical});
  }
  if (extent > kShapeBound) {
    const double shrink = kShapeBound / extent;
    for (auto& p : spec.primitives) {
      p.center = shrink * p.center;
      p.size = shrink * p.size;
    }
  }
  return spec;
}

PointCloud sample_surface(const ShapeSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw DataError("sample_surface: need at least one point");
  std::vector<double> cumulative;
  double total = 0;
  for (const auto& p : spec.primitives) cumulative.push_back(total += surface_area(p));

  Rng rng(seed);
  PointCloud cloud;
  cloud.reserve(n);
  const std::size_t max_attempts = 1000 * n;
  for (std::size_t attempt = 0; cloud.size() < n; ++attempt) {
    if (attempt >= max_attempts) throw DataError("sample_surface: union surface is (nearly) empty");
    const double pick = rng.uniform(0.0, total);
    const std::size_t k = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin()),
        spec.primitives.size() - 1);
    const Point3 q = sample_primitive(spec.primitives[k], rng);
    bool hidden = false;
    for (std::size_t j = 0; j < spec.primitives.size() && !hidden; ++j) {
      if (j != k) hidden = strictly_inside(spec.primitives[j], q);
    }
    if (!hidden) cloud.push_back(rotate_z(q, spec.rotation_z));
  }
  return cloud;
}

double front_depth(const ShapeSpec& spec, const CameraModel& cam, double image_x, double image_y) {
  const Point3 world = invproj({image_x, image_y}, 0.0, cam);
  // Undo the view rotation; it is about z, so the ray direction is unchanged.
  const Point3 local = rotate_z(world, -spec.rotation_z);
  double best = kInf;
  for (const auto& p : spec.primitives) best = std::min(best, ray_entry(p, local.x, local.y));
  return best;
}

SketchImage render_sketch(const ShapeSpec& spec, const CameraModel& cam, std::size_t height, std::size_t width,
                          const RenderOptions& options) {
  const GridSpec grid(width, height);
  std::vector<double> depth(width * height);
  for (std::size_t v = 0; v < height; ++v) {
    for (std::size_t u = 0; u < width; ++u) {
      const auto ip = pixel_to_image(u, v, grid);
      depth[v * width + u] = spec.primitives.empty() ? kInf : front_depth(spec, cam, ip.x, ip.y);
    }
  }
  SketchImage img{width, height, std::vector<float>(width * height, 0.0f)};
  const long w = static_cast<long>(width), h = static_cast<long>(height);
  for (long v = 0; v < h; ++v) {
    for (long u = 0; u < w; ++u) {
      const double d = depth[v * w + u];
      if (!std::isfinite(d)) continue;
      bool edge = false;
      const long nbr[4][2] = {{u - 1, v}, {u + 1, v}, {u, v - 1}, {u, v + 1}};
      for (const auto& [nu, nv] : nbr) {
        if (nu < 0 || nv < 0 || nu >= w || nv >= h) {
          edge = true;
          continue;
        }
        const double dn = depth[nv * w + nu];
        // Coverage change, or this pixel occludes a farther neighbor.
        if (!std::isfinite(dn) || dn - d > options.edge_threshold) edge = true;
      }
      if (edge) img.pixels[v * w + u] = 1.0f;
    }
  }
  return img;
}

bool is_test_shape(std::size_t shape_id) { return shape_id % 5 == 4; }

std::vector<const DatasetEntry*> DatasetManifest::split(bool train) const {
  std::vector<const DatasetEntry*> out;
  for (const auto& s : samples) {
    if (s.train == train) out.push_back(&s);
  }
  return out;
}

DatasetSample make_sample(const DatasetOptions& options, std::size_t shape_id, std::size_t view_id) {
  if (options.classes.empty()) throw DataError("dataset: no shape classes configured");
  const ShapeClass cls = options.classes[shape_id % options.classes.size()];
  ShapeSpec spec = random_shape(cls, derive_seed(options.seed, {1, shape_id}));
  spec.surface_samples = options.points_per_shape;
  Rng view_rng(derive_seed(options.seed, {2, shape_id, view_id}));
  spec.rotation_z = view_rng.uniform(0.0, 2.0 * kPi);

  const auto cam = CameraModel::orthographic(options.camera_scale);
  const GridSpec grid(options.grid_size, options.grid_size);
  PointCloud cloud = quantize_to_float(
      sample_surface(spec, spec.surface_samples, derive_seed(options.seed, {3, shape_id, view_id})));
  SketchImage sketch = render_sketch(spec, cam, options.image_size, options.image_size, options.render);
  if (!sketch.valid()) throw DataError("dataset: rendered sketch is empty for shape " + std::to_string(shape_id));
  DensityMap density = render_density(cloud, grid, cam);
  DepthMultisetMap depths = render_depth_multisets(cloud, grid, cam);
  return DatasetSample{std::move(sketch), std::move(cloud), std::move(density), std::move(depths), shape_id, view_id};
}

namespace {

std::string sample_id(std::size_t shape_id, std::size_t view_id) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "shape%04zu_view%02zu", shape_id, view_id);
  return buf;
}

}  // namespace

DatasetManifest make_dataset(const DatasetOptions& options, const std::filesystem::path& out_dir) {
  if (options.n_shapes < 1) throw DataError("dataset: need at least one shape");
  if (options.views_per_shape < 1) throw DataError("dataset: need at least one view per shape");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "samples", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "samples").string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.seed = options.seed;
  manifest.grid_width = manifest.grid_height = options.grid_size;
  manifest.image_width = manifest.image_height = options.image_size;
  manifest.camera_scale = options.camera_scale;

  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t s = 0; s < options.n_shapes; ++s) {
    for (std::size_t v = 0; v < options.views_per_shape; ++v) {
      const auto sample = make_sample(options, s, v);
      DatasetEntry e;
      e.id = sample_id(s, v);
      e.shape_id = s;
      e.view_id = v;
      e.shape_class = options.classes[s % options.classes.size()];
      e.train = !is_test_shape(s);
      e.sketch_path = "samples/" + e.id + ".pgm";
      e.cloud_path = "samples/" + e.id + ".ply";
      e.density_path = "samples/" + e.id + ".dmap";
      write_pgm(out_dir / e.sketch_path, sample.sketch);
      write_ply(out_dir / e.cloud_path, sample.gt_cloud);
      write_density_map(out_dir / e.density_path, sample.gt_density);
      samples.push_back({{"id", e.id},
                         {"shape_id", e.shape_id},
                         {"view_id", e.view_id},
                         {"class", to_string(e.shape_class)},
                         {"split", e.train ? "train" : "test"},
                         {"sketch", e.sketch_path},
                         {"cloud", e.cloud_path},
                         {"density", e.density_path}});
      manifest.samples.push_back(std::move(e));
    }
  }

  nlohmann::json doc = {{"format", "sketchcloud-dataset"},
                        {"version", 1},
                        {"seed", options.seed},
                        {"grid", {{"width", options.grid_size}, {"height", options.grid_size}}},
                        {"image", {{"width", options.image_size}, {"height", options.image_size}}},
                        {"camera_scale", options.camera_scale},
                        {"points_per_shape", options.points_per_shape},
                        {"edge_threshold", options.render.edge_threshold},
                        {"samples", samples}};
  const std::string text = doc.dump(2) + "\n";
  write_file_bytes(out_dir / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_or_dir) {
  const auto path = std::filesystem::is_directory(manifest_or_dir) ? manifest_or_dir / "manifest.json" : manifest_or_dir;
  const auto bytes = read_file_bytes(path);
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    const auto doc = nlohmann::json::parse(bytes.begin(), bytes.end());
    if (doc.at("format") != "sketchcloud-dataset") throw DataError("manifest: unexpected format tag");
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.grid_width = doc.at("grid").at("width").get<std::size_t>();
    m.grid_height = doc.at("grid").at("height").get<std::size_t>();
    m.image_width = doc.at("image").at("width").get<std::size_t>();
    m.image_height = doc.at("image").at("height").get<std::size_t>();
    m.camera_scale = doc.at("camera_scale").get<double>();
    for (const auto& s : doc.at("samples")) {
      DatasetEntry e;
      e.id = s.at("id").get<std::string>();
      e.shape_id = s.at("shape_id").get<std::size_t>();
      e.view_id = s.at("view_id").get<std::size_t>();
      e.shape_class = shape_class_from_string(s.at("class").get<std::string>());
      const auto split = s.at("split").get<std::string>();
      if (split != "train" && split != "test") throw DataError("manifest: unknown split '" + split + "'");
      e.train = split == "train";
      e.sketch_path = s.at("sketch").get<std::string>();
      e.cloud_path = s.at("cloud").get<std::string>();
      e.density_path = s.at("density").get<std::string>();
      m.samples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("manifest: ") + ex.what());
  }
  return m;
}

DatasetSample load_sample(const DatasetManifest& manifest, const DatasetEntry& entry) {
  auto sketch = read_pgm(manifest.root / entry.sketch_path);
  auto cloud = read_ply(manifest.root / entry.cloud_path);
  auto density = read_density_map(manifest.root / entry.density_path);
  if (sketch.width != manifest.image_width || sketch.height != manifest.image_height) {
    throw DataError("sample " + entry.id + ": sketch size disagrees with manifest");
  }
  if (!(density.grid() == manifest.grid())) throw DataError("sample " + entry.id + ": density grid disagrees with manifest");
  if (cloud.empty()) throw DataError("sample " + entry.id + ": empty point cloud");
  auto depths = render_depth_multisets(cloud, manifest.grid(), manifest.camera());
  return DatasetSample{std::move(sketch), std::move(cloud), std::move(density), std::move(depths), entry.shape_id,
                       entry.view_id};
}

}  // namespace sketchcloud
