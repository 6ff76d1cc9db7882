#include "sketchcloud/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sketchcloud/errors.hpp"

namespace sketchcloud {

namespace {

class ByteWriter {
 public:
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::size_t end, const char* what)
      : bytes_(bytes), end_(end), what_(what) {}

  void expect_magic(const char* magic) {
    need(4);
    if (std::memcmp(&bytes_[pos_], magic, 4) != 0) throw DataError(std::string(what_) + ": bad magic bytes");
    pos_ += 4;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(&bytes_[pos_]), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw DataError(std::string(what_) + ": truncated payload");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
  std::size_t end_;
  const char* what_;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  ByteWriter w;
  w.raw("SKSM", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw DimensionError("checkpoint: tensor '" + t.name + "' shape " + shape_string(t.shape) +
                           " does not match " + std::to_string(t.values.size()) + " values");
    }
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.values) w.f32(v);
  }
  auto& bytes = w.bytes();
  const auto crc = crc32_of(bytes.data(), bytes.size());
  w.u32(crc);
  return std::move(bytes);
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw DataError("checkpoint: file too short");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  if (stored != crc32_of(bytes.data(), body)) throw DataError("checkpoint: CRC mismatch");

  ByteReader r(bytes, body, "checkpoint");
  r.expect_magic("SKSM");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.u32());
    const auto rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.u32());
      n *= t.shape.back();
    }
    if (n > r.remaining() / 4) throw DataError("checkpoint: tensor '" + t.name + "' exceeds payload");
    t.values.resize(n);
    for (auto& v : t.values) v = r.f32();
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes before CRC");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  write_file_bytes(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// Density map
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_density_map(const DensityMap& map) {
  ByteWriter w;
  w.raw("DMAP", 4);
  w.u32(static_cast<std::uint32_t>(map.grid().width()));
  w.u32(static_cast<std::uint32_t>(map.grid().height()));
  for (double v : map.values()) w.f32(static_cast<float>(v));
  return std::move(w.bytes());
}

DensityMap decode_density_map(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, bytes.size(), "density map");
  r.expect_magic("DMAP");
  const auto width = r.u32();
  const auto height = r.u32();
  if (r.remaining() != 4ull * width * height) {
    throw DataError("density map: payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                    std::to_string(4ull * width * height));
  }
  std::vector<double> values(static_cast<std::size_t>(width) * height);
  for (auto& v : values) v = static_cast<double>(r.f32());
  DensityMap map(GridSpec(width, height), std::move(values));
  map.validate(1e-5);
  return map;
}

void write_density_map(const std::filesystem::path& path, const DensityMap& map) {
  write_file_bytes(path, encode_density_map(map));
}

DensityMap read_density_map(const std::filesystem::path& path) {
  return decode_density_map(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

std::string encode_ply(const PointCloud& cloud) {
  std::string out;
  out.reserve(64 + cloud.size() * 40);
  out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
         "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char line[96];
  for (const auto& p : cloud) {
    const int n = std::snprintf(line, sizeof line, "%.9g %.9g %.9g\n", static_cast<double>(static_cast<float>(p.x)),
                                static_cast<double>(static_cast<float>(p.y)),
                                static_cast<double>(static_cast<float>(p.z)));
    out.append(line, static_cast<std::size_t>(n));
  }
  return out;
}

PointCloud decode_ply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw DataError("ply: missing 'ply' header line");
  std::size_t vertices = 0;
  bool have_count = false;
  std::vector<std::string> properties;
  while (std::getline(in, line)) {
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string kind;
      ls >> kind;
      if (kind != "ascii") throw DataError("ply: only ascii format is supported");
    } else if (word == "element") {
      std::string name;
      ls >> name >> vertices;
      if (name != "vertex") throw DataError("ply: unexpected element '" + name + "'");
      have_count = true;
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      properties.push_back(name);
    } else if (word != "comment" && !word.empty()) {
      throw DataError("ply: unexpected header line '" + line + "'");
    }
  }
  if (!have_count) throw DataError("ply: no vertex element");
  if (properties != std::vector<std::string>{"x", "y", "z"}) throw DataError("ply: vertex properties must be x y z");
  PointCloud cloud;
  cloud.reserve(vertices);
  for (std::size_t i = 0; i < vertices; ++i) {
    double x = 0, y = 0, z = 0;
    if (!(in >> x >> y >> z)) throw DataError("ply: expected " + std::to_string(vertices) + " vertices, got " + std::to_string(i));
    // Values are stored as float; snapping back recovers them exactly.
    cloud.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)});
  }
  return cloud;
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  const auto text = encode_ply(cloud);
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

PointCloud read_ply(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_ply(std::string(bytes.begin(), bytes.end()));
}

PointCloud quantize_to_float(const PointCloud& cloud) {
  PointCloud out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out[i] = {static_cast<float>(cloud[i].x), static_cast<float>(cloud[i].y), static_cast<float>(cloud[i].z)};
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_pgm(const SketchImage& image) {
  const std::string header = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.pixels.size());
  for (float v : image.pixels) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0f)));
  }
  return out;
}

SketchImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    if (tok.empty()) throw DataError("pgm: truncated header");
    return tok;
  };
  if (next_token() != "P5") throw DataError("pgm: only binary P5 images are supported");
  SketchImage img;
  try {
    img.width = std::stoul(next_token());
    img.height = std::stoul(next_token());
    if (std::stoul(next_token()) != 255) throw DataError("pgm: only 8-bit images are supported");
  } catch (const std::logic_error&) {
    throw DataError("pgm: malformed header");
  }
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos || bytes.size() - pos != img.width * img.height) {
    throw DataError("pgm: pixel payload does not match " + std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  img.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(bytes[pos + i]) / 255.0f;
  return img;
}

void write_pgm(const std::filesystem::path& path, const SketchImage& image) {
  write_file_bytes(path, encode_pgm(image));
}

SketchImage read_pgm(const std::filesystem::path& path) {
  return decode_pgm(read_file_bytes(path));
}

}  // namespace sketchcloud
