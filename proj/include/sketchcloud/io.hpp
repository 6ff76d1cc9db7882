#pragma once

// On-disk formats. All binary formats are little-endian regardless of host.
//
//   checkpoint   "SKSM" u32 version, u32 count, then per tensor
//                u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
//                f32 values (row-major); trailing u32 CRC32 of every
//                preceding byte.
//   density map  "DMAP" u32 W, u32 H, f32 values[H][W].
//   point cloud  ASCII PLY, one vertex element with float x, y, z.
//   sketch       binary PGM (P5), 8 bit, 255 = stroke.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sketchcloud/geometry.hpp"
#include "sketchcloud/synthdata.hpp"
#include "sketchcloud/tensor.hpp"

namespace sketchcloud {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_density_map(const DensityMap& map);
DensityMap decode_density_map(const std::vector<std::uint8_t>& bytes);
void write_density_map(const std::filesystem::path& path, const DensityMap& map);
DensityMap read_density_map(const std::filesystem::path& path);

std::string encode_ply(const PointCloud& cloud);
PointCloud decode_ply(const std::string& text);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_ply(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_pgm(const SketchImage& image);
SketchImage decode_pgm(const std::vector<std::uint8_t>& bytes);
void write_pgm(const std::filesystem::path& path, const SketchImage& image);
SketchImage read_pgm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Rounds every coordinate to float precision (the PLY storage precision).
PointCloud quantize_to_float(const PointCloud& cloud);

}  // namespace sketchcloud
