#pragma once

#include "pcdesc/geometry.hpp"
#include "pcdesc/model.hpp"
#include "pcdesc/retrieval.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pcdesc::io {

using Bytes = std::vector<std::uint8_t>;

// Binary point cloud: "DHPC", u16 version, u32 count, count × 3 float32
// (x, y, z in meters, z upright). All integers and floats little-endian.
constexpr std::uint16_t kCloudVersion = 1;
Bytes encode_dhpc(const PointCloud& cloud);
/// Throws parse error naming the byte offset of the first inconsistency.
PointCloud decode_dhpc(const Bytes& bytes);

/// Text point cloud: one "x y z" per line; blank lines and '#' comments skipped.
std::string encode_xyz(const PointCloud& cloud);
PointCloud decode_xyz(const std::string& text);

/// Dispatch on the extension (.dhpc or .xyz).
PointCloud load_cloud(const std::filesystem::path& path);
void save_cloud(const std::filesystem::path& path, const PointCloud& cloud);

// Model file: "DHMD", u16 version, u32 text length + [arch] text, u32 block
// count, then per block u32 name length, name bytes, u32 rank, rank × u32 dims,
// float32 values; trailing u32 CRC-32 (zlib polynomial) of all preceding bytes.
constexpr std::uint16_t kModelVersion = 1;
Bytes encode_model(const nn::ModelParams<float>& m);
/// Verifies the CRC, the architecture text and that every parameter of that
/// architecture appears exactly once with the right shape.
nn::ModelParams<float> decode_model(const Bytes& bytes);

nn::ModelParams<float> load_model(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const nn::ModelParams<float>& m);

// Descriptor database: "DHDB", u16 version, u32 dim, u32 count, per entry
// u32 id length, id, 3 × float64 position, dim × float32 descriptor.
constexpr std::uint16_t kDatabaseVersion = 1;
Bytes encode_database(const retrieval::DescriptorDatabase& db);
retrieval::DescriptorDatabase decode_database(const Bytes& bytes);

struct ManifestEntry {
  std::string id;
  std::string file;  // relative to the manifest directory
  double x = 0.0, y = 0.0;
};

/// CSV with header "id,file,x,y".
std::string encode_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> decode_manifest(const std::string& text);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

Bytes read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Bytes& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pcdesc::io
