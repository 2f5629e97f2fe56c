#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gradeloss/phantom.hpp"

namespace gradeloss {

// Sample tensor file: "VPAT", u32 channels, u32 height, u32 width, then
// float32 little-endian values, channel-major and row-major.
std::string encode_vpat(const std::vector<const Image*>& channels);
std::vector<Image> decode_vpat(const std::string& bytes);
void write_vpat(const std::filesystem::path& path, const std::vector<const Image*>& channels);
std::vector<Image> read_vpat(const std::filesystem::path& path);

// Volume file: "VVOL", u32 nx, u32 ny, u32 nz, float32 voxels (x fastest),
// then a JSON trailer {"centroids": [{"label", "position": [x, y, z]}]}.
std::string encode_vvol(const SpineVolume& volume);
SpineVolume decode_vvol(const std::string& bytes);

/// Writes manifest.json plus one VPAT file per sample under `dir`.
/// Returns the dataset digest.
std::string write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

/// FNV-1a over the manifest text and every sample payload, as 16 hex digits.
std::string dataset_digest(const Dataset& dataset);

std::string fnv1a64_hex(std::string_view data, std::uint64_t state = 0xcbf29ce484222325ULL);

}  // namespace gradeloss
