#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "drt/tensor.hpp"

namespace drt {

/// [3, H, W] float image in [0, 1].
using Image = Tensor<float>;

struct ImagePair {
  Image clean;
  Image degraded;
  std::string id;
};

/// Throws std::invalid_argument if the pair breaks shape or range invariants.
void validate_pair(const ImagePair& pair);

/// Reads an 8-bit lossless raster (PNG, or binary PPM by extension) as
/// [3, H, W] in [0, 1]. Gray, palette and alpha PNGs are converted to RGB.
Image load_image(const std::filesystem::path& path);

/// Clamps to [0, 1] and quantizes with round(255 v). Format follows the
/// extension (.png or .ppm).
void save_image(const std::filesystem::path& path, const Image& image);

/// Channel-first float image from interleaved 8-bit RGB.
Image image_from_rgb8(const std::vector<unsigned char>& rgb, Index height, Index width);
std::vector<unsigned char> image_to_rgb8(const Image& image);

struct ManifestEntry {
  std::filesystem::path clean;
  std::filesystem::path degraded;
};

/// Tab-separated "clean<TAB>degraded" lines. Relative paths resolve against
/// the manifest's directory. Blank lines and '#' comments are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

std::vector<ImagePair> load_pairs(const std::vector<ManifestEntry>& entries);

}  // namespace drt
