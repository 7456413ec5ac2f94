#pragma once

#include <cstdint>
#include <string>

#include "drt/image.hpp"

namespace drt {

/// Streak generator settings. Angles are degrees from vertical.
struct RainParams {
  int count_min = 20;
  int count_max = 40;
  double angle_min = -20.0;
  double angle_max = -10.0;
  double length_min = 6.0;
  double length_max = 16.0;
  double width = 1.0;
  double intensity_min = 0.2;
  double intensity_max = 0.4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Adds anti-aliased bright streaks: degraded = clamp(clean + sum_i a_i * mask_i).
/// Deterministic per seed; never darkens a pixel.
ImagePair synthesize_rain(const Image& clean, const RainParams& params, std::string id = {});

/// Smooth procedural background (gradients plus soft blobs) for synthetic
/// datasets when no natural images are available.
Image make_clean_scene(Index height, Index width, std::uint64_t seed);

}  // namespace drt
