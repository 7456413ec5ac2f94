#include "drt/rain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace drt {

void RainParams::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid rain params: ") + what);
  };
  require(count_min >= 0 && count_max >= count_min, "count range");
  require(angle_max >= angle_min, "angle range");
  require(length_min >= 1.0 && length_max >= length_min, "lengths must be >= 1");
  require(width > 0.0, "width must be positive");
  require(intensity_min >= 0.0 && intensity_max <= 1.0 && intensity_max >= intensity_min,
          "intensity must lie in [0, 1]");
}

namespace {

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

ImagePair synthesize_rain(const Image& clean, const RainParams& params, std::string id) {
  params.validate();
  if (clean.rank() != 3 || clean.dim(0) != 3) throw std::invalid_argument("synthesize_rain: expected [3, H, W]");
  const Index h = clean.dim(1), w = clean.dim(2), plane = h * w;

  std::mt19937_64 rng(params.seed);
  std::uniform_int_distribution<int> count_dist(params.count_min, params.count_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<double> mask(static_cast<std::size_t>(plane), 0.0);
  const int count = count_dist(rng);
  const double half = params.width / 2.0;
  for (int s = 0; s < count; ++s) {
    const double cx = between(0.0, static_cast<double>(w));
    const double cy = between(0.0, static_cast<double>(h));
    const double angle = between(params.angle_min, params.angle_max) * std::numbers::pi / 180.0;
    const double length = between(params.length_min, params.length_max);
    const double intensity = between(params.intensity_min, params.intensity_max);
    const double dx = std::sin(angle) * length / 2.0, dy = std::cos(angle) * length / 2.0;
    const double ax = cx - dx, ay = cy - dy, bx = cx + dx, by = cy + dy;
    if (intensity <= 0.0) continue;

    // Pixel centers at (c + 0.5, r + 0.5); coverage falls off linearly over one pixel.
    const double reach = half + 1.0;
    const Index c0 = std::max<Index>(0, static_cast<Index>(std::floor(std::min(ax, bx) - reach)));
    const Index c1 = std::min<Index>(w - 1, static_cast<Index>(std::ceil(std::max(ax, bx) + reach)));
    const Index r0 = std::max<Index>(0, static_cast<Index>(std::floor(std::min(ay, by) - reach)));
    const Index r1 = std::min<Index>(h - 1, static_cast<Index>(std::ceil(std::max(ay, by) + reach)));
    for (Index r = r0; r <= r1; ++r) {
      for (Index c = c0; c <= c1; ++c) {
        const double dist = segment_distance(c + 0.5, r + 0.5, ax, ay, bx, by);
        const double coverage = std::clamp(half + 0.5 - dist, 0.0, 1.0);
        if (coverage > 0.0) mask[r * w + c] += intensity * coverage;
      }
    }
  }

  const auto src = clean.data();
  std::vector<float> out(src.begin(), src.end());
  for (Index ch = 0; ch < 3; ++ch) {
    for (Index p = 0; p < plane; ++p) {
      const float v = src[ch * plane + p];
      if (mask[p] > 0.0) out[ch * plane + p] = static_cast<float>(std::min(1.0, static_cast<double>(v) + mask[p]));
    }
  }
  return {clean, Image(clean.shape(), std::move(out)), std::move(id)};
}

Image make_clean_scene(Index height, Index width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Index plane = height * width;
  std::vector<float> values(static_cast<std::size_t>(3 * plane));

  double base[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.15 + 0.5 * unit(rng);
    gx[c] = 0.3 * (unit(rng) - 0.5);
    gy[c] = 0.3 * (unit(rng) - 0.5);
  }
  struct Blob {
    double x, y, radius, amp[3];
  };
  std::vector<Blob> blobs(3 + static_cast<std::size_t>(unit(rng) * 4));
  for (auto& b : blobs) {
    b.x = unit(rng) * width;
    b.y = unit(rng) * height;
    b.radius = (0.1 + 0.3 * unit(rng)) * static_cast<double>(std::max(height, width));
    for (double& a : b.amp) a = 0.3 * (unit(rng) - 0.5);
  }
  for (Index r = 0; r < height; ++r) {
    for (Index col = 0; col < width; ++col) {
      const double u = static_cast<double>(col) / std::max<Index>(1, width - 1);
      const double v = static_cast<double>(r) / std::max<Index>(1, height - 1);
      for (int c = 0; c < 3; ++c) {
        double val = base[c] + gx[c] * u + gy[c] * v;
        for (const auto& b : blobs) {
          const double dx = (col - b.x) / b.radius, dy = (r - b.y) / b.radius;
          val += b.amp[c] * std::exp(-(dx * dx + dy * dy));
        }
        // Stay below saturation so streaks remain visible.
        values[c * plane + r * width + col] = static_cast<float>(std::clamp(val, 0.0, 0.8));
      }
    }
  }
  return Image(Shape{3, height, width}, std::move(values));
}

}  // namespace drt
