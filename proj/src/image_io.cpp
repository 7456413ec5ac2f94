#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "drt/errors.hpp"
#include "drt/image.hpp"

namespace drt {

namespace fs = std::filesystem;

void validate_pair(const ImagePair& pair) {
  if (pair.clean.shape() != pair.degraded.shape()) {
    throw std::invalid_argument("image pair " + pair.id + ": shapes differ");
  }
  if (pair.clean.rank() != 3 || pair.clean.dim(0) != 3) {
    throw std::invalid_argument("image pair " + pair.id + ": expected [3, H, W]");
  }
  for (const Image* img : {&pair.clean, &pair.degraded}) {
    for (float v : img->data()) {
      if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("image pair " + pair.id + ": value outside [0, 1]");
    }
  }
}

Image image_from_rgb8(const std::vector<unsigned char>& rgb, Index height, Index width) {
  if (static_cast<Index>(rgb.size()) != 3 * height * width) throw DimensionError("rgb buffer size mismatch");
  std::vector<float> values(rgb.size());
  const Index plane = height * width;
  for (Index p = 0; p < plane; ++p) {
    for (Index c = 0; c < 3; ++c) values[c * plane + p] = static_cast<float>(rgb[p * 3 + c]) / 255.0f;
  }
  return Image(Shape{3, height, width}, std::move(values));
}

std::vector<unsigned char> image_to_rgb8(const Image& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("expected [3, H, W] image, got " + shape_to_string(image.shape()));
  const Index plane = image.dim(1) * image.dim(2);
  const auto data = image.data();
  std::vector<unsigned char> rgb(static_cast<std::size_t>(3 * plane));
  for (Index p = 0; p < plane; ++p) {
    for (Index c = 0; c < 3; ++c) {
      const float v = std::clamp(data[c * plane + p], 0.0f, 1.0f);
      rgb[p * 3 + c] = static_cast<unsigned char>(std::lround(255.0f * v));
    }
  }
  return rgb;
}

namespace {

std::string lower_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext;
}

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  (void)png;
  throw FormatError(std::string("png: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

Image load_png(const fs::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Cleanup {
    png_structp* png;
    png_infop* info;
    ~Cleanup() { png_destroy_read_struct(png, info, nullptr); }
  } cleanup{&png, &info};

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(width) * 3) {
    throw FormatError(path.string() + ": could not convert to 8-bit RGB");
  }
  std::vector<unsigned char> rgb(static_cast<std::size_t>(width) * height * 3);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = rgb.data() + static_cast<std::size_t>(r) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return image_from_rgb8(rgb, height, width);
}

void save_png(const fs::path& path, const Image& image) {
  const auto rgb = image_to_rgb8(image);
  const auto height = static_cast<png_uint_32>(image.dim(1));
  const auto width = static_cast<png_uint_32>(image.dim(2));
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Cleanup {
    png_structp* png;
    png_infop* info;
    ~Cleanup() { png_destroy_write_struct(png, info); }
  } cleanup{&png, &info};
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 r = 0; r < height; ++r) {
    rows[r] = const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(r) * width * 3);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
}

// Binary PPM (P6, maxval 255).
Image load_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (!std::isspace(static_cast<unsigned char>(ch))) {
        t.push_back(ch);
        break;
      }
    }
    while (in.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) t.push_back(ch);
    return t;
  };
  if (token() != "P6") throw FormatError(path.string() + " is not a binary PPM");
  Index width = 0, height = 0, maxval = 0;
  try {
    width = std::stoll(token());
    height = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PPM header");
  }
  if (width < 1 || height < 1 || maxval != 255) throw FormatError(path.string() + ": unsupported PPM header");
  std::vector<unsigned char> rgb(static_cast<std::size_t>(width * height * 3));
  in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(rgb.size())) throw FormatError(path.string() + ": truncated PPM");
  return image_from_rgb8(rgb, height, width);
}

void save_ppm(const fs::path& path, const Image& image) {
  const auto rgb = image_to_rgb8(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << image.dim(2) << ' ' << image.dim(1) << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

Image load_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("no such file: " + path.string());
  const std::string ext = lower_extension(path);
  if (ext == ".ppm") return load_ppm(path);
  if (ext == ".png") return load_png(path);
  throw FormatError(path.string() + ": unsupported image format (use .png or .ppm)");
}

void save_image(const fs::path& path, const Image& image) {
  const std::string ext = lower_extension(path);
  if (ext == ".ppm") return save_ppm(path, image);
  if (ext == ".png") return save_png(path, image);
  throw FormatError(path.string() + ": unsupported image format (use .png or .ppm)");
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected clean<TAB>degraded");
    }
    fs::path clean = line.substr(0, tab), degraded = line.substr(tab + 1);
    if (clean.is_relative()) clean = base / clean;
    if (degraded.is_relative()) degraded = base / degraded;
    entries.push_back({clean, degraded});
  }
  return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) {
    return base.empty() ? p.generic_string() : p.lexically_proximate(base).generic_string();
  };
  for (const auto& e : entries) out << rel(e.clean) << '\t' << rel(e.degraded) << '\n';
}

std::vector<ImagePair> load_pairs(const std::vector<ManifestEntry>& entries) {
  std::vector<ImagePair> pairs;
  pairs.reserve(entries.size());
  for (const auto& e : entries) {
    ImagePair p{load_image(e.clean), load_image(e.degraded), e.degraded.stem().string()};
    if (p.clean.shape() != p.degraded.shape()) {
      throw FormatError("pair " + e.clean.string() + " / " + e.degraded.string() + " differ in size");
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace drt
