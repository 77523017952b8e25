#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace dbpn {

enum class ColorSpace { rgb, y };

/// 8-bit interleaved image, row-major.
struct ImageBuffer {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  ColorSpace space = ColorSpace::rgb;
  std::vector<std::uint8_t> samples;

  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return samples[(y * width + x) * channels + c];
  }
  bool operator==(const ImageBuffer&) const = default;
};

/// Real-valued interleaved image on the 0..255 scale; values are not clamped.
struct RealImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  ColorSpace space = ColorSpace::rgb;
  std::vector<double> samples;

  RealImage() = default;
  RealImage(std::size_t w, std::size_t h, std::size_t c, ColorSpace cs, double fill = 0.0)
      : width(w), height(h), channels(c), space(cs), samples(w * h * c, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c) { return samples[(y * width + x) * channels + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c) const { return samples[(y * width + x) * channels + c]; }
};

/// 8-bit grayscale or RGB PNGs (alpha is dropped). Anything else is a FormatError.
ImageBuffer load_png(const std::filesystem::path& path);
void save_png(const ImageBuffer& image, const std::filesystem::path& path);

RealImage to_real(const ImageBuffer& image);
/// Round to nearest and clamp into [0, 255].
ImageBuffer quantize(const RealImage& image);

/// BT.601 studio-swing luma: 16 + 65.481 R + 128.553 G + 24.966 B with R, G, B in [0, 1].
/// Single-channel inputs are returned unchanged (tagged Y).
RealImage rgb_to_y(const RealImage& image);
RealImage rgb_to_y(const ImageBuffer& image);

/// Full BT.601 studio-swing YCbCr and its exact inverse.
RealImage rgb_to_ycbcr(const RealImage& rgb);
RealImage ycbcr_to_rgb(const RealImage& ycbcr);

/// Keys cubic convolution kernel with a = -0.5.
double cubic_kernel(double x);

/// Separable cubic resampling with half-pixel-centre alignment and edge replication. When
/// shrinking with `antialias`, the kernel is widened by the inverse scale and renormalized.
RealImage bicubic_resize(const RealImage& image, std::size_t out_width, std::size_t out_height, bool antialias);

/// Crops the bottom/right so both dimensions are divisible by `scale`.
ImageBuffer modcrop(const ImageBuffer& image, int scale);

/// Antialiased bicubic downscale by `scale`, quantized to 8 bits.
ImageBuffer make_lr(const ImageBuffer& hr, int scale);

/// Keeps `border` pixels off every edge.
RealImage crop_border(const RealImage& image, std::size_t border);

/// FNV-1a over the sample bytes and dimensions.
std::uint64_t checksum(const ImageBuffer& image);

}  // namespace dbpn
