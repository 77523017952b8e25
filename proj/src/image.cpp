#include "dbpn/image.hpp"

#include <png.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "dbpn/errors.hpp"

namespace dbpn {

ImageBuffer load_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&img, path.c_str()) == 0) {
    throw FormatError(path.string() + ": " + img.message);
  }
  if ((img.format & PNG_FORMAT_FLAG_LINEAR) != 0) {
    png_image_free(&img);
    throw FormatError(path.string() + ": only 8-bit PNGs are supported");
  }
  if ((img.format & PNG_FORMAT_FLAG_COLORMAP) != 0) {
    png_image_free(&img);
    throw FormatError(path.string() + ": palette PNGs are not supported");
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

  ImageBuffer out;
  out.width = img.width;
  out.height = img.height;
  out.channels = color ? 3 : 1;
  out.space = color ? ColorSpace::rgb : ColorSpace::y;
  out.samples.resize(PNG_IMAGE_SIZE(img));
  if (png_image_finish_read(&img, nullptr, out.samples.data(), 0, nullptr) == 0) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw FormatError(path.string() + ": " + msg);
  }
  return out;
}

void save_png(const ImageBuffer& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) throw ShapeError("save_png: channels must be 1 or 3");
  if (image.samples.size() != image.width * image.height * image.channels) {
    throw ShapeError("save_png: sample count does not match dimensions");
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&img, path.c_str(), 0, image.samples.data(), 0, nullptr) == 0) {
    throw IoError(path.string() + ": " + img.message);
  }
}

RealImage to_real(const ImageBuffer& image) {
  RealImage out(image.width, image.height, image.channels, image.space);
  std::transform(image.samples.begin(), image.samples.end(), out.samples.begin(),
                 [](std::uint8_t v) { return static_cast<double>(v); });
  return out;
}

ImageBuffer quantize(const RealImage& image) {
  ImageBuffer out{image.width, image.height, image.channels, image.space, {}};
  out.samples.resize(image.samples.size());
  std::transform(image.samples.begin(), image.samples.end(), out.samples.begin(), [](double v) {
    return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
  });
  return out;
}

namespace {

// Rows: Y, Cb, Cr. Columns: R, G, B on the [0, 1] scale; offsets added afterwards.
constexpr double kYcbcr[3][3] = {
    {65.481, 128.553, 24.966},
    {-37.797, -74.203, 112.0},
    {112.0, -93.786, -18.214},
};
constexpr double kYcbcrOffset[3] = {16.0, 128.0, 128.0};

}  // namespace

RealImage rgb_to_y(const RealImage& image) {
  if (image.channels == 1) {
    RealImage out = image;
    out.space = ColorSpace::y;
    return out;
  }
  if (image.channels != 3) throw ShapeError("rgb_to_y: expected 1 or 3 channels");
  RealImage out(image.width, image.height, 1, ColorSpace::y);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double* p = &image.samples[3 * i];
    out.samples[i] =
        kYcbcrOffset[0] + (kYcbcr[0][0] * p[0] + kYcbcr[0][1] * p[1] + kYcbcr[0][2] * p[2]) / 255.0;
  }
  return out;
}

RealImage rgb_to_y(const ImageBuffer& image) { return rgb_to_y(to_real(image)); }

RealImage rgb_to_ycbcr(const RealImage& rgb) {
  if (rgb.channels != 3) throw ShapeError("rgb_to_ycbcr: expected 3 channels");
  RealImage out(rgb.width, rgb.height, 3, ColorSpace::y);
  for (std::size_t i = 0; i < rgb.width * rgb.height; ++i) {
    for (int r = 0; r < 3; ++r) {
      const double* p = &rgb.samples[3 * i];
      out.samples[3 * i + r] = kYcbcrOffset[r] + (kYcbcr[r][0] * p[0] + kYcbcr[r][1] * p[1] + kYcbcr[r][2] * p[2]) / 255.0;
    }
  }
  return out;
}

RealImage ycbcr_to_rgb(const RealImage& ycbcr) {
  if (ycbcr.channels != 3) throw ShapeError("ycbcr_to_rgb: expected 3 channels");
  Eigen::Matrix3d forward;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) forward(r, c) = kYcbcr[r][c] / 255.0;
  const Eigen::Matrix3d inverse = forward.inverse();
  RealImage out(ycbcr.width, ycbcr.height, 3, ColorSpace::rgb);
  for (std::size_t i = 0; i < ycbcr.width * ycbcr.height; ++i) {
    Eigen::Vector3d v(ycbcr.samples[3 * i] - kYcbcrOffset[0], ycbcr.samples[3 * i + 1] - kYcbcrOffset[1],
                      ycbcr.samples[3 * i + 2] - kYcbcrOffset[2]);
    const Eigen::Vector3d rgb = inverse * v;
    for (int c = 0; c < 3; ++c) out.samples[3 * i + c] = rgb[c];
  }
  return out;
}

double cubic_kernel(double x) {
  const double a = -0.5;
  const double ax = std::abs(x);
  if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
  if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
  return 0.0;
}

namespace {

/// Source taps and weights for every output position along one axis.
struct Contributions {
  std::size_t taps = 0;
  std::vector<std::size_t> index;  // out_len * taps
  std::vector<double> weight;      // out_len * taps
};

Contributions contributions(std::size_t in_len, std::size_t out_len, bool antialias) {
  const double scale = static_cast<double>(out_len) / static_cast<double>(in_len);
  const bool widen = antialias && scale < 1.0;
  const double width = widen ? 4.0 / scale : 4.0;
  Contributions c;
  c.taps = static_cast<std::size_t>(std::ceil(width)) + 2;
  c.index.resize(out_len * c.taps);
  c.weight.resize(out_len * c.taps);
  for (std::size_t i = 0; i < out_len; ++i) {
    // 1-based coordinates with pixel centres aligned between the two grids.
    const double u = static_cast<double>(i + 1) / scale + 0.5 * (1.0 - 1.0 / scale);
    const double left = std::floor(u - width / 2.0);
    double total = 0.0;
    for (std::size_t k = 0; k < c.taps; ++k) {
      const double j = left + static_cast<double>(k);
      const double d = u - j;
      const double w = widen ? scale * cubic_kernel(scale * d) : cubic_kernel(d);
      const double clamped = std::clamp(j, 1.0, static_cast<double>(in_len));
      c.index[i * c.taps + k] = static_cast<std::size_t>(clamped) - 1;
      c.weight[i * c.taps + k] = w;
      total += w;
    }
    for (std::size_t k = 0; k < c.taps; ++k) c.weight[i * c.taps + k] /= total;
  }
  return c;
}

RealImage resize_horizontal(const RealImage& in, std::size_t out_w, bool antialias) {
  const Contributions c = contributions(in.width, out_w, antialias);
  RealImage out(out_w, in.height, in.channels, in.space);
  for (std::size_t y = 0; y < in.height; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      for (std::size_t ch = 0; ch < in.channels; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < c.taps; ++k) {
          acc += c.weight[x * c.taps + k] * in.at(c.index[x * c.taps + k], y, ch);
        }
        out.at(x, y, ch) = acc;
      }
    }
  }
  return out;
}

RealImage resize_vertical(const RealImage& in, std::size_t out_h, bool antialias) {
  const Contributions c = contributions(in.height, out_h, antialias);
  RealImage out(in.width, out_h, in.channels, in.space);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < in.width; ++x) {
      for (std::size_t ch = 0; ch < in.channels; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < c.taps; ++k) {
          acc += c.weight[y * c.taps + k] * in.at(x, c.index[y * c.taps + k], ch);
        }
        out.at(x, y, ch) = acc;
      }
    }
  }
  return out;
}

}  // namespace

RealImage bicubic_resize(const RealImage& image, std::size_t out_width, std::size_t out_height, bool antialias) {
  if (out_width == 0 || out_height == 0) throw ContractError("bicubic_resize: output dimensions must be >= 1");
  if (image.width == 0 || image.height == 0) throw ContractError("bicubic_resize: empty input");
  const double sx = static_cast<double>(out_width) / static_cast<double>(image.width);
  const double sy = static_cast<double>(out_height) / static_cast<double>(image.height);
  // Smaller scale first, vertical on ties.
  if (sy <= sx) {
    return resize_horizontal(resize_vertical(image, out_height, antialias), out_width, antialias);
  }
  return resize_vertical(resize_horizontal(image, out_width, antialias), out_height, antialias);
}

ImageBuffer modcrop(const ImageBuffer& image, int scale) {
  const auto s = static_cast<std::size_t>(scale);
  const std::size_t w = image.width - image.width % s;
  const std::size_t h = image.height - image.height % s;
  if (w == image.width && h == image.height) return image;
  ImageBuffer out{w, h, image.channels, image.space, {}};
  out.samples.resize(w * h * image.channels);
  for (std::size_t y = 0; y < h; ++y) {
    const auto* src = &image.samples[y * image.width * image.channels];
    std::copy(src, src + w * image.channels, &out.samples[y * w * image.channels]);
  }
  return out;
}

ImageBuffer make_lr(const ImageBuffer& hr, int scale) {
  if (scale < 1) throw ContractError("make_lr: scale must be >= 1");
  const auto s = static_cast<std::size_t>(scale);
  if (hr.width % s != 0 || hr.height % s != 0 || hr.width == 0 || hr.height == 0) {
    throw ContractError("make_lr: " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                        " is not divisible by " + std::to_string(scale));
  }
  return quantize(bicubic_resize(to_real(hr), hr.width / s, hr.height / s, true));
}

RealImage crop_border(const RealImage& image, std::size_t border) {
  if (image.width <= 2 * border || image.height <= 2 * border) {
    throw ContractError("crop_border: border " + std::to_string(border) + " leaves nothing of " +
                        std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  RealImage out(image.width - 2 * border, image.height - 2 * border, image.channels, image.space);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(x + border, y + border, c);
    }
  }
  return out;
}

std::uint64_t checksum(const ImageBuffer& image) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (std::size_t v : {image.width, image.height, image.channels}) {
    for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  for (auto b : image.samples) mix(b);
  return h;
}

}  // namespace dbpn
