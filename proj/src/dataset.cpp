#include "dbpn/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "dbpn/errors.hpp"

namespace dbpn {

namespace fs = std::filesystem;

namespace {

void sort_by_name(std::vector<NamedImage>& images) {
  std::sort(images.begin(), images.end(), [](const NamedImage& a, const NamedImage& b) { return a.name < b.name; });
}

}  // namespace

Dataset::Dataset(std::vector<NamedImage> hr, int scale) : scale_(scale), hr_(std::move(hr)) {
  ScaleConfig::for_scale(scale);
  sort_by_name(hr_);
  lr_.reserve(hr_.size());
  for (auto& img : hr_) {
    img.image = modcrop(img.image, scale);
    lr_.push_back(make_lr(img.image, scale));
  }
}

Dataset::Dataset(std::vector<NamedImage> hr, std::vector<ImageBuffer> lr, int scale)
    : scale_(scale), hr_(std::move(hr)), lr_(std::move(lr)) {
  if (hr_.size() != lr_.size()) throw ContractError("dataset: HR and LR lists differ in length");
  const auto s = static_cast<std::size_t>(scale);
  for (std::size_t i = 0; i < hr_.size(); ++i) {
    hr_[i].image = modcrop(hr_[i].image, scale);
    if (lr_[i].width * s != hr_[i].image.width || lr_[i].height * s != hr_[i].image.height) {
      throw ContractError("dataset: LR image for " + hr_[i].name + " has the wrong size");
    }
  }
  if (!std::is_sorted(hr_.begin(), hr_.end(), [](const NamedImage& a, const NamedImage& b) { return a.name < b.name; })) {
    throw ContractError("dataset: images must be sorted by name");
  }
}

std::vector<NamedImage> synth_images(std::uint64_t seed, std::size_t count, std::size_t size) {
  if (size == 0 || size % 8 != 0) throw ContractError("synth_images: size must be a positive multiple of 8");
  std::vector<NamedImage> out;
  out.reserve(count);
  const double extent = static_cast<double>(size);
  for (std::size_t i = 0; i < count; ++i) {
    Pcg32 rng(mix_seed(seed, i));
    RealImage img(size, size, 3, ColorSpace::rgb);
    for (int c = 0; c < 3; ++c) {
      const double base = rng.uniform(40.0, 215.0);
      for (std::size_t p = 0; p < size * size; ++p) img.samples[3 * p + c] = base;
    }
    auto tint = [&rng] { return std::array<double, 3>{rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)}; };

    for (int g = 0; g < 3; ++g) {
      const double theta = rng.uniform(0.0, std::numbers::pi);
      const double freq = rng.uniform(0.01, 0.22);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double amp = rng.uniform(10.0, 45.0);
      const auto w = tint();
      const double kx = 2.0 * std::numbers::pi * freq * std::cos(theta);
      const double ky = 2.0 * std::numbers::pi * freq * std::sin(theta);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double v = amp * std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y) + phase);
          for (int c = 0; c < 3; ++c) img.at(x, y, c) += w[c] * v;
        }
      }
    }
    for (int b = 0; b < 3; ++b) {
      const double cx = rng.uniform(0.0, extent);
      const double cy = rng.uniform(0.0, extent);
      const double sigma = rng.uniform(extent / 16.0, extent / 4.0);
      const double amp = rng.uniform(-70.0, 70.0);
      const auto w = tint();
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double dx = static_cast<double>(x) - cx;
          const double dy = static_cast<double>(y) - cy;
          const double v = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          for (int c = 0; c < 3; ++c) img.at(x, y, c) += w[c] * v;
        }
      }
    }
    for (int e = 0; e < 2; ++e) {
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double px = rng.uniform(0.0, extent);
      const double py = rng.uniform(0.0, extent);
      const double amp = rng.uniform(-50.0, 50.0);
      const auto w = tint();
      const double nx = std::cos(theta);
      const double ny = std::sin(theta);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          if ((static_cast<double>(x) - px) * nx + (static_cast<double>(y) - py) * ny < 0.0) continue;
          for (int c = 0; c < 3; ++c) img.at(x, y, c) += w[c] * amp;
        }
      }
    }
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%03zu", i);
    out.push_back({name, quantize(img)});
  }
  return out;
}

Dataset synth_dataset(std::uint64_t seed, std::size_t count, std::size_t size, int scale) {
  return Dataset(synth_images(seed, count, size), scale);
}

Dataset load_dataset(const fs::path& root, int scale) {
  ScaleConfig::for_scale(scale);
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  const fs::path hr_dir = fs::is_directory(root / "HR") ? root / "HR" : root;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(hr_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no PNG files in " + hr_dir.string());

  const fs::path cache_dir = root / ("LR_x" + std::to_string(scale));
  std::error_code ec;
  fs::create_directories(cache_dir, ec);
  const bool cache_ok = !ec;

  std::vector<NamedImage> hr;
  std::vector<ImageBuffer> lr;
  for (const auto& f : files) {
    NamedImage img{f.stem().string(), modcrop(load_png(f), scale)};
    const fs::path cached = cache_dir / f.filename();
    ImageBuffer low;
    bool have = false;
    if (cache_ok && fs::exists(cached) && fs::last_write_time(cached) >= fs::last_write_time(f)) {
      try {
        low = load_png(cached);
        have = low.width * scale == img.image.width && low.height * scale == img.image.height &&
               low.channels == img.image.channels;
      } catch (const std::exception&) {
        have = false;
      }
    }
    if (!have) {
      low = make_lr(img.image, scale);
      if (cache_ok) {
        try {
          save_png(low, cached);
        } catch (const IoError& e) {
          std::fprintf(stderr, "warning: cannot write LR cache: %s\n", e.what());
        }
      }
    }
    low.space = img.image.space;
    hr.push_back(std::move(img));
    lr.push_back(std::move(low));
  }
  return Dataset(std::move(hr), std::move(lr), scale);
}

namespace {

constexpr float kInv255 = 1.0f / 255.0f;

/// Copies a w x h window at (x0, y0) of `img` into batch item `n` of `dst`.
void copy_window(const ImageBuffer& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h,
                 ColorMode mode, Tensor<float>& dst, std::size_t n) {
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint8_t* p = &img.samples[((y0 + y) * img.width + x0 + x) * img.channels];
      if (mode == ColorMode::y) {
        double v = p[0];
        if (img.channels == 3) v = 16.0 + (65.481 * p[0] + 128.553 * p[1] + 24.966 * p[2]) / 255.0;
        dst.at(n, 0, y, x) = static_cast<float>(v / 255.0);
      } else {
        for (std::size_t c = 0; c < 3; ++c) {
          dst.at(n, c, y, x) = static_cast<float>(p[img.channels == 3 ? c : 0]) * kInv255;
        }
      }
    }
  }
}

}  // namespace

Tensor<float> image_tensor(const ImageBuffer& image, ColorMode mode) {
  Tensor<float> t(Shape{1, mode == ColorMode::y ? 1u : 3u, image.height, image.width});
  copy_window(image, 0, 0, image.width, image.height, mode, t, 0);
  return t;
}

PatchBatch sample_patches(const Dataset& ds, std::size_t batch, std::size_t patch, ColorMode mode, Pcg32& rng) {
  if (ds.empty()) throw ContractError("sample_patches: empty dataset");
  if (patch == 0) throw ContractError("sample_patches: patch size must be >= 1");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.lr(i).width >= patch && ds.lr(i).height >= patch) {
      eligible.push_back(i);
    } else {
      std::fprintf(stderr, "warning: %s is smaller than a %zu-pixel LR patch; skipped\n", ds.hr(i).name.c_str(), patch);
    }
  }
  if (eligible.empty()) throw ContractError("sample_patches: no image is large enough for the patch size");

  const auto s = static_cast<std::size_t>(ds.scale());
  const std::size_t channels = mode == ColorMode::y ? 1 : 3;
  PatchBatch out{Tensor<float>(Shape{batch, channels, patch, patch}),
                 Tensor<float>(Shape{batch, channels, s * patch, s * patch}),
                 {}};
  out.origin.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t idx = eligible[rng.below(static_cast<std::uint32_t>(eligible.size()))];
    const ImageBuffer& lr = ds.lr(idx);
    const auto x = rng.below(static_cast<std::uint32_t>(lr.width - patch + 1));
    const auto y = rng.below(static_cast<std::uint32_t>(lr.height - patch + 1));
    copy_window(lr, x, y, patch, patch, mode, out.lr, b);
    copy_window(ds.hr(idx).image, s * x, s * y, s * patch, s * patch, mode, out.hr, b);
    out.origin.push_back({idx, x, y});
  }
  return out;
}

}  // namespace dbpn
