#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dbpn/image.hpp"
#include "dbpn/network.hpp"
#include "dbpn/rng.hpp"
#include "dbpn/tensor.hpp"

namespace dbpn {

struct NamedImage {
  std::string name;
  ImageBuffer image;
};

/// HR images (cropped to multiples of the scale) with their bicubic LR counterparts, sorted
/// by name. Immutable after construction.
class Dataset {
 public:
  Dataset(std::vector<NamedImage> hr, int scale);
  /// Uses precomputed LR images (e.g. from an on-disk cache) instead of synthesizing them.
  Dataset(std::vector<NamedImage> hr, std::vector<ImageBuffer> lr, int scale);

  int scale() const { return scale_; }
  std::size_t size() const { return hr_.size(); }
  bool empty() const { return hr_.empty(); }
  const NamedImage& hr(std::size_t i) const { return hr_[i]; }
  const ImageBuffer& lr(std::size_t i) const { return lr_[i]; }

 private:
  int scale_;
  std::vector<NamedImage> hr_;
  std::vector<ImageBuffer> lr_;
};

/// Procedural RGB images: oriented sinusoidal gratings, Gaussian blobs and hard step edges over
/// a flat base colour. Fully determined by (seed, index); `size` must be a multiple of 8.
std::vector<NamedImage> synth_images(std::uint64_t seed, std::size_t count, std::size_t size);
Dataset synth_dataset(std::uint64_t seed, std::size_t count, std::size_t size, int scale);

/// PNGs from `<root>/HR` (or `<root>` itself when there is no HR folder). LR images are cached
/// in `<root>/LR_x{scale}` and regenerated when older than their HR source.
Dataset load_dataset(const std::filesystem::path& root, int scale);

/// Image as a (1, C, H, W) tensor scaled to [0, 1]; C follows `mode` (luma for Y).
Tensor<float> image_tensor(const ImageBuffer& image, ColorMode mode);

struct PatchOrigin {
  std::size_t image = 0;
  std::size_t x = 0;  // LR coordinates; the HR crop starts at (scale*x, scale*y)
  std::size_t y = 0;
};

struct PatchBatch {
  Tensor<float> lr;  // (B, C, p, p)
  Tensor<float> hr;  // (B, C, s*p, s*p)
  std::vector<PatchOrigin> origin;
};

/// Uniform aligned crops. Images whose LR side is shorter than `patch` are skipped with a
/// warning on stderr; if none remain this is a ContractError.
PatchBatch sample_patches(const Dataset& ds, std::size_t batch, std::size_t patch, ColorMode mode, Pcg32& rng);

}  // namespace dbpn
