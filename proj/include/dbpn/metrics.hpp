#pragma once

#include <limits>
#include <string>
#include <vector>

#include "dbpn/dataset.hpp"
#include "dbpn/image.hpp"
#include "dbpn/network.hpp"

namespace dbpn {

/// PSNR of identical images.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(255^2 / MSE) over the region `crop` pixels inside each edge, all channels.
double psnr(const RealImage& a, const RealImage& b, std::size_t crop);

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 255.0;
};

/// Mean SSIM over every Gaussian window lying fully inside the cropped region. Single channel.
double ssim(const RealImage& a, const RealImage& b, std::size_t crop, const SsimParams& params = {});

struct MetricRow {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;  // sorted by name
  double mean_psnr = 0.0;       // over finite rows; kInfinitePsnr if none
  double mean_ssim = 0.0;
  std::size_t infinite_rows = 0;
  int scale = 0;
  std::size_t crop = 0;
  std::string channel = "Y";
  std::string method;

  /// Sorts rows and fills the aggregates.
  void finalize();
  /// `#` protocol lines, then `image,psnr_db,ssim`, one row per image, and a MEAN row.
  std::string to_csv() const;
};

/// Super-resolves every LR image with `net` and scores luma against the HR image with an
/// s-pixel crop.
MetricReport evaluate(const Network<float>& net, const Dataset& ds);

/// Same protocol with plain bicubic upscaling in place of the network.
MetricReport bicubic_baseline(const Dataset& ds);

/// Runs the network on one image; the result is on the 0..255 scale, unclamped. A Y network
/// receives luma and returns a single-channel image.
RealImage super_resolve(const Network<float>& net, const ImageBuffer& lr);

}  // namespace dbpn
