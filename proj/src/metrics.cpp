#include "dbpn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dbpn/errors.hpp"

namespace dbpn {

namespace {

void check_pair(const RealImage& a, const RealImage& b, std::size_t crop, const char* what) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw ContractError(std::string(what) + ": image dimensions differ");
  }
  if (a.width <= 2 * crop || a.height <= 2 * crop) {
    throw ContractError(std::string(what) + ": crop of " + std::to_string(crop) + " leaves no pixels");
  }
}

/// Separable "valid" filtering of a single-channel plane with a 1-D kernel.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t w, std::size_t h,
                                 const std::vector<double>& k) {
  const std::size_t n = k.size();
  const std::size_t ow = w - n + 1;
  const std::size_t oh = h - n + 1;
  std::vector<double> tmp(ow * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * plane[y * w + x + i];
      tmp[y * ow + x] = acc;
    }
  }
  std::vector<double> out(ow * oh);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

std::string fmt(double v, int digits) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

double psnr(const RealImage& a, const RealImage& b, std::size_t crop) {
  check_pair(a, b, crop, "psnr");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t y = crop; y < a.height - crop; ++y) {
    for (std::size_t x = crop; x < a.width - crop; ++x) {
      for (std::size_t c = 0; c < a.channels; ++c) {
        const double d = a.at(x, y, c) - b.at(x, y, c);
        sum += d * d;
        ++count;
      }
    }
  }
  const double mse = sum / static_cast<double>(count);
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const RealImage& a, const RealImage& b, std::size_t crop, const SsimParams& p) {
  check_pair(a, b, crop, "ssim");
  if (a.channels != 1) throw ContractError("ssim: expected single-channel images");
  const RealImage ca = crop > 0 ? crop_border(a, crop) : a;
  const RealImage cb = crop > 0 ? crop_border(b, crop) : b;
  if (ca.width < p.window || ca.height < p.window) {
    throw ContractError("ssim: " + std::to_string(p.window) + "-pixel window does not fit the cropped image");
  }

  std::vector<double> kernel(p.window);
  const double centre = static_cast<double>(p.window - 1) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < p.window; ++i) {
    const double d = static_cast<double>(i) - centre;
    kernel[i] = std::exp(-d * d / (2.0 * p.sigma * p.sigma));
    total += kernel[i];
  }
  for (auto& v : kernel) v /= total;

  const std::size_t w = ca.width;
  const std::size_t h = ca.height;
  std::vector<double> aa(w * h), bb(w * h), ab(w * h);
  for (std::size_t i = 0; i < w * h; ++i) {
    aa[i] = ca.samples[i] * ca.samples[i];
    bb[i] = cb.samples[i] * cb.samples[i];
    ab[i] = ca.samples[i] * cb.samples[i];
  }
  const auto mu_a = filter_valid(ca.samples, w, h, kernel);
  const auto mu_b = filter_valid(cb.samples, w, h, kernel);
  const auto e_aa = filter_valid(aa, w, h, kernel);
  const auto e_bb = filter_valid(bb, w, h, kernel);
  const auto e_ab = filter_valid(ab, w, h, kernel);

  const double c1 = (p.k1 * p.range) * (p.k1 * p.range);
  const double c2 = (p.k2 * p.range) * (p.k2 * p.range);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return sum / static_cast<double>(mu_a.size());
}

void MetricReport::finalize() {
  std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) { return a.name < b.name; });
  double psnr_sum = 0.0;
  double ssim_sum = 0.0;
  std::size_t finite = 0;
  infinite_rows = 0;
  for (const auto& r : rows) {
    ssim_sum += r.ssim;
    if (std::isinf(r.psnr_db)) {
      ++infinite_rows;
    } else {
      psnr_sum += r.psnr_db;
      ++finite;
    }
  }
  mean_psnr = finite > 0 ? psnr_sum / static_cast<double>(finite) : kInfinitePsnr;
  mean_ssim = rows.empty() ? 0.0 : ssim_sum / static_cast<double>(rows.size());
}

std::string MetricReport::to_csv() const {
  std::string out;
  out += "# method=" + method + "\n";
  out += "# scale=" + std::to_string(scale) + "\n";
  out += "# crop=" + std::to_string(crop) + "\n";
  out += "# channel=" + channel + " (BT.601 studio swing, unquantized)\n";
  out += "# ssim=gaussian window 11 sigma 1.5 K1 0.01 K2 0.03 L 255\n";
  if (infinite_rows > 0) {
    out += "# note: " + std::to_string(infinite_rows) + " identical image(s) with infinite PSNR excluded from the mean\n";
  }
  out += "image,psnr_db,ssim\n";
  for (const auto& r : rows) out += r.name + "," + fmt(r.psnr_db, 4) + "," + fmt(r.ssim, 6) + "\n";
  out += "MEAN," + fmt(mean_psnr, 4) + "," + fmt(mean_ssim, 6) + "\n";
  return out;
}

RealImage super_resolve(const Network<float>& net, const ImageBuffer& lr) {
  const NetworkConfig& cfg = net.config();
  const NoGradGuard no_grad;
  const Var<float> out = net.forward(Var<float>::constant(image_tensor(lr, cfg.color)));
  const Tensor<float>& t = out.value();
  const Shape s = t.shape();
  RealImage img(s.w, s.h, s.c, cfg.color == ColorMode::y ? ColorSpace::y : ColorSpace::rgb);
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) img.at(x, y, c) = static_cast<double>(t.at(0, c, y, x)) * 255.0;
    }
  }
  return img;
}

namespace {

template <typename Upscale>
MetricReport run_protocol(const Dataset& ds, const std::string& method, Upscale&& upscale) {
  if (ds.empty()) throw ContractError("evaluate: empty dataset");
  MetricReport report;
  report.scale = ds.scale();
  report.crop = static_cast<std::size_t>(ds.scale());
  report.method = method;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const RealImage sr_y = rgb_to_y(upscale(ds.lr(i)));
    const RealImage hr_y = rgb_to_y(ds.hr(i).image);
    report.rows.push_back({ds.hr(i).name, psnr(sr_y, hr_y, report.crop), ssim(sr_y, hr_y, report.crop)});
  }
  report.finalize();
  return report;
}

}  // namespace

MetricReport evaluate(const Network<float>& net, const Dataset& ds) {
  if (net.config().scale != ds.scale()) {
    throw ConfigError("evaluate: network scale " + std::to_string(net.config().scale) + " != dataset scale " +
                      std::to_string(ds.scale()));
  }
  return run_protocol(ds, "network", [&net](const ImageBuffer& lr) { return super_resolve(net, lr); });
}

MetricReport bicubic_baseline(const Dataset& ds) {
  const auto s = static_cast<std::size_t>(ds.scale());
  return run_protocol(ds, "bicubic", [s](const ImageBuffer& lr) {
    return bicubic_resize(to_real(lr), lr.width * s, lr.height * s, false);
  });
}

}  // namespace dbpn
