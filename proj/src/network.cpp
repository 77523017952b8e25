#include "dbpn/network.hpp"

#include <algorithm>
#include <cmath>

#include "dbpn/image.hpp"
#include "dbpn/ops.hpp"

namespace dbpn {

Preset parse_preset(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (n == "SS") return Preset::ss;
  if (n == "S") return Preset::s;
  if (n == "M") return Preset::m;
  if (n == "L") return Preset::l;
  if (n == "DDBPN" || n == "D-DBPN") return Preset::ddbpn;
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected SS, S, M, L or DDBPN)");
}

std::string preset_name(Preset p) {
  switch (p) {
    case Preset::ss: return "SS";
    case Preset::s: return "S";
    case Preset::m: return "M";
    case Preset::l: return "L";
    case Preset::ddbpn: return "DDBPN";
  }
  return "?";
}

NetworkConfig NetworkConfig::preset(Preset p, int scale) {
  NetworkConfig c;
  c.scale = scale;
  switch (p) {
    case Preset::ss:
      c.stages = 2, c.n0 = 64, c.nr = 18;
      break;
    case Preset::s:
      c.stages = 2, c.n0 = 128, c.nr = 32;
      break;
    case Preset::m:
      c.stages = 4, c.n0 = 128, c.nr = 32;
      break;
    case Preset::l:
      c.stages = 6, c.n0 = 128, c.nr = 32;
      break;
    case Preset::ddbpn:
      c.stages = 7, c.n0 = 256, c.nr = 64, c.dense = true, c.color = ColorMode::rgb, c.recon_kernel = 3;
      break;
  }
  c.validate();
  return c;
}

void NetworkConfig::validate() const {
  ScaleConfig::for_scale(scale);
  if (stages < 1) throw ConfigError("stage count must be >= 1");
  if (n0 < 1 || nr < 1) throw ConfigError("feature widths must be >= 1");
  if (recon_kernel != 1 && recon_kernel != 3) throw ConfigError("reconstruction kernel must be 1 or 3");
}

namespace {

ConvSpec projection_spec(std::size_t nr, const ScaleConfig& sc, bool transposed) {
  return ConvSpec{nr, nr, sc.geometry, transposed, true};
}

ConvSpec merge_spec(std::size_t nr, std::size_t inputs) { return ConvSpec{inputs * nr, nr, {1, 1, 0}, false, true}; }

}  // namespace

template <typename T>
UpUnit<T> make_up_unit(std::size_t nr, const ScaleConfig& sc, std::size_t merge_inputs) {
  UpUnit<T> u{std::nullopt, ConvLayer<T>(projection_spec(nr, sc, true)), ConvLayer<T>(projection_spec(nr, sc, false)),
              ConvLayer<T>(projection_spec(nr, sc, true))};
  if (merge_inputs > 0) u.merge.emplace(merge_spec(nr, merge_inputs));
  return u;
}

template <typename T>
DownUnit<T> make_down_unit(std::size_t nr, const ScaleConfig& sc, std::size_t merge_inputs) {
  DownUnit<T> u{std::nullopt, ConvLayer<T>(projection_spec(nr, sc, false)),
                ConvLayer<T>(projection_spec(nr, sc, true)), ConvLayer<T>(projection_spec(nr, sc, false))};
  if (merge_inputs > 0) u.merge.emplace(merge_spec(nr, merge_inputs));
  return u;
}

template <typename T>
Var<T> up_projection(const Var<T>& low, const UpUnit<T>& unit) {
  Var<T> h0 = unit.scale_up(low);
  Var<T> l0 = unit.scale_down(h0);
  Var<T> residual = sub(l0, low);
  Var<T> h1 = unit.residual_up(residual);
  return add(h0, h1);
}

template <typename T>
Var<T> down_projection(const Var<T>& high, const DownUnit<T>& unit) {
  Var<T> l0 = unit.scale_down(high);
  Var<T> h0 = unit.scale_up(l0);
  Var<T> residual = sub(h0, high);
  Var<T> l1 = unit.residual_down(residual);
  return add(l0, l1);
}

namespace {

template <typename T>
Var<T> merged_input(std::span<const Var<T>> previous, const std::optional<ConvLayer<T>>& merge) {
  if (previous.empty()) throw ContractError("dense projection: no input maps");
  if (merge) return (*merge)(concat_channels<T>(previous));
  if (previous.size() != 1) {
    throw ContractError("dense projection: " + std::to_string(previous.size()) + " inputs but no merge layer");
  }
  return previous.front();
}

}  // namespace

template <typename T>
Var<T> dense_up_projection(std::span<const Var<T>> previous, const UpUnit<T>& unit) {
  return up_projection(merged_input(previous, unit.merge), unit);
}

template <typename T>
Var<T> dense_down_projection(std::span<const Var<T>> previous, const DownUnit<T>& unit) {
  return down_projection(merged_input(previous, unit.merge), unit);
}

template <typename T>
Network<T>::Network(const NetworkConfig& config) : config_(config) {
  config_.validate();
  const ScaleConfig sc = ScaleConfig::for_scale(config_.scale);
  const std::size_t nr = config_.nr;
  extract_ = ConvLayer<T>(ConvSpec{config_.channels(), config_.n0, {3, 1, 1}, false, true});
  reduce_ = ConvLayer<T>(ConvSpec{config_.n0, nr, {1, 1, 0}, false, true});
  const auto stages = static_cast<std::size_t>(config_.stages);
  for (std::size_t t = 1; t <= stages; ++t) {
    // Unit numbering over the alternating sequence up1, down1, up2, ...: up_t is 2t-1, down_t is 2t.
    // Up_t reads [L^1..L^{t-1}] (L^0 for t = 1); down_t reads [H^1..H^t].
    const std::size_t up_inputs = config_.dense && 2 * t - 1 >= 4 ? t - 1 : 0;
    ups_.push_back(make_up_unit<T>(nr, sc, up_inputs));
    if (t < stages) {
      const std::size_t down_inputs = config_.dense && 2 * t >= 4 ? t : 0;
      downs_.push_back(make_down_unit<T>(nr, sc, down_inputs));
    }
  }
  const std::size_t rk = config_.recon_kernel;
  recon_ = ConvLayer<T>(ConvSpec{stages * nr, config_.channels(), {rk, 1, (rk - 1) / 2}, false, false});
}

template <typename T>
typename Network<T>::Output Network<T>::run(const Var<T>& lr) const {
  if (lr.shape().c != config_.channels()) {
    throw ShapeError("network expects " + std::to_string(config_.channels()) + " input channels, got " +
                     lr.shape().str());
  }
  Var<T> l0 = reduce_(extract_(lr));
  Output out;
  const std::size_t stages = ups_.size();
  if (!config_.dense) {
    Var<T> low = l0;
    for (std::size_t t = 0; t < stages; ++t) {
      out.features.push_back(up_projection(low, ups_[t]));
      if (t + 1 < stages) low = down_projection(out.features.back(), downs_[t]);
    }
  } else {
    std::vector<Var<T>> lows;
    for (std::size_t t = 0; t < stages; ++t) {
      const std::vector<Var<T>> seed{l0};
      std::span<const Var<T>> inputs = t == 0 ? std::span<const Var<T>>(seed) : std::span<const Var<T>>(lows);
      out.features.push_back(dense_up_projection<T>(inputs, ups_[t]));
      if (t + 1 < stages) lows.push_back(dense_down_projection<T>(out.features, downs_[t]));
    }
  }
  out.image = recon_(concat_channels<T>(out.features));
  return out;
}

template <typename T>
std::vector<NamedParameter<T>> Network<T>::parameters() {
  std::vector<NamedParameter<T>> params;
  for_each_layer([&](const std::string& name, ConvLayer<T>& layer) {
    params.push_back({name + ".weight", layer.weight(), ParamKind::weight});
    params.push_back({name + ".bias", layer.bias(), ParamKind::bias});
    if (layer.slopes().defined()) params.push_back({name + ".slope", layer.slopes(), ParamKind::slope});
  });
  return params;
}

template <typename T>
std::vector<LayerInfo> Network<T>::layers() const {
  std::vector<LayerInfo> out;
  for_each_layer([&](const std::string& name, const ConvLayer<T>& layer) { out.push_back({name, layer.spec()}); });
  return out;
}

template <typename T>
std::size_t Network<T>::conv_layer_count() const {
  return layers().size();
}

template <typename T>
std::size_t Network<T>::merge_count() const {
  std::size_t n = 0;
  for (const auto& u : ups_) n += u.merge ? 1 : 0;
  for (const auto& d : downs_) n += d.merge ? 1 : 0;
  return n;
}

template <typename T>
std::size_t Network<T>::param_count() const {
  std::size_t n = 0;
  for_each_layer([&](const std::string&, const ConvLayer<T>& layer) { n += layer.param_count(); });
  return n;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : parameters()) p.var.zero_grad();
}

template <typename T>
Network<T> build_network(const NetworkConfig& config, Pcg32& rng) {
  Network<T> net(config);
  net.for_each_layer([&](const std::string&, ConvLayer<T>& layer) { he_init(layer, rng); });
  return net;
}

template <typename T>
std::vector<std::filesystem::path> dump_feature_maps(std::span<const Var<T>> features,
                                                     const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory.string() + ": " + ec.message());

  std::vector<std::filesystem::path> written;
  for (std::size_t t = 0; t < features.size(); ++t) {
    const Tensor<T>& f = features[t].value();
    const Shape s = f.shape();
    if (s.n == 0) throw ContractError("dump_feature_maps: empty batch");
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(s.c))));
    const std::size_t rows = (s.c + cols - 1) / cols;
    constexpr std::size_t gap = 1;
    ImageBuffer grid;
    grid.width = cols * s.w + (cols - 1) * gap;
    grid.height = rows * s.h + (rows - 1) * gap;
    grid.channels = 1;
    grid.space = ColorSpace::y;
    grid.samples.assign(grid.width * grid.height, 0);
    for (std::size_t c = 0; c < s.c; ++c) {
      auto plane = f.plane(0, c);
      const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
      const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
      const std::size_t x0 = (c % cols) * (s.w + gap);
      const std::size_t y0 = (c / cols) * (s.h + gap);
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
          const double v = range > 0 ? (static_cast<double>(plane[y * s.w + x]) - *lo) / range : 0.5;
          grid.samples[(y0 + y) * grid.width + x0 + x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
    const auto path = directory / ("features_up" + std::to_string(t + 1) + ".png");
    save_png(grid, path);
    written.push_back(path);
  }
  return written;
}

#define DBPN_INSTANTIATE(T)                                                                          \
  template UpUnit<T> make_up_unit<T>(std::size_t, const ScaleConfig&, std::size_t);                 \
  template DownUnit<T> make_down_unit<T>(std::size_t, const ScaleConfig&, std::size_t);             \
  template Var<T> up_projection<T>(const Var<T>&, const UpUnit<T>&);                                 \
  template Var<T> down_projection<T>(const Var<T>&, const DownUnit<T>&);                             \
  template Var<T> dense_up_projection<T>(std::span<const Var<T>>, const UpUnit<T>&);                 \
  template Var<T> dense_down_projection<T>(std::span<const Var<T>>, const DownUnit<T>&);             \
  template class Network<T>;                                                                          \
  template Network<T> build_network<T>(const NetworkConfig&, Pcg32&);                                \
  template std::vector<std::filesystem::path> dump_feature_maps<T>(std::span<const Var<T>>,          \
                                                                   const std::filesystem::path&);

DBPN_INSTANTIATE(float)
DBPN_INSTANTIATE(double)

#undef DBPN_INSTANTIATE

}  // namespace dbpn
