#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbpn/layers.hpp"

namespace dbpn {

enum class ColorMode { y, rgb };

/// Named capacity variants. `ddbpn` is the dense RGB network.
enum class Preset { ss, s, m, l, ddbpn };

Preset parse_preset(std::string_view name);
std::string preset_name(Preset p);

struct NetworkConfig {
  int scale = 4;
  int stages = 2;            // T: up-projection units; T-1 down-projection units
  std::size_t n0 = 64;       // initial feature width
  std::size_t nr = 18;       // projection width
  bool dense = false;
  ColorMode color = ColorMode::y;
  std::size_t recon_kernel = 1;

  static NetworkConfig preset(Preset p, int scale);

  std::size_t channels() const { return color == ColorMode::y ? 1 : 3; }
  /// Throws ConfigError.
  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

/// Up-projection: scale up, scale back down, take the LR residual, scale it up, sum.
template <typename T>
struct UpUnit {
  std::optional<ConvLayer<T>> merge;  // 1x1 reduction of concatenated inputs (dense mode)
  ConvLayer<T> scale_up;
  ConvLayer<T> scale_down;
  ConvLayer<T> residual_up;
};

/// Down-projection: the mirror of UpUnit, with its own residual filter.
template <typename T>
struct DownUnit {
  std::optional<ConvLayer<T>> merge;
  ConvLayer<T> scale_down;
  ConvLayer<T> scale_up;
  ConvLayer<T> residual_down;
};

/// `merge_inputs` is the number of nr-wide maps the unit concatenates; 0 means no merge layer.
template <typename T>
UpUnit<T> make_up_unit(std::size_t nr, const ScaleConfig& sc, std::size_t merge_inputs = 0);
template <typename T>
DownUnit<T> make_down_unit(std::size_t nr, const ScaleConfig& sc, std::size_t merge_inputs = 0);

template <typename T>
Var<T> up_projection(const Var<T>& low, const UpUnit<T>& unit);
template <typename T>
Var<T> down_projection(const Var<T>& high, const DownUnit<T>& unit);

/// Merges `previous` (all at LR size) through the unit's 1x1 layer, then up-projects.
/// Without a merge layer exactly one input is accepted and passed through unchanged.
template <typename T>
Var<T> dense_up_projection(std::span<const Var<T>> previous, const UpUnit<T>& unit);
template <typename T>
Var<T> dense_down_projection(std::span<const Var<T>> previous, const DownUnit<T>& unit);

enum class ParamKind { weight, bias, slope };

template <typename T>
struct NamedParameter {
  std::string name;
  Var<T> var;
  ParamKind kind;
};

struct LayerInfo {
  std::string name;
  ConvSpec spec;
};

template <typename T>
class Network {
 public:
  struct Output {
    Var<T> image;
    std::vector<Var<T>> features;  // H^1..H^T
  };

  /// All parameters zero (slopes 0.25); see build_network for initialized weights.
  explicit Network(const NetworkConfig& config);

  const NetworkConfig& config() const { return config_; }

  Output run(const Var<T>& lr) const;
  Var<T> forward(const Var<T>& lr) const { return run(lr).image; }

  /// Every trainable tensor in construction order, with stable names.
  std::vector<NamedParameter<T>> parameters();
  std::vector<LayerInfo> layers() const;

  std::size_t conv_layer_count() const;
  std::size_t unit_count() const { return ups_.size() + downs_.size(); }
  std::size_t merge_count() const;
  std::size_t param_count() const;

  void zero_grad();

  const ConvLayer<T>& extract() const { return extract_; }
  const ConvLayer<T>& reduce() const { return reduce_; }
  const std::vector<UpUnit<T>>& up_units() const { return ups_; }
  const std::vector<DownUnit<T>>& down_units() const { return downs_; }
  const ConvLayer<T>& reconstruct() const { return recon_; }

  /// Applies `fn(name, layer)` in construction order (which is also initialization order).
  template <typename Fn>
  void for_each_layer(Fn&& fn);
  template <typename Fn>
  void for_each_layer(Fn&& fn) const;

 private:
  NetworkConfig config_;
  ConvLayer<T> extract_;
  ConvLayer<T> reduce_;
  std::vector<UpUnit<T>> ups_;
  std::vector<DownUnit<T>> downs_;
  ConvLayer<T> recon_;
};

/// Constructs and He-initializes a network. Units are laid out up1, down1, up2, ...; in dense
/// mode every unit from the fourth onward carries a 1x1 merge layer.
template <typename T>
Network<T> build_network(const NetworkConfig& config, Pcg32& rng);

template <typename T>
std::size_t count_params(const Network<T>& net) {
  return net.param_count();
}

/// Writes each feature map H^t (batch item 0) as an 8-bit grayscale grid of its channels,
/// every channel min-max normalized on its own. Returns the written paths.
template <typename T>
std::vector<std::filesystem::path> dump_feature_maps(std::span<const Var<T>> features,
                                                     const std::filesystem::path& directory);

template <typename T>
template <typename Fn>
void Network<T>::for_each_layer(Fn&& fn) {
  fn(std::string("extract"), extract_);
  fn(std::string("reduce"), reduce_);
  const std::size_t units = ups_.size() + downs_.size();
  for (std::size_t u = 0; u < units; ++u) {
    const std::size_t t = u / 2 + 1;
    if (u % 2 == 0) {
      auto& unit = ups_[u / 2];
      const std::string p = "up" + std::to_string(t) + ".";
      if (unit.merge) fn(p + "merge", *unit.merge);
      fn(p + "scale_up", unit.scale_up);
      fn(p + "scale_down", unit.scale_down);
      fn(p + "residual_up", unit.residual_up);
    } else {
      auto& unit = downs_[u / 2];
      const std::string p = "down" + std::to_string(t) + ".";
      if (unit.merge) fn(p + "merge", *unit.merge);
      fn(p + "scale_down", unit.scale_down);
      fn(p + "scale_up", unit.scale_up);
      fn(p + "residual_down", unit.residual_down);
    }
  }
  fn(std::string("reconstruct"), recon_);
}

template <typename T>
template <typename Fn>
void Network<T>::for_each_layer(Fn&& fn) const {
  const_cast<Network*>(this)->for_each_layer(
      [&fn](const std::string& name, ConvLayer<T>& layer) { fn(name, static_cast<const ConvLayer<T>&>(layer)); });
}

}  // namespace dbpn
