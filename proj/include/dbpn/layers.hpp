#pragma once

#include <cstddef>
#include <string>

#include "dbpn/autograd.hpp"
#include "dbpn/rng.hpp"

namespace dbpn {

/// Square kernel geometry shared by convolution and its transpose.
struct ConvGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// (in + 2*pad - kernel) / stride + 1; throws ShapeError unless exact and positive.
  std::size_t conv_out(std::size_t in) const;
  /// (in - 1) * stride - 2*pad + kernel; throws ShapeError when not positive.
  std::size_t deconv_out(std::size_t in) const;

  constexpr bool operator==(const ConvGeometry&) const = default;
};

/// Kernel/stride/padding of the projection layers for one enlargement factor.
struct ScaleConfig {
  int scale = 2;
  ConvGeometry geometry;

  /// 2 -> 6/2/2, 4 -> 8/4/2, 8 -> 12/8/2. Other factors throw ConfigError.
  static ScaleConfig for_scale(int scale);
};

/// Strided 2-D convolution with zero padding.
/// weight: (out, in, k, k); bias: (1, out, 1, 1) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, ConvGeometry geometry);

/// Transposed convolution, the adjoint of conv2d with the same geometry.
/// weight: (in, out, k, k); bias: (1, out, 1, 1) or undefined.
template <typename T>
Var<T> deconv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, ConvGeometry geometry);

/// y = x for x > 0, else slope[c] * x. slopes: (1, C, 1, 1).
template <typename T>
Var<T> prelu(const Var<T>& input, const Var<T>& slopes);

/// Geometry and channel counts of one (de)convolution layer.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  ConvGeometry geometry;
  bool transposed = false;
  bool activated = true;

  Shape weight_shape() const;
  std::size_t param_count() const;
};

/// A (de)convolution with bias, optionally followed by PReLU.
template <typename T>
class ConvLayer {
 public:
  ConvLayer() = default;
  explicit ConvLayer(const ConvSpec& spec);

  const ConvSpec& spec() const { return spec_; }

  Var<T> operator()(const Var<T>& x) const;

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }
  /// Undefined when the layer is not activated.
  Var<T>& slopes() { return slopes_; }
  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }
  const Var<T>& slopes() const { return slopes_; }

  std::size_t param_count() const { return spec_.param_count(); }

 private:
  ConvSpec spec_;
  Var<T> weight_;
  Var<T> bias_;
  Var<T> slopes_;
};

/// sqrt(2 / (kernel^2 * filters)).
double he_std(std::size_t kernel, std::size_t filters);

/// Weights ~ N(0, he_std(k, out_channels)), biases 0, PReLU slopes 0.25.
template <typename T>
void he_init(ConvLayer<T>& layer, Pcg32& rng);

inline constexpr double kInitialPreluSlope = 0.25;

}  // namespace dbpn
