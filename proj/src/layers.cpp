#include "dbpn/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "dbpn/parallel.hpp"

namespace dbpn {

std::size_t ConvGeometry::conv_out(std::size_t in) const {
  const long span = static_cast<long>(in) + 2 * static_cast<long>(padding) - static_cast<long>(kernel);
  if (span < 0 || span % static_cast<long>(stride) != 0) {
    throw ShapeError("conv: input extent " + std::to_string(in) + " gives non-integral output for kernel " +
                     std::to_string(kernel) + ", stride " + std::to_string(stride) + ", padding " +
                     std::to_string(padding));
  }
  return static_cast<std::size_t>(span / static_cast<long>(stride)) + 1;
}

std::size_t ConvGeometry::deconv_out(std::size_t in) const {
  const long out = (static_cast<long>(in) - 1) * static_cast<long>(stride) - 2 * static_cast<long>(padding) +
                   static_cast<long>(kernel);
  if (in == 0 || out <= 0) {
    throw ShapeError("deconv: input extent " + std::to_string(in) + " gives empty output");
  }
  return static_cast<std::size_t>(out);
}

ScaleConfig ScaleConfig::for_scale(int scale) {
  switch (scale) {
    case 2:
      return {2, {6, 2, 2}};
    case 4:
      return {4, {8, 4, 2}};
    case 8:
      return {8, {12, 8, 2}};
    default:
      throw ConfigError("unsupported scale factor " + std::to_string(scale) + " (expected 2, 4 or 8)");
  }
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Geometry of one im2col lowering: an "image" of (channels, height, width) scanned by a
/// kernel to give a (channels*k*k, out_h*out_w) column matrix.
struct Lowering {
  std::size_t channels, height, width;
  std::size_t out_h, out_w;
  ConvGeometry g;

  std::size_t rows() const { return channels * g.kernel * g.kernel; }
  std::size_t cols() const { return out_h * out_w; }
  bool trivial() const { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }
};

/// Output columns [lo, hi) whose input column ox*s - p + kx lies inside [0, w).
inline void valid_range(long kx, long s, long p, long w, long out_w, long& lo, long& hi) {
  const long first = p - kx;  // smallest ox*s that lands on column 0
  lo = first <= 0 ? 0 : (first + s - 1) / s;
  const long last = w - 1 + p - kx;
  hi = last < 0 ? 0 : std::min(out_w, last / s + 1);
  if (hi < lo) hi = lo;
}

template <typename T>
void im2col(const T* image, const Lowering& l, T* col) {
  const long k = static_cast<long>(l.g.kernel);
  const long s = static_cast<long>(l.g.stride);
  const long p = static_cast<long>(l.g.padding);
  const long h = static_cast<long>(l.height);
  const long w = static_cast<long>(l.width);
  const long ow = static_cast<long>(l.out_w);
  for (std::size_t c = 0; c < l.channels; ++c) {
    const T* plane = image + c * l.height * l.width;
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        T* row = col + ((c * l.g.kernel + ky) * l.g.kernel + kx) * l.cols();
        long lo, hi;
        valid_range(kx, s, p, w, ow, lo, hi);
        for (std::size_t oy = 0; oy < l.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * s - p + ky;
          T* dst = row + oy * l.out_w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = plane + iy * w + kx - p;
          std::fill(dst, dst + lo, T(0));
          if (s == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (long ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s];
          }
          std::fill(dst + hi, dst + ow, T(0));
        }
      }
    }
  }
}

/// Scatter-add of a column matrix back onto the image; the adjoint of im2col.
template <typename T>
void col2im(const T* col, const Lowering& l, T* image) {
  const long k = static_cast<long>(l.g.kernel);
  const long s = static_cast<long>(l.g.stride);
  const long p = static_cast<long>(l.g.padding);
  const long h = static_cast<long>(l.height);
  const long w = static_cast<long>(l.width);
  const long ow = static_cast<long>(l.out_w);
  for (std::size_t c = 0; c < l.channels; ++c) {
    T* plane = image + c * l.height * l.width;
    for (long ky = 0; ky < k; ++ky) {
      for (long kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * l.g.kernel + ky) * l.g.kernel + kx) * l.cols();
        long lo, hi;
        valid_range(kx, s, p, w, ow, lo, hi);
        for (std::size_t oy = 0; oy < l.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + oy * l.out_w;
          T* dst = plane + iy * w + kx - p;
          if (s == 1) {
            for (long ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (long ox = lo; ox < hi; ++ox) dst[ox * s] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void add_bias(Tensor<T>& out, const Var<T>& bias) {
  if (!bias.defined()) return;
  const Shape s = out.shape();
  auto b = bias.value().data();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (auto& v : out.plane(n, c)) v += b[c];
    }
  }
}

template <typename T>
void accumulate_bias_grad(Node<T>& bias, const Tensor<T>& gout) {
  const Shape s = gout.shape();
  auto db = bias.grad_buffer().data();
  for (std::size_t c = 0; c < s.c; ++c) {
    T acc = T(0);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (T v : gout.plane(n, c)) acc += v;
    }
    db[c] += acc;
  }
}

void check_bias(const Shape& bias, std::size_t channels, const char* what) {
  if (!(bias == Shape{1, channels, 1, 1})) {
    throw ShapeError(std::string(what) + ": bias shape " + bias.str() + " does not match " +
                     std::to_string(channels) + " output channels");
  }
}

/// Per-chunk weight-gradient partials summed in chunk order.
template <typename T>
class GradPartials {
 public:
  GradPartials(std::size_t chunks, std::size_t size) : chunks_(chunks) {
    if (chunks_ > 1) buffers_.assign(chunks_, std::vector<T>(size, T(0)));
  }
  T* target(std::size_t chunk, Tensor<T>& direct) { return chunks_ > 1 ? buffers_[chunk].data() : direct.ptr(); }
  void reduce(Tensor<T>& direct) {
    if (chunks_ <= 1) return;
    auto d = direct.data();
    for (const auto& b : buffers_) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += b[i];
    }
  }

 private:
  std::size_t chunks_;
  std::vector<std::vector<T>> buffers_;
};

/// dx += g * (x > 0 ? 1 : a). Written as a select into a temporary so gcc emits a blend
/// rather than a data-dependent branch.
template <typename T>
void prelu_input_grad(T* __restrict dx, const T* __restrict x, const T* __restrict g, T a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const T m = x[i] > T(0) ? T(1) : a;
    dx[i] = dx[i] + g[i] * m;
  }
}

/// sum of g * min(x, 0), in eight independent lanes.
template <typename T>
T prelu_slope_grad(const T* __restrict x, const T* __restrict g, std::size_t n) {
  T lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) lanes[j] += g[i + j] * std::min(x[i + j], T(0));
  }
  T acc = T(0);
  for (; i < n; ++i) acc += g[i] * std::min(x[i], T(0));
  for (T v : lanes) acc += v;
  return acc;
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, ConvGeometry geometry) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  if (ws.c != is.c || ws.h != geometry.kernel || ws.w != geometry.kernel) {
    throw ShapeError("conv2d: weight " + ws.str() + " incompatible with input " + is.str() + " and kernel " +
                     std::to_string(geometry.kernel));
  }
  if (bias.defined()) check_bias(bias.shape(), ws.n, "conv2d");
  const Lowering low{is.c, is.h, is.w, geometry.conv_out(is.h), geometry.conv_out(is.w), geometry};
  const Shape os{is.n, ws.n, low.out_h, low.out_w};

  Tensor<T> out(os);
  {
    ConstMatMap<T> w(weight.value().ptr(), ws.n, low.rows());
    parallel_chunks(is.n, [&](std::size_t, std::size_t begin, std::size_t end) {
      std::vector<T> col(low.trivial() ? 0 : low.rows() * low.cols());
      for (std::size_t n = begin; n < end; ++n) {
        const T* src = input.value().item(n).data();
        if (!low.trivial()) {
          im2col(src, low, col.data());
          src = col.data();
        }
        MatMap<T> o(out.item(n).data(), ws.n, low.cols());
        o.noalias() = w * ConstMatMap<T>(src, low.rows(), low.cols());
      }
    });
  }
  add_bias(out, bias);

  std::vector<Var<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record<T>(std::move(out), std::move(inputs), [low, os](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    Node<T>& wt = *self.inputs[1];
    const Tensor<T>& gout = self.grad;
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) accumulate_bias_grad(*self.inputs[2], gout);

    ConstMatMap<T> w(wt.value.ptr(), os.c, low.rows());
    T* dx_base = x.requires_grad ? x.grad_buffer().ptr() : nullptr;
    Tensor<T>* dw = wt.requires_grad ? &wt.grad_buffer() : nullptr;
    GradPartials<T> partials(chunk_count(os.n), dw ? dw->size() : 0);
    const std::size_t item = low.channels * low.height * low.width;

    parallel_chunks(os.n, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
      std::vector<T> col(low.trivial() ? 0 : low.rows() * low.cols());
      for (std::size_t n = begin; n < end; ++n) {
        ConstMatMap<T> g(gout.item(n).data(), os.c, low.cols());
        if (dw) {
          const T* src = x.value.item(n).data();
          if (!low.trivial()) {
            im2col(src, low, col.data());
            src = col.data();
          }
          MatMap<T> dwm(partials.target(chunk, *dw), os.c, low.rows());
          dwm.noalias() += g * ConstMatMap<T>(src, low.rows(), low.cols()).transpose();
        }
        if (dx_base) {
          if (low.trivial()) {
            MatMap<T> dx(dx_base + n * item, low.rows(), low.cols());
            dx.noalias() += w.transpose() * g;
          } else {
            MatMap<T> dcol(col.data(), low.rows(), low.cols());
            dcol.noalias() = w.transpose() * g;
            col2im(col.data(), low, dx_base + n * item);
          }
        }
      }
    });
    if (dw) partials.reduce(*dw);
  });
}

template <typename T>
Var<T> deconv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, ConvGeometry geometry) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  if (ws.n != is.c || ws.h != geometry.kernel || ws.w != geometry.kernel) {
    throw ShapeError("deconv2d: weight " + ws.str() + " incompatible with input " + is.str() + " and kernel " +
                     std::to_string(geometry.kernel));
  }
  if (bias.defined()) check_bias(bias.shape(), ws.c, "deconv2d");
  const std::size_t oh = geometry.deconv_out(is.h);
  const std::size_t ow = geometry.deconv_out(is.w);
  // The output is the "image" side of the lowering; the input grid is its column side.
  const Lowering low{ws.c, oh, ow, is.h, is.w, geometry};
  if (geometry.conv_out(oh) != is.h || geometry.conv_out(ow) != is.w) {
    throw ShapeError("deconv2d: geometry is not invertible for input " + is.str());
  }
  const Shape os{is.n, ws.c, oh, ow};

  Tensor<T> out(os);
  {
    ConstMatMap<T> w(weight.value().ptr(), ws.n, low.rows());
    parallel_chunks(is.n, [&](std::size_t, std::size_t begin, std::size_t end) {
      std::vector<T> col(low.rows() * low.cols());
      for (std::size_t n = begin; n < end; ++n) {
        ConstMatMap<T> x(input.value().item(n).data(), ws.n, low.cols());
        if (low.trivial()) {
          MatMap<T> o(out.item(n).data(), low.rows(), low.cols());
          o.noalias() = w.transpose() * x;
        } else {
          MatMap<T> c(col.data(), low.rows(), low.cols());
          c.noalias() = w.transpose() * x;
          col2im(col.data(), low, out.item(n).data());
        }
      }
    });
  }
  add_bias(out, bias);

  std::vector<Var<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record<T>(std::move(out), std::move(inputs), [low, is](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    Node<T>& wt = *self.inputs[1];
    const Tensor<T>& gout = self.grad;
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) accumulate_bias_grad(*self.inputs[2], gout);

    ConstMatMap<T> w(wt.value.ptr(), is.c, low.rows());
    Tensor<T>* dx = x.requires_grad ? &x.grad_buffer() : nullptr;
    Tensor<T>* dw = wt.requires_grad ? &wt.grad_buffer() : nullptr;
    GradPartials<T> partials(chunk_count(is.n), dw ? dw->size() : 0);

    parallel_chunks(is.n, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
      std::vector<T> col(low.trivial() ? 0 : low.rows() * low.cols());
      for (std::size_t n = begin; n < end; ++n) {
        const T* g = gout.item(n).data();
        if (!low.trivial()) {
          im2col(g, low, col.data());
          g = col.data();
        }
        ConstMatMap<T> gcol(g, low.rows(), low.cols());
        if (dx) {
          MatMap<T> dxm(dx->item(n).data(), is.c, low.cols());
          dxm.noalias() += w * gcol;
        }
        if (dw) {
          MatMap<T> dwm(partials.target(chunk, *dw), is.c, low.rows());
          dwm.noalias() += ConstMatMap<T>(x.value.item(n).data(), is.c, low.cols()) * gcol.transpose();
        }
      }
    });
    if (dw) partials.reduce(*dw);
  });
}

template <typename T>
Var<T> prelu(const Var<T>& input, const Var<T>& slopes) {
  const Shape is = input.shape();
  if (!(slopes.shape() == Shape{1, is.c, 1, 1})) {
    throw ShapeError("prelu: slopes " + slopes.shape().str() + " do not match " + std::to_string(is.c) +
                     " channels");
  }
  Tensor<T> out(is);
  const T* a = slopes.value().ptr();
  const std::size_t plane = is.plane();
  for (std::size_t n = 0; n < is.n; ++n) {
    for (std::size_t c = 0; c < is.c; ++c) {
      const T* src = input.value().ptr() + input.value().offset(n, c, 0, 0);
      T* dst = out.ptr() + out.offset(n, c, 0, 0);
      const T ac = a[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const T v = src[i];
        dst[i] = std::max(v, T(0)) + ac * std::min(v, T(0));
      }
    }
  }
  return record<T>(std::move(out), {input, slopes}, [](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    Node<T>& sl = *self.inputs[1];
    const Shape s = x.value.shape();
    const std::size_t plane = s.plane();
    const T* a = sl.value.ptr();
    T* dx_base = x.requires_grad ? x.grad_buffer().ptr() : nullptr;
    T* da_base = sl.requires_grad ? sl.grad_buffer().ptr() : nullptr;
    for (std::size_t c = 0; c < s.c; ++c) {
      T da = T(0);
      const T ac = a[c];
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t off = x.value.offset(n, c, 0, 0);
        const T* xs = x.value.ptr() + off;
        const T* g = self.grad.ptr() + off;
        if (dx_base) prelu_input_grad(dx_base + off, xs, g, ac, plane);
        da += prelu_slope_grad(xs, g, plane);
      }
      if (da_base) da_base[c] += da;
    }
  });
}

Shape ConvSpec::weight_shape() const {
  return transposed ? Shape{in_channels, out_channels, geometry.kernel, geometry.kernel}
                    : Shape{out_channels, in_channels, geometry.kernel, geometry.kernel};
}

std::size_t ConvSpec::param_count() const {
  return weight_shape().numel() + out_channels + (activated ? out_channels : 0);
}

template <typename T>
ConvLayer<T>::ConvLayer(const ConvSpec& spec)
    : spec_(spec),
      weight_(Var<T>::parameter(Tensor<T>(spec.weight_shape()))),
      bias_(Var<T>::parameter(Tensor<T>(Shape{1, spec.out_channels, 1, 1}))) {
  if (spec.geometry.kernel < 1 || spec.geometry.stride < 1) throw ConfigError("conv layer: kernel and stride must be >= 1");
  if (spec.activated) {
    slopes_ = Var<T>::parameter(Tensor<T>(Shape{1, spec.out_channels, 1, 1}, T(kInitialPreluSlope)));
  }
}

template <typename T>
Var<T> ConvLayer<T>::operator()(const Var<T>& x) const {
  if (x.shape().c != spec_.in_channels) {
    throw ShapeError("conv layer expects " + std::to_string(spec_.in_channels) + " channels, got " +
                     x.shape().str());
  }
  Var<T> y = spec_.transposed ? deconv2d(x, weight_, bias_, spec_.geometry) : conv2d(x, weight_, bias_, spec_.geometry);
  return spec_.activated ? prelu(y, slopes_) : y;
}

double he_std(std::size_t kernel, std::size_t filters) {
  return std::sqrt(2.0 / static_cast<double>(kernel * kernel * filters));
}

template <typename T>
void he_init(ConvLayer<T>& layer, Pcg32& rng) {
  const double std = he_std(layer.spec().geometry.kernel, layer.spec().out_channels);
  for (auto& v : layer.weight().mutable_value().data()) v = static_cast<T>(std * rng.normal());
  layer.bias().mutable_value().fill(T(0));
  if (layer.slopes().defined()) layer.slopes().mutable_value().fill(T(kInitialPreluSlope));
}

#define DBPN_INSTANTIATE(T)                                                                   \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);     \
  template Var<T> deconv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);   \
  template Var<T> prelu<T>(const Var<T>&, const Var<T>&);                                     \
  template class ConvLayer<T>;                                                                \
  template void he_init<T>(ConvLayer<T>&, Pcg32&);

DBPN_INSTANTIATE(float)
DBPN_INSTANTIATE(double)

#undef DBPN_INSTANTIATE

}  // namespace dbpn
