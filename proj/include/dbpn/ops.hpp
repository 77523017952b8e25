#pragma once

#include <numeric>
#include <span>
#include <vector>

#include "dbpn/autograd.hpp"

namespace dbpn {

enum class Elementwise { add, sub };

template <typename T>
Var<T> elementwise(const Var<T>& a, const Var<T>& b, Elementwise kind) {
  require_same_shape(a.shape(), b.shape(), "elementwise");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.value().data();
  auto y = b.value().data();
  if (kind == Elementwise::add) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  } else {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  }
  return record<T>(std::move(out), {a, b}, [kind](Node<T>& self) {
    auto g = self.grad.data();
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate_grad(g);
    if (self.inputs[1]->requires_grad) {
      if (kind == Elementwise::add) {
        self.inputs[1]->accumulate_grad(g);
      } else {
        auto dst = self.inputs[1]->grad_buffer().data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return elementwise(a, b, Elementwise::add);
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return elementwise(a, b, Elementwise::sub);
}

/// Stacks inputs along the channel axis in list order.
template <typename T>
Var<T> concat_channels(std::span<const Var<T>> inputs) {
  if (inputs.empty()) throw ContractError("concat_channels: empty input list");
  if (inputs.size() == 1) return inputs.front();
  const Shape first = inputs.front().shape();
  std::size_t channels = 0;
  for (const auto& v : inputs) {
    const Shape s = v.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: " + s.str() + " incompatible with " + first.str());
    }
    channels += s.c;
  }
  const Shape out_shape{first.n, channels, first.h, first.w};
  Tensor<T> out(out_shape);
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t c0 = 0;
    for (const auto& v : inputs) {
      auto src = v.value().item(n);
      std::copy(src.begin(), src.end(), out.ptr() + out.offset(n, c0, 0, 0));
      c0 += v.shape().c;
    }
  }
  std::vector<Var<T>> ins(inputs.begin(), inputs.end());
  return record<T>(std::move(out), std::move(ins), [](Node<T>& self) {
    const Shape os = self.value.shape();
    std::size_t c0 = 0;
    for (auto& in : self.inputs) {
      const std::size_t len = in->value.shape().c * os.plane();
      if (in->requires_grad) {
        auto& dst = in->grad_buffer();
        for (std::size_t n = 0; n < os.n; ++n) {
          const T* g = self.grad.ptr() + self.grad.offset(n, c0, 0, 0);
          auto d = dst.item(n);
          for (std::size_t i = 0; i < len; ++i) d[i] += g[i];
        }
      }
      c0 += in->value.shape().c;
    }
  });
}

template <typename T>
Var<T> concat_channels(std::initializer_list<Var<T>> inputs) {
  std::vector<Var<T>> v(inputs);
  return concat_channels<T>(std::span<const Var<T>>(v));
}

/// Channels [begin, begin+count) of `x`.
template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count) {
  const Shape s = x.shape();
  if (begin + count > s.c) throw ShapeError("slice_channels: range exceeds " + s.str());
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    auto src = x.value().data().subspan(x.value().offset(n, begin, 0, 0), count * s.plane());
    std::copy(src.begin(), src.end(), out.item(n).begin());
  }
  return record<T>(std::move(out), {x}, [begin, count](Node<T>& self) {
    auto& dst = self.inputs[0]->grad_buffer();
    const Shape is = dst.shape();
    for (std::size_t n = 0; n < is.n; ++n) {
      auto g = self.grad.item(n);
      auto d = dst.data().subspan(dst.offset(n, begin, 0, 0), count * is.plane());
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

/// Sum of every sample, as a (1,1,1,1) tensor.
template <typename T>
Var<T> sum(const Var<T>& x) {
  auto d = x.value().data();
  const T total = std::accumulate(d.begin(), d.end(), T(0));
  return record<T>(Tensor<T>(Shape{1, 1, 1, 1}, total), {x}, [](Node<T>& self) {
    const T g = self.grad[0];
    for (auto& v : self.inputs[0]->grad_buffer().data()) v += g;
  });
}

}  // namespace dbpn
