#include "dbpn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dbpn/layers.hpp"
#include "dbpn/network.hpp"
#include "dbpn/ops.hpp"
#include "dbpn/rng.hpp"
#include "dbpn/train.hpp"

namespace dbpn {

namespace {

double eval_loss(const std::function<Var<double>()>& build, const char* when) {
  const Var<double> loss = build();
  if (!(loss.shape() == Shape{1, 1, 1, 1})) throw ContractError("grad_check: builder must return a scalar");
  const double v = loss.value()[0];
  if (!std::isfinite(v)) throw NumericError(std::string("grad_check aborted: non-finite loss ") + when);
  return v;
}

std::vector<std::size_t> pick_coords(std::size_t size, std::size_t limit, Pcg32& rng) {
  std::vector<std::size_t> all(size);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (limit == 0 || limit >= size) return all;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + rng.below(static_cast<std::uint32_t>(size - i));
    std::swap(all[i], all[j]);
  }
  all.resize(limit);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

GradCheckReport grad_check(const std::string& label, const std::function<Var<double>()>& build,
                           std::vector<CheckedInput> inputs, const GradCheckOptions& options) {
  for (auto& in : inputs) {
    in.var.set_requires_grad(true);
    in.var.zero_grad();
  }
  {
    const Var<double> loss = build();
    if (!std::isfinite(loss.value()[0])) throw NumericError("grad_check aborted: non-finite loss at the base point");
    backward(loss);
  }

  GradCheckReport report;
  report.label = label;
  report.rtol = options.rtol;
  Pcg32 rng(options.seed, 0x5eedULL);
  for (auto& in : inputs) {
    const Tensor<double> analytic = in.var.grad();
    GradCheckEntry entry{in.name, 0, 0, 0.0, 0.0};
    auto values = in.var.mutable_value().data();
    for (std::size_t i : pick_coords(values.size(), options.max_coords, rng)) {
      const double original = values[i];
      double best_abs = 0.0;
      double best_rel = 0.0;
      double step = options.eps;
      for (std::size_t attempt = 0; attempt <= options.refinements; ++attempt, step /= 10.0) {
        values[i] = original + step;
        const double up = eval_loss(build, "after +eps perturbation");
        values[i] = original - step;
        const double down = eval_loss(build, "after -eps perturbation");
        values[i] = original;
        const double numeric = (up - down) / (2.0 * step);
        const double abs_err = std::abs(analytic[i] - numeric);
        const double rel_err = abs_err / std::max({std::abs(analytic[i]), std::abs(numeric), options.abs_floor});
        if (attempt == 0 || rel_err < best_rel) {
          best_rel = rel_err;
          best_abs = abs_err;
        }
        if (best_rel < options.rtol) break;
        if (attempt < options.refinements) ++entry.refined;
      }
      entry.max_abs_error = std::max(entry.max_abs_error, best_abs);
      entry.max_rel_error = std::max(entry.max_rel_error, best_rel);
      ++entry.coords_checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(entry);
  }
  report.passed = report.max_rel_error < options.rtol;
  return report;
}

namespace {

Tensor<double> random_tensor(Shape s, Pcg32& rng, double scale = 1.0) {
  Tensor<double> t(s);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

/// Uniform magnitudes in [0.1, 1] with random sign: keeps PReLU inputs off the kink.
Tensor<double> off_kink_tensor(Shape s, Pcg32& rng) {
  Tensor<double> t(s);
  for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return t;
}

Var<double> param(Tensor<double> t) { return Var<double>::parameter(std::move(t)); }

template <typename Layer>
void randomize(Layer& layer, Pcg32& rng) {
  he_init(layer, rng);
  for (auto& v : layer.bias().mutable_value().data()) v = 0.1 * rng.normal();
  if (layer.slopes().defined()) {
    for (auto& v : layer.slopes().mutable_value().data()) v = rng.uniform(0.05, 0.5);
  }
}

std::vector<CheckedInput> layer_inputs(const std::string& prefix, ConvLayer<double>& layer) {
  std::vector<CheckedInput> out{{prefix + ".weight", layer.weight()}, {prefix + ".bias", layer.bias()}};
  if (layer.slopes().defined()) out.push_back({prefix + ".slope", layer.slopes()});
  return out;
}

void append(std::vector<CheckedInput>& dst, std::vector<CheckedInput> src) {
  dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
}

}  // namespace

std::vector<GradCheckReport> gradient_suite(std::uint64_t seed, const GradCheckOptions& options) {
  std::vector<GradCheckReport> reports;
  Pcg32 rng(seed);
  GradCheckOptions opt = options;
  opt.seed = seed;

  {
    Var<double> a = param(random_tensor({1, 2, 3, 3}, rng));
    Var<double> b = param(random_tensor({1, 2, 3, 3}, rng));
    Var<double> target = Var<double>::constant(random_tensor({1, 2, 3, 3}, rng));
    reports.push_back(grad_check("add", [&] { return mse_loss(add(a, b), target); }, {{"a", a}, {"b", b}}, opt));
    reports.push_back(grad_check("sub", [&] { return mse_loss(sub(a, b), target); }, {{"a", a}, {"b", b}}, opt));
    reports.push_back(grad_check("sum", [&] { return sum(sub(add(a, b), a)); }, {{"a", a}, {"b", b}}, opt));
  }
  {
    Var<double> a = param(random_tensor({2, 2, 3, 3}, rng));
    Var<double> b = param(random_tensor({2, 3, 3, 3}, rng));
    Var<double> target = Var<double>::constant(random_tensor({2, 5, 3, 3}, rng));
    Var<double> t2 = Var<double>::constant(random_tensor({2, 2, 3, 3}, rng));
    reports.push_back(grad_check(
        "concat_channels", [&] { return mse_loss(concat_channels<double>({a, b}), target); }, {{"a", a}, {"b", b}},
        opt));
    reports.push_back(grad_check(
        "slice_channels", [&] { return mse_loss(slice_channels(concat_channels<double>({a, b}), 1, 2), t2); },
        {{"a", a}, {"b", b}}, opt));
  }
  {
    Var<double> p = param(random_tensor({1, 2, 4, 4}, rng));
    Var<double> t = param(random_tensor({1, 2, 4, 4}, rng));
    reports.push_back(grad_check("mse_loss", [&] { return mse_loss(p, t); }, {{"pred", p}, {"target", t}}, opt));
  }
  {
    Var<double> x = param(random_tensor({1, 2, 5, 5}, rng));
    Var<double> w = param(random_tensor({3, 2, 3, 3}, rng, 0.3));
    Var<double> b = param(random_tensor({1, 3, 1, 1}, rng));
    Var<double> target = Var<double>::constant(random_tensor({1, 3, 5, 5}, rng));
    reports.push_back(grad_check(
        "conv2d 3x3", [&] { return mse_loss(conv2d(x, w, b, {3, 1, 1}), target); },
        {{"input", x}, {"weight", w}, {"bias", b}}, opt));
  }
  {
    const ConvGeometry g = ScaleConfig::for_scale(2).geometry;
    Var<double> x = param(random_tensor({2, 2, 8, 8}, rng));
    Var<double> w = param(random_tensor({3, 2, 6, 6}, rng, 0.2));
    Var<double> b = param(random_tensor({1, 3, 1, 1}, rng));
    Var<double> target = Var<double>::constant(random_tensor({2, 3, 4, 4}, rng));
    reports.push_back(grad_check(
        "conv2d strided", [&] { return mse_loss(conv2d(x, w, b, g), target); },
        {{"input", x}, {"weight", w}, {"bias", b}}, opt));
  }
  {
    const ConvGeometry g = ScaleConfig::for_scale(2).geometry;
    Var<double> x = param(random_tensor({2, 2, 4, 4}, rng));
    Var<double> w = param(random_tensor({2, 3, 6, 6}, rng, 0.2));
    Var<double> b = param(random_tensor({1, 3, 1, 1}, rng));
    Var<double> target = Var<double>::constant(random_tensor({2, 3, 8, 8}, rng));
    reports.push_back(grad_check(
        "deconv2d", [&] { return mse_loss(deconv2d(x, w, b, g), target); },
        {{"input", x}, {"weight", w}, {"bias", b}}, opt));
  }
  {
    Var<double> x = param(off_kink_tensor({2, 3, 3, 3}, rng));
    Var<double> a = param(Tensor<double>({1, 3, 1, 1}, std::vector<double>{0.25, 0.1, 0.4}));
    Var<double> target = Var<double>::constant(random_tensor({2, 3, 3, 3}, rng));
    reports.push_back(
        grad_check("prelu", [&] { return mse_loss(prelu(x, a), target); }, {{"input", x}, {"slopes", a}}, opt));
  }
  {
    const ScaleConfig sc = ScaleConfig::for_scale(2);
    UpUnit<double> up = make_up_unit<double>(4, sc);
    randomize(up.scale_up, rng);
    randomize(up.scale_down, rng);
    randomize(up.residual_up, rng);
    Var<double> x = param(random_tensor({1, 4, 4, 4}, rng));
    Var<double> target = Var<double>::constant(random_tensor({1, 4, 8, 8}, rng));
    std::vector<CheckedInput> inputs{{"input", x}};
    append(inputs, layer_inputs("scale_up", up.scale_up));
    append(inputs, layer_inputs("scale_down", up.scale_down));
    append(inputs, layer_inputs("residual_up", up.residual_up));
    reports.push_back(grad_check("up_projection", [&] { return mse_loss(up_projection(x, up), target); }, inputs, opt));

    DownUnit<double> down = make_down_unit<double>(4, sc);
    randomize(down.scale_down, rng);
    randomize(down.scale_up, rng);
    randomize(down.residual_down, rng);
    Var<double> h = param(random_tensor({1, 4, 8, 8}, rng));
    Var<double> ltarget = Var<double>::constant(random_tensor({1, 4, 4, 4}, rng));
    inputs = {{"input", h}};
    append(inputs, layer_inputs("scale_down", down.scale_down));
    append(inputs, layer_inputs("scale_up", down.scale_up));
    append(inputs, layer_inputs("residual_down", down.residual_down));
    reports.push_back(
        grad_check("down_projection", [&] { return mse_loss(down_projection(h, down), ltarget); }, inputs, opt));

    UpUnit<double> dense = make_up_unit<double>(4, sc, 3);
    randomize(*dense.merge, rng);
    randomize(dense.scale_up, rng);
    randomize(dense.scale_down, rng);
    randomize(dense.residual_up, rng);
    std::vector<Var<double>> prev{param(random_tensor({1, 4, 4, 4}, rng)), param(random_tensor({1, 4, 4, 4}, rng)),
                                  param(random_tensor({1, 4, 4, 4}, rng))};
    inputs = {{"L1", prev[0]}, {"L2", prev[1]}, {"L3", prev[2]}};
    append(inputs, layer_inputs("merge", *dense.merge));
    append(inputs, layer_inputs("scale_up", dense.scale_up));
    reports.push_back(grad_check(
        "dense_up_projection", [&] { return mse_loss(dense_up_projection<double>(prev, dense), target); }, inputs, opt));
  }
  {
    NetworkConfig cfg;
    cfg.scale = 2;
    cfg.stages = 2;
    cfg.n0 = 8;
    cfg.nr = 4;
    Network<double> net = build_network<double>(cfg, rng);
    Var<double> x = param(random_tensor({1, 1, 8, 8}, rng, 0.5));
    Var<double> target = Var<double>::constant(random_tensor({1, 1, 16, 16}, rng, 0.5));
    std::vector<CheckedInput> inputs{{"input", x}};
    for (auto& p : net.parameters()) inputs.push_back({p.name, p.var});
    GradCheckOptions net_opt = opt;
    if (net_opt.max_coords == 0) net_opt.max_coords = 32;
    reports.push_back(grad_check("network T=2", [&] { return mse_loss(net.forward(x), target); }, inputs, net_opt));
  }
  return reports;
}

}  // namespace dbpn
