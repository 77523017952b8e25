#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dbpn/autograd.hpp"

namespace dbpn {

struct GradCheckOptions {
  double eps = 1e-5;
  double rtol = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
  /// A coordinate that misses rtol is re-probed with eps/10, eps/100, ... this many times.
  /// A step that straddles a PReLU kink gives a wrong difference quotient; a wrong analytic
  /// gradient disagrees at every step.
  std::size_t refinements = 2;
  /// Coordinates probed per input tensor; 0 probes all of them.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t coords_checked = 0;
  std::size_t refined = 0;  // extra probes at smaller steps
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::string label;
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double rtol = 0.0;
  bool passed = false;
};

struct CheckedInput {
  std::string name;
  Var<double> var;
};

/// Compares backward() against central differences (f(x+eps) - f(x-eps)) / (2 eps) for every
/// input. `build` must rebuild the graph from the inputs' current values on each call.
/// Throws NumericError if the loss is ever non-finite.
GradCheckReport grad_check(const std::string& label, const std::function<Var<double>()>& build,
                           std::vector<CheckedInput> inputs, const GradCheckOptions& options = {});

/// The full differentiable surface on random double tensors: elementwise add/sub, channel
/// concat and slice, sum, MSE, conv2d (plain and strided), deconv2d, PReLU, up/down projection
/// units, a dense unit with merge, and a complete two-stage network.
std::vector<GradCheckReport> gradient_suite(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace dbpn
