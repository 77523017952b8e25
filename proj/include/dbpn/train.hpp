#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "dbpn/checkpoint.hpp"
#include "dbpn/dataset.hpp"
#include "dbpn/network.hpp"

namespace dbpn {

/// Mean of squared differences, as a (1,1,1,1) tensor.
template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target);

struct TrainConfig {
  double lr0 = 1e-4;
  double decay_factor = 10.0;
  std::size_t decay_interval = 500000;
  std::size_t iterations = 1000000;
  std::size_t batch = 20;
  std::size_t patch = 32;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint

  /// Throws ConfigError.
  void validate() const;
};

/// lr0 / decay_factor^floor(iter / decay_interval).
double lr_schedule(std::size_t iter, const TrainConfig& cfg);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;

  /// Zero moments shaped like `params`.
  static AdamState zeros(std::span<const NamedParameter<T>> params);
};

/// One bias-corrected Adam update. Weight decay is added to the gradient (coupled L2) for
/// weights only; biases and PReLU slopes are exempt. Throws NumericError, leaving parameters
/// and state untouched, when any gradient is non-finite.
template <typename T>
void adam_step(std::span<NamedParameter<T>> params, AdamState<T>& state, const TrainConfig& cfg, double lr);

struct LogEntry {
  std::size_t iteration = 0;  // completed iterations, 1-based
  double lr = 0.0;
  double loss = 0.0;
};

/// Sample patches -> forward -> MSE -> backward -> Adam. Batches are drawn from a generator
/// seeded by (seed, iteration), so a resumed run sees exactly the batches it would have seen.
class Trainer {
 public:
  Trainer(Network<float>& net, const Dataset& ds, TrainConfig cfg);

  /// Loads parameters, optimizer state and iteration counter. Throws ConfigError on mismatch.
  void restore(const Checkpoint& ckpt);
  Checkpoint checkpoint() const;

  /// Runs one iteration and returns its loss (measured before the update).
  double step();
  std::size_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  Network<float>& net_;
  const Dataset& ds_;
  TrainConfig cfg_;
  std::vector<NamedParameter<float>> params_;
  AdamState<float> adam_;
  std::size_t iteration_ = 0;
};

struct TrainResult {
  Checkpoint final;
  std::vector<LogEntry> log;
};

/// Trains until cfg.iterations. With a checkpoint path, writes it every checkpoint_every
/// iterations and at the end; a NaN loss throws NumericError and leaves the last good file.
/// With a log stream, writes `iter,lr,loss` CSV rows every log_every iterations.
TrainResult train(Network<float>& net, const Dataset& ds, const TrainConfig& cfg,
                  const std::filesystem::path& checkpoint_path = {}, std::ostream* log_csv = nullptr,
                  const Checkpoint* resume = nullptr);

}  // namespace dbpn
