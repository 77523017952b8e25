#include "dbpn/train.hpp"

#include <cmath>
#include <ostream>

#include "dbpn/errors.hpp"
#include "dbpn/ops.hpp"

namespace dbpn {

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "mse_loss");
  const std::size_t count = pred.value().size();
  if (count == 0) throw ContractError("mse_loss: empty tensors");
  auto p = pred.value().data();
  auto t = target.value().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    acc += d * d;
  }
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(acc / static_cast<double>(count)));
  return record<T>(std::move(out), {pred, target}, [count](Node<T>& self) {
    const T scale = T(2) * self.grad[0] / static_cast<T>(count);
    auto p = self.inputs[0]->value.data();
    auto t = self.inputs[1]->value.data();
    for (int k = 0; k < 2; ++k) {
      if (!self.inputs[k]->requires_grad) continue;
      const T sign = k == 0 ? T(1) : T(-1);
      auto g = self.inputs[k]->grad_buffer().data();
      for (std::size_t i = 0; i < count; ++i) g[i] += sign * scale * (p[i] - t[i]);
    }
  });
}

template Var<float> mse_loss<float>(const Var<float>&, const Var<float>&);
template Var<double> mse_loss<double>(const Var<double>&, const Var<double>&);

void TrainConfig::validate() const {
  if (!(lr0 > 0) || !(decay_factor > 0) || decay_interval == 0 || batch == 0 || patch == 0 || log_every == 0) {
    throw ConfigError("training: learning rate, decay, batch, patch and log cadence must be positive");
  }
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("training: betas must lie in (0, 1)");
  if (!(epsilon > 0) || weight_decay < 0) throw ConfigError("training: epsilon must be positive, weight decay >= 0");
}

double lr_schedule(std::size_t iter, const TrainConfig& cfg) {
  const auto decays = static_cast<double>(iter / cfg.decay_interval);
  return cfg.lr0 / std::pow(cfg.decay_factor, decays);
}

template <typename T>
AdamState<T> AdamState<T>::zeros(std::span<const NamedParameter<T>> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.var.shape());
    s.v.emplace_back(p.var.shape());
  }
  return s;
}

template <typename T>
void adam_step(std::span<NamedParameter<T>> params, AdamState<T>& state, const TrainConfig& cfg, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state does not match parameter list");
  }
  for (const auto& p : params) {
    if (p.var.has_grad() && !p.var.grad().all_finite()) {
      throw NumericError("adam_step: non-finite gradient in " + p.name + "; step rejected");
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (!p.var.has_grad()) p.var.mutable_grad();
    auto theta = p.var.mutable_value().data();
    auto g = p.var.grad().data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    const double decay = p.kind == ParamKind::weight ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double grad = static_cast<double>(g[i]) + decay * static_cast<double>(theta[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * grad;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * grad * grad;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / correction1;
      const double vhat = vi / correction2;
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::span<NamedParameter<float>>, AdamState<float>&, const TrainConfig&, double);
template void adam_step<double>(std::span<NamedParameter<double>>, AdamState<double>&, const TrainConfig&, double);

Trainer::Trainer(Network<float>& net, const Dataset& ds, TrainConfig cfg)
    : net_(net), ds_(ds), cfg_(cfg), params_(net.parameters()) {
  cfg_.validate();
  if (ds_.empty()) throw ContractError("train: empty dataset");
  if (ds_.scale() != net_.config().scale) {
    throw ConfigError("train: dataset scale " + std::to_string(ds_.scale()) + " does not match network scale " +
                      std::to_string(net_.config().scale));
  }
  adam_ = AdamState<float>::zeros(params_);
}

void Trainer::restore(const Checkpoint& ckpt) {
  restore_parameters(net_, ckpt);
  if (ckpt.adam_m.size() != params_.size() || ckpt.adam_v.size() != params_.size()) {
    throw ConfigError("checkpoint carries no optimizer state for this network");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (ckpt.adam_m[k].values.size() != adam_.m[k].size() || ckpt.adam_v[k].values.size() != adam_.v[k].size()) {
      throw ConfigError("optimizer state for " + params_[k].name + " has the wrong size");
    }
    std::copy(ckpt.adam_m[k].values.begin(), ckpt.adam_m[k].values.end(), adam_.m[k].data().begin());
    std::copy(ckpt.adam_v[k].values.begin(), ckpt.adam_v[k].values.end(), adam_.v[k].data().begin());
  }
  adam_.step = ckpt.adam_step;
  iteration_ = static_cast<std::size_t>(ckpt.iteration);
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt = capture_parameters(net_);
  ckpt.iteration = iteration_;
  ckpt.adam_step = adam_.step;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ckpt.adam_m.push_back(to_named(params_[k].name, adam_.m[k]));
    ckpt.adam_v.push_back(to_named(params_[k].name, adam_.v[k]));
  }
  return ckpt;
}

double Trainer::step() {
  Pcg32 rng(mix_seed(cfg_.seed, iteration_));
  PatchBatch batch = sample_patches(ds_, cfg_.batch, cfg_.patch, net_.config().color, rng);
  net_.zero_grad();
  Var<float> pred = net_.forward(Var<float>::constant(std::move(batch.lr)));
  Var<float> loss = mse_loss(pred, Var<float>::constant(std::move(batch.hr)));
  const double value = loss.value()[0];
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss at iteration " + std::to_string(iteration_ + 1));
  }
  backward(loss);
  adam_step<float>(params_, adam_, cfg_, lr_schedule(iteration_, cfg_));
  ++iteration_;
  return value;
}

TrainResult train(Network<float>& net, const Dataset& ds, const TrainConfig& cfg,
                  const std::filesystem::path& checkpoint_path, std::ostream* log_csv, const Checkpoint* resume) {
  Trainer trainer(net, ds, cfg);
  if (resume != nullptr) trainer.restore(*resume);
  TrainResult result;
  if (log_csv != nullptr && trainer.iteration() == 0) *log_csv << "iter,lr,loss\n";
  while (trainer.iteration() < cfg.iterations) {
    const double lr = lr_schedule(trainer.iteration(), cfg);
    const double loss = trainer.step();
    const std::size_t it = trainer.iteration();
    if (it % cfg.log_every == 0 || it == cfg.iterations) {
      result.log.push_back({it, lr, loss});
      if (log_csv != nullptr) *log_csv << it << ',' << lr << ',' << loss << '\n' << std::flush;
    }
    if (!checkpoint_path.empty() && cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it != cfg.iterations) {
      save_checkpoint(trainer.checkpoint(), checkpoint_path);
    }
  }
  result.final = trainer.checkpoint();
  if (!checkpoint_path.empty()) save_checkpoint(result.final, checkpoint_path);
  return result;
}

}  // namespace dbpn
