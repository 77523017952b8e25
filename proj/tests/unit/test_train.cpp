#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dbpn/train.hpp"

using namespace dbpn;
namespace fs = std::filesystem;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.scale = 2;
  c.stages = 2;
  c.n0 = 8;
  c.nr = 4;
  return c;
}

TrainConfig tiny_train(std::size_t iterations) {
  TrainConfig t;
  t.lr0 = 1e-3;
  t.decay_interval = 6;
  t.iterations = iterations;
  t.batch = 3;
  t.patch = 8;
  t.seed = 17;
  t.log_every = 2;
  return t;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dbpn_train_test";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<NamedParameter<double>> params{
      {"theta", Var<double>::parameter(Tensor<double>({1, 1, 1, 1}, 1.0)), ParamKind::bias}};
  params[0].var.mutable_grad()[0] = 0.5;
  auto state = AdamState<double>::zeros(params);
  TrainConfig cfg;
  adam_step<double>(params, state, cfg, 1e-4);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(params[0].var.value()[0], 1.0 - 1e-4 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ZeroGradientNoDecayIsIdentity) {
  Pcg32 rng(1);
  auto net = build_network<double>(tiny_config(), rng);
  auto params = net.parameters();
  std::vector<Tensor<double>> before;
  for (auto& p : params) {
    p.var.mutable_grad().fill(0.0);
    before.push_back(p.var.value());
  }
  auto state = AdamState<double>::zeros(params);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  for (int i = 0; i < 3; ++i) adam_step<double>(params, state, cfg, 1e-2);
  for (std::size_t k = 0; k < params.size(); ++k) EXPECT_EQ(params[k].var.value(), before[k]) << params[k].name;
}

TEST(Adam, WeightDecayOnlyOnWeights) {
  std::vector<NamedParameter<double>> params{
      {"w", Var<double>::parameter(Tensor<double>({1, 1, 1, 1}, 2.0)), ParamKind::weight},
      {"b", Var<double>::parameter(Tensor<double>({1, 1, 1, 1}, 2.0)), ParamKind::bias},
      {"a", Var<double>::parameter(Tensor<double>({1, 1, 1, 1}, 2.0)), ParamKind::slope}};
  for (auto& p : params) p.var.mutable_grad().fill(0.0);
  auto state = AdamState<double>::zeros(params);
  TrainConfig cfg;
  adam_step<double>(params, state, cfg, 1e-3);
  EXPECT_LT(params[0].var.value()[0], 2.0);
  EXPECT_EQ(params[1].var.value()[0], 2.0);
  EXPECT_EQ(params[2].var.value()[0], 2.0);
}

TEST(Adam, NonFiniteGradientRejectedWithoutMutation) {
  std::vector<NamedParameter<double>> params{
      {"ok", Var<double>::parameter(Tensor<double>({1, 1, 1, 2}, 1.0)), ParamKind::weight},
      {"bad", Var<double>::parameter(Tensor<double>({1, 1, 1, 1}, 1.0)), ParamKind::weight}};
  params[0].var.mutable_grad().fill(0.3);
  params[1].var.mutable_grad()[0] = std::nan("");
  auto state = AdamState<double>::zeros(params);
  TrainConfig cfg;
  EXPECT_THROW(adam_step<double>(params, state, cfg, 1e-3), NumericError);
  EXPECT_EQ(params[0].var.value()[0], 1.0);
  EXPECT_EQ(state.step, 0u);
  EXPECT_EQ(state.m[0][0], 0.0);
}

TEST(LrSchedule, Anchors) {
  TrainConfig cfg;
  EXPECT_EQ(lr_schedule(0, cfg), 1e-4);
  EXPECT_NEAR(lr_schedule(cfg.decay_interval, cfg), 1e-5, 1e-20);
  std::size_t boundaries = 0;
  for (std::size_t it = 1; it < cfg.iterations; ++it) {
    if (lr_schedule(it, cfg) != lr_schedule(it - 1, cfg)) ++boundaries;
  }
  EXPECT_EQ(boundaries, 1u);
}

TEST(LrSchedule, ExhaustiveThreeIntervals) {
  TrainConfig cfg;
  cfg.lr0 = 3e-3;
  cfg.decay_interval = 1000;
  double previous = cfg.lr0;
  for (std::size_t it = 0; it < 3 * cfg.decay_interval; ++it) {
    const double lr = lr_schedule(it, cfg);
    EXPECT_DOUBLE_EQ(lr, cfg.lr0 * std::pow(10.0, -static_cast<double>(it / cfg.decay_interval)));
    EXPECT_LE(lr, previous);
    previous = lr;
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  cfg.beta1 = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr0 = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  Pcg32 rng(2);
  auto net = build_network<float>(tiny_config(), rng);
  const Dataset ds = synth_dataset(1, 2, 32, 2);
  Trainer tr(net, ds, tiny_train(3));
  for (int i = 0; i < 3; ++i) tr.step();
  const Checkpoint ckpt = tr.checkpoint();
  const fs::path p = scratch("rt.ckpt");
  save_checkpoint(ckpt, p);
  const Checkpoint back = load_checkpoint(p);
  EXPECT_EQ(back, ckpt);
  EXPECT_EQ(back.iteration, 3u);
  EXPECT_EQ(back.adam_step, 3u);
  EXPECT_FALSE(fs::exists(p.string() + ".tmp"));

  auto other = network_from_checkpoint(back);
  auto a = net.parameters();
  auto b = other.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].var.value(), b[i].var.value());
}

TEST(Checkpoint, LargeCountersSurvive) {
  Checkpoint c;
  c.config = tiny_config();
  c.iteration = 123456789012ULL;
  c.adam_step = (1ULL << 40) + 5;
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  EXPECT_EQ(back.iteration, c.iteration);
  EXPECT_EQ(back.adam_step, c.adam_step);
}

TEST(Checkpoint, Layout) {
  Checkpoint c;
  c.config = tiny_config();
  c.params.push_back({"x", {1, 1, 1, 2}, {1.5f, -2.0f}});
  const auto bytes = encode_checkpoint(c);
  ASSERT_GE(bytes.size(), 10u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DBPN");
  EXPECT_EQ(bytes[4] | (bytes[5] << 8), 1);
  EXPECT_EQ(bytes[6], 4);  // config, iteration, adam_step, one parameter
  // The last entry's payload is the two floats, little endian.
  float tail[2];
  std::memcpy(tail, bytes.data() + bytes.size() - 8, 8);
  EXPECT_EQ(tail[0], 1.5f);
  EXPECT_EQ(tail[1], -2.0f);
}

TEST(Checkpoint, CorruptionIsFormatError) {
  Checkpoint c;
  c.config = tiny_config();
  c.params.push_back({"x", {1, 1, 1, 2}, {1.5f, -2.0f}});
  auto bytes = encode_checkpoint(c);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);

  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), FormatError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  try {
    decode_checkpoint(truncated);
    FAIL() << "truncation accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), FormatError);
}

TEST(Checkpoint, PresetMismatchIsConfigError) {
  Network<float> s(NetworkConfig::preset(Preset::s, 2));
  Network<float> l(NetworkConfig::preset(Preset::l, 2));
  EXPECT_THROW(restore_parameters(l, capture_parameters(s)), ConfigError);
  Checkpoint tampered = capture_parameters(s);
  tampered.params[0].dims[1] = 7;
  EXPECT_THROW(restore_parameters(s, tampered), ConfigError);
}

TEST(Checkpoint, MissingFileIsIoError) { EXPECT_THROW(load_checkpoint(scratch("nope.ckpt")), IoError); }

TEST(Training, IdenticalRunsAreBitwiseEqual) {
  const Dataset ds = synth_dataset(3, 3, 32, 2);
  auto run = [&](const fs::path& out) {
    Pcg32 rng(5);
    auto net = build_network<float>(tiny_config(), rng);
    std::ostringstream log;
    train(net, ds, tiny_train(100), out, &log);
    return log.str();
  };
  const auto log_a = run(scratch("a.ckpt"));
  const auto log_b = run(scratch("b.ckpt"));
  EXPECT_EQ(log_a, log_b);
  EXPECT_EQ(file_bytes(scratch("a.ckpt")), file_bytes(scratch("b.ckpt")));
  EXPECT_EQ(log_a.substr(0, 13), "iter,lr,loss\n");
}

TEST(Training, ResumeEqualsUninterrupted) {
  const Dataset ds = synth_dataset(4, 3, 32, 2);
  Pcg32 r1(6);
  auto full = build_network<float>(tiny_config(), r1);
  const TrainResult straight = train(full, ds, tiny_train(12));

  Pcg32 r2(6);
  auto first = build_network<float>(tiny_config(), r2);
  const fs::path p = scratch("half.ckpt");
  train(first, ds, tiny_train(5), p);
  const Checkpoint half = load_checkpoint(p);
  auto second = network_from_checkpoint(half);
  const TrainResult resumed = train(second, ds, tiny_train(12), {}, nullptr, &half);
  EXPECT_EQ(resumed.final, straight.final);
}

TEST(Training, LossLogCadence) {
  const Dataset ds = synth_dataset(4, 2, 32, 2);
  Pcg32 rng(7);
  auto net = build_network<float>(tiny_config(), rng);
  TrainConfig cfg = tiny_train(7);
  cfg.log_every = 3;
  std::ostringstream csv;
  const TrainResult r = train(net, ds, cfg, {}, &csv);
  ASSERT_EQ(r.log.size(), 3u);
  EXPECT_EQ(r.log[0].iteration, 3u);
  EXPECT_EQ(r.log[2].iteration, 7u);
  EXPECT_DOUBLE_EQ(r.log[2].lr, 1e-4);  // iteration index 6 is past one decay interval
}

TEST(Training, NanAbortKeepsLastGoodCheckpoint) {
  const Dataset ds = synth_dataset(5, 2, 32, 2);
  Pcg32 rng(8);
  auto net = build_network<float>(tiny_config(), rng);
  TrainConfig cfg = tiny_train(50);
  cfg.lr0 = 1e30;
  cfg.decay_interval = 1000;
  cfg.checkpoint_every = 1;
  const fs::path p = scratch("nan.ckpt");
  fs::remove(p);
  EXPECT_THROW(train(net, ds, cfg, p), NumericError);
  ASSERT_TRUE(fs::exists(p));
  const Checkpoint last = load_checkpoint(p);
  EXPECT_GE(last.iteration, 1u);
  EXPECT_LT(last.iteration, 50u);
  for (const auto& t : last.params)
    for (float v : t.values) ASSERT_TRUE(std::isfinite(v));
}

TEST(Training, ScaleMismatchIsConfigError) {
  const Dataset ds = synth_dataset(5, 2, 32, 4);
  Pcg32 rng(9);
  auto net = build_network<float>(tiny_config(), rng);
  EXPECT_THROW(Trainer(net, ds, tiny_train(1)), ConfigError);
}
