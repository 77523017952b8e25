#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "dbpn/grad_check.hpp"
#include "dbpn/metrics.hpp"
#include "dbpn/train.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace dbpn;
using dbpn::cli::RunConfig;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfig = 2, kData = 3, kNumeric = 4 };

/// Options of one subcommand: each flag `--some-name` maps to the config key `some_name`.
struct Command {
  CLI::App* app = nullptr;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::vector<std::string> switches;
  std::string config_path;

  void option(const std::string& key, const std::string& help) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    options[key] = app->add_option(flag, values[key], help);
  }
  void flag(const std::string& key, const std::string& help) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    options[key] = app->add_flag(flag, help);
    switches.push_back(key);
  }

  RunConfig resolve() const {
    std::set<std::string> keys;
    for (const auto& [k, _] : options) keys.insert(k);
    RunConfig cfg(keys);
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& [k, opt] : options) {
      if (opt->count() == 0) continue;
      const bool is_switch = std::find(switches.begin(), switches.end(), k) != switches.end();
      cfg.set(k, is_switch ? "true" : values.at(k));
    }
    return cfg;
  }
};

bool truthy(const RunConfig& cfg, const std::string& key) {
  const std::string v = cfg.get_or(key, "false");
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::size_t positive(const RunConfig& cfg, const std::string& key, long long fallback) {
  const long long v = cfg.get_int(key, fallback);
  if (v < 1) throw ConfigError("'" + key + "' must be >= 1");
  return static_cast<std::size_t>(v);
}

int scale_setting(const RunConfig& cfg) {
  const long long s = cfg.get_int("scale", 0);
  ScaleConfig::for_scale(static_cast<int>(s));
  return static_cast<int>(s);
}

NetworkConfig network_config(const RunConfig& cfg) {
  NetworkConfig c = NetworkConfig::preset(parse_preset(cfg.require("preset")), static_cast<int>(cfg.get_int("scale", 0)));
  if (cfg.has("dense")) c.dense = truthy(cfg, "dense");
  c.validate();
  return c;
}

/// `synth` or a directory of PNGs (optionally with an HR/ subfolder).
Dataset dataset(const RunConfig& cfg, int scale, std::size_t min_lr) {
  const std::string data = cfg.require("data");
  if (data == "synth") {
    std::size_t size = positive(cfg, "synth_size", 64);
    if (!cfg.has("synth_size")) {
      size = std::max<std::size_t>(size, static_cast<std::size_t>(scale) * min_lr);
      size = (size + 7) / 8 * 8;
    }
    return synth_dataset(static_cast<std::uint64_t>(cfg.get_int("synth_seed", 1)), positive(cfg, "synth_count", 8), size,
                         scale);
  }
  return load_dataset(data, scale);
}

void add_synth_options(Command& c) {
  c.option("synth_seed", "Generator seed when --data synth (default 1)");
  c.option("synth_count", "Number of synthetic images (default 8)");
  c.option("synth_size", "Synthetic HR size in pixels, a multiple of 8");
}

// train ------------------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg) {
  TrainConfig tc;
  tc.iterations = positive(cfg, "iters", static_cast<long long>(tc.iterations));
  tc.lr0 = cfg.get_double("lr", tc.lr0);
  tc.decay_interval = positive(cfg, "decay_interval", static_cast<long long>(tc.decay_interval));
  tc.batch = positive(cfg, "batch", static_cast<long long>(tc.batch));
  tc.patch = positive(cfg, "patch", static_cast<long long>(tc.patch));
  tc.weight_decay = cfg.get_double("weight_decay", tc.weight_decay);
  tc.log_every = positive(cfg, "log_every", static_cast<long long>(tc.log_every));
  tc.checkpoint_every = static_cast<std::size_t>(std::max(0LL, cfg.get_int("checkpoint_every", 0)));
  tc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  tc.validate();

  std::optional<Checkpoint> resume;
  NetworkConfig nc;
  if (cfg.has("resume")) {
    resume = load_checkpoint(cfg.require("resume"));
    nc = resume->config;
    if (cfg.has("preset") || cfg.has("scale")) {
      const NetworkConfig asked = network_config(cfg);
      if (!(asked == nc)) throw ConfigError("--resume checkpoint does not match --preset/--scale");
    }
  } else {
    nc = network_config(cfg);
  }
  const Dataset ds = dataset(cfg, nc.scale, tc.patch);
  Pcg32 init(tc.seed, 0x1417ULL);
  Network<float> net = resume ? network_from_checkpoint(*resume) : build_network<float>(nc, init);

  const fs::path out = cfg.get_or("out", "dbpn.ckpt");
  fs::path log_path = cfg.get_or("log", "");
  if (log_path.empty()) log_path = fs::path(out).replace_extension(".csv");
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write " + log_path.string());

  std::fprintf(stderr, "training T=%d n0=%zu nr=%zu%s x%d (%zu parameters) on %zu images for %zu iterations\n",
               nc.stages, nc.n0, nc.nr, nc.dense ? " dense" : "", nc.scale, net.param_count(), ds.size(),
               tc.iterations);
  const TrainResult r = train(net, ds, tc, out, &log, resume ? &*resume : nullptr);
  const double last = r.log.empty() ? 0.0 : r.log.back().loss;
  std::printf("iterations %llu\nfinal_loss %.6g\ncheckpoint %s\nlog %s\n",
              static_cast<unsigned long long>(r.final.iteration), last, out.c_str(), log_path.c_str());
  return kOk;
}

// sr ---------------------------------------------------------------------------------------

int cmd_sr(const RunConfig& cfg) {
  const Checkpoint ckpt = load_checkpoint(cfg.require("model"));
  const Network<float> net = network_from_checkpoint(ckpt);
  const NetworkConfig& nc = net.config();
  if (cfg.has("scale") && cfg.get_int("scale", 0) != nc.scale) {
    throw ConfigError("--scale " + cfg.require("scale") + " does not match the model's x" + std::to_string(nc.scale));
  }
  const ImageBuffer lr = load_png(cfg.require("input"));
  const auto s = static_cast<std::size_t>(nc.scale);

  const NoGradGuard no_grad;
  const Network<float>::Output run = net.run(Var<float>::constant(image_tensor(lr, nc.color)));
  const Tensor<float>& t = run.image.value();
  RealImage sr(t.shape().w, t.shape().h, t.shape().c, nc.color == ColorMode::y ? ColorSpace::y : ColorSpace::rgb);
  for (std::size_t c = 0; c < sr.channels; ++c)
    for (std::size_t y = 0; y < sr.height; ++y)
      for (std::size_t x = 0; x < sr.width; ++x) sr.at(x, y, c) = 255.0 * t.at(0, c, y, x);

  ImageBuffer out;
  if (nc.color == ColorMode::y && lr.channels == 3) {
    // Luma from the network, chroma upscaled bicubically.
    RealImage ycc = bicubic_resize(rgb_to_ycbcr(to_real(lr)), lr.width * s, lr.height * s, false);
    for (std::size_t y = 0; y < ycc.height; ++y)
      for (std::size_t x = 0; x < ycc.width; ++x) ycc.at(x, y, 0) = sr.at(x, y, 0);
    out = quantize(ycbcr_to_rgb(ycc));
  } else {
    out = quantize(sr);
  }
  save_png(out, cfg.require("output"));
  std::printf("%s %zux%zu -> %zux%zu\n", cfg.require("output").c_str(), lr.width, lr.height, out.width, out.height);

  if (cfg.has("dump_features")) {
    const auto files = dump_feature_maps<float>(run.features, cfg.require("dump_features"));
    for (const auto& f : files) std::printf("%s\n", f.c_str());
  }
  return kOk;
}

// eval -------------------------------------------------------------------------------------

int cmd_eval(const RunConfig& cfg) {
  const bool baseline = cfg.has("baseline") && truthy(cfg, "baseline");
  if (!cfg.has("model") && !baseline) throw ConfigError("eval needs --model, --baseline, or both");
  std::optional<Network<float>> net;
  int scale = 0;
  if (cfg.has("model")) {
    net.emplace(network_from_checkpoint(load_checkpoint(cfg.require("model"))));
    scale = net->config().scale;
    if (cfg.has("scale") && cfg.get_int("scale", 0) != scale) {
      throw ConfigError("--scale " + cfg.require("scale") + " does not match the model's x" + std::to_string(scale));
    }
  } else {
    scale = scale_setting(cfg);
  }
  const Dataset ds = dataset(cfg, scale, 1);
  std::string csv;
  if (net) csv += evaluate(*net, ds).to_csv();
  if (baseline) csv += bicubic_baseline(ds).to_csv();
  if (cfg.has("out")) {
    std::ofstream f(cfg.require("out"));
    if (!(f << csv)) throw IoError("cannot write " + cfg.require("out"));
  } else {
    std::fputs(csv.c_str(), stdout);
  }
  return kOk;
}

// gradcheck --------------------------------------------------------------------------------

int cmd_gradcheck(const RunConfig& cfg) {
  const auto first = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
  const std::size_t seeds = positive(cfg, "seeds", 1);
  std::size_t failed = 0;
  double worst = 0.0;
  for (std::uint64_t seed = first; seed < first + seeds; ++seed) {
    for (const auto& r : gradient_suite(seed)) {
      std::printf("seed %llu  %-20s max_rel_error %.3e  %s\n", static_cast<unsigned long long>(seed), r.label.c_str(),
                  r.max_rel_error, r.passed ? "ok" : "FAIL");
      worst = std::max(worst, r.max_rel_error);
      failed += r.passed ? 0 : 1;
    }
  }
  std::printf("max_rel_error %.3e (rtol 1e-4), %zu failed\n", worst, failed);
  return failed == 0 ? kOk : kCheckFailed;
}

// params -----------------------------------------------------------------------------------

int cmd_params(const RunConfig& cfg) {
  const Network<float> net(network_config(cfg));
  std::printf("%-24s %-6s %5s %5s %3s %3s %3s %10s\n", "layer", "kind", "in", "out", "k", "s", "p", "params");
  for (const auto& l : net.layers()) {
    const ConvGeometry& g = l.spec.geometry;
    std::printf("%-24s %-6s %5zu %5zu %3zu %3zu %3zu %10zu\n", l.name.c_str(), l.spec.transposed ? "deconv" : "conv",
                l.spec.in_channels, l.spec.out_channels, g.kernel, g.stride, g.padding, l.spec.param_count());
  }
  std::printf("layers %zu\nunits %zu\nmerges %zu\ntotal %zu\n", net.conv_layer_count(), net.unit_count(),
              net.merge_count(), net.param_count());
  return kOk;
}

// synth ------------------------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg) {
  const fs::path out = cfg.require("out");
  fs::create_directories(out);
  for (const auto& img : synth_images(static_cast<std::uint64_t>(cfg.get_int("seed", 1)), positive(cfg, "count", 8),
                                      positive(cfg, "size", 64))) {
    const fs::path p = out / (img.name + ".png");
    save_png(img.image, p);
    std::printf("%s 0x%016llx\n", p.c_str(), static_cast<unsigned long long>(checksum(img.image)));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep back-projection super-resolution: train, upscale, evaluate"};
  app.require_subcommand(1);

  std::map<std::string, Command> commands;
  auto make = [&](const std::string& name, const std::string& help) -> Command& {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, help);
    c.app->add_option("--config", c.config_path, "key = value settings file; flags override it");
    return c;
  };

  Command& train = make("train", "Train a network and write a checkpoint plus CSV loss log");
  train.option("preset", "SS, S, M, L or DDBPN");
  train.option("scale", "2, 4 or 8");
  train.option("dense", "Override dense connections (true/false)");
  train.option("data", "'synth' or a directory of HR PNGs");
  train.option("out", "Checkpoint path (default dbpn.ckpt)");
  train.option("log", "Loss log path (default: checkpoint path with .csv)");
  train.option("seed", "Seed for initialization and batch sampling (default 0)");
  train.option("iters", "Iterations (default 1000000)");
  train.option("lr", "Initial learning rate (default 1e-4)");
  train.option("decay_interval", "Divide the learning rate by 10 every this many iterations (default 500000)");
  train.option("batch", "Batch size (default 20)");
  train.option("patch", "LR patch size (default 32)");
  train.option("weight_decay", "L2 weight decay on weights (default 1e-4)");
  train.option("log_every", "Log interval in iterations (default 100)");
  train.option("checkpoint_every", "Checkpoint interval; 0 writes only the final one");
  train.option("resume", "Continue from this checkpoint");
  add_synth_options(train);

  Command& sr = make("sr", "Super-resolve one PNG");
  sr.option("model", "Checkpoint");
  sr.option("input", "LR PNG");
  sr.option("output", "SR PNG");
  sr.option("scale", "Optional check against the model's scale");
  sr.option("dump_features", "Directory for per-stage feature grids");

  Command& eval = make("eval", "Score a model and/or bicubic upscaling (Y-PSNR, SSIM) as CSV");
  eval.option("model", "Checkpoint");
  eval.flag("baseline", "Also/only score bicubic upscaling");
  eval.option("data", "'synth' or a directory of HR PNGs");
  eval.option("scale", "Required without --model");
  eval.option("out", "Write the CSV here instead of standard output");
  add_synth_options(eval);

  Command& gradcheck = make("gradcheck", "Finite-difference check of every differentiable op");
  gradcheck.option("seed", "First seed (default 1)");
  gradcheck.option("seeds", "Number of seeds (default 1)");

  Command& params = make("params", "Per-layer parameter table and total");
  params.option("preset", "SS, S, M, L or DDBPN");
  params.option("scale", "2, 4 or 8");
  params.option("dense", "Override dense connections (true/false)");

  Command& synth = make("synth", "Write deterministic synthetic PNGs");
  synth.option("seed", "Seed (default 1)");
  synth.option("count", "Number of images (default 8)");
  synth.option("size", "Size in pixels, a multiple of 8 (default 64)");
  synth.option("out", "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  using Handler = int (*)(const RunConfig&);
  const std::map<std::string, Handler> handlers = {{"train", cmd_train}, {"sr", cmd_sr},
                                                   {"eval", cmd_eval},   {"gradcheck", cmd_gradcheck},
                                                   {"params", cmd_params}, {"synth", cmd_synth}};
  const std::string name = app.get_subcommands().front()->get_name();
  const Command& cmd = commands.at(name);
  try {
    return handlers.at(name)(cmd.resolve());
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n\n%s", e.what(), cmd.app->help().c_str());
    return kConfig;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kData;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kData;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  }
}
