#include "dbpn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dbpn/errors.hpp"

namespace dbpn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'B', 'P', 'N'};
constexpr std::uint64_t kHalf = 1u << 24;

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    U v;
    read(&v, sizeof(U), what);
    return v;
  }
  void read(void* dst, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at offset " + std::to_string(pos_) + " while reading " + what + " (" +
                        std::to_string(n) + " bytes needed, " + std::to_string(bytes_.size() - pos_) + " left)");
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

NamedTensor split_counter(const std::string& name, std::uint64_t v) {
  return {name, {2}, {static_cast<float>(v / kHalf), static_cast<float>(v % kHalf)}};
}

std::uint64_t join_counter(const NamedTensor& t) {
  if (t.values.size() != 2) throw FormatError("checkpoint entry " + t.name + " must hold 2 values");
  return static_cast<std::uint64_t>(t.values[0]) * kHalf + static_cast<std::uint64_t>(t.values[1]);
}

NamedTensor config_entry(const NetworkConfig& c) {
  return {"meta/config",
          {7},
          {static_cast<float>(c.scale), static_cast<float>(c.stages), static_cast<float>(c.n0),
           static_cast<float>(c.nr), c.dense ? 1.0f : 0.0f, c.color == ColorMode::rgb ? 1.0f : 0.0f,
           static_cast<float>(c.recon_kernel)}};
}

NetworkConfig config_from(const NamedTensor& t) {
  if (t.values.size() != 7) throw FormatError("checkpoint entry meta/config must hold 7 values");
  NetworkConfig c;
  c.scale = static_cast<int>(t.values[0]);
  c.stages = static_cast<int>(t.values[1]);
  c.n0 = static_cast<std::size_t>(t.values[2]);
  c.nr = static_cast<std::size_t>(t.values[3]);
  c.dense = t.values[4] != 0.0f;
  c.color = t.values[5] != 0.0f ? ColorMode::rgb : ColorMode::y;
  c.recon_kernel = static_cast<std::size_t>(t.values[6]);
  return c;
}

}  // namespace

NamedTensor to_named(const std::string& name, const Tensor<float>& t) {
  const Shape s = t.shape();
  return {name,
          {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
           static_cast<std::uint32_t>(s.w)},
          std::vector<float>(t.data().begin(), t.data().end())};
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<NamedTensor> entries;
  entries.push_back(config_entry(ckpt.config));
  entries.push_back(split_counter("meta/iteration", ckpt.iteration));
  entries.push_back(split_counter("meta/adam_step", ckpt.adam_step));
  for (const auto& p : ckpt.params) entries.push_back({"param/" + p.name, p.dims, p.values});
  for (const auto& p : ckpt.adam_m) entries.push_back({"adam_m/" + p.name, p.dims, p.values});
  for (const auto& p : ckpt.adam_v) entries.push_back({"adam_v/" + p.name, p.dims, p.values});

  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.put_bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) w.put<std::uint32_t>(d);
    w.put_bytes(e.values.data(), e.values.size() * sizeof(float));
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic bytes at offset 0");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at offset 4 (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>("entry count");

  Checkpoint ckpt;
  bool have_config = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.offset();
    NamedTensor e;
    e.name.resize(r.get<std::uint16_t>("name length"));
    r.read(e.name.data(), e.name.size(), "name");
    e.dims.resize(r.get<std::uint8_t>("rank"));
    std::uint64_t numel = 1;
    for (auto& d : e.dims) {
      d = r.get<std::uint32_t>("dimension");
      numel *= d;
    }
    if (numel > (std::uint64_t{1} << 32)) {
      throw FormatError("entry '" + e.name + "' at offset " + std::to_string(start) + " is implausibly large");
    }
    e.values.resize(numel);
    r.read(e.values.data(), numel * sizeof(float), "payload");

    auto strip = [&e](std::string_view prefix) { return e.name.substr(prefix.size()); };
    if (e.name == "meta/config") {
      ckpt.config = config_from(e);
      have_config = true;
    } else if (e.name == "meta/iteration") {
      ckpt.iteration = join_counter(e);
    } else if (e.name == "meta/adam_step") {
      ckpt.adam_step = join_counter(e);
    } else if (e.name.starts_with("param/")) {
      e.name = strip("param/");
      ckpt.params.push_back(std::move(e));
    } else if (e.name.starts_with("adam_m/")) {
      e.name = strip("adam_m/");
      ckpt.adam_m.push_back(std::move(e));
    } else if (e.name.starts_with("adam_v/")) {
      e.name = strip("adam_v/");
      ckpt.adam_v.push_back(std::move(e));
    } else {
      throw FormatError("unknown checkpoint entry '" + e.name + "' at offset " + std::to_string(start));
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after offset " + std::to_string(r.offset()));
  if (!have_config) throw FormatError("checkpoint lacks meta/config");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  // Write-then-rename so an interrupted save never clobbers the previous good file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint capture_parameters(Network<float>& net) {
  Checkpoint ckpt;
  ckpt.config = net.config();
  for (auto& p : net.parameters()) ckpt.params.push_back(to_named(p.name, p.var.value()));
  return ckpt;
}

void restore_parameters(Network<float>& net, const Checkpoint& ckpt) {
  if (!(ckpt.config == net.config())) {
    throw ConfigError("checkpoint configuration does not match the network (scale " + std::to_string(ckpt.config.scale) +
                      ", " + std::to_string(ckpt.config.stages) + " stages vs scale " +
                      std::to_string(net.config().scale) + ", " + std::to_string(net.config().stages) + " stages)");
  }
  auto params = net.parameters();
  if (params.size() != ckpt.params.size()) throw ConfigError("checkpoint parameter count does not match the network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& src = ckpt.params[i];
    auto& dst = params[i].var.mutable_value();
    if (src.name != params[i].name || to_named(src.name, dst).dims != src.dims) {
      throw ConfigError("checkpoint entry '" + src.name + "' does not match network parameter '" + params[i].name + "'");
    }
    std::copy(src.values.begin(), src.values.end(), dst.data().begin());
  }
}

Network<float> network_from_checkpoint(const Checkpoint& ckpt) {
  Network<float> net(ckpt.config);
  restore_parameters(net, ckpt);
  return net;
}

}  // namespace dbpn
