#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dbpn/network.hpp"

namespace dbpn {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

/// Parameters, Adam moments and progress of a float network.
///
/// File layout (little endian): "DBPN", u16 version, u32 entry count, then per entry
/// u16 name length, name bytes, u8 ndim, u32 dims[ndim], f32 payload. Metadata travels as
/// entries too: "meta/config" [scale, stages, n0, nr, dense, color, recon_kernel] and
/// "meta/iteration", "meta/adam_step" as [high, low] 24-bit halves.
struct Checkpoint {
  NetworkConfig config;
  std::uint64_t iteration = 0;
  std::uint64_t adam_step = 0;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> adam_m;  // empty when no optimizer state was saved
  std::vector<NamedTensor> adam_v;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError naming the byte offset of the problem.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of the network's parameters (no optimizer state).
Checkpoint capture_parameters(Network<float>& net);
/// Copies parameters into `net`. Throws ConfigError if the configuration or any shape differs.
void restore_parameters(Network<float>& net, const Checkpoint& ckpt);
Network<float> network_from_checkpoint(const Checkpoint& ckpt);

NamedTensor to_named(const std::string& name, const Tensor<float>& t);

}  // namespace dbpn
