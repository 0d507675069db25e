#pragma once

// Checkpoint container, little-endian:
//   bytes 0..7   magic "GNMAPCKP"
//   bytes 8..11  uint32 format version
//   bytes 12..19 uint64 header length H
//   H bytes      JSON header: {"version", "model", "phase", "step", "seed",
//                "meta", "params": [{"name", "shape", "offset", "count"}]}
//   payload      float64 parameter blobs; offsets are in elements from the
//                start of the payload
//   4 bytes      CRC-32 (zlib polynomial) of every preceding byte

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnmap/model.hpp"

namespace gnmap {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig model;
  Phase phase = Phase::pretrain;
  long step = 0;
  std::uint64_t seed = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, nn::Tensor> tensors;
};

Checkpoint make_checkpoint(const GnMapNet& net, Phase phase, long step, std::uint64_t seed,
                           nlohmann::json meta = nlohmann::json::object());

std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, version mismatch, checksum failure, or a
/// truncated/malformed body.
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every tensor of the checkpoint into the net (configs must match).
void load_into(GnMapNet& net, const Checkpoint& ckpt);

/// Copies the encoder/decoder block tensors only and returns their names.
/// Throws ConfigError when the shared architecture differs.
std::vector<std::string> carry_shared(GnMapNet& net, const Checkpoint& ckpt);

}  // namespace gnmap
