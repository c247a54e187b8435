#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "dgreid/model.hpp"

namespace dgreid {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string backbone;  // "tiny" / "resnet50"
  std::size_t feature_dim = 0;
  std::size_t embedding_dim = 0;
  std::size_t total_identities = 0;
  std::string stage;  // "pretrain", "episodic", "baseline"
  int epoch = 0;
  std::uint64_t seed = 0;
  // Free-form fields (domain id, loss weights, resume counters, ...).
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static CheckpointMeta from_json(const nlohmann::json& j);
};

struct Checkpoint {
  CheckpointMeta meta;
  NamedTensors tensors;
};

// Layout: magic "DGREIDCK", u32 version, u64 header length, JSON header
// (metadata + tensor index), little-endian float64 payload, then a SHA-256
// digest of everything before it. Writes go through a temporary file and a
// rename so an interrupted save never leaves a truncated checkpoint.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Throws CheckpointError on a bad magic, version, digest or truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws CheckpointError naming the first metadata field that differs.
// Empty strings / zero counts in `expected` are treated as wildcards.
void require_compatible(const CheckpointMeta& actual, const CheckpointMeta& expected);

// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

// Tensors whose names start with `prefix`, with the prefix stripped.
NamedTensors with_prefix(const NamedTensors& tensors, const std::string& prefix);
void merge_prefixed(NamedTensors& into, const NamedTensors& from,
                    const std::string& prefix);

}  // namespace dgreid
