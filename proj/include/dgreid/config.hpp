#pragma once

// Experiment configuration: an INI file with [data], [synthetic], [model],
// [pretrain], [train], [eval] and [ablation] sections. Every key can be
// overridden from the environment as DGREID_<SECTION>_<KEY> (upper case).
// The full schema with defaults is kSchema; unknown sections or keys are
// rejected.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dgreid/synthetic.hpp"
#include "dgreid/trainer.hpp"

namespace dgreid {

struct SchemaEntry {
  std::string section;
  std::string key;
  std::string default_value;
  std::string description;
};

extern const std::vector<SchemaEntry> kSchema;

struct ExperimentConfig {
  // [data] Manifest lists are empty for the synthetic pipeline, in which
  // case sources and targets come from <out>/data.
  std::vector<std::filesystem::path> source_manifests;
  std::vector<std::filesystem::path> target_manifests;
  std::vector<std::string> target_protocols;  // one per target, or a single shared one

  SyntheticConfig synthetic;
  ModelConfig model = ModelConfig::tiny();
  TrainConfig pretrain = TrainConfig::pretrain_desk();
  TrainConfig train = TrainConfig::desk();

  // [eval]
  std::size_t num_splits = 10;
  std::size_t max_rank = 0;  // 0: gallery size
  bool cross_camera = false;

  // [ablation]
  bool disable_tri = false;
  bool disable_consis = false;
  bool baseline_only = false;

  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/desk";

  // Training config with the ablation flags applied.
  TrainConfig effective_train() const;
  TrainVariant variant() const;
  void validate() const;
};

using ConfigValues = std::map<std::string, std::string>;  // "section.key" -> value

// Schema defaults, then the file (if any), then environment overrides.
// Throws ConfigError on unknown keys or unparsable values.
ConfigValues read_config_values(const std::filesystem::path* file);
ExperimentConfig config_from_values(const ConfigValues& values);
ConfigValues config_to_values(const ExperimentConfig& config);

ExperimentConfig load_config(const std::filesystem::path* file);
void write_config(const std::filesystem::path& path, const ExperimentConfig& config);
std::string config_text(const ExperimentConfig& config);

// SHA-256 of config_text() with the output directory blanked.
std::string config_hash(const ExperimentConfig& config);

}  // namespace dgreid
