#pragma once

// Pipeline commands behind the CLI. Output layout under config.output_dir:
//
//   data/                      synthetic domains (synth)
//   stage1/F_<domain>.ckpt     per-domain extractors (pretrain)
//   <run>/stage2/epoch_<n>.ckpt, final.ckpt, train_log.{jsonl,txt}
//   <run>/loss_curve.{svg,csv}, <run>/results.json, <run>/plots/
//   results.json, results.txt  reproduce summary
//
// <run> is full, no-tri, no-consis or baseline depending on the ablation flags.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dgreid/config.hpp"
#include "dgreid/report.hpp"
#include "dgreid/synthetic.hpp"

namespace dgreid {

// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitCheckpoint = 5,
};

struct CommandContext {
  ExperimentConfig config;
  bool force = false;
  std::ostream* out = nullptr;  // tables and progress; may be null
};

std::string run_name(const ExperimentConfig& config);

std::vector<DomainSummary> cmd_synth(const CommandContext& ctx);

struct LoadedData {
  SourceCollection sources;
  std::vector<DomainDataset> targets;
  std::vector<std::string> target_names;
};
// Reads the manifests named in the config, or the synthetic index under
// <output_dir>/data; decodes all pixels.
LoadedData load_experiment_data(const ExperimentConfig& config);

enum class PretrainAction { kTrained, kSkipped, kRetrained };
struct PretrainReport {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<PretrainAction> actions;
};
PretrainReport cmd_pretrain(const CommandContext& ctx);
PretrainReport cmd_pretrain(const CommandContext& ctx, const LoadedData& data);

// Loads the Stage-1 bank; throws CheckpointError with a hint to run
// `pretrain` when a checkpoint is missing or invalid.
std::vector<FrozenExtractor> load_stage1_bank(const ExperimentConfig& config,
                                              const SourceCollection& sources);

struct TrainReport {
  std::filesystem::path final_checkpoint;
  bool skipped = false;
  std::optional<int> resumed_from_epoch;
};
TrainReport cmd_train(const CommandContext& ctx);
TrainReport cmd_train(const CommandContext& ctx, const LoadedData& data);

// Evaluates `checkpoint` (default: the run's final.ckpt) on every target.
VariantResult cmd_eval(const CommandContext& ctx,
                       const std::optional<std::filesystem::path>& checkpoint = {});
VariantResult cmd_eval(const CommandContext& ctx, const LoadedData& data,
                       const std::optional<std::filesystem::path>& checkpoint = {});

struct ReproduceReport {
  std::vector<VariantResult> variants;  // full, no-tri, no-consis
  std::filesystem::path results_file;
};
ReproduceReport cmd_reproduce(const CommandContext& ctx);

}  // namespace dgreid
