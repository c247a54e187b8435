#include "dgreid/experiment.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <regex>

#include "dgreid/errors.hpp"

namespace dgreid {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEvalSeedKey = 0xE7A1;

void say(const CommandContext& ctx, const std::string& line) {
  if (ctx.out) *ctx.out << line << std::endl;
}

fs::path data_dir(const ExperimentConfig& c) { return c.output_dir / "data"; }
fs::path stage1_dir(const ExperimentConfig& c) { return c.output_dir / "stage1"; }
fs::path run_dir(const ExperimentConfig& c) { return c.output_dir / run_name(c); }

fs::path stage1_path(const ExperimentConfig& c, int domain_id) {
  return stage1_dir(c) / ("F_" + std::to_string(domain_id) + ".ckpt");
}

CheckpointMeta expected_stage1_meta(const ExperimentConfig& c) {
  CheckpointMeta m;
  m.backbone = to_string(c.model.domain_backbone.kind);
  m.feature_dim = c.model.domain_backbone.feature_dim;
  m.stage = "pretrain";
  return m;
}

// Checks that a Stage-1 checkpoint loads and matches this config and domain.
FeatureExtractor read_stage1(const ExperimentConfig& c, int domain_id) {
  const fs::path path = stage1_path(c, domain_id);
  const Checkpoint ckpt = load_checkpoint(path);
  require_compatible(ckpt.meta, expected_stage1_meta(c));
  if (ckpt.meta.extra.value("domain_id", -1) != domain_id) {
    throw CheckpointError(path.string() + ": checkpoint belongs to another domain");
  }
  if (ckpt.meta.seed != c.seed || ckpt.meta.epoch != c.pretrain.epochs) {
    throw CheckpointError(path.string() + ": seed or epoch count differs from the config");
  }
  return extractor_from_checkpoint(ckpt, c.model.domain_backbone);
}

bool directory_has_entries(const fs::path& p) {
  return fs::is_directory(p) && fs::directory_iterator(p) != fs::directory_iterator();
}

CheckpointMeta expected_stage2_meta(const ExperimentConfig& c, std::size_t classes) {
  CheckpointMeta m;
  m.backbone = to_string(c.model.global_backbone.kind);
  m.feature_dim = c.model.global_backbone.feature_dim;
  m.embedding_dim = c.model.embedding_dim;
  m.total_identities = classes;
  m.stage = c.baseline_only ? "baseline" : "episodic";
  return m;
}

}  // namespace

std::string run_name(const ExperimentConfig& config) {
  if (config.baseline_only) return "baseline";
  if (config.disable_tri) return "no-tri";
  if (config.disable_consis) return "no-consis";
  return "full";
}

// ------------------------------------------------------------ synth

std::vector<DomainSummary> cmd_synth(const CommandContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  const fs::path dir = data_dir(c);
  if (directory_has_entries(dir)) {
    if (!ctx.force) {
      throw ConfigError(dir.string() + " already exists and is not empty; use --force to "
                        "overwrite it");
    }
    fs::remove_all(dir);
  }
  SyntheticData data = generate_synthetic_domains(c.synthetic, c.seed);
  const auto summary = write_synthetic(data, dir);

  std::ostringstream os;
  os << std::left << std::setw(12) << "Domain" << std::setw(8) << "Role" << std::right
     << std::setw(8) << "#IDs" << std::setw(10) << "#Images" << std::setw(10) << "#Cams"
     << '\n';
  std::size_t ids = 0, images = 0;
  for (const auto& s : summary) {
    os << std::left << std::setw(12) << s.name << std::setw(8) << s.role << std::right
       << std::setw(8) << s.identities << std::setw(10) << s.images << std::setw(10)
       << s.cameras << '\n';
    if (s.role == "source") {
      ids += s.identities;
      images += s.images;
    }
  }
  os << std::left << std::setw(20) << "Total (sources)" << std::right << std::setw(8) << ids
     << std::setw(10) << images;
  say(ctx, os.str());
  write_config(dir / "config.ini", c);
  return summary;
}

// ------------------------------------------------------------ data

LoadedData load_experiment_data(const ExperimentConfig& c) {
  LoadedData out;
  std::vector<DomainDataset> sources;
  if (c.source_manifests.empty()) {
    const fs::path index_path = data_dir(c) / "synthetic.json";
    if (!fs::exists(index_path)) {
      throw DataError("no synthetic data at " + data_dir(c).string() +
                      "; run `synth` first or set data.source_manifests");
    }
    std::ifstream in(index_path);
    nlohmann::json index;
    try {
      in >> index;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(index_path.string() + ": " + e.what());
    }
    for (const auto& e : index.at("sources")) {
      sources.push_back(load_domain(data_dir(c) / e.at("manifest").get<std::string>(),
                                    e.at("domain_id").get<int>()));
    }
    for (const auto& e : index.at("targets")) {
      const int id = e.at("domain_id").get<int>();
      out.targets.push_back(
          load_domain(data_dir(c) / e.at("manifest").get<std::string>(), id));
      out.target_names.push_back("domain_" + std::to_string(id));
    }
  } else {
    int id = 0;
    for (const auto& m : c.source_manifests) sources.push_back(load_domain(m, id++));
    for (const auto& m : c.target_manifests) {
      out.targets.push_back(load_domain(m, id++));
      const fs::path parent = m.parent_path().filename();
      out.target_names.push_back(parent.empty() ? m.stem().string() : parent.string());
    }
  }
  for (auto& d : sources) d.load_pixels();
  for (auto& d : out.targets) d.load_pixels();
  out.sources = make_collection(std::move(sources));
  return out;
}

// ------------------------------------------------------------ pretrain

PretrainReport cmd_pretrain(const CommandContext& ctx) {
  return cmd_pretrain(ctx, load_experiment_data(ctx.config));
}

PretrainReport cmd_pretrain(const CommandContext& ctx, const LoadedData& data) {
  const ExperimentConfig& c = ctx.config;
  fs::create_directories(stage1_dir(c));
  PretrainReport report;
  for (const auto& domain : data.sources.domains) {
    const fs::path path = stage1_path(c, domain.domain_id);
    PretrainAction action = PretrainAction::kTrained;
    if (fs::exists(path) && !ctx.force) {
      try {
        read_stage1(c, domain.domain_id);
        say(ctx, "pretrain " + domain.name + ": skipped (valid checkpoint " +
                     path.string() + ")");
        report.checkpoints.push_back(path);
        report.actions.push_back(PretrainAction::kSkipped);
        continue;
      } catch (const CheckpointError& e) {
        say(ctx, std::string("warning: ") + e.what() + "; retraining " + domain.name);
        action = PretrainAction::kRetrained;
      }
    }
    const PretrainResult r =
        pretrain_domain_extractor(domain, c.model.domain_backbone, c.pretrain);
    save_checkpoint(path, make_extractor_checkpoint(r.extractor, "pretrain", c.pretrain.epochs,
                                                    c.seed, domain.domain_id));
    std::ostringstream os;
    os << "pretrain " << domain.name << ": triplet loss " << r.epoch_loss.front() << " -> "
       << r.epoch_loss.back() << ", saved " << path.string();
    say(ctx, os.str());
    report.checkpoints.push_back(path);
    report.actions.push_back(action);
  }
  write_config(stage1_dir(c) / "config.ini", c);
  return report;
}

std::vector<FrozenExtractor> load_stage1_bank(const ExperimentConfig& c,
                                              const SourceCollection& sources) {
  std::vector<FrozenExtractor> bank;
  for (const auto& d : sources.domains) {
    const fs::path path = stage1_path(c, d.domain_id);
    if (!fs::exists(path)) {
      throw CheckpointError("missing Stage-1 checkpoint " + path.string() +
                            "; run `pretrain` first");
    }
    try {
      bank.push_back(freeze(read_stage1(c, d.domain_id)));
    } catch (const CheckpointError& e) {
      throw CheckpointError(std::string(e.what()) + "; rerun `pretrain`");
    }
  }
  return bank;
}

// ------------------------------------------------------------ train

TrainReport cmd_train(const CommandContext& ctx) {
  return cmd_train(ctx, load_experiment_data(ctx.config));
}

TrainReport cmd_train(const CommandContext& ctx, const LoadedData& data) {
  const ExperimentConfig& c = ctx.config;
  const fs::path dir = run_dir(c) / "stage2";
  const fs::path final_path = dir / "final.ckpt";
  const CheckpointMeta expected =
      expected_stage2_meta(c, data.sources.label_map.total_identities);
  TrainReport report;
  report.final_checkpoint = final_path;

  std::vector<FrozenExtractor> bank;
  if (!c.baseline_only) bank = load_stage1_bank(c, data.sources);

  if (ctx.force && fs::exists(dir)) fs::remove_all(dir);
  if (fs::exists(final_path)) {
    try {
      const Checkpoint ckpt = load_checkpoint(final_path);
      require_compatible(ckpt.meta, expected);
      if (ckpt.meta.epoch == c.train.epochs && ckpt.meta.seed == c.seed) {
        say(ctx, "train " + run_name(c) + ": skipped (final checkpoint exists)");
        report.skipped = true;
        return report;
      }
    } catch (const CheckpointError& e) {
      say(ctx, std::string("warning: ") + e.what() + "; retraining");
    }
  }

  // Resume from the newest readable epoch checkpoint.
  std::optional<fs::path> resume;
  if (fs::exists(dir)) {
    const std::regex pattern(R"(epoch_(\d+)\.ckpt)");
    int best = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
      std::smatch m;
      const std::string name = entry.path().filename().string();
      if (!std::regex_match(name, m, pattern)) continue;
      const int epoch = std::stoi(m[1]);
      if (epoch <= best || epoch > c.train.epochs) continue;
      try {
        const Checkpoint ckpt = load_checkpoint(entry.path());
        require_compatible(ckpt.meta, expected);
        if (ckpt.meta.seed != c.seed) continue;
        best = epoch;
        resume = entry.path();
      } catch (const CheckpointError& e) {
        say(ctx, std::string("warning: ignoring ") + e.what());
      }
    }
    if (resume) report.resumed_from_epoch = best;
  }

  TrainOptions options;
  options.output_dir = dir;
  options.resume_from = resume;
  options.variant = c.variant();
  options.on_message = [&ctx](const std::string& line) { say(ctx, line); };
  const TrainResult result =
      train(data.sources, std::move(bank), c.model, c.effective_train(), options);

  write_plot(run_dir(c) / "loss_curve", "Training losses (" + run_name(c) + ")",
             "iteration", "loss", loss_series(result.log));
  write_config(run_dir(c) / "config.ini", c);
  say(ctx, "train " + run_name(c) + ": saved " + final_path.string());
  return report;
}

// ------------------------------------------------------------ eval

VariantResult cmd_eval(const CommandContext& ctx,
                       const std::optional<fs::path>& checkpoint) {
  return cmd_eval(ctx, load_experiment_data(ctx.config), checkpoint);
}

VariantResult cmd_eval(const CommandContext& ctx, const LoadedData& data,
                       const std::optional<fs::path>& checkpoint) {
  const ExperimentConfig& c = ctx.config;
  const fs::path path = checkpoint.value_or(run_dir(c) / "stage2" / "final.ckpt");
  if (!fs::exists(path)) {
    throw CheckpointError("checkpoint " + path.string() + " not found; run `train` first");
  }
  const Checkpoint ckpt = load_checkpoint(path);
  CheckpointMeta expected = expected_stage2_meta(c, data.sources.label_map.total_identities);
  expected.stage.clear();
  require_compatible(ckpt.meta, expected);
  EpisodicModel model(c.model, ckpt.meta.total_identities, ckpt.meta.seed);
  model.load_state(ckpt.tensors);

  VariantResult result;
  result.name = run_name(c);
  result.checkpoint_sha256 = file_sha256(path);
  for (std::size_t t = 0; t < data.targets.size(); ++t) {
    const std::string protocol =
        c.target_protocols.size() == 1 ? c.target_protocols[0] : c.target_protocols[t];
    SplitProtocol split = SplitProtocol::by_name(protocol);
    split.cross_camera = c.cross_camera;
    TargetResult tr;
    tr.name = data.target_names[t];
    tr.protocol = protocol;
    tr.cmc = evaluate_target(model, data.targets[t], split, c.train.normalization,
                             c.num_splits, derive_seed(c.seed, {kEvalSeedKey, t}),
                             c.max_rank);
    result.targets.push_back(std::move(tr));
  }

  const fs::path dir = run_dir(c);
  write_json(dir / "results.json", results_document({result}, c.seed, config_hash(c)));
  for (std::size_t t = 0; t < result.targets.size(); ++t) {
    write_plot(dir / "plots" / ("cmc_" + result.targets[t].name),
               "CMC on " + result.targets[t].name, "rank", "matching rate",
               cmc_series({result}, t));
  }
  say(ctx, format_rank1_table({result}));
  return result;
}

// ------------------------------------------------------------ reproduce

ReproduceReport cmd_reproduce(const CommandContext& ctx) {
  const ExperimentConfig& c = ctx.config;
  fs::create_directories(c.output_dir);
  write_config(c.output_dir / "config.ini", c);

  if (c.source_manifests.empty()) {
    if (fs::exists(data_dir(c) / "synthetic.json") && !ctx.force) {
      say(ctx, "synth: skipped (data present at " + data_dir(c).string() + ")");
    } else {
      CommandContext synth = ctx;
      synth.force = true;  // a partial directory from an interrupted run is replaced
      cmd_synth(synth);
    }
  }
  const LoadedData data = load_experiment_data(c);
  cmd_pretrain(ctx, data);

  ReproduceReport report;
  const std::pair<bool, bool> flags[] = {{false, false}, {true, false}, {false, true}};
  for (const auto& [no_tri, no_consis] : flags) {
    CommandContext variant = ctx;
    variant.config.disable_tri = no_tri;
    variant.config.disable_consis = no_consis;
    variant.config.baseline_only = false;
    cmd_train(variant, data);
    report.variants.push_back(cmd_eval(variant, data));
  }

  report.results_file = c.output_dir / "results.json";
  write_json(report.results_file, results_document(report.variants, c.seed, config_hash(c)));
  const std::string table = format_rank1_table(report.variants);
  std::ofstream(c.output_dir / "results.txt") << table;
  for (std::size_t t = 0; t < data.targets.size(); ++t) {
    write_plot(c.output_dir / "plots" / ("cmc_" + data.target_names[t]),
               "CMC on " + data.target_names[t], "rank", "matching rate",
               cmc_series(report.variants, t));
  }
  say(ctx, "\nrank-1 (%) on held-out domains\n" + table);
  return report;
}

}  // namespace dgreid
