// dgreid: synth / pretrain / train / eval / reproduce.

#include <chrono>
#include <iostream>

#include "CLI11.hpp"
#include "dgreid/errors.hpp"
#include "dgreid/experiment.hpp"

namespace fs = std::filesystem;
using namespace dgreid;

int main(int argc, char** argv) {
  CLI::App app{"Domain-generalized person re-identification pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool force = false;
  app.add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "root seed (overrides run.seed)");
  app.add_option("--out", out_dir, "output directory (overrides run.output_dir)");
  app.add_flag("--force", force, "overwrite existing outputs");

  auto* synth = app.add_subcommand("synth", "generate synthetic source/target domains");
  auto* pretrain = app.add_subcommand("pretrain", "train one extractor per source domain");
  auto* train = app.add_subcommand("train", "episodic training of F, E and C");
  std::string ablate;
  train->add_option("--ablate", ablate, "ablation preset")
      ->check(CLI::IsMember({"no-tri", "no-consis", "baseline"}));
  auto* eval = app.add_subcommand("eval", "evaluate a trained model on the target domains");
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "stage-2 checkpoint (default: run's final.ckpt)");
  eval->add_option("--ablate", ablate, "which run to evaluate")
      ->check(CLI::IsMember({"no-tri", "no-consis", "baseline"}));
  auto* reproduce =
      app.add_subcommand("reproduce", "synth, pretrain, train full/no-tri/no-consis, eval");

  CLI11_PARSE(app, argc, argv);

  const auto start = std::chrono::steady_clock::now();
  try {
    CommandContext ctx;
    const fs::path cfg_file = config_path;
    ctx.config = config_from_values([&] {
      auto values = read_config_values(config_path.empty() ? nullptr : &cfg_file);
      if (seed) values["run.seed"] = std::to_string(*seed);
      if (!out_dir.empty()) values["run.output_dir"] = out_dir;
      return values;
    }());
    if (ablate == "no-tri") ctx.config.disable_tri = true;
    if (ablate == "no-consis") ctx.config.disable_consis = true;
    if (ablate == "baseline") ctx.config.baseline_only = true;
    ctx.config.validate();
    ctx.force = force;
    ctx.out = &std::cout;

    if (*synth) {
      cmd_synth(ctx);
    } else if (*pretrain) {
      cmd_pretrain(ctx);
    } else if (*train) {
      cmd_train(ctx);
    } else if (*eval) {
      if (checkpoint.empty()) {
        cmd_eval(ctx);
      } else {
        cmd_eval(ctx, fs::path(checkpoint));
      }
    } else if (*reproduce) {
      cmd_reproduce(ctx);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "done in " << seconds << " s\n";
  return kExitOk;
}
