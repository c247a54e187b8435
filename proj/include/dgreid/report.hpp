#pragma once

// Results documents, summary tables and static plot files.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "dgreid/evaluator.hpp"
#include "dgreid/trainer.hpp"

namespace dgreid {

inline constexpr int kResultsSchemaVersion = 1;

struct TargetResult {
  std::string name;
  std::string protocol;
  CMCResult cmc;
};

struct VariantResult {
  std::string name;  // "full", "no-tri", "no-consis", "baseline"
  std::string checkpoint_sha256;
  std::vector<TargetResult> targets;

  // Mean of the targets' mean rank-1.
  double average_rank1() const;
};

nlohmann::json variant_to_json(const VariantResult& v);

// {schema_version, seed, config_hash, variants: [...]}; no timestamps so
// identical runs produce identical files.
nlohmann::json results_document(const std::vector<VariantResult>& variants,
                                std::uint64_t seed, const std::string& config_hash);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

// One row per variant, one rank-1 column (percent) per target, "Avg." last.
std::string format_rank1_table(const std::vector<VariantResult>& variants);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Static SVG line chart.
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<PlotSeries>& series);
// Long-format CSV: series,x,y.
std::string series_csv(const std::vector<PlotSeries>& series);

// Writes <stem>.svg and <stem>.csv.
void write_plot(const std::filesystem::path& stem, const std::string& title,
                const std::string& x_label, const std::string& y_label,
                const std::vector<PlotSeries>& series);

// Per-iteration loss curves (cls, tri, consis, total).
std::vector<PlotSeries> loss_series(const std::vector<StepMetrics>& log);
// CMC curve of one target, ranks 1..n.
std::vector<PlotSeries> cmc_series(const std::vector<VariantResult>& variants,
                                   std::size_t target);

}  // namespace dgreid
