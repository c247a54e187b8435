#include "dgreid/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "dgreid/errors.hpp"

namespace dgreid {

namespace fs = std::filesystem;

double VariantResult::average_rank1() const {
  if (targets.empty()) return 0.0;
  double s = 0.0;
  for (const auto& t : targets) s += t.cmc.mean_rank1;
  return s / static_cast<double>(targets.size());
}

nlohmann::json variant_to_json(const VariantResult& v) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : v.targets) {
    nlohmann::json j = t.cmc.to_json();
    j["name"] = t.name;
    j["protocol"] = t.protocol;
    targets.push_back(j);
  }
  return {{"name", v.name},
          {"checkpoint_sha256", v.checkpoint_sha256},
          {"average_rank1", v.average_rank1()},
          {"targets", targets}};
}

nlohmann::json results_document(const std::vector<VariantResult>& variants,
                                std::uint64_t seed, const std::string& config_hash) {
  nlohmann::json vs = nlohmann::json::array();
  for (const auto& v : variants) vs.push_back(variant_to_json(v));
  return {{"schema_version", kResultsSchemaVersion},
          {"seed", seed},
          {"config_hash", config_hash},
          {"map_note", "mAP is reported in addition to rank-1"},
          {"variants", vs}};
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + path.string());
    out << doc.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

std::string format_rank1_table(const std::vector<VariantResult>& variants) {
  std::vector<std::string> headers{"Method"};
  if (!variants.empty()) {
    for (const auto& t : variants.front().targets) headers.push_back(t.name);
  }
  headers.push_back("Avg.");
  std::vector<std::vector<std::string>> rows;
  for (const auto& v : variants) {
    std::vector<std::string> row{v.name};
    auto pct = [](double x) {
      std::ostringstream os;
      os << std::fixed << std::setprecision(1) << 100.0 * x;
      return os.str();
    };
    for (const auto& t : v.targets) row.push_back(pct(t.cmc.mean_rank1));
    row.push_back(pct(v.average_rank1()));
    rows.push_back(row);
  }
  std::vector<std::size_t> width(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) {
    width[c] = headers[c].size();
    for (const auto& r : rows) {
      if (c < r.size()) width[c] = std::max(width[c], r[c].size());
    }
  }
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < headers.size(); ++c) {
      const std::string cell = c < cells.size() ? cells[c] : "";
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << cell;
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << cell;
      }
    }
    os << '\n';
  };
  line(headers);
  std::size_t total = 0;
  for (std::size_t w : width) total += w + 2;
  os << std::string(total - 2, '-') << '\n';
  for (const auto& r : rows) line(r);
  return os.str();
}

// ------------------------------------------------------------ plots

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<PlotSeries>& series) {
  const double W = 640, H = 400, left = 70, right = 160, top = 40, bottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << escape_xml(title) << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\""
     << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4.0, fy = y0 + (y1 - y0) * t / 4.0;
    os << "<text x=\"" << px(fx) << "\" y=\"" << top + ph + 16
       << "\" text-anchor=\"middle\">" << fmt(fx) << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">"
       << fmt(fy) << "</text>\n";
    os << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(fy)
       << "\" y2=\"" << py(fy) << "\" stroke=\"#ddd\"/>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\">" << escape_xml(x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << top + ph / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << escape_xml(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
      if (!std::isfinite(series[s].y[i])) continue;
      os << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    }
    os << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(s);
    os << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly
       << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">"
       << escape_xml(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string series_csv(const std::vector<PlotSeries>& series) {
  std::ostringstream os;
  os << std::setprecision(17) << "series,x,y\n";
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      os << s.name << ',' << s.x[i] << ',' << s.y[i] << '\n';
    }
  }
  return os.str();
}

void write_plot(const fs::path& stem, const std::string& title, const std::string& x_label,
                const std::string& y_label, const std::vector<PlotSeries>& series) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  std::ofstream svg(stem.string() + ".svg");
  std::ofstream csv(stem.string() + ".csv");
  if (!svg || !csv) throw DataError("cannot write plot " + stem.string());
  svg << line_plot_svg(title, x_label, y_label, series);
  csv << series_csv(series);
}

std::vector<PlotSeries> loss_series(const std::vector<StepMetrics>& log) {
  std::vector<PlotSeries> s{{"cls", {}, {}}, {"tri", {}, {}}, {"consis", {}, {}},
                            {"total", {}, {}}};
  for (const auto& m : log) {
    const double x = static_cast<double>(m.iteration);
    const double ys[] = {m.cls, m.triplet, m.consistency, m.total};
    for (std::size_t k = 0; k < 4; ++k) {
      s[k].x.push_back(x);
      s[k].y.push_back(ys[k]);
    }
  }
  return s;
}

std::vector<PlotSeries> cmc_series(const std::vector<VariantResult>& variants,
                                   std::size_t target) {
  std::vector<PlotSeries> out;
  for (const auto& v : variants) {
    if (target >= v.targets.size()) continue;
    PlotSeries s{v.name, {}, {}};
    const auto& curve = v.targets[target].cmc.curve;
    for (std::size_t r = 0; r < curve.size(); ++r) {
      s.x.push_back(static_cast<double>(r + 1));
      s.y.push_back(curve[r]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dgreid
