#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "wenlex/metrics.hpp"

namespace wenlex {

/// One evaluated run: metric name -> value (absent when missing).
struct RunMetrics {
  std::string name;
  std::map<std::string, std::optional<double>> values;

  std::optional<double> get(const std::string& k) const {
    auto it = values.find(k);
    return it == values.end() ? std::nullopt : it->second;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

/// Parses a metrics CSV (header + one or more rows, first column = run name).
inline std::vector<RunMetrics> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("metrics CSV is empty");
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "run") throw std::invalid_argument("metrics CSV must start with a 'run' column");
  std::vector<RunMetrics> runs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    RunMetrics r;
    r.name = cells.at(0);
    for (std::size_t i = 1; i < header.size(); ++i) {
      const std::string v = i < cells.size() ? cells[i] : "";
      r.values[header[i]] = v.empty() ? std::nullopt : std::optional<double>(std::stod(v));
    }
    runs.push_back(std::move(r));
  }
  return runs;
}

/// Metrics as rows, runs as columns; absent values render as "-".
inline std::string render_table(const std::vector<RunMetrics>& runs, const std::vector<std::string>& metrics) {
  if (runs.empty()) throw std::invalid_argument("no evaluated runs to report");
  std::size_t w0 = 6;
  for (const auto& m : metrics) w0 = std::max(w0, m.size());
  std::vector<std::size_t> w;
  for (const auto& r : runs) w.push_back(std::max<std::size_t>(10, r.name.size()));
  std::ostringstream ss;
  ss << std::left << std::setw(static_cast<int>(w0)) << "metric";
  for (std::size_t j = 0; j < runs.size(); ++j) ss << "  " << std::right << std::setw(static_cast<int>(w[j])) << runs[j].name;
  ss << '\n' << std::string(w0, '-');
  for (std::size_t x : w) ss << "  " << std::string(x, '-');
  ss << '\n';
  for (const auto& m : metrics) {
    ss << std::left << std::setw(static_cast<int>(w0)) << m;
    for (std::size_t j = 0; j < runs.size(); ++j) {
      const auto v = runs[j].get(m);
      ss << "  " << std::right << std::setw(static_cast<int>(w[j])) << (v ? format_metric(v) : "-");
    }
    ss << '\n';
  }
  return ss.str();
}

struct MetricFamily {
  std::string name;
  std::vector<std::string> metrics;
};

inline const std::vector<MetricFamily>& metric_families() {
  static const std::vector<MetricFamily> f = {
      {"faithfulness", {"clev_macro_f1", "flip_pct", "flip_pct_random", "delta_p", "delta_p_random"}},
      {"simulatability", {"y_given_img", "y_given_nle", "y_given_img_nle"}},
      {"diversity", {"self_bleu", "retrieval_distance"}},
      {"plausibility", {"cxbs"}},
      {"classifier", {"auc"}},
      {"readability", {"readability_gen", "readability_db"}}};
  return f;
}

/// Grouped bar chart: one group per metric, one bar per run. Absent values
/// leave a gap labelled "n/a".
inline std::string render_svg(const MetricFamily& fam, const std::vector<RunMetrics>& runs) {
  static const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
  const double bar = 18, gap = 24, left = 50, top = 30, height = 200;
  double lo = 0.0, hi = 0.0;
  for (const auto& m : fam.metrics)
    for (const auto& r : runs)
      if (auto v = r.get(m)) {
        lo = std::min(lo, *v);
        hi = std::max(hi, *v);
      }
  if (hi == lo) hi = lo + 1.0;
  const double group_w = bar * static_cast<double>(runs.size()) + gap;
  const double width = left + group_w * static_cast<double>(fam.metrics.size()) + 140;
  auto y_of = [&](double v) { return top + height * (hi - v) / (hi - lo); };
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2);
  ss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 70 << "\">\n";
  ss << "<text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">" << fam.name << "</text>\n";
  ss << "<line x1=\"" << left << "\" y1=\"" << y_of(0) << "\" x2=\"" << width - 140 << "\" y2=\"" << y_of(0)
     << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < fam.metrics.size(); ++i) {
    const double gx = left + group_w * static_cast<double>(i);
    for (std::size_t j = 0; j < runs.size(); ++j) {
      const double x = gx + bar * static_cast<double>(j);
      const auto v = runs[j].get(fam.metrics[i]);
      if (!v) {
        ss << "<text x=\"" << x << "\" y=\"" << y_of(0) - 4 << "\" font-family=\"sans-serif\" font-size=\"8\">n/a</text>\n";
        continue;
      }
      const double y0 = y_of(std::max(0.0, *v)), y1 = y_of(std::min(0.0, *v));
      ss << "<rect x=\"" << x << "\" y=\"" << y0 << "\" width=\"" << bar - 2 << "\" height=\"" << y1 - y0 << "\" fill=\""
         << colors[j % 6] << "\"><title>" << runs[j].name << ": " << format_metric(v) << "</title></rect>\n";
    }
    ss << "<text x=\"" << gx << "\" y=\"" << top + height + 20 << "\" font-family=\"sans-serif\" font-size=\"9\">"
       << fam.metrics[i] << "</text>\n";
  }
  for (std::size_t j = 0; j < runs.size(); ++j) {
    const double ly = top + 14.0 * static_cast<double>(j);
    ss << "<rect x=\"" << width - 130 << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\"" << colors[j % 6] << "\"/>\n";
    ss << "<text x=\"" << width - 115 << "\" y=\"" << ly + 9 << "\" font-family=\"sans-serif\" font-size=\"10\">"
       << runs[j].name << "</text>\n";
  }
  ss << "</svg>\n";
  return ss.str();
}

struct Aggregate {
  std::string value;
  std::size_t runs = 0;
  std::map<std::string, std::pair<std::optional<double>, std::optional<double>>> mean_std;
};

/// Mean and sample standard deviation per metric (std 0 for a single run);
/// metrics absent in every run stay absent.
inline Aggregate aggregate_runs(const std::string& value, const std::vector<RunMetrics>& runs,
                                const std::vector<std::string>& metrics) {
  Aggregate a;
  a.value = value;
  a.runs = runs.size();
  for (const auto& m : metrics) {
    std::vector<double> xs;
    for (const auto& r : runs)
      if (auto v = r.get(m)) xs.push_back(*v);
    if (xs.empty()) {
      a.mean_std[m] = {std::nullopt, std::nullopt};
      continue;
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    a.mean_std[m] = {mean, sd};
  }
  return a;
}

inline std::string aggregate_csv(const std::string& axis, const std::vector<Aggregate>& rows,
                                 const std::vector<std::string>& metrics) {
  std::ostringstream ss;
  ss << "axis,value,runs";
  for (const auto& m : metrics) ss << ',' << m << "_mean," << m << "_std";
  ss << '\n';
  for (const auto& a : rows) {
    ss << axis << ',' << a.value << ',' << a.runs;
    for (const auto& m : metrics) {
      const auto& [mean, sd] = a.mean_std.at(m);
      ss << ',' << format_metric(mean) << ',' << format_metric(sd);
    }
    ss << '\n';
  }
  return ss.str();
}

}  // namespace wenlex
