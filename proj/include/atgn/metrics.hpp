#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "atgn/error.hpp"
#include "atgn/tensor.hpp"

// Per-AU F1, mean F1, threshold exploration and ablation reports.
namespace atgn::metrics {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  // 2tp / (2tp + fp + fn), defined 0 when the denominator is 0.
  double f1() const {
    const std::size_t d = 2 * tp + fp + fn;
    return d == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(d);
  }
};

struct F1Result {
  std::vector<ConfusionCounts> counts;
  std::vector<double> per_au;
  double mean = 0.0;
};

namespace detail {
inline void check_shapes(const Tensor& probs, const Tensor& labels) {
  if (probs.rank() != 2 || probs.shape() != labels.shape())
    throw DimensionError("metrics: probs " + shape_str(probs.shape()) + " vs labels " + shape_str(labels.shape()));
}
}  // namespace detail

inline ConfusionCounts confusion_for(const Tensor& probs, const Tensor& labels, std::size_t au, double threshold,
                                     double ignore_label = -1.0) {
  ConfusionCounts c;
  const std::size_t rows = probs.dim(0), n = probs.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = labels[r * n + au];
    if (y == ignore_label) continue;
    const bool pred = probs[r * n + au] >= threshold;
    const bool truth = y == 1.0;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Prediction is prob >= threshold; ignored cells are skipped.
inline F1Result f1_scores(const Tensor& probs, const Tensor& labels, const std::vector<double>& thresholds,
                          double ignore_label = -1.0) {
  detail::check_shapes(probs, labels);
  const std::size_t n = probs.dim(1);
  if (thresholds.size() != n)
    throw DimensionError("f1_scores: " + std::to_string(thresholds.size()) + " thresholds for " + std::to_string(n) +
                         " AUs");
  F1Result res;
  std::size_t evaluable = 0;
  for (std::size_t a = 0; a < n; ++a) {
    res.counts.push_back(confusion_for(probs, labels, a, thresholds[a], ignore_label));
    evaluable += res.counts.back().total();
    res.per_au.push_back(res.counts.back().f1());
    res.mean += res.per_au.back();
  }
  if (evaluable == 0) throw ArgumentError("f1_scores: no evaluable (non-ignored) cells");
  res.mean /= static_cast<double>(n);
  return res;
}

inline F1Result f1_scores(const Tensor& probs, const Tensor& labels, double threshold = 0.5) {
  return f1_scores(probs, labels, std::vector<double>(probs.rank() == 2 ? probs.dim(1) : 0, threshold));
}

// {0.05, 0.075, …, 0.95}
inline std::vector<double> default_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 36; ++i) g.push_back(static_cast<double>(50 + 25 * i) / 1000.0);
  return g;
}

struct SweepResult {
  std::vector<double> thresholds;  // one per AU
  F1Result f1;
};

// Per-AU independent grid search; ties go to the lowest threshold.
inline SweepResult sweep_thresholds(const Tensor& probs, const Tensor& labels, std::vector<double> grid,
                                    double ignore_label = -1.0) {
  detail::check_shapes(probs, labels);
  if (grid.empty()) throw ArgumentError("sweep_thresholds: empty grid");
  for (double g : grid)
    if (!(g > 0.0 && g < 1.0)) throw ArgumentError("sweep_thresholds: grid values must lie in (0,1)");
  std::sort(grid.begin(), grid.end());
  const std::size_t n = probs.dim(1);
  SweepResult out;
  for (std::size_t a = 0; a < n; ++a) {
    double best_t = grid.front();
    double best_f1 = -1.0;
    for (double t : grid) {
      const double f = confusion_for(probs, labels, a, t, ignore_label).f1();
      if (f > best_f1) {
        best_f1 = f;
        best_t = t;
      }
    }
    out.thresholds.push_back(best_t);
  }
  out.f1 = f1_scores(probs, labels, out.thresholds, ignore_label);
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

// "au_index=threshold" per line.
inline void write_thresholds(const std::filesystem::path& path, const std::vector<double>& thresholds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PathError("cannot write thresholds to '" + path.string() + "'");
  for (std::size_t a = 0; a < thresholds.size(); ++a) out << a << '=' << format_double(thresholds[a]) << '\n';
}

inline std::vector<double> read_thresholds(const std::filesystem::path& path, std::size_t n_aus) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot read thresholds from '" + path.string() + "'; run `atgn sweep` first");
  std::vector<double> t(n_aus, -1.0);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    std::size_t idx = 0;
    double v = 0.0;
    if (eq == std::string::npos ||
        std::from_chars(line.data(), line.data() + eq, idx).ec != std::errc{} ||
        std::from_chars(line.data() + eq + 1, line.data() + line.size(), v).ec != std::errc{})
      throw ConfigError("thresholds line " + std::to_string(lineno) + ": expected au_index=threshold");
    if (idx >= n_aus) throw ConfigError("thresholds line " + std::to_string(lineno) + ": AU index out of range");
    if (!(v > 0.0 && v < 1.0)) throw ConfigError("thresholds line " + std::to_string(lineno) + ": value outside (0,1)");
    t[idx] = v;
  }
  for (std::size_t a = 0; a < n_aus; ++a)
    if (t[a] < 0.0) throw ConfigError("thresholds file is missing AU index " + std::to_string(a));
  return t;
}

// One row of the ablation table.
struct AblationRow {
  std::string method;
  bool tcn = false;
  bool fusion = false;
  std::string freeze_policy;
  bool post_process = false;
  double mean_f1 = 0.0;  // fraction in [0,1]
};

inline std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", fraction * 100.0);
  return buf;
}

struct Report {
  std::string text;
  std::string csv;
};

inline Report emit_report(const std::vector<AblationRow>& rows) {
  static const char* const kHeader[] = {"Method", "TCN", "Fusion", "Freeze", "Post-Process", "F1 (%)"};
  std::vector<std::vector<std::string>> cells;
  cells.push_back({std::begin(kHeader), std::end(kHeader)});
  for (const auto& r : rows) {
    cells.push_back({r.method, r.tcn ? "x" : "", r.fusion ? "x" : "", r.fusion ? r.freeze_policy : "",
                     r.post_process ? "x" : "", percent(r.mean_f1)});
  }
  std::vector<std::size_t> width(6, 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());

  Report rep;
  std::ostringstream txt, csv;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const auto& s = cells[i][c];
      if (c + 1 == cells[i].size()) txt << std::string(width[c] - s.size(), ' ') << s;
      else txt << s << std::string(width[c] - s.size() + 2, ' ');
      csv << (c ? "," : "") << s;
    }
    txt << '\n';
    csv << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      txt << std::string(total - 2, '-') << '\n';
    }
  }
  rep.text = txt.str();
  rep.csv = csv.str();
  return rep;
}

// Per-AU breakdown for a single evaluation.
inline Report emit_metrics_report(const F1Result& f1, const std::vector<std::string>& au_names,
                                  const std::vector<double>& thresholds) {
  std::ostringstream txt, csv;
  csv << "au,threshold,tp,fp,fn,tn,f1\n";
  txt << "AU      thr     F1 (%)\n";
  for (std::size_t a = 0; a < f1.per_au.size(); ++a) {
    const auto& c = f1.counts[a];
    const std::string name = a < au_names.size() ? au_names[a] : std::to_string(a);
    csv << name << ',' << format_double(thresholds[a]) << ',' << c.tp << ',' << c.fp << ',' << c.fn << ',' << c.tn
        << ',' << format_double(f1.per_au[a]) << '\n';
    char line[96];
    std::snprintf(line, sizeof(line), "%-6s  %.3f  %6s\n", name.c_str(), thresholds[a], percent(f1.per_au[a]).c_str());
    txt << line;
  }
  csv << "mean,,,,,," << format_double(f1.mean) << '\n';
  txt << "mean F1 (%): " << percent(f1.mean) << '\n';
  return {txt.str(), csv.str()};
}

}  // namespace atgn::metrics
