#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "atgn/metrics.hpp"
#include "support.hpp"

using namespace atgn;
using namespace atgn::metrics;

namespace {

// Materializes the prediction and truth lists and counts by hand.
double oracle_f1(const std::vector<double>& p, const std::vector<double>& y, double thr) {
  std::vector<int> pred, truth;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] == -1.0) continue;
    pred.push_back(p[i] >= thr ? 1 : 0);
    truth.push_back(y[i] == 1.0 ? 1 : 0);
  }
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    tp += pred[i] && truth[i];
    fp += pred[i] && !truth[i];
    fn += !pred[i] && truth[i];
  }
  if (tp == 0 && fp == 0 && fn == 0) return 0.0;
  const double precision = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
  const double recall = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

struct Instance {
  Tensor probs, labels;
  std::size_t rows, cols;
};

Instance random_instance(std::mt19937_64& rng) {
  Instance in;
  in.rows = 1 + rng() % 12;
  in.cols = 1 + rng() % 4;
  std::vector<double> p(in.rows * in.cols), y(p.size());
  std::uniform_int_distribution<int> lab(-1, 1);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<double>(rng() % 21) / 20.0;  // ties with thresholds on purpose
    y[i] = lab(rng);
  }
  y[0] = 1.0;
  in.probs = Tensor::from({in.rows, in.cols}, p);
  in.labels = Tensor::from({in.rows, in.cols}, y);
  return in;
}

std::vector<double> column(const Tensor& t, std::size_t c) {
  std::vector<double> out;
  for (std::size_t r = 0; r < t.dim(0); ++r) out.push_back(t[r * t.dim(1) + c]);
  return out;
}

}  // namespace

TEST(F1, HandExamples) {
  // tp=2, fp=1, fn=1
  const Tensor p = Tensor::from({5, 1}, {0.9, 0.8, 0.7, 0.1, 0.2});
  const Tensor y = Tensor::from({5, 1}, {1, 1, 0, 1, 0});
  const auto r = f1_scores(p, y);
  EXPECT_EQ(r.counts[0].tp, 2u);
  EXPECT_EQ(r.counts[0].fp, 1u);
  EXPECT_EQ(r.counts[0].fn, 1u);
  EXPECT_DOUBLE_EQ(r.per_au[0], 2.0 / 3.0);

  const auto perfect = f1_scores(Tensor::from({2, 2}, {0.9, 0.1, 0.2, 0.6}), Tensor::from({2, 2}, {1, 0, 0, 1}));
  EXPECT_EQ(perfect.mean, 1.0);

  const auto none = f1_scores(Tensor::from({3, 1}, {0.1, 0.2, 0.3}), Tensor::from({3, 1}, {0, 0, 0}));
  EXPECT_EQ(none.per_au[0], 0.0);

  // Threshold is inclusive.
  EXPECT_EQ(f1_scores(Tensor::from({1, 1}, {0.5}), Tensor::from({1, 1}, {1})).mean, 1.0);
}

TEST(F1, IgnoredCellsAndErrors) {
  const Tensor p = Tensor::from({3, 1}, {0.9, 0.9, 0.1});
  EXPECT_DOUBLE_EQ(f1_scores(p, Tensor::from({3, 1}, {1, -1, 0})).mean, 1.0);
  EXPECT_THROW(f1_scores(p, Tensor::from({3, 1}, {-1, -1, -1})), ArgumentError);
  EXPECT_THROW(f1_scores(p, Tensor::from({1, 3}, {1, 0, 1})), DimensionError);
  EXPECT_THROW(f1_scores(p, Tensor::from({3, 1}, {1, 0, 1}), std::vector<double>{0.5, 0.5}), DimensionError);
}

TEST(F1, MatchesBruteForceOracle) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto in = random_instance(rng);
    std::vector<double> thr(in.cols);
    for (double& t : thr) t = static_cast<double>(1 + rng() % 19) / 20.0;
    bool any = false;
    for (double v : in.labels.data()) any = any || v != -1.0;
    if (!any) continue;
    const auto r = f1_scores(in.probs, in.labels, thr);
    double mean = 0.0;
    for (std::size_t c = 0; c < in.cols; ++c) {
      const double o = oracle_f1(column(in.probs, c), column(in.labels, c), thr[c]);
      ASSERT_NEAR(r.per_au[c], o, 1e-15) << "trial " << trial << " au " << c;
      mean += o;
    }
    ASSERT_NEAR(r.mean, mean / static_cast<double>(in.cols), 1e-15);
  }
}

TEST(F1, PermutationInvariant) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = random_instance(rng);
    std::vector<std::size_t> perm(in.rows);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> p(in.probs.numel()), y(p.size());
    for (std::size_t r = 0; r < in.rows; ++r)
      for (std::size_t c = 0; c < in.cols; ++c) {
        p[r * in.cols + c] = in.probs[perm[r] * in.cols + c];
        y[r * in.cols + c] = in.labels[perm[r] * in.cols + c];
      }
    const auto a = f1_scores(in.probs, in.labels);
    const auto b = f1_scores(Tensor::from({in.rows, in.cols}, p), Tensor::from({in.rows, in.cols}, y));
    EXPECT_EQ(a.per_au, b.per_au);
  }
}

TEST(Sweep, FourFrameExample) {
  const Tensor p = Tensor::from({4, 1}, {0.4, 0.35, 0.3, 0.2});
  const Tensor y = Tensor::from({4, 1}, {1, 1, 0, 0});
  const auto s = sweep_thresholds(p, y, {0.25, 0.5});
  EXPECT_EQ(s.thresholds[0], 0.25);
  EXPECT_EQ(s.f1.counts[0].tp, 2u);
  EXPECT_EQ(s.f1.counts[0].fp, 1u);
  EXPECT_EQ(s.f1.counts[0].fn, 0u);
  EXPECT_DOUBLE_EQ(s.f1.mean, 0.8);
  EXPECT_EQ(f1_scores(p, y).mean, 0.0);
}

TEST(Sweep, SingletonGridEqualsFixedHalf) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = random_instance(rng);
    const auto s = sweep_thresholds(in.probs, in.labels, {0.5});
    EXPECT_EQ(s.f1.per_au, f1_scores(in.probs, in.labels).per_au);
  }
}

TEST(Sweep, GridOptimalWithLowestTie) {
  std::mt19937_64 rng(10);
  const auto grid = default_grid();
  ASSERT_EQ(grid.size(), 37u);
  EXPECT_DOUBLE_EQ(grid.front(), 0.05);
  EXPECT_DOUBLE_EQ(grid.back(), 0.95);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = random_instance(rng);
    const auto s = sweep_thresholds(in.probs, in.labels, grid);
    const auto fixed = f1_scores(in.probs, in.labels);
    EXPECT_GE(s.f1.mean, fixed.mean);
    for (std::size_t c = 0; c < in.cols; ++c) {
      const auto pc = column(in.probs, c), yc = column(in.labels, c);
      double best = -1.0, best_t = 0.0;
      for (double t : grid) {
        const double f = oracle_f1(pc, yc, t);
        if (f > best + 1e-12) best = f, best_t = t;  // different rounding path, same rationals
      }
      EXPECT_NEAR(s.f1.per_au[c], best, 1e-15);
      EXPECT_EQ(s.thresholds[c], best_t);
    }
  }
}

TEST(Sweep, RejectsBadGrid) {
  const Tensor p = Tensor::from({1, 1}, {0.5}), y = Tensor::from({1, 1}, {1});
  EXPECT_THROW(sweep_thresholds(p, y, {}), ArgumentError);
  EXPECT_THROW(sweep_thresholds(p, y, {0.0}), ArgumentError);
  EXPECT_THROW(sweep_thresholds(p, y, {1.0}), ArgumentError);
}

TEST(Report, TableRowsAndHeaderOnly) {
  const auto rep = emit_report({{"baseline", false, false, "", false, 0.365},
                                {"+tcn+fusion", true, true, "ln-only", false, 0.537}});
  EXPECT_NE(rep.text.find("36.5"), std::string::npos);
  EXPECT_NE(rep.text.find("53.7"), std::string::npos);
  EXPECT_EQ(rep.csv,
            "Method,TCN,Fusion,Freeze,Post-Process,F1 (%)\n"
            "baseline,,,,,36.5\n"
            "+tcn+fusion,x,x,ln-only,,53.7\n");

  const auto empty = emit_report({});
  EXPECT_EQ(empty.csv, "Method,TCN,Fusion,Freeze,Post-Process,F1 (%)\n");
  EXPECT_EQ(std::count(empty.text.begin(), empty.text.end(), '\n'), 2);
}

TEST(Thresholds, FileRoundTripAndErrors) {
  const auto dir = testing_support::temp_dir("thr");
  const std::vector<double> t{0.05, 0.325, 0.5, 0.95};
  write_thresholds(dir / "t.txt", t);
  EXPECT_EQ(read_thresholds(dir / "t.txt", 4), t);
  EXPECT_THROW(read_thresholds(dir / "t.txt", 5), Error);
  EXPECT_THROW(read_thresholds(dir / "missing.txt", 4), PathError);
  std::ofstream(dir / "bad.txt") << "0=1.5\n1=0.5\n";
  EXPECT_THROW(read_thresholds(dir / "bad.txt", 2), Error);
}
