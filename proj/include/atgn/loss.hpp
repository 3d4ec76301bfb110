#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "atgn/ops.hpp"

namespace atgn {

struct LossConfig {
  std::vector<double> class_weights;  // W_au, one per AU
  double prob_clip = 1e-7;
  double ignore_label = -1.0;

  void validate(std::size_t n_aus) const {
    if (class_weights.size() != n_aus)
      throw ConfigError("expected " + std::to_string(n_aus) + " class weights, got " +
                        std::to_string(class_weights.size()));
    for (double w : class_weights)
      if (!(w > 0.0)) throw ConfigError("class weights must be positive");
    if (!(prob_clip > 0.0 && prob_clip < 0.5)) throw ConfigError("prob_clip must be in (0, 0.5)");
  }
};

// Number of (frame, AU) cells whose label is not the ignore sentinel.
inline std::size_t count_labeled(const Tensor& labels, double ignore_label = -1.0) {
  std::size_t n = 0;
  for (double y : labels.data()) n += (y != ignore_label);
  return n;
}

// Class-weighted binary cross-entropy, averaged over labeled cells:
//   -(1/count) Σ W_a [y log p + (1-y) log(1-p)],  p clipped to [eps, 1-eps].
// `denominator` overrides the cell count so a batch split across calls sums
// to the batch mean.
inline Tensor weighted_bce(const Tensor& probs, const Tensor& labels, const LossConfig& cfg,
                           std::optional<double> denominator = std::nullopt) {
  if (probs.rank() != 2 || probs.shape() != labels.shape())
    throw DimensionError("weighted_bce: probs " + shape_str(probs.shape()) + " vs labels " + shape_str(labels.shape()));
  const std::size_t rows = probs.dim(0), n_aus = probs.dim(1);
  cfg.validate(n_aus);
  const double eps = cfg.prob_clip;
  std::size_t count = 0;
  for (double y : labels.data()) {
    if (y == cfg.ignore_label) continue;
    if (y != 0.0 && y != 1.0) throw ArgumentError("labels must be 0, 1 or the ignore sentinel");
    ++count;
  }
  const double denom = denominator.value_or(static_cast<double>(count));
  if (count == 0 && !denominator) throw ArgumentError("weighted_bce: every cell is ignored; loss is undefined");
  if (!(denom > 0.0)) throw ArgumentError("weighted_bce: denominator must be positive");

  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t a = 0; a < n_aus; ++a) {
      const double y = labels[r * n_aus + a];
      if (y == cfg.ignore_label) continue;
      const double p = std::clamp(probs[r * n_aus + a], eps, 1.0 - eps);
      total -= cfg.class_weights[a] * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
  total /= denom;

  return detail::make_result(
      "weighted_bce", {}, {total}, {probs},
      [labels, weights = cfg.class_weights, eps, ignore = cfg.ignore_label, denom, rows, n_aus](detail::Node& self) {
        double* g = detail::input_grad(self, 0);
        if (!g) return;
        const auto& pv = self.inputs[0]->data;
        const double gy = self.grad[0];
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t a = 0; a < n_aus; ++a) {
            const std::size_t i = r * n_aus + a;
            const double y = labels[i];
            const double p = pv[i];
            if (y == ignore || p < eps || p > 1.0 - eps) continue;
            g[i] -= gy * weights[a] / denom * (y / p - (1.0 - y) / (1.0 - p));
          }
      });
}

// W_a = n_total / max(n_pos_a, 1), rescaled so mean(W) = 1.
inline std::vector<double> compute_class_weights(const std::vector<std::size_t>& positives, std::size_t n_total) {
  if (n_total == 0 || positives.empty()) throw ArgumentError("cannot compute class weights on an empty dataset");
  std::vector<double> w(positives.size());
  for (std::size_t a = 0; a < w.size(); ++a)
    w[a] = static_cast<double>(n_total) / static_cast<double>(std::max<std::size_t>(positives[a], 1));
  double m = 0.0;
  for (double v : w) m += v;
  m /= static_cast<double>(w.size());
  for (double& v : w) v /= m;
  return w;
}

}  // namespace atgn
