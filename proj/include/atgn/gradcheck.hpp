#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "atgn/tensor.hpp"

namespace atgn {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-8;
  // Elements probed per leaf; 0 probes all of them.
  std::size_t max_probes_per_leaf = 0;
  std::uint64_t probe_seed = 0;
};

struct GradCheckResult {
  bool ok = true;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst;
};

// Compares reverse-mode gradients of `loss_fn` against central differences.
// An element passes when |a - n| <= abs_floor or |a - n| <= rel_tol * max(|a|, |n|).
inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                       const GradCheckOptions& opt = {}) {
  for (auto& leaf : leaves) leaf.zero_grad();
  const Tensor loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) {
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    if (analytic.back().size() != leaf.numel()) analytic.back().assign(leaf.numel(), 0.0);
  }

  GradCheckResult res;
  std::mt19937_64 rng(opt.probe_seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    std::vector<std::size_t> idx(leaf.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opt.max_probes_per_leaf && idx.size() > opt.max_probes_per_leaf) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_probes_per_leaf);
    }
    auto data = leaf.mutable_data();
    for (std::size_t i : idx) {
      const double orig = data[i];
      data[i] = orig + opt.step;
      const double up = loss_fn().item();
      data[i] = orig - opt.step;
      const double down = loss_fn().item();
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[li][i];
      const double diff = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel = scale > 0.0 ? diff / scale : 0.0;
      ++res.probes;
      const bool pass = diff <= opt.abs_floor || diff <= opt.rel_tol * scale;
      if (!pass) {
        if (res.ok || rel > res.max_rel_error) {
          res.worst = "leaf " + std::to_string(li) + " element " + std::to_string(i) + ": autodiff " +
                      std::to_string(a) + " vs numeric " + std::to_string(numeric);
        }
        res.ok = false;
      }
      if (diff > opt.abs_floor) res.max_rel_error = std::max(res.max_rel_error, rel);
    }
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  return res;
}

}  // namespace atgn
