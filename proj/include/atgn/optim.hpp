#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "atgn/params.hpp"

namespace atgn {

// Linear warmup followed by reduce-on-plateau.
struct ScheduleState {
  double base_lr = 1e-4;
  std::size_t warmup_iters = 2000;
  std::size_t plateau_patience = 5;
  double decay_factor = 0.1;
  double min_improvement = 1e-4;

  std::size_t iter = 0;
  std::size_t decays = 0;
  double best_val_f1 = -1.0;
  std::size_t stagnant_epochs = 0;

  // Returns true when this epoch set a new best. Stagnation only counts once
  // warmup is over; a ramping lr is not a plateau.
  bool end_epoch(double val_f1) {
    if (val_f1 >= best_val_f1 + min_improvement) {
      best_val_f1 = val_f1;
      stagnant_epochs = 0;
      return true;
    }
    if (iter < warmup_iters) return false;
    if (++stagnant_epochs >= plateau_patience) {
      ++decays;
      stagnant_epochs = 0;
    }
    return false;
  }
};

// base_lr * min(1, (iter+1)/warmup) * decay^decays
inline double lr_at(const ScheduleState& s, std::size_t iter) {
  double lr = s.base_lr * std::pow(s.decay_factor, static_cast<double>(s.decays));
  if (iter < s.warmup_iters)
    lr = lr * static_cast<double>(iter + 1) / static_cast<double>(s.warmup_iters);
  return lr;
}

using GradientSet = std::map<std::string, std::vector<double>>;

struct TrainState {
  ParamStore params;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  std::size_t epoch = 0;
  ScheduleState schedule;

  // Moments exist only for trainable parameters.
  void reset_moments() {
    m.clear();
    v.clear();
    for (const auto& e : params.entries())
      if (e.trainable) {
        m[e.name].assign(e.value.numel(), 0.0);
        v[e.name].assign(e.value.numel(), 0.0);
      }
  }
};

// AdamW with bias correction and decoupled weight decay. `grads` must cover
// exactly the trainable set.
inline void adamw_step(TrainState& st, const GradientSet& grads, double lr) {
  for (const auto& [name, g] : grads) {
    if (!st.params.contains(name)) throw ContractError("gradient for unknown parameter '" + name + "'");
    if (!st.params.trainable(name)) throw ContractError("gradient supplied for frozen parameter '" + name + "'");
    if (g.size() != st.params.get(name).numel()) throw ContractError("gradient size mismatch for '" + name + "'");
  }
  for (const auto& e : st.params.entries())
    if (e.trainable && !grads.count(e.name)) throw ContractError("missing gradient for '" + e.name + "'");
  if (st.m.empty() && st.params.trainable_scalars() > 0) st.reset_moments();

  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (auto& e : st.params.entries()) {
    if (!e.trainable) continue;
    const auto& g = grads.at(e.name);
    auto& m = st.m.at(e.name);
    auto& v = st.v.at(e.name);
    auto p = e.value.mutable_data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] *= 1.0 - lr * st.weight_decay;
      p[i] -= lr * mhat / (std::sqrt(vhat) + st.adam_eps);
    }
  }
}

}  // namespace atgn
