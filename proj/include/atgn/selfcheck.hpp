#pragma once

#include <cmath>
#include <complex>
#include <cstring>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "atgn/audio.hpp"
#include "atgn/gradcheck.hpp"
#include "atgn/loss.hpp"
#include "atgn/model.hpp"
#include "atgn/optim.hpp"

// Quick built-in sanity suites behind `atgn selfcheck`.
namespace atgn::selfcheck {

struct CheckLine {
  std::string name;
  bool ok = false;
  std::string detail;
};

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool track = true) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = nd(rng);
  return Tensor::from(std::move(shape), std::move(v), track);
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

inline CheckLine gradients(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  bool ok = true;
  auto run = [&](const std::function<Tensor()>& f, const std::vector<Tensor>& leaves) {
    const auto r = check_gradients(f, leaves);
    ok = ok && r.ok;
    worst = std::max(worst, r.max_rel_error);
  };
  {
    Tensor a = random_tensor({5, 4}, rng), b = random_tensor({4, 3}, rng);
    run([&] { return sum(mul(matmul(a, b), matmul(a, b))); }, {a, b});
  }
  {
    Tensor x = random_tensor({9, 3}, rng), f = random_tensor({3, 3, 2}, rng);
    run([&] { return sum(mul(conv1d_dilated(x, f, 2), conv1d_dilated(x, f, 2))); }, {x, f});
  }
  {
    Tensor x = random_tensor({4, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    Tensor w = random_tensor({4, 6}, rng, 1.0, false);
    run([&] { return sum(mul(layer_norm(x, g, b), w)); }, {x, g, b});
  }
  {
    Tensor x = random_tensor({5, 5}, rng), w = random_tensor({5, 5}, rng, 1.0, false);
    run([&] { return sum(mul(softmax_lastaxis(x, true), w)); }, {x});
    run([&] { return sum(mul(gelu(x), w)); }, {x});
  }
  {
    ModelConfig cfg;
    cfg.branches = {{"visual", 5}, {"audio", 4}};
    cfg.tcn.channels = 4;
    cfg.tcn.dilations = {1, 2};
    cfg.tcn.dropout = 0.0;
    cfg.fusion.n_branches = 2;
    cfg.fusion.width = 4;
    cfg.fusion.n_blocks = 1;
    cfg.fusion.n_heads = 2;
    cfg.fusion.mlp_ratio = 2;
    cfg.fusion.n_aus = 3;
    cfg.freeze_policy = "freeze-none";
    ParamStore base = init_model(cfg, seed);
    // Zero biases leave relus fed by all-zero windows exactly on the kink,
    // where central differences see half a slope.
    std::uniform_real_distribution<double> off(0.05, 0.3);
    for (auto& e : base.entries())
      if (e.name.ends_with(".bias"))
        for (double& x : e.value.mutable_data()) x += (rng() & 1 ? 1.0 : -1.0) * off(rng);
    ParamStore store = base.clone(true);
    const std::vector<Tensor> inputs{random_tensor({6, 5}, rng, 1.0, false), random_tensor({6, 4}, rng, 1.0, false)};
    std::vector<double> y(18);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<double>((i * 7 + seed) % 3) - 1.0;
    y[0] = 1.0;
    const Tensor labels = Tensor::from({6, 3}, y);
    LossConfig lc;
    lc.class_weights = {1.0, 2.0, 0.5};
    std::vector<Tensor> leaves;
    for (const auto& e : store.entries()) leaves.push_back(e.value);
    run([&] { return weighted_bce(sigmoid(model_forward(cfg, store, inputs)), labels, lc); }, leaves);
  }
  return {"gradients seed " + std::to_string(seed), ok, "max rel err " + fmt(worst)};
}

inline CheckLine dft_oracle() {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t n = 256;
  std::vector<double> frames(20 * n);
  for (double& x : frames) x = nd(rng);
  const Tensor ps = audio::power_spectrum(Tensor::from({20, n}, frames), n);
  double worst = 0.0;
  for (std::size_t f = 0; f < 20; ++f)
    for (std::size_t k = 0; k <= n / 2; ++k) {
      std::complex<double> acc = 0.0;
      for (std::size_t t = 0; t < n; ++t)
        acc += frames[f * n + t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / n);
      worst = std::max(worst, std::abs(std::norm(acc) - ps[f * (n / 2 + 1) + k]));
    }
  return {"dft oracle", worst <= 1e-6, "max abs err " + fmt(worst)};
}

// Positive weights keep every relu live, so the gradient support of the last
// output equals the receptive field.
inline CheckLine receptive_field() {
  tcn::TcnConfig cfg;
  cfg.channels = 4;
  cfg.dropout = 0.0;
  ParamStore store;
  Initializer init(3);
  tcn::init_tcn(store, "t", cfg, init);
  for (auto& e : store.entries())
    for (double& v : e.value.mutable_data()) v = 0.05 + std::abs(v);
  const std::size_t len = 100;
  Tensor x = Tensor::full({len, cfg.channels}, 1.0, true);
  const Tensor y = tcn::tcn_forward(x, cfg, store, "t");
  const Tensor pick = Tensor::from({len, cfg.channels}, [&] {
    std::vector<double> m(len * cfg.channels, 0.0);
    m[(len - 1) * cfg.channels] = 1.0;
    return m;
  }());
  const auto g = backward(sum(mul(y, pick)));
  const auto& gx = g.at(x);
  std::size_t support = 0;
  for (std::size_t t = 0; t < len; ++t) {
    bool nz = false;
    for (std::size_t c = 0; c < cfg.channels; ++c) nz = nz || gx[t * cfg.channels + c] != 0.0;
    support += nz;
  }
  const std::size_t rf = tcn::receptive_field(cfg);
  return {"receptive field", support == rf, "support " + std::to_string(support) + " vs " + std::to_string(rf)};
}

inline CheckLine freeze_policy() {
  ModelConfig cfg;
  cfg.branches = {{"visual", 6}};
  cfg.tcn.channels = 8;
  cfg.tcn.dilations = {1};
  cfg.fusion.n_branches = 1;
  cfg.fusion.width = 8;
  cfg.fusion.n_blocks = 2;
  cfg.fusion.n_heads = 2;
  TrainState st;
  st.params = init_model(cfg, 5);
  st.reset_moments();
  const ParamStore before = st.params.clone();
  std::mt19937_64 rng(9);
  LossConfig lc;
  lc.class_weights.assign(cfg.fusion.n_aus, 1.0);
  for (int step = 0; step < 3; ++step) {
    ParamStore local = st.params.clone(true);
    const Tensor x = random_tensor({10, 6}, rng, 1.0, false);
    std::vector<double> y(10 * cfg.fusion.n_aus);
    for (double& v : y) v = static_cast<double>(rng() % 2);
    const auto g = backward(weighted_bce(sigmoid(model_forward(cfg, local, {x})), Tensor::from({10, cfg.fusion.n_aus}, y), lc));
    GradientSet gs;
    for (const auto& e : local.entries())
      if (e.trainable) gs[e.name] = g.contains(e.value) ? g.at(e.value) : std::vector<double>(e.value.numel(), 0.0);
    adamw_step(st, gs, 1e-2);
  }
  bool ok = true;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& a = before.entries()[i];
    if (a.trainable) continue;
    const auto av = a.value.data(), bv = st.params.entries()[i].value.data();
    ok = ok && std::memcmp(av.data(), bv.data(), av.size() * sizeof(double)) == 0;
  }
  return {"freeze policy", ok, ok ? "frozen parameters bitwise unchanged" : "a frozen parameter moved"};
}

inline std::vector<CheckLine> run_all() {
  std::vector<CheckLine> out;
  for (std::uint64_t s = 1; s <= 5; ++s) out.push_back(gradients(s));
  out.push_back(dft_oracle());
  out.push_back(receptive_field());
  out.push_back(freeze_policy());
  return out;
}

}  // namespace atgn::selfcheck
