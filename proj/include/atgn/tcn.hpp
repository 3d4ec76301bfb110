#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "atgn/ops.hpp"
#include "atgn/params.hpp"

// Per-modality temporal feature extraction: a linear input adapter followed
// by stacked residual blocks of causal dilated convolutions.
namespace atgn::tcn {

struct TcnConfig {
  std::size_t channels = 128;
  std::size_t kernel = 3;
  std::vector<std::size_t> dilations{1, 2, 4, 8};
  std::size_t convs_per_block = 2;
  double dropout = 0.1;

  void validate() const {
    if (kernel < 1) throw ConfigError("tcn kernel must be >= 1");
    if (channels < 1) throw ConfigError("tcn channels must be >= 1");
    for (std::size_t d : dilations)
      if (d < 1) throw ConfigError("tcn dilations must be strictly positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("tcn dropout must be in [0,1)");
  }
};

// Span of past inputs reaching one output step.
inline std::size_t receptive_field(const TcnConfig& cfg) {
  const std::size_t dsum = std::accumulate(cfg.dilations.begin(), cfg.dilations.end(), std::size_t{0});
  return 1 + cfg.convs_per_block * (cfg.kernel - 1) * dsum;
}

inline void init_input_adapter(ParamStore& store, const std::string& prefix, std::size_t in_dim, std::size_t out_dim,
                               Initializer& init) {
  store.add(prefix + ".weight", init.fan_in({in_dim, out_dim}, in_dim));
  store.add(prefix + ".bias", Tensor::zeros({out_dim}));
}

// Per-frame linear map [L×D] -> [L×C_t].
inline Tensor input_adapter(const Tensor& features, const ParamStore& store, const std::string& prefix) {
  return linear(features, store.get(prefix + ".weight"), store.get(prefix + ".bias"));
}

inline std::string conv_name(const std::string& prefix, std::size_t block, std::size_t conv) {
  return prefix + ".block" + std::to_string(block) + ".conv" + std::to_string(conv);
}

inline void init_tcn(ParamStore& store, const std::string& prefix, const TcnConfig& cfg, Initializer& init) {
  cfg.validate();
  // Scaled-down He init keeps the residual stream bounded as blocks stack.
  const double gain = std::sqrt(2.0) / std::sqrt(static_cast<double>(cfg.dilations.size() * cfg.convs_per_block));
  for (std::size_t b = 0; b < cfg.dilations.size(); ++b)
    for (std::size_t c = 0; c < cfg.convs_per_block; ++c) {
      const std::string n = conv_name(prefix, b, c);
      store.add(n + ".weight",
                init.fan_in({cfg.kernel, cfg.channels, cfg.channels}, cfg.kernel * cfg.channels, gain));
      store.add(n + ".bias", Tensor::zeros({cfg.channels}));
    }
}

// [L×C_t] -> [L×C_t]; causal, output length equals input length.
inline Tensor tcn_forward(const Tensor& x, const TcnConfig& cfg, const ParamStore& store, const std::string& prefix,
                          const ForwardOptions& opt = {}) {
  if (x.rank() != 2 || x.dim(0) < 1) throw DimensionError("tcn_forward expects [L×C] with L >= 1");
  Tensor h = x;
  const std::uint64_t seed = mix_seed(opt.dropout_seed, fnv1a(prefix));
  std::uint64_t salt = 0;
  for (std::size_t b = 0; b < cfg.dilations.size(); ++b) {
    Tensor y = h;
    for (std::size_t c = 0; c < cfg.convs_per_block; ++c) {
      const std::string n = conv_name(prefix, b, c);
      y = relu(add_bias(conv1d_dilated(y, store.get(n + ".weight"), cfg.dilations[b]), store.get(n + ".bias")));
      if (opt.training && cfg.dropout > 0.0) y = dropout(y, cfg.dropout, mix_seed(seed, salt++));
    }
    h = add(h, y);
  }
  if (opt.trace) opt.trace->push_back(prefix);
  return h;
}

}  // namespace atgn::tcn
