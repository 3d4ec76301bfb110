#pragma once

#include <string>
#include <vector>

#include "atgn/feature_file.hpp"
#include "atgn/fusion.hpp"
#include "atgn/tcn.hpp"

// Full per-clip network: adapter + TCN per branch, fusion, transformer
// blocks, AU head.
namespace atgn {

struct BranchSpec {
  std::string name;
  std::size_t in_dim = 0;
};

struct ModelConfig {
  std::vector<BranchSpec> branches{{"visual", 512}, {"audio", 128}, {"mfcc", 13}};
  tcn::TcnConfig tcn;
  fusion::FusionConfig fusion;
  bool use_tcn = true;
  bool use_fusion_blocks = true;
  std::string freeze_policy = "ln-only";
  // Optional feature file whose sections overwrite transformer-block
  // parameters by name after initialization.
  std::string block_import;

  void validate() const {
    if (branches.empty()) throw ConfigError("model needs at least one input branch");
    for (const auto& b : branches)
      if (b.in_dim == 0) throw ConfigError("branch '" + b.name + "' has zero input width");
    tcn.validate();
    fusion.validate();
    if (fusion.n_branches != branches.size())
      throw ConfigError("fusion.n_branches (" + std::to_string(fusion.n_branches) + ") does not match " +
                        std::to_string(branches.size()) + " declared branches");
  }
};

// Every section must name an existing block parameter with the same shape;
// blocks may be imported partially.
inline void import_block_weights(ParamStore& store, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw PathError("no block weight file at '" + path.string() + "'");
  for (const auto& s : io::read_feature_file(path)) {
    if (s.name.rfind(fusion::kBlockPrefix, 0) != 0 || !store.contains(s.name))
      throw ConfigError("block weight file: '" + s.name + "' is not a transformer-block parameter of this model");
    Tensor& dst = store.get(s.name);
    if (dst.shape() != s.tensor.shape())
      throw ConfigError("block weight file: '" + s.name + "' has shape " + shape_str(s.tensor.shape()) +
                        ", model expects " + shape_str(dst.shape()));
    dst = s.tensor.clone();
  }
}

inline ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Initializer init(seed);
  ParamStore store;
  for (const auto& b : cfg.branches) {
    tcn::init_input_adapter(store, b.name + ".adapter", b.in_dim, cfg.tcn.channels, init);
    if (cfg.use_tcn) tcn::init_tcn(store, b.name + ".tcn", cfg.tcn, init);
  }
  fusion::init_conv_project(store, cfg.branches.size() * cfg.tcn.channels, cfg.fusion, init);
  if (cfg.use_fusion_blocks)
    for (std::size_t i = 0; i < cfg.fusion.n_blocks; ++i) fusion::init_transformer_block(store, i, cfg.fusion, init);
  fusion::init_classifier_head(store, cfg.fusion, init);
  if (!cfg.block_import.empty()) {
    if (!cfg.use_fusion_blocks) throw ConfigError("fusion.import given but use_fusion_blocks is off");
    import_block_weights(store, cfg.block_import);
  }
  fusion::apply_freeze_policy(store, fusion::FreezePolicy::parse(cfg.freeze_policy));
  return store;
}

// Per-branch inputs [L×in_dim] -> AU logits [L×n_aus].
inline Tensor model_forward(const ModelConfig& cfg, const ParamStore& store, const std::vector<Tensor>& inputs,
                            const ForwardOptions& opt = {}) {
  if (inputs.size() != cfg.branches.size()) {
    throw DimensionError("model_forward: expected " + std::to_string(cfg.branches.size()) + " branch inputs, got " +
                         std::to_string(inputs.size()));
  }
  std::vector<Tensor> temporal;
  temporal.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& b = cfg.branches[i];
    if (inputs[i].rank() != 2 || inputs[i].dim(1) != b.in_dim) {
      throw DimensionError("branch '" + b.name + "' expects width " + std::to_string(b.in_dim) + ", got " +
                           shape_str(inputs[i].shape()));
    }
    Tensor h = tcn::input_adapter(inputs[i], store, b.name + ".adapter");
    if (opt.trace) opt.trace->push_back(b.name + ".adapter");
    if (cfg.use_tcn) h = tcn::tcn_forward(h, cfg.tcn, store, b.name + ".tcn", opt);
    temporal.push_back(h);
  }
  Tensor x = fusion::conv_project(fusion::fuse_concat(temporal), store);
  if (opt.trace) opt.trace->push_back("fusion.proj");
  if (cfg.use_fusion_blocks) {
    for (std::size_t i = 0; i < cfg.fusion.n_blocks; ++i) {
      x = fusion::transformer_block(x, store, i, cfg.fusion);
      if (opt.trace) opt.trace->push_back(fusion::block_name(i));
    }
  }
  Tensor logits = fusion::classifier_head(x, store);
  if (opt.trace) opt.trace->push_back("head");
  return logits;
}

}  // namespace atgn
