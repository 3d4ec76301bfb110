#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "atgn/ops.hpp"
#include "atgn/params.hpp"

// Multimodal fusion: branch concatenation, convolutional projection, a stack
// of GPT-2 style pre-norm transformer blocks and the per-frame AU head.
namespace atgn::fusion {

struct FusionConfig {
  std::size_t n_branches = 3;
  std::size_t width = 128;  // projected width C'
  std::size_t proj_kernel = 1;
  std::size_t n_blocks = 4;
  std::size_t n_heads = 4;
  std::size_t mlp_ratio = 4;
  bool causal_mask = true;
  std::size_t n_aus = 12;
  double ln_eps = 1e-5;

  void validate() const {
    if (n_branches < 1) throw ConfigError("fusion needs at least one branch");
    if (width < 1 || n_heads < 1 || width % n_heads != 0)
      throw ConfigError("fusion width must be divisible by n_heads");
    if (n_blocks < 1) throw ConfigError("fusion n_blocks must be >= 1");
    if (proj_kernel < 1) throw ConfigError("fusion proj_kernel must be >= 1");
    if (mlp_ratio < 1 || n_aus < 1) throw ConfigError("fusion mlp_ratio and n_aus must be >= 1");
  }
};

inline constexpr const char* kBlockPrefix = "fusion.blocks.";

inline std::string block_name(std::size_t i) { return kBlockPrefix + std::to_string(i); }

// Last-axis concatenation in declared branch order.
inline Tensor fuse_concat(const std::vector<Tensor>& branches) {
  if (branches.empty()) throw ArgumentError("fuse_concat: no branches");
  for (const auto& b : branches) {
    if (b.rank() != 2 || b.dim(0) != branches[0].dim(0)) {
      throw DimensionError("fuse_concat: branch " + shape_str(b.shape()) + " does not share length with " +
                           shape_str(branches[0].shape()));
    }
  }
  if (branches.size() == 1) return branches[0];
  return concat_lastaxis(branches);
}

inline void init_conv_project(ParamStore& store, std::size_t in_width, const FusionConfig& cfg, Initializer& init) {
  store.add("fusion.proj.weight", init.fan_in({cfg.proj_kernel, in_width, cfg.width}, cfg.proj_kernel * in_width));
  store.add("fusion.proj.bias", Tensor::zeros({cfg.width}));
}

// Causal temporal convolution (pointwise for kernel 1) to width C'.
inline Tensor conv_project(const Tensor& fused, const ParamStore& store) {
  const Tensor& w = store.get("fusion.proj.weight");
  if (fused.rank() != 2 || fused.dim(1) != w.dim(1)) {
    throw DimensionError("conv_project: input " + shape_str(fused.shape()) + " does not match projection " +
                         shape_str(w.shape()));
  }
  const Tensor y = w.dim(0) == 1 ? matmul(fused, reshape(w, {w.dim(1), w.dim(2)})) : conv1d_dilated(fused, w, 1);
  return add_bias(y, store.get("fusion.proj.bias"));
}

inline void init_transformer_block(ParamStore& store, std::size_t index, const FusionConfig& cfg, Initializer& init) {
  const std::string p = block_name(index);
  const std::size_t c = cfg.width, hidden = cfg.mlp_ratio * cfg.width;
  // Residual-branch outputs shrink with depth, as in GPT-2.
  const double out_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_blocks));
  store.add(p + ".ln1.gain", Tensor::full({c}, 1.0));
  store.add(p + ".ln1.bias", Tensor::zeros({c}));
  store.add(p + ".attn.qkv.weight", init.fan_in({c, 3 * c}, c));
  store.add(p + ".attn.qkv.bias", Tensor::zeros({3 * c}));
  store.add(p + ".attn.out.weight", init.fan_in({c, c}, c, out_gain));
  store.add(p + ".attn.out.bias", Tensor::zeros({c}));
  store.add(p + ".ln2.gain", Tensor::full({c}, 1.0));
  store.add(p + ".ln2.bias", Tensor::zeros({c}));
  store.add(p + ".mlp.fc.weight", init.fan_in({c, hidden}, c));
  store.add(p + ".mlp.fc.bias", Tensor::zeros({hidden}));
  store.add(p + ".mlp.out.weight", init.fan_in({hidden, c}, hidden, out_gain));
  store.add(p + ".mlp.out.bias", Tensor::zeros({c}));
}

// Optional capture of per-head attention probabilities.
struct AttentionTrace {
  std::vector<Tensor> probs;
};

// Pre-norm block: x + MHA(LN1(x)), then + MLP(LN2(·)) with GELU.
inline Tensor transformer_block(const Tensor& x, const ParamStore& store, std::size_t index, const FusionConfig& cfg,
                                AttentionTrace* attn_trace = nullptr) {
  const std::string p = block_name(index);
  const std::size_t c = cfg.width;
  if (x.rank() != 2 || x.dim(1) != c)
    throw DimensionError("transformer_block: input " + shape_str(x.shape()) + " does not have width " + std::to_string(c));
  const std::size_t hd = c / cfg.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  const Tensor h = layer_norm(x, store.get(p + ".ln1.gain"), store.get(p + ".ln1.bias"), cfg.ln_eps);
  const Tensor qkv = linear(h, store.get(p + ".attn.qkv.weight"), store.get(p + ".attn.qkv.bias"));
  std::vector<Tensor> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t i = 0; i < cfg.n_heads; ++i) {
    const Tensor q = slice_lastaxis(qkv, i * hd, hd);
    const Tensor k = slice_lastaxis(qkv, c + i * hd, hd);
    const Tensor v = slice_lastaxis(qkv, 2 * c + i * hd, hd);
    const Tensor probs = softmax_lastaxis(scale(matmul(q, transpose(k)), inv_sqrt), cfg.causal_mask);
    if (attn_trace) attn_trace->probs.push_back(probs);
    heads.push_back(matmul(probs, v));
  }
  const Tensor attn = heads.size() == 1 ? heads[0] : concat_lastaxis(heads);
  const Tensor x1 = add(x, linear(attn, store.get(p + ".attn.out.weight"), store.get(p + ".attn.out.bias")));

  const Tensor h2 = layer_norm(x1, store.get(p + ".ln2.gain"), store.get(p + ".ln2.bias"), cfg.ln_eps);
  const Tensor mlp = linear(gelu(linear(h2, store.get(p + ".mlp.fc.weight"), store.get(p + ".mlp.fc.bias"))),
                            store.get(p + ".mlp.out.weight"), store.get(p + ".mlp.out.bias"));
  return add(x1, mlp);
}

inline void init_classifier_head(ParamStore& store, const FusionConfig& cfg, Initializer& init) {
  store.add("head.weight", init.fan_in({cfg.width, cfg.n_aus}, cfg.width));
  store.add("head.bias", Tensor::zeros({cfg.n_aus}));
}

// [L×C'] -> [L×n_aus] pre-sigmoid logits.
inline Tensor classifier_head(const Tensor& features, const ParamStore& store) {
  return linear(features, store.get("head.weight"), store.get("head.bias"));
}

// Which parameters receive updates.
//   "ln-only"      inside transformer blocks only LayerNorm gain/bias train;
//                  everything outside the blocks trains.
//   "freeze-none"  everything trains.
//   "freeze:a,b"   everything trains except the listed parameter names.
struct FreezePolicy {
  enum class Kind { ln_only, freeze_none, explicit_list };
  Kind kind = Kind::ln_only;
  std::vector<std::string> frozen;

  static FreezePolicy parse(const std::string& text) {
    if (text == "ln-only") return {Kind::ln_only, {}};
    if (text == "freeze-none") return {Kind::freeze_none, {}};
    if (text.rfind("freeze:", 0) == 0) {
      FreezePolicy p{Kind::explicit_list, {}};
      std::stringstream ss(text.substr(7));
      for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) p.frozen.push_back(item);
      return p;
    }
    throw ConfigError("unknown freeze policy '" + text + "' (expected ln-only, freeze-none or freeze:<names>)");
  }

  std::string str() const {
    switch (kind) {
      case Kind::ln_only: return "ln-only";
      case Kind::freeze_none: return "freeze-none";
      case Kind::explicit_list: {
        std::string s = "freeze:";
        for (std::size_t i = 0; i < frozen.size(); ++i) s += (i ? "," : "") + frozen[i];
        return s;
      }
    }
    return {};
  }
};

inline bool is_block_layer_norm(const std::string& name) {
  return name.rfind(kBlockPrefix, 0) == 0 &&
         (name.find(".ln1.") != std::string::npos || name.find(".ln2.") != std::string::npos);
}

// Assigns every parameter's trainable flag and returns the resulting mask.
inline std::vector<bool> apply_freeze_policy(ParamStore& store, const FreezePolicy& policy) {
  if (policy.kind == FreezePolicy::Kind::explicit_list) {
    for (const auto& n : policy.frozen)
      if (!store.contains(n)) throw ConfigError("freeze policy names unknown parameter '" + n + "'");
  }
  for (auto& e : store.entries()) {
    switch (policy.kind) {
      case FreezePolicy::Kind::ln_only:
        e.trainable = e.name.rfind(kBlockPrefix, 0) != 0 || is_block_layer_norm(e.name);
        break;
      case FreezePolicy::Kind::freeze_none:
        e.trainable = true;
        break;
      case FreezePolicy::Kind::explicit_list:
        e.trainable = std::find(policy.frozen.begin(), policy.frozen.end(), e.name) == policy.frozen.end();
        break;
    }
  }
  return store.trainable_mask();
}

}  // namespace atgn::fusion
