#pragma once

#include <filesystem>
#include <string>

#include "atgn/feature_file.hpp"
#include "atgn/ops.hpp"
#include "atgn/params.hpp"

// Per-frame modality embeddings: ingestion of precomputed visual backbone
// features, and small convolutional stand-ins for the visual and audio
// backbones.
namespace atgn::encoders {

enum class Source { ingested, toy_encoder, synthetic };

struct VisualFeatureSeq {
  Tensor rows;  // [n_frames×D_v]
  Source source = Source::ingested;

  std::size_t frames() const { return rows.dim(0); }
  std::size_t dim() const { return rows.dim(1); }
};

inline constexpr const char* kVisualSection = "visual";

inline void write_visual_features(const std::filesystem::path& path, const VisualFeatureSeq& seq,
                                  io::DType dtype = io::DType::f32) {
  io::write_feature_file(path, {{kVisualSection, seq.rows, dtype}});
}

inline VisualFeatureSeq ingest_visual_features(const std::filesystem::path& path) {
  const auto list = io::read_feature_file(path);
  const io::NamedTensor* nt = io::find(list, kVisualSection);
  if (!nt) throw FormatError("feature file '" + path.string() + "' has no '" + kVisualSection + "' section", 10);
  if (nt->tensor.rank() != 2) {
    throw FormatError("visual section must be rank 2 [frames×dim], got " + shape_str(nt->tensor.shape()), 10);
  }
  return {nt->tensor, Source::ingested};
}

// 32×32×3 images in [0,1] by default.
struct ToyImage {
  Tensor pixels;  // [H×W×3]
};

struct ToyVisualConfig {
  std::size_t channels1 = 8;
  std::size_t channels2 = 16;
  std::size_t out_dim = 512;  // D_v
};

inline void init_toy_visual_encoder(ParamStore& store, const std::string& prefix, const ToyVisualConfig& cfg,
                                    Initializer& init) {
  store.add(prefix + ".conv1.weight", init.fan_in({3, 3, 3, cfg.channels1}, 27, std::sqrt(2.0)));
  store.add(prefix + ".conv1.bias", Tensor::zeros({cfg.channels1}));
  store.add(prefix + ".conv2.weight", init.fan_in({3, 3, cfg.channels1, cfg.channels2}, 9 * cfg.channels1, std::sqrt(2.0)));
  store.add(prefix + ".conv2.bias", Tensor::zeros({cfg.channels2}));
  store.add(prefix + ".out.weight", init.fan_in({cfg.channels2, cfg.out_dim}, cfg.channels2));
  store.add(prefix + ".out.bias", Tensor::zeros({cfg.out_dim}));
}

// Two conv3×3+relu+2×2 mean-pool stages, global mean pool, linear to D_v.
inline Tensor toy_visual_encoder(const ToyImage& img, const ParamStore& store, const std::string& prefix) {
  const Tensor& x = img.pixels;
  if (x.rank() != 3 || x.dim(2) != 3) throw DimensionError("toy image must be [H×W×3], got " + shape_str(x.shape()));
  Tensor h = avg_pool2x2(relu(add_bias(conv2d_same(x, store.get(prefix + ".conv1.weight")), store.get(prefix + ".conv1.bias"))));
  h = avg_pool2x2(relu(add_bias(conv2d_same(h, store.get(prefix + ".conv2.weight")), store.get(prefix + ".conv2.bias"))));
  const Tensor pooled = mean_pool_axis(mean_pool_axis(h, 0), 0);
  const Tensor y = linear(reshape(pooled, {1, pooled.dim(0)}), store.get(prefix + ".out.weight"),
                          store.get(prefix + ".out.bias"));
  return reshape(y, {y.dim(1)});
}

// VGGish input convention: 96 frames × 64 mel bands.
inline constexpr std::size_t kAudioPatchFrames = 96;
inline constexpr std::size_t kAudioPatchMels = 64;

struct ToyAudioConfig {
  std::size_t channels1 = 4;
  std::size_t channels2 = 8;
  std::size_t out_dim = 128;  // C_a
};

inline void init_toy_audio_encoder(ParamStore& store, const std::string& prefix, const ToyAudioConfig& cfg,
                                   Initializer& init) {
  const std::size_t flat = (kAudioPatchFrames / 4) * (kAudioPatchMels / 4) * cfg.channels2;
  store.add(prefix + ".conv1.weight", init.fan_in({3, 3, 1, cfg.channels1}, 9, std::sqrt(2.0)));
  store.add(prefix + ".conv1.bias", Tensor::zeros({cfg.channels1}));
  store.add(prefix + ".conv2.weight", init.fan_in({3, 3, cfg.channels1, cfg.channels2}, 9 * cfg.channels1, std::sqrt(2.0)));
  store.add(prefix + ".conv2.bias", Tensor::zeros({cfg.channels2}));
  store.add(prefix + ".out.weight", init.fan_in({flat, cfg.out_dim}, flat));
  store.add(prefix + ".out.bias", Tensor::zeros({cfg.out_dim}));
}

// [96×64] log-mel patch -> [C_a]. Two conv+relu+pool stages keep the
// time/frequency layout; the flattened map feeds the output projection.
inline Tensor toy_audio_encoder(const Tensor& patch, const ParamStore& store, const std::string& prefix) {
  if (patch.rank() != 2 || patch.dim(0) != kAudioPatchFrames || patch.dim(1) != kAudioPatchMels) {
    throw DimensionError("audio patch must be [96×64], got " + shape_str(patch.shape()));
  }
  Tensor h = reshape(patch, {kAudioPatchFrames, kAudioPatchMels, 1});
  h = avg_pool2x2(relu(add_bias(conv2d_same(h, store.get(prefix + ".conv1.weight")), store.get(prefix + ".conv1.bias"))));
  h = avg_pool2x2(relu(add_bias(conv2d_same(h, store.get(prefix + ".conv2.weight")), store.get(prefix + ".conv2.bias"))));
  const Tensor y = linear(reshape(h, {1, h.numel()}), store.get(prefix + ".out.weight"), store.get(prefix + ".out.bias"));
  return reshape(y, {y.dim(1)});
}

}  // namespace atgn::encoders
