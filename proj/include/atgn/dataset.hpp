#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "atgn/audio.hpp"
#include "atgn/clips.hpp"
#include "atgn/encoders.hpp"
#include "atgn/feature_file.hpp"
#include "atgn/labels.hpp"
#include "atgn/model.hpp"
#include "atgn/wav.hpp"

// Dataset directory:
//   manifest.txt       key=value lines: fps, train=<ids>, val=<ids>
//   labels.csv
//   visual/<id>.atgn   section "visual" [n×D_v]
//   audio/<id>.wav     mono PCM
//   audio/<id>.atgn    optional cache of frame-aligned audio features
namespace atgn::data {

struct AudioPipelineConfig {
  audio::SpectrogramConfig spectrogram;
  encoders::ToyAudioConfig encoder;
  std::uint64_t encoder_seed = 2024;

  std::string fingerprint() const {
    const auto& s = spectrogram;
    std::ostringstream os;
    os << s.frame_len << ' ' << s.hop << ' ' << s.n_fft << ' ' << s.n_mels << ' ' << s.fmin << ' ' << s.fmax << ' '
       << s.log_floor << ' ' << s.n_mfcc << ' ' << static_cast<int>(s.window) << ' ' << encoder.channels1 << ' '
       << encoder.channels2 << ' ' << encoder.out_dim << ' ' << encoder_seed;
    return os.str();
  }
};

// The audio embedding network is fixed at extraction time (seeded, never
// trained), the way a pretrained embedding model would be.
inline ParamStore frozen_audio_encoder(const AudioPipelineConfig& cfg) {
  ParamStore store;
  Initializer init(cfg.encoder_seed);
  encoders::init_toy_audio_encoder(store, "audio_encoder", cfg.encoder, init);
  for (auto& e : store.entries()) e.trainable = false;
  return store;
}

// 96-row log-mel window centred on `row`, edge rows repeated.
inline Tensor audio_patch(const Tensor& logmel, std::size_t row) {
  const std::size_t rows = logmel.dim(0), m = logmel.dim(1);
  std::vector<double> out(encoders::kAudioPatchFrames * m);
  const long half = static_cast<long>(encoders::kAudioPatchFrames / 2);
  for (std::size_t i = 0; i < encoders::kAudioPatchFrames; ++i) {
    const long r = std::clamp<long>(static_cast<long>(row) - half + static_cast<long>(i), 0, static_cast<long>(rows) - 1);
    std::copy_n(logmel.data().begin() + r * static_cast<long>(m), m, out.begin() + static_cast<long>(i * m));
  }
  return Tensor::from({encoders::kAudioPatchFrames, m}, std::move(out));
}

// Log-mel, MFCC and embedding rows aligned to n_frames video frames at fps.
inline audio::AudioFeatureSeq audio_features_for_video(const audio::PcmSignal& sig, const AudioPipelineConfig& cfg,
                                                       double fps, std::size_t n_frames, bool with_embedding = true) {
  const auto spec = audio::extract(sig, cfg.spectrogram);
  const double rows_per_second = static_cast<double>(sig.sample_rate) / static_cast<double>(cfg.spectrogram.hop);
  audio::AudioFeatureSeq seq;
  seq.logmel = audio::align_to_video(spec.logmel, rows_per_second, fps, n_frames);
  seq.mfcc = audio::align_to_video(spec.mfcc, rows_per_second, fps, n_frames);
  const std::size_t rows = spec.logmel.dim(0);
  for (std::size_t i = 0; i < n_frames; ++i) {
    const long r = std::lround(static_cast<double>(i) * rows_per_second / fps);
    seq.frame_times.push_back(static_cast<double>(std::clamp<long>(r, 0, static_cast<long>(rows) - 1)) /
                              rows_per_second);
  }
  if (with_embedding) {
    if (cfg.spectrogram.n_mels != encoders::kAudioPatchMels)
      throw ConfigError("audio embedding needs n_mels = 64 patches");
    const ParamStore enc = frozen_audio_encoder(cfg);
    const std::size_t c = cfg.encoder.out_dim;
    std::vector<double> emb(n_frames * c);
    for (std::size_t i = 0; i < n_frames; ++i) {
      const std::size_t row = static_cast<std::size_t>(std::llround(seq.frame_times[i] * rows_per_second));
      const Tensor e = encoders::toy_audio_encoder(audio_patch(spec.logmel, row), enc, "audio_encoder");
      std::copy(e.data().begin(), e.data().end(), emb.begin() + static_cast<long>(i * c));
    }
    seq.embedding = Tensor::from({n_frames, c}, std::move(emb));
  }
  return seq;
}

inline double fingerprint_value(const std::string& s) {
  return static_cast<double>(fnv1a(s) & ((std::uint64_t{1} << 52) - 1));
}

inline io::TensorList audio_cache_sections(const audio::AudioFeatureSeq& seq, const AudioPipelineConfig& cfg) {
  return {{"pipeline", Tensor::from({1}, {fingerprint_value(cfg.fingerprint())}), io::DType::f64},
          {"logmel", seq.logmel, io::DType::f32},
          {"mfcc", seq.mfcc, io::DType::f32},
          {"embedding", seq.embedding, io::DType::f32}};
}

struct Manifest {
  double fps = 30.0;
  std::vector<std::string> train;
  std::vector<std::string> val;
};

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t\r");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.txt";
  std::ifstream in(path);
  if (!in) throw PathError("no dataset manifest at '" + path.string() + "'; create one with `atgn gen`");
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "format") {
      if (value != "atgn-dataset-1") throw ConfigError("unsupported dataset format '" + value + "'");
    } else if (key == "fps") {
      if (std::from_chars(value.data(), value.data() + value.size(), m.fps).ec != std::errc{} || !(m.fps > 0.0))
        throw ConfigError("manifest fps must be a positive number");
    } else if (key == "train") {
      m.train = split_list(value);
    } else if (key == "val") {
      m.val = split_list(value);
    } else {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unknown manifest key '" + key + "'");
    }
  }
  if (m.train.empty()) throw ConfigError("manifest lists no training videos");
  return m;
}

struct Dataset {
  double fps = 30.0;
  std::vector<std::string> au_names;
  std::vector<BranchSpec> branches;
  std::vector<VideoData> train;
  std::vector<VideoData> val;
};

inline const std::vector<std::string>& known_branches() {
  static const std::vector<std::string> names{"visual", "audio", "mfcc", "logmel"};
  return names;
}

// Loads (or computes and caches) frame-aligned audio features for one video.
inline audio::AudioFeatureSeq load_audio_features(const std::filesystem::path& dir, const std::string& id, double fps,
                                                  std::size_t n_frames, const AudioPipelineConfig& cfg,
                                                  bool write_cache = true) {
  const auto cache = dir / "audio" / (id + ".atgn");
  if (std::filesystem::exists(cache)) {
    const auto list = io::read_feature_file(cache);
    const auto* fp = io::find(list, "pipeline");
    const auto* lm = io::find(list, "logmel");
    const auto* mf = io::find(list, "mfcc");
    const auto* em = io::find(list, "embedding");
    if (fp && lm && mf && em && fp->tensor.numel() == 1 && fp->tensor[0] == fingerprint_value(cfg.fingerprint()) &&
        lm->tensor.dim(0) == n_frames) {
      audio::AudioFeatureSeq seq;
      seq.logmel = lm->tensor;
      seq.mfcc = mf->tensor;
      seq.embedding = em->tensor;
      return seq;
    }
  }
  const auto wav = dir / "audio" / (id + ".wav");
  if (!std::filesystem::exists(wav)) throw PathError("missing audio '" + wav.string() + "' for video '" + id + "'");
  auto seq = audio_features_for_video(io::read_wav(wav), cfg, fps, n_frames);
  if (write_cache) io::write_feature_file(cache, audio_cache_sections(seq, cfg));
  // Re-read through the f32 cache so fresh and cached loads agree exactly.
  if (write_cache) return load_audio_features(dir, id, fps, n_frames, cfg, false);
  return seq;
}

inline Dataset load_dataset(const std::filesystem::path& dir, const std::vector<std::string>& branch_names,
                            const AudioPipelineConfig& audio_cfg) {
  if (branch_names.empty()) throw ConfigError("at least one input branch is required");
  for (const auto& b : branch_names)
    if (std::find(known_branches().begin(), known_branches().end(), b) == known_branches().end())
      throw ConfigError("unknown branch '" + b + "' (expected visual, audio, mfcc or logmel)");
  const Manifest man = read_manifest(dir);
  const auto labels_path = dir / "labels.csv";
  if (!std::filesystem::exists(labels_path))
    throw PathError("missing '" + labels_path.string() + "'; every dataset needs a label table");
  const io::LabelTable table = io::read_labels_csv(labels_path);

  Dataset ds;
  ds.fps = man.fps;
  ds.au_names = table.au_names;
  const bool needs_audio = std::any_of(branch_names.begin(), branch_names.end(),
                                       [](const std::string& b) { return b != "visual"; });

  auto load_video = [&](const std::string& id) {
    const io::VideoLabels* lab = table.find(id);
    if (!lab) throw ConfigError("video '" + id + "' has no rows in labels.csv");
    VideoData v;
    v.id = id;
    v.labels = lab->labels;
    const std::size_t n = v.labels.dim(0);
    Tensor visual;
    if (std::find(branch_names.begin(), branch_names.end(), "visual") != branch_names.end()) {
      const auto p = dir / "visual" / (id + ".atgn");
      if (!std::filesystem::exists(p)) throw PathError("missing visual features '" + p.string() + "'");
      visual = encoders::ingest_visual_features(p).rows;
    }
    audio::AudioFeatureSeq aud;
    if (needs_audio) aud = load_audio_features(dir, id, man.fps, n, audio_cfg);
    for (const auto& b : branch_names) {
      if (b == "visual") v.modalities.push_back(visual);
      else if (b == "audio") v.modalities.push_back(aud.embedding);
      else if (b == "mfcc") v.modalities.push_back(aud.mfcc);
      else v.modalities.push_back(aud.logmel);
    }
    for (std::size_t m = 0; m < v.modalities.size(); ++m)
      if (v.modalities[m].dim(0) != n)
        throw AlignmentError("video '" + id + "': branch '" + branch_names[m] + "' has " +
                             std::to_string(v.modalities[m].dim(0)) + " frames, labels have " + std::to_string(n));
    return v;
  };

  for (const auto& id : man.train) ds.train.push_back(load_video(id));
  for (const auto& id : man.val) ds.val.push_back(load_video(id));
  for (std::size_t i = 0; i < branch_names.size(); ++i)
    ds.branches.push_back({branch_names[i], ds.train.front().modalities[i].dim(1)});
  return ds;
}

// Per-branch z-scoring with statistics from the training split.
struct FeatureNorm {
  std::vector<std::string> names;
  std::vector<Tensor> mean;
  std::vector<Tensor> stddev;
};

inline FeatureNorm fit_norm(const std::vector<VideoData>& train, const std::vector<BranchSpec>& branches) {
  FeatureNorm norm;
  for (std::size_t b = 0; b < branches.size(); ++b) {
    const std::size_t d = branches[b].in_dim;
    std::vector<double> sum(d, 0.0), sq(d, 0.0);
    double rows = 0.0;
    for (const auto& v : train) {
      const auto x = v.modalities[b].data();
      for (std::size_t r = 0; r < v.modalities[b].dim(0); ++r)
        for (std::size_t j = 0; j < d; ++j) sum[j] += x[r * d + j];
      rows += static_cast<double>(v.modalities[b].dim(0));
    }
    if (rows == 0.0) throw ArgumentError("cannot fit feature normalization on zero frames");
    for (double& s : sum) s /= rows;
    for (const auto& v : train) {
      const auto x = v.modalities[b].data();
      for (std::size_t r = 0; r < v.modalities[b].dim(0); ++r)
        for (std::size_t j = 0; j < d; ++j) sq[j] += (x[r * d + j] - sum[j]) * (x[r * d + j] - sum[j]);
    }
    for (double& s : sq) s = std::max(std::sqrt(s / rows), 1e-6);
    norm.names.push_back(branches[b].name);
    norm.mean.push_back(Tensor::from({d}, std::move(sum)));
    norm.stddev.push_back(Tensor::from({d}, std::move(sq)));
  }
  return norm;
}

inline void apply_norm(std::vector<VideoData>& videos, const FeatureNorm& norm) {
  for (auto& v : videos) {
    if (v.modalities.size() != norm.names.size()) throw DimensionError("normalization / branch count mismatch");
    for (std::size_t b = 0; b < v.modalities.size(); ++b) {
      const std::size_t d = norm.mean[b].numel();
      if (v.modalities[b].dim(1) != d) throw DimensionError("branch '" + norm.names[b] + "' width changed");
      std::vector<double> x = v.modalities[b].values();
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - norm.mean[b][i % d]) / norm.stddev[b][i % d];
      v.modalities[b] = Tensor::from(v.modalities[b].shape(), std::move(x));
    }
  }
}

inline io::TensorList norm_sections(const FeatureNorm& norm) {
  io::TensorList out;
  for (std::size_t b = 0; b < norm.names.size(); ++b) {
    out.push_back({"norm." + norm.names[b] + ".mean", norm.mean[b], io::DType::f64});
    out.push_back({"norm." + norm.names[b] + ".std", norm.stddev[b], io::DType::f64});
  }
  return out;
}

inline FeatureNorm norm_from_sections(const io::TensorList& list, const std::vector<BranchSpec>& branches) {
  FeatureNorm norm;
  for (const auto& b : branches) {
    const auto* m = io::find(list, "norm." + b.name + ".mean");
    const auto* s = io::find(list, "norm." + b.name + ".std");
    if (!m || !s) throw FormatError("checkpoint lacks normalization for branch '" + b.name + "'", 0);
    if (m->tensor.numel() != b.in_dim || s->tensor.numel() != b.in_dim)
      throw DimensionError("checkpoint normalization for '" + b.name + "' has the wrong width");
    norm.names.push_back(b.name);
    norm.mean.push_back(m->tensor);
    norm.stddev.push_back(s->tensor);
  }
  return norm;
}

// Positive and labeled counts per AU over a split.
struct LabelStats {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> labeled;
  std::size_t frames = 0;
};

inline LabelStats label_stats(const std::vector<VideoData>& videos, double ignore_label = -1.0) {
  LabelStats s;
  for (const auto& v : videos) {
    const std::size_t n = v.labels.dim(1);
    s.positives.resize(n, 0);
    s.labeled.resize(n, 0);
    for (std::size_t r = 0; r < v.labels.dim(0); ++r)
      for (std::size_t a = 0; a < n; ++a) {
        const double y = v.labels[r * n + a];
        if (y == ignore_label) continue;
        ++s.labeled[a];
        s.positives[a] += (y == 1.0);
      }
    s.frames += v.labels.dim(0);
  }
  return s;
}

}  // namespace atgn::data
