#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "atgn/audio.hpp"
#include "atgn/encoders.hpp"
#include "atgn/labels.hpp"
#include "atgn/wav.hpp"

// Synthetic audio-visual AU dataset with planted temporal rules.
//
// Each AU owns a latent AR(1) walk z. AU a is active at frame t when
// z_a(t - lag - j) > level_a for every j in [0, min_run); frames without that
// much history are unannotated (-1). Levels are solved per AU so positive
// rates spread evenly over [pos_rate_min, pos_rate_max].
//
// Visual rows are a fixed linear mix of the current latents, plus an optional
// per-video offset inside the latent subspace and white noise. Audio carries
// one tone per latent whose log-amplitude tracks the latent.
namespace atgn::synth {

struct SyntheticSpec {
  std::size_t n_videos = 8;
  std::size_t frames = 1000;
  std::size_t n_val = 2;
  double fps = 30.0;
  std::uint64_t seed = 7;
  std::size_t n_aus = io::kNumAus;
  std::size_t visual_dim = 64;
  double smoothing = 0.9;  // AR(1) coefficient
  std::size_t lag = 10;
  std::size_t min_run = 3;
  double sigma_v = 0.1;
  double sigma_a = 0.005;
  double subject_sigma = 0.0;
  double pos_rate_min = 0.10;
  double pos_rate_max = 0.30;
  int sample_rate = 16000;
  double tone_amplitude = 0.015;
  // 0: both modalities show the whole latent. s > 0: each modality also
  // carries a private walk and the latent is their normalized sum, so only a
  // joint (non-additive) reading of audio and video recovers it.
  double modality_split = 0.0;

  std::size_t history() const { return lag + min_run - 1; }

  void validate() const {
    if (n_videos == 0 || frames == 0) throw ConfigError("synthetic spec needs videos and frames");
    if (n_val > n_videos) throw ConfigError("n_val exceeds n_videos");
    if (n_aus != io::kNumAus) throw ConfigError("synthetic labels carry exactly 12 AUs");
    if (visual_dim < n_aus) throw ConfigError("visual_dim must be >= n_aus so latents stay recoverable");
    if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("smoothing must be in [0,1)");
    if (min_run < 1) throw ConfigError("min_run must be >= 1");
    if (history() > 15) throw ConfigError("lag + min_run - 1 must not exceed 15 frames");
    if (!(0.0 < pos_rate_min && pos_rate_min <= pos_rate_max && pos_rate_max < 1.0))
      throw ConfigError("positive rates must satisfy 0 < min <= max < 1");
    if (sigma_v < 0.0 || sigma_a < 0.0 || subject_sigma < 0.0) throw ConfigError("noise levels must be >= 0");
    if (!(modality_split >= 0.0 && modality_split <= 1.0)) throw ConfigError("modality_split must be in [0,1]");
    if (!(fps > 0.0) || sample_rate <= 0) throw ConfigError("fps and sample_rate must be positive");
  }
};

struct SyntheticVideo {
  std::string id;
  Tensor latents;  // [frames×n_aus], drives the labels
  Tensor visual_latents;  // what the video shows
  Tensor audio_latents;   // what the tones track
  Tensor visual;   // [frames×visual_dim]
  audio::PcmSignal pcm;
  Tensor labels;   // [frames×n_aus]
  bool validation = false;
};

struct SyntheticDataset {
  SyntheticSpec spec;
  std::vector<SyntheticVideo> videos;
  Tensor mixing;                    // [n_aus×visual_dim]
  std::vector<double> levels;       // per AU
  std::vector<double> target_rates; // per AU
  std::vector<double> tone_hz;      // per AU

  std::vector<double> positive_rates() const {
    std::vector<double> pos(spec.n_aus, 0.0), cnt(spec.n_aus, 0.0);
    for (const auto& v : videos)
      for (std::size_t f = 0; f < v.labels.dim(0); ++f)
        for (std::size_t a = 0; a < spec.n_aus; ++a) {
          const double y = v.labels[f * spec.n_aus + a];
          if (y < 0.0) continue;
          pos[a] += y;
          cnt[a] += 1.0;
        }
    for (std::size_t a = 0; a < spec.n_aus; ++a) pos[a] = cnt[a] > 0.0 ? pos[a] / cnt[a] : 0.0;
    return pos;
  }
};

// key=value settings, e.g. "frames=1000". Unknown keys are rejected.
inline void apply_setting(SyntheticSpec& s, const std::string& key, const std::string& value) {
  auto num = [&](auto& field) {
    using T = std::remove_reference_t<decltype(field)>;
    T v{};
    const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
    if (r.ec != std::errc{} || r.ptr != value.data() + value.size())
      throw ConfigError("synthetic spec: bad value '" + value + "' for " + key);
    field = v;
  };
  if (key == "n_videos") num(s.n_videos);
  else if (key == "frames") num(s.frames);
  else if (key == "n_val") num(s.n_val);
  else if (key == "fps") num(s.fps);
  else if (key == "seed") num(s.seed);
  else if (key == "visual_dim") num(s.visual_dim);
  else if (key == "smoothing") num(s.smoothing);
  else if (key == "lag") num(s.lag);
  else if (key == "min_run") num(s.min_run);
  else if (key == "sigma_v") num(s.sigma_v);
  else if (key == "sigma_a") num(s.sigma_a);
  else if (key == "subject_sigma") num(s.subject_sigma);
  else if (key == "pos_rate_min") num(s.pos_rate_min);
  else if (key == "pos_rate_max") num(s.pos_rate_max);
  else if (key == "sample_rate") num(s.sample_rate);
  else if (key == "tone_amplitude") num(s.tone_amplitude);
  else if (key == "modality_split") num(s.modality_split);
  else throw ConfigError("synthetic spec: unknown key '" + key + "'");
}

inline SyntheticSpec parse_spec(const std::string& text, SyntheticSpec base = {}) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("synthetic spec: expected key=value, got '" + line + "'");
    auto trim = [](const std::string& x) {
      const auto i = x.find_first_not_of(" \t"), j = x.find_last_not_of(" \t");
      return i == std::string::npos ? std::string() : x.substr(i, j - i + 1);
    };
    apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

inline std::string video_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "vid%03zu", i);
  return buf;
}

// Applies the planted rule to one AU column.
inline void planted_labels(const Tensor& latents, std::size_t au, double level, const SyntheticSpec& spec,
                           std::vector<double>& out) {
  const std::size_t n = latents.dim(0), a_count = latents.dim(1);
  for (std::size_t t = 0; t < n; ++t) {
    double y = -1.0;
    if (t >= spec.history()) {
      y = 1.0;
      for (std::size_t j = 0; j < spec.min_run; ++j)
        if (!(latents[(t - spec.lag - j) * a_count + au] > level)) {
          y = 0.0;
          break;
        }
    }
    out[t * a_count + au] = y;
  }
}

inline SyntheticDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);

  SyntheticDataset ds;
  ds.spec = spec;
  const std::size_t na = spec.n_aus, dv = spec.visual_dim;

  std::vector<double> mix(na * dv);
  for (double& m : mix) m = normal(rng) / std::sqrt(static_cast<double>(na));
  ds.mixing = Tensor::from({na, dv}, std::move(mix));

  const double mlo = audio::hz_to_mel(250.0), mhi = audio::hz_to_mel(6000.0);
  std::vector<double> phase(na);
  for (std::size_t a = 0; a < na; ++a) {
    ds.tone_hz.push_back(audio::mel_to_hz(mlo + (mhi - mlo) * (static_cast<double>(a) + 0.5) / static_cast<double>(na)));
    phase[a] = uniform(rng);
  }

  // Latent walks.
  const double innov = std::sqrt(1.0 - spec.smoothing * spec.smoothing);
  for (std::size_t v = 0; v < spec.n_videos; ++v) {
    SyntheticVideo vid;
    vid.id = video_id(v);
    vid.validation = v >= spec.n_videos - spec.n_val;
    auto walk = [&] {
      std::vector<double> z(spec.frames * na);
      for (std::size_t a = 0; a < na; ++a) z[a] = normal(rng);
      for (std::size_t t = 1; t < spec.frames; ++t)
        for (std::size_t a = 0; a < na; ++a) z[t * na + a] = spec.smoothing * z[(t - 1) * na + a] + innov * normal(rng);
      return z;
    };
    std::vector<double> z = walk();
    if (spec.modality_split > 0.0) {
      // x_v = sqrt(1-s) c + sqrt(s) p_v,  x_a = sqrt(1-s) c + sqrt(s) p_a,
      // z = (x_v + x_a) / sqrt(4 - 2s)  (unit variance, same AR coefficient)
      const double s = spec.modality_split;
      const std::vector<double> pv = walk(), pa = walk();
      std::vector<double> xv(z.size()), xa(z.size());
      const double norm = std::sqrt(4.0 - 2.0 * s);
      for (std::size_t i = 0; i < z.size(); ++i) {
        xv[i] = std::sqrt(1.0 - s) * z[i] + std::sqrt(s) * pv[i];
        xa[i] = std::sqrt(1.0 - s) * z[i] + std::sqrt(s) * pa[i];
        z[i] = (xv[i] + xa[i]) / norm;
      }
      vid.visual_latents = Tensor::from({spec.frames, na}, std::move(xv));
      vid.audio_latents = Tensor::from({spec.frames, na}, std::move(xa));
      vid.latents = Tensor::from({spec.frames, na}, std::move(z));
    } else {
      vid.latents = Tensor::from({spec.frames, na}, std::move(z));
      vid.visual_latents = vid.latents;
      vid.audio_latents = vid.latents;
    }
    ds.videos.push_back(std::move(vid));
  }

  // Levels hitting evenly spread positive rates (bisection; rate falls as level rises).
  std::vector<double> col(spec.frames * na);
  for (std::size_t a = 0; a < na; ++a) {
    const double target =
        na == 1 ? spec.pos_rate_min
                : spec.pos_rate_min + (spec.pos_rate_max - spec.pos_rate_min) * static_cast<double>(a) /
                                          static_cast<double>(na - 1);
    ds.target_rates.push_back(target);
    auto rate_at = [&](double level) {
      double pos = 0.0, cnt = 0.0;
      for (const auto& vid : ds.videos) {
        planted_labels(vid.latents, a, level, spec, col);
        for (std::size_t t = spec.history(); t < spec.frames; ++t) {
          pos += col[t * na + a];
          cnt += 1.0;
        }
      }
      return cnt > 0.0 ? pos / cnt : 0.0;
    };
    double lo = -4.0, hi = 4.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (rate_at(mid) > target) lo = mid;
      else hi = mid;
    }
    // Bisection lands on a latent value; recentre in the gap so no frame sits on the boundary.
    const double found = 0.5 * (lo + hi);
    double below = -std::numeric_limits<double>::infinity(), above = std::numeric_limits<double>::infinity();
    for (const auto& vid : ds.videos)
      for (std::size_t t = 0; t < spec.frames; ++t) {
        const double z = vid.latents[t * na + a];
        if (z <= found) below = std::max(below, z);
        else above = std::min(above, z);
      }
    ds.levels.push_back(std::isfinite(below) && std::isfinite(above) ? 0.5 * (below + above) : found);
  }

  for (auto& vid : ds.videos) {
    std::vector<double> labels(spec.frames * na);
    for (std::size_t a = 0; a < na; ++a) planted_labels(vid.latents, a, ds.levels[a], spec, labels);
    vid.labels = Tensor::from({spec.frames, na}, std::move(labels));

    std::vector<double> offset(na);
    for (double& o : offset) o = spec.subject_sigma * normal(rng);
    std::vector<double> vis(spec.frames * dv, 0.0);
    for (std::size_t t = 0; t < spec.frames; ++t)
      for (std::size_t a = 0; a < na; ++a) {
        const double s = vid.visual_latents[t * na + a] + offset[a];
        for (std::size_t d = 0; d < dv; ++d) vis[t * dv + d] += s * ds.mixing[a * dv + d];
      }
    for (double& x : vis) x += spec.sigma_v * normal(rng);
    vid.visual = Tensor::from({spec.frames, dv}, std::move(vis));

    const auto n_samples = static_cast<std::size_t>(
        std::llround(static_cast<double>(spec.frames) / spec.fps * static_cast<double>(spec.sample_rate)));
    vid.pcm.sample_rate = spec.sample_rate;
    vid.pcm.samples.assign(n_samples, 0.0);
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t n = 0; n < n_samples; ++n) {
      const double u = static_cast<double>(n) / static_cast<double>(spec.sample_rate) * spec.fps;
      const std::size_t f0 = std::min(static_cast<std::size_t>(u), spec.frames - 1);
      const std::size_t f1 = std::min(f0 + 1, spec.frames - 1);
      const double w = std::min(u - static_cast<double>(f0), 1.0);
      double s = 0.0;
      for (std::size_t a = 0; a < na; ++a) {
        const double z = (1.0 - w) * vid.audio_latents[f0 * na + a] + w * vid.audio_latents[f1 * na + a];
        const double amp = spec.tone_amplitude * std::exp(0.5 * z);
        s += amp * std::sin(two_pi * ds.tone_hz[a] * static_cast<double>(n) / spec.sample_rate + phase[a]);
      }
      vid.pcm.samples[n] = std::clamp(s + spec.sigma_a * normal(rng), -1.0, 1.0);
    }
  }
  return ds;
}

inline void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& ds) {
  std::filesystem::create_directories(dir / "visual");
  std::filesystem::create_directories(dir / "audio");
  io::LabelTable table;
  std::string train, val;
  for (const auto& v : ds.videos) {
    encoders::write_visual_features(dir / "visual" / (v.id + ".atgn"), {v.visual, encoders::Source::synthetic});
    io::write_wav(dir / "audio" / (v.id + ".wav"), v.pcm);
    table.videos.push_back({v.id, v.labels});
    std::string& list = v.validation ? val : train;
    list += (list.empty() ? "" : ",") + v.id;
  }
  io::write_labels_csv(dir / "labels.csv", table);
  std::ofstream man(dir / "manifest.txt", std::ios::trunc);
  if (!man) throw PathError("cannot write manifest in '" + dir.string() + "'");
  man << "format=atgn-dataset-1\n"
      << "fps=" << ds.spec.fps << "\n"
      << "train=" << train << "\n"
      << "val=" << val << "\n";
}

}  // namespace atgn::synth
