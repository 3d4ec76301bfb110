#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "atgn/error.hpp"
#include "atgn/tensor.hpp"

// Audio frontend: framing, power spectrum, mel filterbank, log-mel, MFCC and
// alignment of audio rows to video frames.
namespace atgn::audio {

struct PcmSignal {
  std::vector<double> samples;
  int sample_rate = 16000;

  void validate() const {
    if (sample_rate <= 0) throw ArgumentError("sample_rate must be positive");
    for (double s : samples)
      if (!std::isfinite(s)) throw ArgumentError("PCM signal contains non-finite samples");
  }
};

enum class Window { hann, rectangular };

// Defaults follow the VGGish log-mel input convention (25 ms / 10 ms at 16 kHz).
struct SpectrogramConfig {
  std::size_t frame_len = 400;
  std::size_t hop = 160;
  std::size_t n_fft = 512;
  std::size_t n_mels = 64;
  double fmin = 125.0;
  double fmax = 7500.0;
  double log_floor = 1e-10;
  std::size_t n_mfcc = 13;
  int sample_rate = 16000;
  Window window = Window::hann;

  void validate() const {
    if (frame_len == 0 || hop == 0) throw ConfigError("frame_len and hop must be positive");
    if (n_fft < frame_len || (n_fft & (n_fft - 1)) != 0)
      throw ConfigError("n_fft must be a power of two >= frame_len");
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    if (!(fmin > 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
      throw ConfigError("require 0 < fmin < fmax <= sample_rate/2");
    if (n_mels == 0 || n_mfcc > n_mels) throw ConfigError("require 0 < n_mels and n_mfcc <= n_mels");
    if (!(log_floor > 0.0)) throw ConfigError("log_floor must be positive");
  }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Periodic Hann: w[n] = 0.5 - 0.5 cos(2πn/N).
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

inline std::size_t frame_count(std::size_t n_samples, const SpectrogramConfig& cfg) {
  if (n_samples < cfg.frame_len) return 0;
  return 1 + (n_samples - cfg.frame_len) / cfg.hop;
}

// [T×frame_len] windowed frames.
inline Tensor frame_signal(const PcmSignal& sig, const SpectrogramConfig& cfg) {
  sig.validate();
  if (cfg.frame_len == 0 || cfg.hop == 0) throw ConfigError("frame_len and hop must be positive");
  const std::size_t t = frame_count(sig.samples.size(), cfg);
  if (t == 0) {
    throw ArgumentError("signal of " + std::to_string(sig.samples.size()) + " samples is shorter than one frame (" +
                        std::to_string(cfg.frame_len) + "); no frames produced");
  }
  const auto win = cfg.window == Window::hann ? hann_window(cfg.frame_len) : std::vector<double>(cfg.frame_len, 1.0);
  std::vector<double> out(t * cfg.frame_len);
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t i = 0; i < cfg.frame_len; ++i)
      out[f * cfg.frame_len + i] = sig.samples[f * cfg.hop + i] * win[i];
  return Tensor::from({t, cfg.frame_len}, std::move(out));
}

// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

// |DFT|² of each zero-padded frame, bins 0..n_fft/2.
inline Tensor power_spectrum(const Tensor& frames, std::size_t n_fft) {
  if (n_fft == 0 || (n_fft & (n_fft - 1)) != 0) throw ArgumentError("n_fft must be a power of two");
  if (frames.rank() != 2) throw DimensionError("power_spectrum expects [T×frame_len] frames");
  const std::size_t t = frames.dim(0), flen = frames.dim(1);
  if (flen > n_fft) throw ArgumentError("n_fft must be >= frame length");
  const std::size_t bins = n_fft / 2 + 1;
  std::vector<double> out(t * bins);
  std::vector<std::complex<double>> buf(n_fft);
  for (std::size_t f = 0; f < t; ++f) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t i = 0; i < flen; ++i) buf[i] = frames[f * flen + i];
    fft_inplace(buf);
    for (std::size_t k = 0; k < bins; ++k) out[f * bins + k] = std::norm(buf[k]);
  }
  return Tensor::from({t, bins}, std::move(out));
}

// [n_mels×(n_fft/2+1)] triangular filters with centers uniform on the mel scale.
inline Tensor mel_filterbank(const SpectrogramConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const double mlo = hz_to_mel(cfg.fmin), mhi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  std::vector<double> fb(cfg.n_mels * bins, 0.0);
  const double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.n_fft);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      const double w = std::max(0.0, std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid)));
      fb[m * bins + k] = w;
      any = any || w > 0.0;
    }
    if (!any) {
      throw ConfigError("mel filter " + std::to_string(m) + " covers no FFT bin; reduce n_mels or raise n_fft");
    }
  }
  return Tensor::from({cfg.n_mels, bins}, std::move(fb));
}

// Center frequency (Hz) of each mel filter.
inline std::vector<double> mel_centers(const SpectrogramConfig& cfg) {
  const double mlo = hz_to_mel(cfg.fmin), mhi = hz_to_mel(cfg.fmax);
  std::vector<double> c(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m)
    c[m] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(m + 1) / static_cast<double>(cfg.n_mels + 1));
  return c;
}

// [T×n_mels] = log(max(power · fbᵀ, floor)).
inline Tensor log_mel(const Tensor& power, const Tensor& fb, double log_floor) {
  if (power.rank() != 2 || fb.rank() != 2 || power.dim(1) != fb.dim(1)) {
    throw DimensionError("log_mel: power " + shape_str(power.shape()) + " incompatible with filterbank " +
                         shape_str(fb.shape()));
  }
  const std::size_t t = power.dim(0), bins = power.dim(1), nm = fb.dim(0);
  std::vector<double> out(t * nm);
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t m = 0; m < nm; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[m * bins + k] * power[f * bins + k];
      out[f * nm + m] = std::log(std::max(e, log_floor));
    }
  return Tensor::from({t, nm}, std::move(out));
}

namespace detail {
inline std::vector<double> dct_basis(std::size_t n, std::size_t n_coeffs) {
  std::vector<double> basis(n_coeffs * n);
  const double s0 = std::sqrt(1.0 / static_cast<double>(n)), sk = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t k = 0; k < n_coeffs; ++k)
    for (std::size_t i = 0; i < n; ++i)
      basis[k * n + i] = (k == 0 ? s0 : sk) * std::cos(std::numbers::pi * static_cast<double>(k) *
                                                        (2.0 * static_cast<double>(i) + 1.0) /
                                                        (2.0 * static_cast<double>(n)));
  return basis;
}
}  // namespace detail

// Orthonormal DCT-II over the mel axis, first n_mfcc coefficients.
inline Tensor mfcc(const Tensor& logmel, std::size_t n_mfcc) {
  if (logmel.rank() != 2) throw DimensionError("mfcc expects [T×n_mels]");
  const std::size_t t = logmel.dim(0), nm = logmel.dim(1);
  if (n_mfcc > nm) throw ArgumentError("n_mfcc must not exceed n_mels");
  const auto basis = detail::dct_basis(nm, n_mfcc);
  std::vector<double> out(t * n_mfcc);
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t k = 0; k < n_mfcc; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < nm; ++i) s += basis[k * nm + i] * logmel[f * nm + i];
      out[f * n_mfcc + k] = s;
    }
  return Tensor::from({t, n_mfcc}, std::move(out));
}

// Inverse of `mfcc` when all n_mels coefficients were kept (DCT-III).
inline Tensor inverse_mfcc(const Tensor& coeffs) {
  if (coeffs.rank() != 2) throw DimensionError("inverse_mfcc expects [T×n]");
  const std::size_t t = coeffs.dim(0), n = coeffs.dim(1);
  const auto basis = detail::dct_basis(n, n);
  std::vector<double> out(t * n, 0.0);
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i) out[f * n + i] += basis[k * n + i] * coeffs[f * n + k];
  return Tensor::from({t, n}, std::move(out));
}

// Picks, for each video frame i at time i/fps, the audio row r whose time
// r/rows_per_second is nearest. Output has exactly n_video_frames rows.
inline Tensor align_to_video(const Tensor& features, double rows_per_second, double video_fps,
                             std::size_t n_video_frames) {
  if (!(video_fps > 0.0)) throw ArgumentError("video_fps must be positive");
  if (features.rank() != 2) throw DimensionError("align_to_video expects [T×D] features");
  const std::size_t rows = features.dim(0), d = features.dim(1);
  if (n_video_frames == 0) return Tensor::zeros({0, d});
  if (rows == 0) throw AlignmentError("cannot align an empty audio feature sequence to video frames");
  std::vector<double> out(n_video_frames * d);
  for (std::size_t i = 0; i < n_video_frames; ++i) {
    const long r = std::lround(static_cast<double>(i) * rows_per_second / video_fps);
    const std::size_t row = static_cast<std::size_t>(std::clamp<long>(r, 0, static_cast<long>(rows) - 1));
    std::copy_n(features.data().begin() + static_cast<std::ptrdiff_t>(row * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return Tensor::from({n_video_frames, d}, std::move(out));
}

// Per-video-frame audio features.
struct AudioFeatureSeq {
  Tensor logmel;     // [n×n_mels]
  Tensor mfcc;       // [n×n_mfcc]
  Tensor embedding;  // [n×C_a], may be undefined
  std::vector<double> frame_times;
};

// Full log-mel + MFCC path for one signal, before alignment.
struct Spectrogram {
  Tensor logmel;
  Tensor mfcc;
};

inline Spectrogram extract(const PcmSignal& sig, SpectrogramConfig cfg) {
  cfg.sample_rate = sig.sample_rate;
  cfg.validate();
  const Tensor frames = frame_signal(sig, cfg);
  const Tensor power = power_spectrum(frames, cfg.n_fft);
  const Tensor lm = log_mel(power, mel_filterbank(cfg), cfg.log_floor);
  return {lm, mfcc(lm, cfg.n_mfcc)};
}

}  // namespace atgn::audio
