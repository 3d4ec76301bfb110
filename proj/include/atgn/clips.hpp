#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "atgn/tensor.hpp"

namespace atgn {

// All modalities of one video, frame-aligned.
struct VideoData {
  std::string id;
  std::vector<Tensor> modalities;  // per branch [n_frames×D_b]
  Tensor labels;                   // [n_frames×n_aus], -1 = ignore

  std::size_t frames() const { return labels.dim(0); }
};

// A fixed-length window of one video.
struct Clip {
  std::string video_id;
  std::size_t start = 0;
  std::size_t valid = 0;  // frames before padding
  std::vector<Tensor> inputs;
  Tensor labels;
};

using ClipBatch = std::vector<Clip>;

enum class ClipMode { train, eval };

namespace detail {
inline Tensor window_rows(const Tensor& t, std::size_t start, std::size_t count, std::size_t len, double pad) {
  const std::size_t d = t.dim(1);
  std::vector<double> out(len * d, pad);
  std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(start * d), count * d, out.begin());
  return Tensor::from({len, d}, std::move(out));
}
}  // namespace detail

// Non-overlapping windows of clip_len frames. Training drops the short tail;
// evaluation zero-pads it and marks the padded frames ignored.
inline std::vector<Clip> build_clips(const VideoData& video, std::size_t clip_len, ClipMode mode,
                                     double ignore_label = -1.0) {
  if (clip_len == 0) throw ArgumentError("clip_len must be positive");
  const std::size_t n = video.labels.dim(0);
  for (std::size_t m = 0; m < video.modalities.size(); ++m) {
    if (video.modalities[m].rank() != 2 || video.modalities[m].dim(0) != n) {
      throw AlignmentError("video '" + video.id + "': modality " + std::to_string(m) + " has " +
                           std::to_string(video.modalities[m].rank() ? video.modalities[m].dim(0) : 0) +
                           " frames but labels have " + std::to_string(n));
    }
  }
  std::vector<Clip> clips;
  for (std::size_t start = 0; start < n; start += clip_len) {
    const std::size_t count = std::min(clip_len, n - start);
    if (count < clip_len && mode == ClipMode::train) break;
    Clip c;
    c.video_id = video.id;
    c.start = start;
    c.valid = count;
    for (const auto& m : video.modalities) c.inputs.push_back(detail::window_rows(m, start, count, clip_len, 0.0));
    c.labels = detail::window_rows(video.labels, start, count, clip_len, ignore_label);
    clips.push_back(std::move(c));
  }
  return clips;
}

inline std::vector<Clip> build_clips(const std::vector<VideoData>& videos, std::size_t clip_len, ClipMode mode) {
  std::vector<Clip> out;
  for (const auto& v : videos) {
    auto c = build_clips(v, clip_len, mode);
    out.insert(out.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
  }
  return out;
}

}  // namespace atgn
