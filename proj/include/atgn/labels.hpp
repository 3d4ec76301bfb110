#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "atgn/error.hpp"
#include "atgn/tensor.hpp"

// Label CSV: header "video_id,frame_idx,<12 AU columns>", then one row per
// frame with values 0, 1 or -1 (unannotated). Frames of a video are
// contiguous, start at 0 and increase by one.
namespace atgn::io {

inline const std::vector<std::string>& default_au_names() {
  static const std::vector<std::string> names{"AU1",  "AU2",  "AU4",  "AU6",  "AU7",  "AU10",
                                              "AU12", "AU15", "AU23", "AU24", "AU25", "AU26"};
  return names;
}

inline constexpr std::size_t kNumAus = 12;

struct VideoLabels {
  std::string video_id;
  Tensor labels;  // [n_frames×12]
};

struct LabelTable {
  std::vector<std::string> au_names = default_au_names();
  std::vector<VideoLabels> videos;

  const VideoLabels* find(const std::string& id) const {
    for (const auto& v : videos)
      if (v.video_id == id) return &v;
    return nullptr;
  }
};

inline std::string encode_labels_csv(const LabelTable& table) {
  std::ostringstream os;
  os << "video_id,frame_idx";
  for (const auto& n : table.au_names) os << ',' << n;
  os << '\n';
  for (const auto& v : table.videos) {
    const std::size_t n = v.labels.dim(1);
    for (std::size_t f = 0; f < v.labels.dim(0); ++f) {
      os << v.video_id << ',' << f;
      for (std::size_t a = 0; a < n; ++a) os << ',' << static_cast<int>(v.labels[f * n + a]);
      os << '\n';
    }
  }
  return os.str();
}

inline LabelTable decode_labels_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("label CSV is empty", 0);
  std::uint64_t offset = line.size() + 1;
  if (!line.empty() && line.back() == '\r') line.pop_back();

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };

  const auto header = split(line);
  if (header.size() != 2 + kNumAus || header[0] != "video_id" || header[1] != "frame_idx") {
    throw FormatError("label CSV header must be video_id,frame_idx followed by exactly 12 AU columns", 0);
  }
  LabelTable table;
  table.au_names.assign(header.begin() + 2, header.end());

  std::vector<double> current;
  std::string current_id;
  std::size_t next_frame = 0;
  auto flush = [&] {
    if (current_id.empty()) return;
    if (table.find(current_id)) throw FormatError("video '" + current_id + "' appears in non-contiguous rows", offset);
    const std::size_t frames = current.size() / kNumAus;
    table.videos.push_back({current_id, Tensor::from({frames, kNumAus}, std::move(current))});
    current = {};
  };

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::uint64_t line_at = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    const std::string where = "label CSV line " + std::to_string(lineno);
    if (cells.size() != 2 + kNumAus) throw FormatError(where + ": expected 14 columns", line_at);
    if (cells[0] != current_id) {
      flush();
      current_id = cells[0];
      next_frame = 0;
      if (current_id.empty()) throw FormatError(where + ": empty video_id", line_at);
    }
    std::size_t frame = 0;
    const auto& fs = cells[1];
    if (std::from_chars(fs.data(), fs.data() + fs.size(), frame).ec != std::errc{})
      throw FormatError(where + ": bad frame_idx", line_at);
    if (frame != next_frame)
      throw FormatError(where + ": frame_idx " + std::to_string(frame) + " but expected " + std::to_string(next_frame),
                        line_at);
    ++next_frame;
    for (std::size_t a = 0; a < kNumAus; ++a) {
      const auto& c = cells[2 + a];
      if (c == "0") current.push_back(0.0);
      else if (c == "1") current.push_back(1.0);
      else if (c == "-1") current.push_back(-1.0);
      else throw FormatError(where + ": AU value '" + c + "' is not 0, 1 or -1", line_at);
    }
  }
  flush();
  return table;
}

inline void write_labels_csv(const std::filesystem::path& path, const LabelTable& table) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PathError("cannot write labels to '" + path.string() + "'");
  out << encode_labels_csv(table);
}

inline LabelTable read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot read labels from '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_labels_csv(ss.str());
}

}  // namespace atgn::io
