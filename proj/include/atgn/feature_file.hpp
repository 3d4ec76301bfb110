#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "atgn/error.hpp"
#include "atgn/tensor.hpp"

// Named-tensor container ("ATGN" feature file). Layout, all little-endian:
//
//   0   char[4]  magic "ATGN"
//   4   u16      version (1)
//   6   u32      section count
//   then per section:
//       u16      name length N
//       u8[N]    name (UTF-8)
//       u8       dtype (1 = f32, 2 = f64)
//       u8       rank R
//       u64[R]   extents
//       u64      payload byte length (= product(extents) * dtype size)
//       bytes    payload, row-major
//
// Nothing may follow the last section.
namespace atgn::io {

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

struct NamedTensor {
  std::string name;
  Tensor tensor;
  DType dtype = DType::f64;
};

using TensorList = std::vector<NamedTensor>;

inline constexpr std::uint16_t kFeatureFileVersion = 1;

inline const NamedTensor* find(const TensorList& list, const std::string& name) {
  for (const auto& nt : list)
    if (nt.name == name) return &nt;
  return nullptr;
}

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(buf_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::uint64_t n, const char* what) const {
    if (buf_.size() - pos_ < n) {
      throw FormatError(std::string("truncated ") + what + ": need " + std::to_string(n) + " bytes, " +
                            std::to_string(buf_.size() - pos_) + " available",
                        pos_);
    }
  }

  const std::uint8_t* here() const { return buf_.data() + pos_; }
  void skip(std::uint64_t n) { pos_ += n; }
  std::uint64_t pos() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::uint64_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode(const TensorList& tensors) {
  std::set<std::string> names;
  for (const auto& nt : tensors) {
    if (!names.insert(nt.name).second) throw ArgumentError("duplicate tensor name '" + nt.name + "'");
    if (nt.name.size() > 0xFFFF) throw ArgumentError("tensor name too long");
    if (nt.tensor.rank() > 255) throw ArgumentError("tensor rank too large");
  }
  std::vector<std::uint8_t> out{'A', 'T', 'G', 'N'};
  detail::put_le<std::uint16_t>(out, kFeatureFileVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(nt.name.size()));
    out.insert(out.end(), nt.name.begin(), nt.name.end());
    out.push_back(static_cast<std::uint8_t>(nt.dtype));
    out.push_back(static_cast<std::uint8_t>(nt.tensor.rank()));
    for (std::size_t e : nt.tensor.shape()) detail::put_le<std::uint64_t>(out, e);
    detail::put_le<std::uint64_t>(out, nt.tensor.numel() * dtype_size(nt.dtype));
    for (double v : nt.tensor.data()) {
      if (nt.dtype == DType::f32) detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      else detail::put_le(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

inline TensorList decode(const std::vector<std::uint8_t>& buf) {
  detail::Reader rd(buf);
  rd.need(4, "magic");
  if (std::memcmp(rd.here(), "ATGN", 4) != 0) throw FormatError("bad magic, expected \"ATGN\"", 0);
  rd.skip(4);
  const auto version = rd.get<std::uint16_t>("version");
  if (version != kFeatureFileVersion) {
    throw FormatError("unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kFeatureFileVersion) + ")",
                      4);
  }
  const auto count = rd.get<std::uint32_t>("section count");
  TensorList out;
  std::set<std::string> names;
  for (std::uint32_t s = 0; s < count; ++s) {
    const std::uint64_t section_start = rd.pos();
    const auto name_len = rd.get<std::uint16_t>("name length");
    rd.need(name_len, "name");
    std::string name(reinterpret_cast<const char*>(rd.here()), name_len);
    rd.skip(name_len);
    if (!names.insert(name).second) throw FormatError("duplicate section name '" + name + "'", section_start);
    const std::uint64_t dtype_at = rd.pos();
    const auto dtype_raw = rd.get<std::uint8_t>("dtype");
    if (dtype_raw != 1 && dtype_raw != 2) throw FormatError("unknown dtype " + std::to_string(dtype_raw), dtype_at);
    const DType dtype = static_cast<DType>(dtype_raw);
    const auto rank = rd.get<std::uint8_t>("rank");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& e : shape) {
      const auto ext = rd.get<std::uint64_t>("extent");
      if (ext != 0 && numel > (std::uint64_t{1} << 40) / ext) throw FormatError("extents overflow", rd.pos() - 8);
      e = static_cast<std::size_t>(ext);
      numel *= ext;
    }
    const std::uint64_t len_at = rd.pos();
    const auto payload = rd.get<std::uint64_t>("payload length");
    const std::uint64_t expected = numel * dtype_size(dtype);
    if (payload != expected) {
      throw FormatError("section '" + name + "' declares " + std::to_string(payload) + " payload bytes but extents " +
                            shape_str(shape) + " imply " + std::to_string(expected),
                        len_at);
    }
    rd.need(payload, "payload");
    std::vector<double> data(numel);
    const std::uint8_t* p = rd.here();
    for (std::uint64_t i = 0; i < numel; ++i) {
      if (dtype == DType::f32) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[i * 4 + b]) << (8 * b);
        data[i] = static_cast<double>(std::bit_cast<float>(bits));
      } else {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[i * 8 + b]) << (8 * b);
        data[i] = std::bit_cast<double>(bits);
      }
    }
    rd.skip(payload);
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(data)), dtype});
  }
  if (!rd.done()) throw FormatError("trailing bytes after last section", rd.pos());
  return out;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open '" + path.string() + "' for reading; check the path exists");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PathError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw PathError("write to '" + path.string() + "' failed");
}

inline void write_feature_file(const std::filesystem::path& path, const TensorList& tensors) {
  write_bytes(path, encode(tensors));
}

inline TensorList read_feature_file(const std::filesystem::path& path) { return decode(read_bytes(path)); }

}  // namespace atgn::io
