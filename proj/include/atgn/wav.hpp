#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "atgn/audio.hpp"
#include "atgn/feature_file.hpp"

// Mono RIFF/WAVE reader (16-bit PCM or 32-bit float) and 16-bit PCM writer.
namespace atgn::io {

inline audio::PcmSignal decode_wav(const std::vector<std::uint8_t>& buf) {
  detail::Reader rd(buf);
  rd.need(12, "RIFF header");
  if (std::memcmp(rd.here(), "RIFF", 4) != 0 || std::memcmp(rd.here() + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file", 0);
  rd.skip(12);
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (!rd.done()) {
    const std::uint64_t chunk_at = rd.pos();
    rd.need(8, "chunk header");
    std::string id(reinterpret_cast<const char*>(rd.here()), 4);
    rd.skip(4);
    const auto size = rd.get<std::uint32_t>("chunk size");
    rd.need(size, "chunk body");
    if (id == "fmt ") {
      if (size < 16) throw FormatError("fmt chunk too short", chunk_at);
      const std::uint8_t* p = rd.here();
      format = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
      channels = static_cast<std::uint16_t>(p[2] | (p[3] << 8));
      rate = static_cast<std::uint32_t>(p[4]) | (static_cast<std::uint32_t>(p[5]) << 8) |
             (static_cast<std::uint32_t>(p[6]) << 16) | (static_cast<std::uint32_t>(p[7]) << 24);
      bits = static_cast<std::uint16_t>(p[14] | (p[15] << 8));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk", chunk_at);
      if (channels != 1) throw FormatError("unsupported WAV: " + std::to_string(channels) + " channels (mono only)", chunk_at);
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) {
        throw FormatError("unsupported WAV encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
                              " bits); expected 16-bit PCM or 32-bit float",
                          chunk_at);
      }
      audio::PcmSignal sig;
      sig.sample_rate = static_cast<int>(rate);
      const std::uint8_t* p = rd.here();
      const std::size_t width = bits / 8;
      const std::size_t n = size / width;
      sig.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (pcm16) {
          const auto v = static_cast<std::int16_t>(p[2 * i] | (p[2 * i + 1] << 8));
          sig.samples[i] = static_cast<double>(v) / 32768.0;
        } else {
          std::uint32_t b = 0;
          for (int k = 0; k < 4; ++k) b |= static_cast<std::uint32_t>(p[4 * i + k]) << (8 * k);
          sig.samples[i] = static_cast<double>(std::bit_cast<float>(b));
        }
      }
      return sig;
    }
    rd.skip(size);
    // a trailing pad byte may be missing at end of file
    if ((size & 1) && !rd.done()) rd.skip(1);
  }
  throw FormatError("no data chunk", rd.pos());
}

inline std::vector<std::uint8_t> encode_wav_pcm16(const audio::PcmSignal& sig) {
  std::vector<std::uint8_t> out;
  const auto data_bytes = static_cast<std::uint32_t>(sig.samples.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_le<std::uint32_t>(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_le<std::uint32_t>(out, 16);
  detail::put_le<std::uint16_t>(out, 1);
  detail::put_le<std::uint16_t>(out, 1);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sig.sample_rate));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sig.sample_rate) * 2);
  detail::put_le<std::uint16_t>(out, 2);
  detail::put_le<std::uint16_t>(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_le<std::uint32_t>(out, data_bytes);
  for (double s : sig.samples) {
    const double q = std::round(std::clamp(s * 32768.0, -32768.0, 32767.0));
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

inline audio::PcmSignal read_wav(const std::filesystem::path& path) { return decode_wav(read_bytes(path)); }

inline void write_wav(const std::filesystem::path& path, const audio::PcmSignal& sig) {
  write_bytes(path, encode_wav_pcm16(sig));
}

}  // namespace atgn::io
