#pragma once

// Minimal RIFF/WAVE codec: reads mono or multi-channel PCM16 and float32
// files (multi-channel is averaged down to mono), writes mono PCM16.
// Windowed reads seek directly into the data chunk so a 1-second slice of a
// long clip does not decode the whole file.

#include "avclab/common.hpp"

namespace avc {

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  bool float_samples = false;
  int64_t n_frames = 0;
  std::streamoff data_offset = 0;
};

namespace detail {

inline WavInfo wav_parse_header(std::istream& is, const std::string& name) {
  char tag[5] = {0};
  read_bytes(is, tag, 4, "wav riff tag");
  AVC_CHECK_RUNTIME(std::memcmp(tag, "RIFF", 4) == 0, name << ": not a RIFF file");
  (void)read_u32(is, "wav riff size");
  read_bytes(is, tag, 4, "wav wave tag");
  AVC_CHECK_RUNTIME(std::memcmp(tag, "WAVE", 4) == 0, name << ": not a WAVE file");

  WavInfo info;
  bool have_fmt = false;
  while (is.peek() != EOF) {
    read_bytes(is, tag, 4, "wav chunk id");
    uint32_t size = read_u32(is, "wav chunk size");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      AVC_CHECK_RUNTIME(size >= 16, name << ": malformed fmt chunk");
      uint16_t fmt = read_u16(is, "wav fmt");
      uint16_t channels = read_u16(is, "wav channels");
      uint32_t rate = read_u32(is, "wav rate");
      (void)read_u32(is, "wav byte rate");
      (void)read_u16(is, "wav block align");
      uint16_t bits = read_u16(is, "wav bits");
      AVC_CHECK_RUNTIME(fmt == 1 || fmt == 3,
                        name << ": unsupported WAVE format code " << fmt
                             << " (PCM and IEEE float only)");
      info.float_samples = (fmt == 3);
      info.channels = int(channels);
      info.sample_rate = int(rate);
      info.bits_per_sample = int(bits);
      AVC_CHECK_RUNTIME((info.float_samples && bits == 32) || (!info.float_samples && bits == 16),
                        name << ": unsupported sample width " << bits);
      if (size > 16) is.seekg(std::streamoff(size - 16), std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      AVC_CHECK_RUNTIME(have_fmt, name << ": data chunk before fmt chunk");
      info.data_offset = is.tellg();
      int bytes_per_frame = info.channels * info.bits_per_sample / 8;
      info.n_frames = int64_t(size) / bytes_per_frame;
      return info;
    } else {
      is.seekg(std::streamoff(size + (size & 1)), std::ios::cur);
    }
  }
  throw RuntimeFailure(name + ": no data chunk found");
}

}  // namespace detail

inline WavInfo wav_probe(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open " << path.string());
  return detail::wav_parse_header(f, path.string());
}

// Reads [start_frame, start_frame + n) as mono float samples; frames outside
// the file are zero.
inline std::vector<float> wav_read_window(const std::filesystem::path& path, int64_t start_frame,
                                          int64_t n, WavInfo* info_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open " << path.string());
  WavInfo info = detail::wav_parse_header(f, path.string());
  if (info_out) *info_out = info;
  std::vector<float> out(size_t(n), 0.f);
  int64_t lo = std::max<int64_t>(start_frame, 0);
  int64_t hi = std::min<int64_t>(start_frame + n, info.n_frames);
  if (lo >= hi) return out;
  int bytes_per_frame = info.channels * info.bits_per_sample / 8;
  f.seekg(info.data_offset + std::streamoff(lo * bytes_per_frame));
  std::vector<char> raw(size_t((hi - lo) * bytes_per_frame));
  read_bytes(f, raw.data(), raw.size(), "wav samples");
  const float inv_channels = 1.f / float(info.channels);
  for (int64_t i = 0; i < hi - lo; ++i) {
    float acc = 0.f;
    for (int c = 0; c < info.channels; ++c) {
      const char* p = raw.data() + size_t(i * bytes_per_frame) + size_t(c) * (info.bits_per_sample / 8);
      if (info.float_samples) {
        float v;
        std::memcpy(&v, p, 4);
        acc += v;
      } else {
        int16_t v;
        std::memcpy(&v, p, 2);
        acc += float(v) / 32768.f;
      }
    }
    out[size_t(i + lo - start_frame)] = acc * inv_channels;
  }
  return out;
}

inline std::vector<float> wav_read_all(const std::filesystem::path& path,
                                       WavInfo* info_out = nullptr) {
  WavInfo info = wav_probe(path);
  if (info_out) *info_out = info;
  return wav_read_window(path, 0, info.n_frames);
}

// Writes mono PCM16. Samples are clipped to [-1, 1].
inline void wav_write(const std::filesystem::path& path, const std::vector<float>& samples,
                      int sample_rate) {
  std::ofstream f(path, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open for writing " << path.string());
  uint32_t data_bytes = uint32_t(samples.size() * 2);
  write_bytes(f, "RIFF", 4);
  write_u32(f, 36 + data_bytes);
  write_bytes(f, "WAVE", 4);
  write_bytes(f, "fmt ", 4);
  write_u32(f, 16);
  write_u32(f, 1u | (1u << 16));  // PCM, mono
  write_u32(f, uint32_t(sample_rate));
  write_u32(f, uint32_t(sample_rate * 2));
  write_u32(f, 2u | (16u << 16));  // block align 2, 16 bits
  write_bytes(f, "data", 4);
  write_u32(f, data_bytes);
  std::vector<int16_t> pcm(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    long q = std::lrintf(std::clamp(samples[i], -1.f, 1.f) * 32768.f);
    pcm[i] = int16_t(std::clamp<long>(q, -32768, 32767));
  }
  write_bytes(f, pcm.data(), pcm.size() * 2);
  AVC_CHECK_RUNTIME(f.good(), "write failed for " << path.string());
}

}  // namespace avc
