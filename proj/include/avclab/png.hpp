#pragma once

// PNG encode/decode backed by zlib. Covers what this project produces and
// consumes: 8-bit depth, greyscale / RGB / greyscale+alpha / RGBA, no
// interlacing, no palettes. The encoder uses the Sub filter on every row,
// which compresses flat synthetic content well at low cost.

#include <zlib.h>

#include "avclab/image.hpp"

namespace avc {

namespace detail {

inline void png_write_be32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  write_bytes(os, b, 4);
}

inline uint32_t png_read_be32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_bytes(is, b, 4, what);
  return uint32_t(b[0]) << 24 | uint32_t(b[1]) << 16 | uint32_t(b[2]) << 8 | uint32_t(b[3]);
}

inline void png_write_chunk(std::ostream& os, const char type[4], const unsigned char* data,
                            size_t len) {
  png_write_be32(os, uint32_t(len));
  write_bytes(os, type, 4);
  if (len) write_bytes(os, data, len);
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (len) crc = crc32(crc, data, uInt(len));
  png_write_be32(os, uint32_t(crc));
}

inline int png_paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

inline void png_write(const std::filesystem::path& path, const ImageU8& img,
                      int compression_level = 3) {
  AVC_CHECK_ARG(img.channels == 1 || img.channels == 3,
                "png_write supports greyscale and RGB, got " << img.channels << " channels");
  AVC_CHECK_ARG(img.w > 0 && img.h > 0, "png_write: empty image");
  const int ch = img.channels;
  const size_t stride = size_t(img.w) * ch;

  // Sub-filtered scanlines.
  std::vector<unsigned char> raw(size_t(img.h) * (stride + 1));
  for (int y = 0; y < img.h; ++y) {
    unsigned char* dst = raw.data() + size_t(y) * (stride + 1);
    const uint8_t* src = img.px.data() + size_t(y) * stride;
    dst[0] = 1;  // Sub
    for (size_t i = 0; i < stride; ++i) {
      unsigned char left = i >= size_t(ch) ? src[i - ch] : 0;
      dst[1 + i] = static_cast<unsigned char>(src[i] - left);
    }
  }

  uLongf comp_len = compressBound(uLong(raw.size()));
  std::vector<unsigned char> comp(comp_len);
  int rc = compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), compression_level);
  AVC_CHECK_RUNTIME(rc == Z_OK, "png_write: deflate failed (" << rc << ")");

  std::ofstream f(path, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open for writing " << path.string());
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  write_bytes(f, sig, 8);
  unsigned char ihdr[13];
  uint32_t w = uint32_t(img.w), h = uint32_t(img.h);
  ihdr[0] = w >> 24; ihdr[1] = w >> 16; ihdr[2] = w >> 8; ihdr[3] = w;
  ihdr[4] = h >> 24; ihdr[5] = h >> 16; ihdr[6] = h >> 8; ihdr[7] = h;
  ihdr[8] = 8;                      // bit depth
  ihdr[9] = ch == 1 ? 0 : 2;        // colour type
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  detail::png_write_chunk(f, "IHDR", ihdr, 13);
  detail::png_write_chunk(f, "IDAT", comp.data(), comp_len);
  detail::png_write_chunk(f, "IEND", nullptr, 0);
  AVC_CHECK_RUNTIME(f.good(), "write failed for " << path.string());
}

inline ImageU8 png_read(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open " << path.string());
  unsigned char sig[8];
  read_bytes(f, sig, 8, "png signature");
  static const unsigned char want[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  AVC_CHECK_RUNTIME(std::memcmp(sig, want, 8) == 0, path.string() << ": not a PNG file");

  uint32_t w = 0, h = 0;
  int channels = 0;
  std::vector<unsigned char> idat;
  bool done = false;
  while (!done) {
    uint32_t len = detail::png_read_be32(f, "png chunk length");
    char type[5] = {0};
    read_bytes(f, type, 4, "png chunk type");
    std::vector<unsigned char> data(len);
    if (len) read_bytes(f, data.data(), len, "png chunk data");
    (void)detail::png_read_be32(f, "png chunk crc");
    if (std::memcmp(type, "IHDR", 4) == 0) {
      AVC_CHECK_RUNTIME(len == 13, path.string() << ": malformed IHDR");
      w = uint32_t(data[0]) << 24 | uint32_t(data[1]) << 16 | uint32_t(data[2]) << 8 | data[3];
      h = uint32_t(data[4]) << 24 | uint32_t(data[5]) << 16 | uint32_t(data[6]) << 8 | data[7];
      AVC_CHECK_RUNTIME(data[8] == 8, path.string() << ": only 8-bit depth supported");
      switch (data[9]) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default:
          throw RuntimeFailure(path.string() + ": unsupported PNG colour type");
      }
      AVC_CHECK_RUNTIME(data[12] == 0, path.string() << ": interlaced PNG not supported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data.begin(), data.end());
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      done = true;
    }
  }
  AVC_CHECK_RUNTIME(w > 0 && h > 0 && channels > 0 && !idat.empty(),
                    path.string() << ": incomplete PNG");

  const size_t stride = size_t(w) * channels;
  std::vector<unsigned char> raw(size_t(h) * (stride + 1));
  uLongf raw_len = uLongf(raw.size());
  int rc = uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size()));
  AVC_CHECK_RUNTIME(rc == Z_OK && raw_len == raw.size(),
                    path.string() << ": inflate failed (" << rc << ")");

  ImageU8 img(int(w), int(h), channels);
  std::vector<unsigned char> prev(stride, 0);
  for (uint32_t y = 0; y < h; ++y) {
    const unsigned char* src = raw.data() + size_t(y) * (stride + 1);
    unsigned char filter = src[0];
    ++src;
    uint8_t* dst = img.px.data() + size_t(y) * stride;
    for (size_t i = 0; i < stride; ++i) {
      int a = i >= size_t(channels) ? dst[i - channels] : 0;  // left
      int b = prev[i];                                        // up
      int c = i >= size_t(channels) ? prev[i - channels] : 0; // up-left
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::png_paeth(a, b, c); break;
        default:
          throw RuntimeFailure(path.string() + ": unknown PNG filter type");
      }
      dst[i] = uint8_t(v & 0xff);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return img;
}

// Drops alpha / expands greyscale so callers always get 3 channels.
inline ImageU8 png_read_rgb(const std::filesystem::path& path) {
  ImageU8 img = png_read(path);
  if (img.channels == 3) return img;
  ImageU8 out(img.w, img.h, 3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const uint8_t* s = img.pixel(x, y);
      uint8_t* d = out.pixel(x, y);
      if (img.channels == 1 || img.channels == 2) {
        d[0] = d[1] = d[2] = s[0];
      } else {
        d[0] = s[0]; d[1] = s[1]; d[2] = s[2];
      }
    }
  return out;
}

}  // namespace avc
