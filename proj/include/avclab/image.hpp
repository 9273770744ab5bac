#pragma once

// 8-bit interleaved images plus the float plane format the models consume,
// color conversion helpers, and the frame augmentation pipeline.

#include "avclab/common.hpp"

namespace avc {

struct ImageU8 {
  int w = 0, h = 0, channels = 0;
  std::vector<uint8_t> px;  // row-major, interleaved

  ImageU8() = default;
  ImageU8(int w_, int h_, int c_) : w(w_), h(h_), channels(c_), px(size_t(w_) * h_ * c_, 0) {}

  uint8_t* pixel(int x, int y) { return px.data() + (size_t(y) * w + x) * channels; }
  const uint8_t* pixel(int x, int y) const { return px.data() + (size_t(y) * w + x) * channels; }
};

// Channel-planar float image in [0,1]; this is the CHW layout fed to models.
struct ImageF {
  int channels = 0, h = 0, w = 0;
  std::vector<float> v;

  ImageF() = default;
  ImageF(int c_, int h_, int w_) : channels(c_), h(h_), w(w_), v(size_t(c_) * h_ * w_, 0.f) {}

  float& at(int c, int y, int x) { return v[(size_t(c) * h + y) * w + x]; }
  float at(int c, int y, int x) const { return v[(size_t(c) * h + y) * w + x]; }
};

inline void hsv_to_rgb(double h, double s, double v, uint8_t rgb[3]) {
  h = h - std::floor(h / 360.0) * 360.0;
  double c = v * s;
  double x = c * (1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0));
  double m = v - c;
  double r = 0, g = 0, b = 0;
  if (h < 60) {
    r = c; g = x;
  } else if (h < 120) {
    r = x; g = c;
  } else if (h < 180) {
    g = c; b = x;
  } else if (h < 240) {
    g = x; b = c;
  } else if (h < 300) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  rgb[0] = uint8_t(std::lround(std::clamp(r + m, 0.0, 1.0) * 255.0));
  rgb[1] = uint8_t(std::lround(std::clamp(g + m, 0.0, 1.0) * 255.0));
  rgb[2] = uint8_t(std::lround(std::clamp(b + m, 0.0, 1.0) * 255.0));
}

struct AugmentParams {
  int crop_size = 224;
  bool random_crop = true;
  bool random_flip = true;
  double brightness_jitter = 0.10;  // additive, on [0,1] values
  double saturation_lo = 0.7;
  double saturation_hi = 1.3;

  static AugmentParams none(int crop = 224) {
    AugmentParams p;
    p.crop_size = crop;
    p.random_crop = false;
    p.random_flip = false;
    p.brightness_jitter = 0.0;
    p.saturation_lo = p.saturation_hi = 1.0;
    return p;
  }
};

// Crop + flip + photometric jitter. With AugmentParams::none this reduces to
// a deterministic center crop.
inline ImageF augment_frame(const ImageU8& frame, const AugmentParams& p, Rng& rng) {
  AVC_CHECK_ARG(frame.channels == 3, "augment_frame expects an RGB frame");
  AVC_CHECK_ARG(frame.w >= p.crop_size && frame.h >= p.crop_size,
                "augment_frame: input " << frame.w << "x" << frame.h << " smaller than crop "
                                        << p.crop_size);
  const int max_off_x = frame.w - p.crop_size;
  const int max_off_y = frame.h - p.crop_size;
  const int off_x = p.random_crop ? int(rng.uniform_int(0, max_off_x + 1)) : max_off_x / 2;
  const int off_y = p.random_crop ? int(rng.uniform_int(0, max_off_y + 1)) : max_off_y / 2;
  const bool flip = p.random_flip && rng.bernoulli(0.5);
  const float bright = float(p.brightness_jitter > 0
                                 ? rng.uniform(-p.brightness_jitter, p.brightness_jitter)
                                 : 0.0);
  const float sat = float(p.saturation_lo == p.saturation_hi
                              ? p.saturation_lo
                              : rng.uniform(p.saturation_lo, p.saturation_hi));

  ImageF out(3, p.crop_size, p.crop_size);
  for (int y = 0; y < p.crop_size; ++y) {
    for (int x = 0; x < p.crop_size; ++x) {
      int sx = flip ? (p.crop_size - 1 - x) + off_x : x + off_x;
      const uint8_t* src = frame.pixel(sx, y + off_y);
      float r = float(src[0]) / 255.f;
      float g = float(src[1]) / 255.f;
      float b = float(src[2]) / 255.f;
      float luma = 0.299f * r + 0.587f * g + 0.114f * b;
      r = luma + sat * (r - luma) + bright;
      g = luma + sat * (g - luma) + bright;
      b = luma + sat * (b - luma) + bright;
      out.at(0, y, x) = std::clamp(r, 0.f, 1.f);
      out.at(1, y, x) = std::clamp(g, 0.f, 1.f);
      out.at(2, y, x) = std::clamp(b, 0.f, 1.f);
    }
  }
  return out;
}

inline ImageF center_crop(const ImageU8& frame, int crop = 224) {
  Rng unused(0);
  return augment_frame(frame, AugmentParams::none(crop), unused);
}

}  // namespace avc
