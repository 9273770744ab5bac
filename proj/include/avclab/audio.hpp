#pragma once

// Waveform-to-spectrogram frontend. One second of 48 kHz audio becomes a
// 257x200 log-power image: Hann windows of 480 samples, hop 240, zero-padded
// to a 512-point FFT. The signal is right-padded with one hop of zeros so the
// frame count is exactly 200.

#include <complex>

#include "avclab/common.hpp"

namespace avc {

struct SpectrogramConfig {
  int sample_rate = 48000;
  double window_seconds = 0.01;
  double hop_fraction = 0.5;
  int fft_size = 512;
  int out_bins = 257;
  int out_frames = 200;
  double log_floor = 1e-10;

  int window_samples() const { return int(std::lround(window_seconds * sample_rate)); }
  int hop_samples() const { return int(std::lround(window_samples() * hop_fraction)); }
  double bin_hz() const { return double(sample_rate) / fft_size; }

  void validate() const {
    AVC_CHECK_ARG(sample_rate > 0 && fft_size > 0 && out_bins > 0 && out_frames > 0,
                  "spectrogram config: extents must be positive");
    AVC_CHECK_ARG((fft_size & (fft_size - 1)) == 0, "spectrogram config: fft_size must be a power of two");
    AVC_CHECK_ARG(out_bins == fft_size / 2 + 1,
                  "spectrogram config: out_bins " << out_bins << " != fft_size/2+1");
    AVC_CHECK_ARG(fft_size >= window_samples(),
                  "spectrogram config: fft_size " << fft_size << " < window "
                                                  << window_samples());
    AVC_CHECK_ARG(log_floor > 0, "spectrogram config: log_floor must be positive");
  }
};

struct Spectrogram {
  int bins = 0;
  int frames = 0;
  std::vector<float> values;  // [bin][frame], row-major; log power
  uint64_t source_clip = 0;
  double center_time = 0.0;

  float at(int bin, int frame) const { return values[size_t(bin) * frames + frame]; }
};

namespace detail {

// In-place iterative radix-2 FFT.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -6.283185307179586477 / double(len);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        auto u = a[i + j];
        auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

inline const std::vector<double>& hann_window(int n) {
  thread_local std::vector<double> cache;
  thread_local int cached_n = -1;
  if (cached_n != n) {
    cache.resize(size_t(n));
    for (int i = 0; i < n; ++i)
      cache[size_t(i)] = 0.5 - 0.5 * std::cos(6.283185307179586477 * i / n);
    cached_n = n;
  }
  return cache;
}

}  // namespace detail

// Log-power spectrogram of a nominal 1-second window. Short inputs are
// zero-padded, long inputs truncated symmetrically.
inline Spectrogram log_spectrogram(const std::vector<float>& waveform,
                                   const SpectrogramConfig& cfg = {}) {
  cfg.validate();
  const int want = cfg.sample_rate;  // one second
  const int win = cfg.window_samples();
  const int hop = cfg.hop_samples();

  std::vector<float> x(size_t(want) + size_t(hop), 0.f);  // trailing hop of padding
  if (int64_t(waveform.size()) >= want) {
    size_t skip = (waveform.size() - size_t(want)) / 2;
    std::copy(waveform.begin() + std::ptrdiff_t(skip),
              waveform.begin() + std::ptrdiff_t(skip + size_t(want)), x.begin());
  } else {
    std::copy(waveform.begin(), waveform.end(), x.begin());
  }

  Spectrogram spec;
  spec.bins = cfg.out_bins;
  spec.frames = cfg.out_frames;
  spec.values.assign(size_t(cfg.out_bins) * cfg.out_frames, 0.f);

  const auto& window = detail::hann_window(win);
  std::vector<std::complex<double>> buf(size_t(cfg.fft_size));
  for (int frame = 0; frame < cfg.out_frames; ++frame) {
    const size_t start = size_t(frame) * hop;
    AVC_ASSERT(start + size_t(win) <= x.size(), "spectrogram frame out of range");
    for (int i = 0; i < win; ++i)
      buf[size_t(i)] = std::complex<double>(double(x[start + size_t(i)]) * window[size_t(i)], 0.0);
    for (int i = win; i < cfg.fft_size; ++i) buf[size_t(i)] = 0.0;
    detail::fft_radix2(buf);
    for (int b = 0; b < cfg.out_bins; ++b) {
      double power = std::norm(buf[size_t(b)]);
      spec.values[size_t(b) * cfg.out_frames + frame] = float(std::log(power + cfg.log_floor));
    }
  }
  return spec;
}

// Band-limited sample-rate conversion with a Hann-windowed sinc kernel.
// Kernel weights are normalized per output sample, so constants survive
// exactly and the equal-rate case short-circuits to a copy.
inline std::vector<float> resample(const std::vector<float>& x, int from_rate, int to_rate) {
  AVC_CHECK_ARG(from_rate > 0 && to_rate > 0, "resample: rates must be positive");
  if (x.empty()) return {};
  if (from_rate == to_rate) return x;

  const double ratio = double(to_rate) / from_rate;
  const int64_t n_out = int64_t(std::llround(double(x.size()) * ratio));
  // Cutoff (in input-rate units) slightly below the narrower Nyquist.
  const double cutoff = 0.45 * std::min(1.0, ratio);
  const int half_taps = 24;

  std::vector<float> out(size_t(n_out), 0.f);
  for (int64_t m = 0; m < n_out; ++m) {
    const double t = double(m) / ratio;
    const int64_t k0 = int64_t(std::floor(t)) - half_taps + 1;
    const int64_t k1 = int64_t(std::floor(t)) + half_taps;
    double acc = 0.0, wsum = 0.0;
    for (int64_t k = k0; k <= k1; ++k) {
      const double u = t - double(k);
      const double hann = 0.5 + 0.5 * std::cos(3.141592653589793238 * u / (half_taps + 0.5));
      double sinc;
      if (std::abs(u) < 1e-12) {
        sinc = 2.0 * cutoff;
      } else {
        sinc = std::sin(6.283185307179586477 * cutoff * u) / (3.141592653589793238 * u);
      }
      if (k < 0 || k >= int64_t(x.size())) continue;
      const double w = sinc * hann;
      wsum += w;
      acc += w * double(x[size_t(k)]);
    }
    out[size_t(m)] = wsum != 0.0 ? float(acc / wsum) : 0.f;
  }
  return out;
}

// Whole-clip amplitude scaling by a single factor drawn from [lo, hi].
inline std::vector<float> amplitude_jitter(const std::vector<float>& x, double lo, double hi,
                                           Rng& rng) {
  AVC_CHECK_ARG(lo > 0 && lo <= hi, "amplitude_jitter: need 0 < lo <= hi, got [" << lo << ", "
                                                                                 << hi << "]");
  const float f = float(lo == hi ? lo : rng.uniform(lo, hi));
  std::vector<float> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * f;
  return out;
}

}  // namespace avc
