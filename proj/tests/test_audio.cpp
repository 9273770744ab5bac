#include <catch2/catch_amalgamated.hpp>
#include <complex>

#include "avclab/audio.hpp"
#include "avclab/wav.hpp"

using namespace avc;
using Catch::Approx;

namespace {

std::vector<float> sine(double freq, int rate, int n, double amp = 1.0, double phase = 0.0) {
  std::vector<float> x(size_t(n), 0.f);
  for (int i = 0; i < n; ++i)
    x[size_t(i)] = float(amp * std::sin(2.0 * M_PI * freq * i / rate + phase));
  return x;
}

// Naive DFT of one windowed frame; the independent route for spectrogram
// values.
std::vector<double> dft_frame_log_power(const std::vector<float>& x, size_t start,
                                        const SpectrogramConfig& cfg) {
  const int win = cfg.window_samples();
  std::vector<double> out(size_t(cfg.out_bins));
  for (int b = 0; b < cfg.out_bins; ++b) {
    std::complex<double> acc(0, 0);
    for (int i = 0; i < win; ++i) {
      double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);
      double v = (start + size_t(i)) < x.size() ? double(x[start + size_t(i)]) * w : 0.0;
      double ang = -2.0 * M_PI * b * i / cfg.fft_size;
      acc += v * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[size_t(b)] = std::log(std::norm(acc) + cfg.log_floor);
  }
  return out;
}

double rms(const std::vector<float>& x) {
  double s = 0;
  for (float v : x) s += double(v) * v;
  return std::sqrt(s / double(x.size()));
}

}  // namespace

TEST_CASE("resample basics", "[audio][resample]") {
  SECTION("equal rates are bitwise identity") {
    auto x = sine(440, 48000, 4800);
    auto y = resample(x, 48000, 48000);
    CHECK(x == y);
  }
  SECTION("empty input gives empty output") {
    CHECK(resample({}, 24000, 48000).empty());
  }
  SECTION("constants are preserved at any rate pair") {
    std::vector<float> x(size_t(1000), 0.7f);
    for (auto [from, to] : {std::pair{48000, 32000}, {24000, 48000}, {44100, 48000}}) {
      auto y = resample(x, from, to);
      REQUIRE(!y.empty());
      for (float v : y) CHECK(v == Approx(0.7f).margin(1e-6));
    }
  }
  SECTION("440 Hz upsampled 24->48 kHz correlates with direct synthesis") {
    auto x24 = sine(440, 24000, 24000);
    auto up = resample(x24, 24000, 48000);
    auto ref = sine(440, 48000, 48000);
    REQUIRE(up.size() == ref.size());
    size_t trim = 256;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = trim; i + trim < up.size(); ++i) {
      sxy += double(up[i]) * ref[i];
      sxx += double(up[i]) * up[i];
      syy += double(ref[i]) * ref[i];
    }
    double corr = sxy / std::sqrt(sxx * syy);
    CHECK(corr > 0.999);
  }
}

TEST_CASE("log_spectrogram contract", "[audio][spectrogram]") {
  SpectrogramConfig cfg;
  cfg.validate();
  REQUIRE(cfg.window_samples() == 480);
  REQUIRE(cfg.hop_samples() == 240);

  SECTION("any one-second input maps to exactly 257x200") {
    auto x = sine(523, 48000, 48000, 0.3);
    auto s = log_spectrogram(x, cfg);
    CHECK(s.bins == 257);
    CHECK(s.frames == 200);
    CHECK(s.values.size() == 257u * 200u);
  }
  SECTION("silence hits the log floor everywhere") {
    std::vector<float> x(48000, 0.f);
    auto s = log_spectrogram(x, cfg);
    float floor_val = float(std::log(1e-10));
    for (float v : s.values) CHECK(v == Approx(floor_val));
  }
  SECTION("440 Hz sine peaks at bin 5, matching the direct DFT") {
    auto x = sine(440, 48000, 48000);
    auto s = log_spectrogram(x, cfg);
    CHECK(std::lround(440.0 / cfg.bin_hz()) == 5);
    for (int frame : {0, 50, 120, 198}) {
      int arg = 0;
      for (int b = 1; b < s.bins; ++b)
        if (s.at(b, frame) > s.at(arg, frame)) arg = b;
      CHECK(arg == 5);
    }
    auto oracle = dft_frame_log_power(x, 0, cfg);
    int arg_o = 0;
    for (int b = 1; b < cfg.out_bins; ++b)
      if (oracle[size_t(b)] > oracle[size_t(arg_o)]) arg_o = b;
    CHECK(arg_o == 5);
    for (int b = 0; b < cfg.out_bins; b += 16)
      CHECK(s.at(b, 0) == Approx(oracle[size_t(b)]).margin(1e-4));
  }
  SECTION("short inputs zero-pad, long inputs truncate symmetrically") {
    auto s_short = log_spectrogram(sine(440, 48000, 100), cfg);
    CHECK(s_short.frames == 200);
    auto s_long = log_spectrogram(sine(440, 48000, 96000), cfg);
    CHECK(s_long.frames == 200);
  }
}

TEST_CASE("log_spectrogram shift covariance at hop granularity", "[audio][spectrogram]") {
  SpectrogramConfig cfg;
  Rng rng(3);
  std::vector<float> x(48000);
  for (auto& v : x) v = float(rng.uniform(-0.5, 0.5));
  std::vector<float> shifted(48000, 0.f);
  std::copy(x.begin(), x.end() - 240, shifted.begin() + 240);
  auto a = log_spectrogram(x, cfg);
  auto b = log_spectrogram(shifted, cfg);
  for (int frame = 1; frame < 198; ++frame)
    for (int bin = 0; bin < 257; bin += 8)
      CHECK(b.at(bin, frame) == Approx(a.at(bin, frame - 1)).margin(1e-6));
}

TEST_CASE("log_spectrogram energy bound", "[audio][spectrogram]") {
  SpectrogramConfig cfg;
  Rng rng(17);
  std::vector<float> x(48000);
  for (auto& v : x) v = float(rng.uniform(-1.0, 1.0));
  auto s = log_spectrogram(x, cfg);
  for (int frame : {0, 37, 101, 150}) {
    double linear_power = 0;
    for (int b = 0; b < s.bins; ++b) linear_power += std::exp(double(s.at(b, frame))) - 1e-10;
    double frame_energy = 0;
    for (int i = 0; i < 480; ++i) {
      double v = double(x[size_t(frame) * 240 + size_t(i)]);
      frame_energy += v * v;
    }
    CHECK(linear_power <= cfg.fft_size * frame_energy * (1.0 + 1e-9));
  }
}

TEST_CASE("log_spectrogram monotone in amplitude", "[audio][spectrogram]") {
  SpectrogramConfig cfg;
  auto x = sine(880, 48000, 48000, 0.2);
  std::vector<float> x2(x.size());
  for (size_t i = 0; i < x.size(); ++i) x2[i] = 2.f * x[i];
  auto a = log_spectrogram(x, cfg);
  auto b = log_spectrogram(x2, cfg);
  float floor_val = float(std::log(1e-10));
  int checked = 0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    if (a.values[i] > floor_val + 2.f) {
      CHECK(b.values[i] > a.values[i]);
      ++checked;
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("amplitude_jitter", "[audio][jitter]") {
  Rng rng(8);
  auto x = sine(440, 48000, 4800, 0.5);
  SECTION("degenerate range [1,1] is the identity") {
    CHECK(amplitude_jitter(x, 1.0, 1.0, rng) == x);
  }
  SECTION("range [0.5,0.5] halves every sample") {
    auto y = amplitude_jitter(x, 0.5, 0.5, rng);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == Approx(0.5f * x[i]));
  }
  SECTION("RMS ratio always lands inside the factor range") {
    double r0 = rms(x);
    for (int k = 0; k < 200; ++k) {
      auto y = amplitude_jitter(x, 0.5, 1.5, rng);
      double ratio = rms(y) / r0;
      CHECK(ratio >= 0.5 - 1e-6);
      CHECK(ratio <= 1.5 + 1e-6);
    }
  }
  SECTION("invalid ranges are rejected") {
    CHECK_THROWS_AS(amplitude_jitter(x, 0.0, 1.0, rng), ConfigError);
    CHECK_THROWS_AS(amplitude_jitter(x, 1.2, 1.0, rng), ConfigError);
  }
}

TEST_CASE("wav round trip and formats", "[audio][wav]") {
  auto tmp = std::filesystem::temp_directory_path() / "avclab_wav_test";
  ensure_dir(tmp);

  SECTION("mono PCM16 round trip") {
    auto x = sine(440, 48000, 9600, 0.8);
    wav_write(tmp / "mono.wav", x, 48000);
    WavInfo info;
    auto y = wav_read_all(tmp / "mono.wav", &info);
    CHECK(info.sample_rate == 48000);
    CHECK(info.channels == 1);
    REQUIRE(y.size() == x.size());
    for (size_t i = 0; i < x.size(); i += 97)
      CHECK(y[i] == Approx(x[i]).margin(1.0 / 32768.0 + 1e-6));
  }
  SECTION("windowed read zero-pads outside the file") {
    std::vector<float> x(1000, 0.25f);
    wav_write(tmp / "win.wav", x, 48000);
    auto y = wav_read_window(tmp / "win.wav", -100, 300);
    for (int i = 0; i < 100; ++i) CHECK(y[size_t(i)] == 0.f);
    for (int i = 100; i < 300; ++i) CHECK(y[size_t(i)] == Approx(0.25f).margin(1e-4));
  }
  SECTION("stereo PCM16 averages to mono") {
    // hand-rolled two-channel file: L=0.5, R=-0.5 everywhere
    std::ofstream f(tmp / "stereo.wav", std::ios::binary);
    int n = 100;
    write_bytes(f, "RIFF", 4);
    write_u32(f, 36 + uint32_t(n * 4));
    write_bytes(f, "WAVE", 4);
    write_bytes(f, "fmt ", 4);
    write_u32(f, 16);
    write_u32(f, 1u | (2u << 16));
    write_u32(f, 48000);
    write_u32(f, 48000 * 4);
    write_u32(f, 4u | (16u << 16));
    write_bytes(f, "data", 4);
    write_u32(f, uint32_t(n * 4));
    for (int i = 0; i < n; ++i) {
      int16_t l = 16384, r = -16384;
      write_bytes(f, &l, 2);
      write_bytes(f, &r, 2);
    }
    f.close();
    auto y = wav_read_all(tmp / "stereo.wav");
    REQUIRE(int(y.size()) == n);
    for (float v : y) CHECK(v == Approx(0.f).margin(1e-4));
  }
  SECTION("float32 samples read back exactly") {
    std::ofstream f(tmp / "f32.wav", std::ios::binary);
    int n = 64;
    write_bytes(f, "RIFF", 4);
    write_u32(f, 36 + uint32_t(n * 4));
    write_bytes(f, "WAVE", 4);
    write_bytes(f, "fmt ", 4);
    write_u32(f, 16);
    write_u32(f, 3u | (1u << 16));
    write_u32(f, 48000);
    write_u32(f, 48000 * 4);
    write_u32(f, 4u | (32u << 16));
    write_bytes(f, "data", 4);
    write_u32(f, uint32_t(n * 4));
    for (int i = 0; i < n; ++i) write_f32(f, 0.123f * float(i));
    f.close();
    auto y = wav_read_all(tmp / "f32.wav");
    REQUIRE(int(y.size()) == n);
    for (int i = 0; i < n; ++i) CHECK(y[size_t(i)] == 0.123f * float(i));
  }
}
