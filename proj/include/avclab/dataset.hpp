#pragma once

// Synthetic shapes-and-tones corpus, its manifest, and the AVC pair sampler.
//
// Every class couples a visual glyph (distinct shape + hue) with an audio
// timbre (distinct fundamental + harmonic weights). A clip is 10 s of the
// class tone under a slow tremolo, over background noise, with the sounding
// glyph drifting across a cluttered frame. Two properties of the generator
// matter downstream:
//
//  * the glyph's size drives the clip's loudness, so clips of the same class
//    remain distinguishable across modalities (as in natural video);
//  * a faint high-frequency tick is synthesized at every video frame
//    boundary, emulating the encode artifacts that make naive negative
//    sampling exploitable. On-grid sampling sees the ticks at a fixed phase
//    for both labels; continuous sampling leaks the label through them.

#include <array>
#include <iostream>
#include <json.hpp>

#include "avclab/audio.hpp"
#include "avclab/image.hpp"
#include "avclab/png.hpp"
#include "avclab/tensor.hpp"
#include "avclab/wav.hpp"

namespace avc {

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline Split split_from(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

struct ClipRecord {
  uint64_t clip_id = 0;
  std::filesystem::path audio_path;
  std::filesystem::path frames_dir;
  std::vector<std::string> labels;
  std::vector<std::array<int, 4>> boxes;  // per frame, in 224x224 crop coordinates
  Split split = Split::train;
  int n_frames = 0;
  int fps = 25;

  double duration() const { return double(n_frames) / fps; }
  std::filesystem::path frame_path(int idx) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "f%03d.png", idx);
    return frames_dir / buf;
  }
};

struct DatasetConfig {
  int n_clips = 100;
  int n_classes = 8;
  uint64_t seed = 0;
  std::filesystem::path out_dir;
  double train_frac = 0.8;
  double val_frac = 0.1;

  // corpus geometry; fixed across the project
  int fps = 25;
  int duration_s = 10;
  int frame_px = 256;
  int crop_px = 224;
  int sample_rate = 48000;
};

inline std::string class_name(int idx) { return "class_" + std::to_string(idx); }

// ---- per-class audiovisual identity -------------------------------------------

struct GlyphClass {
  int shape = 0;       // index into the glyph shape table
  double hue = 0.0;    // degrees
  double f0 = 220.0;   // fundamental, Hz
  std::array<double, 5> harmonics{1, 0, 0, 0, 0};
};

inline GlyphClass class_spec(int idx, int n_classes) {
  AVC_CHECK_ARG(idx >= 0 && idx < n_classes, "class index " << idx << " out of range");
  static const std::array<std::array<double, 5>, 8> kTimbres = {{
      {1.00, 0.05, 0.45, 0.05, 0.20},
      {1.00, 0.70, 0.10, 0.40, 0.05},
      {1.00, 0.25, 0.25, 0.25, 0.25},
      {1.00, 0.90, 0.75, 0.20, 0.10},
      {1.00, 0.05, 0.05, 0.60, 0.40},
      {1.00, 0.50, 0.05, 0.05, 0.50},
      {1.00, 0.30, 0.70, 0.05, 0.05},
      {1.00, 0.10, 0.10, 0.80, 0.10},
  }};
  GlyphClass g;
  g.shape = idx % 8;
  g.hue = 360.0 * idx / n_classes;
  g.f0 = 220.0 * std::pow(2.0, idx / 4.0);
  g.harmonics = kTimbres[size_t(idx % 8)];
  return g;
}

// ---- glyph rendering -----------------------------------------------------------

namespace detail {

// Signed distance to the glyph boundary (negative inside); shapes are scaled
// so their footprints are comparable at a given radius.
inline double glyph_sdf(int shape, double px, double py, double r) {
  const double ax = std::abs(px), ay = std::abs(py);
  auto rect = [&](double hx, double hy) { return std::max(ax - hx, ay - hy); };
  switch (shape) {
    case 0:  // circle
      return std::hypot(px, py) - r;
    case 1: {  // ring
      double d = std::hypot(px, py);
      return std::max(d - r, 0.55 * r - d);
    }
    case 2:  // square
      return rect(0.82 * r, 0.82 * r);
    case 3:  // diamond
      return (ax + ay) * 0.7071 - 0.95 * r;
    case 4: {  // triangle, apex up
      double d = py - 0.62 * r;                       // bottom edge
      d = std::max(d, 0.866 * px - 0.5 * py - 0.62 * r);
      d = std::max(d, -0.866 * px - 0.5 * py - 0.62 * r);
      return d;
    }
    case 5:  // plus
      return std::min(rect(0.32 * r, 0.95 * r), rect(0.95 * r, 0.32 * r));
    case 6: {  // hexagon
      double d = std::max(0.866 * ax + 0.5 * ay, ay);
      return d - 0.88 * r;
    }
    default: {  // cross (plus rotated 45 degrees)
      double qx = std::abs((px + py) * 0.7071), qy = std::abs((px - py) * 0.7071);
      return std::min(std::max(qx - 0.32 * r, qy - 0.95 * r),
                      std::max(qx - 0.95 * r, qy - 0.32 * r));
    }
  }
}

inline void draw_glyph(ImageU8& img, int shape, double cx, double cy, double r,
                       const uint8_t rgb[3]) {
  int x0 = std::max(0, int(std::floor(cx - r - 2)));
  int x1 = std::min(img.w - 1, int(std::ceil(cx + r + 2)));
  int y0 = std::max(0, int(std::floor(cy - r - 2)));
  int y1 = std::min(img.h - 1, int(std::ceil(cy + r + 2)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      double d = glyph_sdf(shape, x - cx, y - cy, r);
      double alpha = std::clamp(0.5 - d, 0.0, 1.0);
      if (alpha <= 0) continue;
      uint8_t* p = img.pixel(x, y);
      for (int c = 0; c < 3; ++c)
        p[c] = uint8_t(std::lround(alpha * rgb[c] + (1.0 - alpha) * p[c]));
    }
  }
}

inline ImageU8 render_background(int px, Rng& rng) {
  ImageU8 bg(px, px, 3);
  uint8_t base[3];
  hsv_to_rgb(rng.uniform(0, 360), rng.uniform(0.15, 0.45), rng.uniform(0.10, 0.22), base);
  double gx = rng.uniform(-1, 1), gy = rng.uniform(-1, 1);
  double gain = rng.uniform(0.03, 0.08) * 255.0;
  for (int y = 0; y < px; ++y) {
    for (int x = 0; x < px; ++x) {
      double t = (gx * (x - px / 2) + gy * (y - px / 2)) / px;
      uint8_t* p = bg.pixel(x, y);
      for (int c = 0; c < 3; ++c)
        p[c] = uint8_t(std::clamp(base[c] + t * gain, 0.0, 255.0));
    }
  }
  int n_rects = int(rng.uniform_int(2, 6));
  for (int k = 0; k < n_rects; ++k) {
    int w = int(rng.uniform_int(20, 90)), h = int(rng.uniform_int(20, 90));
    int x0 = int(rng.uniform_int(0, px - w)), y0 = int(rng.uniform_int(0, px - h));
    double dv = rng.uniform(-0.05, 0.05) * 255.0;
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) {
        uint8_t* p = bg.pixel(x, y);
        for (int c = 0; c < 3; ++c) p[c] = uint8_t(std::clamp(p[c] + dv, 0.0, 255.0));
      }
  }
  return bg;
}

struct GlyphMotion {
  double cx0, cy0, amp_x, amp_y, om_x, om_y, ph_x, ph_y;
  double x(double t) const { return cx0 + amp_x * std::sin(om_x * t + ph_x); }
  double y(double t) const { return cy0 + amp_y * std::sin(om_y * t + ph_y); }
};

}  // namespace detail

// ---- audio synthesis -----------------------------------------------------------

namespace detail {

struct ClipAudioParams {
  double amp_base;     // scales with glyph size
  double tremolo_hz;
  double tremolo_depth;
  double tremolo_phase;
  double snr_db;
  std::array<double, 5> phases;
};

inline std::vector<float> synthesize_clip_audio(const GlyphClass& cls, const ClipAudioParams& ap,
                                                int sample_rate, int duration_s, double fps,
                                                Rng& rng) {
  const int64_t n = int64_t(sample_rate) * duration_s;
  std::vector<float> x(size_t(n), 0.f);
  // harmonic stack under tremolo
  double wsum = 0;
  for (double w : cls.harmonics) wsum += w * w;
  const double norm = 1.0 / std::sqrt(wsum);
  for (int64_t i = 0; i < n; ++i) {
    double t = double(i) / sample_rate;
    double tone = 0;
    for (int h = 0; h < 5; ++h)
      tone += cls.harmonics[size_t(h)] *
              std::sin(2.0 * M_PI * cls.f0 * (h + 1) * t + ap.phases[size_t(h)]);
    double env = 1.0 - ap.tremolo_depth * 0.5 +
                 ap.tremolo_depth * 0.5 * std::sin(2.0 * M_PI * ap.tremolo_hz * t + ap.tremolo_phase);
    x[size_t(i)] = float(ap.amp_base * env * tone * norm);
  }
  // background noise sized against the realized tone RMS
  double s2 = 0;
  for (float v : x) s2 += double(v) * v;
  double sigma = std::sqrt(s2 / double(n)) * std::pow(10.0, -ap.snr_db / 20.0);
  for (auto& v : x) v += float(sigma * rng.normal());
  // frame-boundary tick: a 3 ms burst of 18 kHz at every video frame time,
  // the synthetic stand-in for frame-locked encode artifacts
  const double tick_amp = 2.5 * sigma;
  const int tick_len = int(0.003 * sample_rate);
  const double tick_freq = 18000.0;
  for (int frame = 0; frame < int(duration_s * fps); ++frame) {
    int64_t start = int64_t(std::llround(frame / fps * sample_rate));
    for (int i = 0; i < tick_len && start + i < n; ++i) {
      double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / tick_len);
      x[size_t(start + i)] += float(tick_amp * w * std::sin(2.0 * M_PI * tick_freq * i / sample_rate));
    }
  }
  // headroom
  float peak = 0;
  for (float v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.99f)
    for (auto& v : x) v *= 0.99f / peak;
  return x;
}

}  // namespace detail

// ---- ontology ------------------------------------------------------------------

// Two sibling groups of classes under one root; tree distances 0, 2 and 4 all
// occur as soon as there are classes on both sides.
inline nlohmann::ordered_json ontology_json(int n_classes) {
  nlohmann::ordered_json a_children = nlohmann::ordered_json::array();
  nlohmann::ordered_json b_children = nlohmann::ordered_json::array();
  int half = (n_classes + 1) / 2;
  for (int i = 0; i < n_classes; ++i) {
    nlohmann::ordered_json leaf;
    leaf["name"] = class_name(i);
    (i < half ? a_children : b_children).push_back(leaf);
  }
  nlohmann::ordered_json root;
  root["name"] = "root";
  root["children"] = nlohmann::ordered_json::array();
  nlohmann::ordered_json ga, gb;
  ga["name"] = "group_a";
  ga["children"] = a_children;
  root["children"].push_back(ga);
  if (!b_children.empty()) {
    gb["name"] = "group_b";
    gb["children"] = b_children;
    root["children"].push_back(gb);
  }
  return root;
}

// ---- generation ----------------------------------------------------------------

// Writes WAVs, frames and the manifest; returns the manifest path.
inline std::filesystem::path generate_dataset(const DatasetConfig& cfg) {
  AVC_CHECK_ARG(cfg.n_classes >= 2, "generate_dataset: need at least 2 classes");
  AVC_CHECK_ARG(cfg.n_clips >= 1, "generate_dataset: need at least 1 clip");
  AVC_CHECK_ARG(cfg.train_frac >= 0 && cfg.val_frac >= 0 && cfg.train_frac + cfg.val_frac <= 1.0,
                "generate_dataset: bad split fractions");
  ensure_dir(cfg.out_dir);
  ensure_dir(cfg.out_dir / "clips");

  Rng root_rng(cfg.seed);

  // split assignment: shuffled clip order, then contiguous blocks
  std::vector<int> order(size_t(cfg.n_clips));
  for (int i = 0; i < cfg.n_clips; ++i) order[size_t(i)] = i;
  Rng shuffle_rng = root_rng.fork(0x5917);
  for (int i = cfg.n_clips - 1; i > 0; --i)
    std::swap(order[size_t(i)], order[size_t(shuffle_rng.uniform_int(0, i + 1))]);
  const int n_train = int(std::llround(cfg.train_frac * cfg.n_clips));
  const int n_val = int(std::llround(cfg.val_frac * cfg.n_clips));
  std::vector<Split> splits(size_t(cfg.n_clips));
  for (int pos = 0; pos < cfg.n_clips; ++pos) {
    Split s = pos < n_train ? Split::train : (pos < n_train + n_val ? Split::val : Split::test);
    splits[size_t(order[size_t(pos)])] = s;
  }

  const int n_frames = cfg.duration_s * cfg.fps;
  const int margin = (cfg.frame_px - cfg.crop_px) / 2;  // 16 for 256 -> 224

  std::ofstream manifest(cfg.out_dir / "manifest.jsonl", std::ios::binary);
  AVC_CHECK_RUNTIME(manifest.good(), "cannot write manifest in " << cfg.out_dir.string());

  for (int idx = 0; idx < cfg.n_clips; ++idx) {
    Rng rng = root_rng.fork(uint64_t(idx) + 1);
    const int cls_idx = idx % cfg.n_classes;
    const GlyphClass cls = class_spec(cls_idx, cfg.n_classes);

    char dirbuf[32];
    std::snprintf(dirbuf, sizeof(dirbuf), "clip_%06d", idx);
    const std::filesystem::path clip_dir = cfg.out_dir / "clips" / dirbuf;
    const std::filesystem::path frames_dir = clip_dir / "frames";
    ensure_dir(frames_dir);

    // sounding glyph geometry; its size drives loudness below
    const double r = rng.uniform(22.0, 46.0);
    const double lo = margin + r + 5.0, hi = cfg.frame_px - margin - r - 5.0;
    detail::GlyphMotion motion{rng.uniform(lo, hi), rng.uniform(lo, hi),
                               rng.uniform(3.0, 9.0), rng.uniform(3.0, 9.0),
                               rng.uniform(1.5, 6.0), rng.uniform(1.5, 6.0),
                               rng.uniform(0, 2 * M_PI), rng.uniform(0, 2 * M_PI)};

    // 0-2 silent distractor glyphs of other classes
    struct Distractor {
      GlyphClass cls;
      double cx, cy, r;
    };
    std::vector<Distractor> distractors;
    double u = rng.uniform();
    int n_distract = u < 0.5 ? 0 : (u < 0.85 ? 1 : 2);
    for (int k = 0; k < n_distract; ++k) {
      Distractor d;
      int other = int(rng.uniform_int(0, cfg.n_classes - 1));
      if (other >= cls_idx) ++other;
      d.cls = class_spec(other, cfg.n_classes);
      d.r = rng.uniform(20.0, 42.0);
      for (int tries = 0; tries < 64; ++tries) {
        d.cx = rng.uniform(d.r + 3, cfg.frame_px - d.r - 3);
        d.cy = rng.uniform(d.r + 3, cfg.frame_px - d.r - 3);
        double dist = std::hypot(d.cx - motion.cx0, d.cy - motion.cy0);
        bool clear = dist > d.r + r + 14.0;
        for (const auto& e : distractors)
          clear = clear && std::hypot(d.cx - e.cx, d.cy - e.cy) > d.r + e.r + 8.0;
        if (clear) break;
      }
      distractors.push_back(d);
    }

    // audio
    detail::ClipAudioParams ap;
    ap.amp_base = 0.10 + 0.50 * std::pow((r - 22.0) / 24.0, 2.0);
    ap.tremolo_hz = rng.uniform(0.8, 2.5);
    ap.tremolo_depth = rng.uniform(0.25, 0.5);
    ap.tremolo_phase = rng.uniform(0, 2 * M_PI);
    ap.snr_db = rng.uniform(12.0, 18.0);
    for (auto& p : ap.phases) p = rng.uniform(0, 2 * M_PI);
    Rng noise_rng = rng.fork(0xa0d10);
    auto audio = detail::synthesize_clip_audio(cls, ap, cfg.sample_rate, cfg.duration_s,
                                               double(cfg.fps), noise_rng);
    wav_write(clip_dir / "audio.wav", audio, cfg.sample_rate);

    // frames and ground-truth boxes
    ImageU8 bg = detail::render_background(cfg.frame_px, rng);
    uint8_t glyph_rgb[3];
    hsv_to_rgb(cls.hue, 0.85, 0.95, glyph_rgb);
    nlohmann::ordered_json boxes = nlohmann::ordered_json::array();
    for (int f = 0; f < n_frames; ++f) {
      double t = double(f) / cfg.fps;
      ImageU8 frame = bg;
      for (const auto& d : distractors) {
        uint8_t rgb[3];
        hsv_to_rgb(d.cls.hue, 0.85, 0.95, rgb);
        detail::draw_glyph(frame, d.cls.shape, d.cx, d.cy, d.r, rgb);
      }
      double cx = motion.x(t), cy = motion.y(t);
      detail::draw_glyph(frame, cls.shape, cx, cy, r, glyph_rgb);
      char fname[16];
      std::snprintf(fname, sizeof(fname), "f%03d.png", f);
      png_write(frames_dir / fname, frame);

      int x0 = std::clamp(int(std::floor(cx - r - 1)) - margin, 0, cfg.crop_px - 1);
      int y0 = std::clamp(int(std::floor(cy - r - 1)) - margin, 0, cfg.crop_px - 1);
      int x1 = std::clamp(int(std::ceil(cx + r + 1)) - margin, 0, cfg.crop_px - 1);
      int y1 = std::clamp(int(std::ceil(cy + r + 1)) - margin, 0, cfg.crop_px - 1);
      AVC_ASSERT(int(cx) - margin > x0 && int(cx) - margin < x1 && int(cy) - margin > y0 &&
                     int(cy) - margin < y1,
                 "sounding box must contain the glyph centroid");
      boxes.push_back({x0, y0, x1, y1});
    }

    nlohmann::ordered_json rec;
    rec["clip_id"] = uint64_t(idx);
    rec["audio_path"] = (std::filesystem::path("clips") / dirbuf / "audio.wav").generic_string();
    rec["frames_dir"] = (std::filesystem::path("clips") / dirbuf / "frames").generic_string();
    rec["labels"] = {class_name(cls_idx)};
    rec["boxes"] = boxes;
    rec["split"] = split_name(splits[size_t(idx)]);
    manifest << rec.dump() << "\n";
  }
  manifest.close();
  AVC_CHECK_RUNTIME(manifest.good(), "manifest write failed");

  write_text_file(cfg.out_dir / "ontology.json", ontology_json(cfg.n_classes).dump(2) + "\n");
  return cfg.out_dir / "manifest.jsonl";
}

// ---- manifest loading ----------------------------------------------------------

inline std::vector<ClipRecord> load_manifest(const std::filesystem::path& path) {
  require_exists(path, "manifest");
  std::ifstream f(path, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open " << path.string());
  const std::filesystem::path base = path.parent_path();

  std::vector<ClipRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ClipRecord rec;
      rec.clip_id = j.at("clip_id").get<uint64_t>();
      rec.audio_path = base / j.at("audio_path").get<std::string>();
      rec.frames_dir = base / j.at("frames_dir").get<std::string>();
      rec.labels = j.at("labels").get<std::vector<std::string>>();
      for (const auto& b : j.at("boxes")) {
        AVC_CHECK_ARG(b.size() == 4, "box needs 4 coordinates");
        rec.boxes.push_back({b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()});
      }
      rec.split = split_from(j.at("split").get<std::string>());
      rec.n_frames = int(rec.boxes.size());

      if (rec.labels.empty()) {
        std::cerr << "manifest line " << line_no << ": empty label set, skipping\n";
        continue;
      }
      if (!std::filesystem::exists(rec.audio_path)) {
        std::cerr << "manifest line " << line_no << ": missing audio "
                  << rec.audio_path.string() << ", skipping\n";
        continue;
      }
      if (!std::filesystem::exists(rec.frames_dir) ||
          !std::filesystem::exists(rec.frame_path(rec.n_frames - 1))) {
        std::cerr << "manifest line " << line_no << ": missing frames in "
                  << rec.frames_dir.string() << ", skipping\n";
        continue;
      }
      WavInfo info = wav_probe(rec.audio_path);
      double audio_seconds = double(info.n_frames) / info.sample_rate;
      if (std::abs(audio_seconds * rec.fps - rec.n_frames) > 1e-6) {
        std::cerr << "manifest line " << line_no << ": frame count " << rec.n_frames
                  << " does not equal duration*fps (" << audio_seconds * rec.fps
                  << "), skipping\n";
        continue;
      }
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

inline std::vector<ClipRecord> filter_split(const std::vector<ClipRecord>& records, Split s) {
  std::vector<ClipRecord> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(r);
  return out;
}

// ---- pair sampling -------------------------------------------------------------

enum class PairLabel { mismatch = 0, correspond = 1 };

struct AvcPair {
  ImageF frame;
  Spectrogram spectrogram;
  PairLabel label = PairLabel::mismatch;
  uint64_t frame_clip = 0;
  uint64_t audio_clip = 0;
  double audio_center = 0.0;
  int64_t audio_grid_index = -1;  // audio_center * fps when on the grid
};

struct SamplerConfig {
  double frame_period = 0.04;
  double misalign_max = 1.0;
  double negative_ratio = 0.5;
  uint64_t rng_seed = 0;
  // When false, negative audio centers are drawn continuously instead of on
  // the frame grid; this deliberately reintroduces the sampling shortcut for
  // A/B experiments.
  bool negatives_on_grid = true;

  void validate() const {
    AVC_CHECK_ARG(frame_period > 0, "sampler: frame_period must be positive");
    AVC_CHECK_ARG(misalign_max >= 0, "sampler: misalign_max must be non-negative");
    double steps = misalign_max / frame_period;
    AVC_CHECK_ARG(std::abs(steps - std::llround(steps)) < 1e-9,
                  "sampler: misalign_max must be an integer multiple of frame_period");
    AVC_CHECK_ARG(negative_ratio >= 0 && negative_ratio <= 1,
                  "sampler: negative_ratio must lie in [0,1]");
  }
};

namespace detail {

// Valid grid range for a 1 s window centered on the grid inside the clip.
inline std::pair<int64_t, int64_t> grid_range(const ClipRecord& rec) {
  int64_t lo = int64_t(std::ceil(0.5 * rec.fps));
  int64_t hi = int64_t(std::floor((rec.duration() - 0.5) * rec.fps));
  AVC_CHECK_ARG(lo <= hi, "clip " << rec.clip_id << " too short for 1 s audio windows");
  return {lo, hi};
}

}  // namespace detail

// Loads one frame as a model-ready 224x224 image.
inline ImageF load_frame(const ClipRecord& rec, int frame_idx, bool augment, Rng& rng) {
  AVC_CHECK_ARG(frame_idx >= 0 && frame_idx < rec.n_frames,
                "frame index " << frame_idx << " out of range for clip " << rec.clip_id);
  ImageU8 img = png_read_rgb(rec.frame_path(frame_idx));
  return augment ? augment_frame(img, AugmentParams{}, rng) : center_crop(img);
}

// Loads the 1 s audio window centered at `center` seconds (sample-accurate)
// and converts it to a spectrogram; amplitude jitter applies when augmenting.
// Files at other sample rates are band-limited resampled to the target rate.
inline Spectrogram load_audio_window(const ClipRecord& rec, double center, bool augment, Rng& rng,
                                     const SpectrogramConfig& scfg = {}) {
  WavInfo info = wav_probe(rec.audio_path);
  std::vector<float> wave;
  if (info.sample_rate == scfg.sample_rate) {
    int64_t start = int64_t(std::llround((center - 0.5) * scfg.sample_rate));
    wave = wav_read_window(rec.audio_path, start, scfg.sample_rate);
  } else {
    int64_t start = int64_t(std::llround((center - 0.5) * info.sample_rate));
    wave = resample(wav_read_window(rec.audio_path, start, info.sample_rate), info.sample_rate,
                    scfg.sample_rate);
    wave.resize(size_t(scfg.sample_rate), 0.f);
  }
  if (augment) wave = amplitude_jitter(wave, 0.5, 1.5, rng);
  Spectrogram s = log_spectrogram(wave, scfg);
  s.source_clip = rec.clip_id;
  s.center_time = center;
  return s;
}

// Sampling decisions separated from media loading so distribution properties
// can be tested on the plans alone.
struct PairPlan {
  bool negative = false;
  size_t frame_rec = 0;
  int frame_idx = 0;
  size_t audio_rec = 0;
  double audio_center = 0.0;
  int64_t grid_index = -1;
};

inline PairPlan plan_pair(const std::vector<ClipRecord>& records, bool negative,
                          const SamplerConfig& cfg, Rng& rng) {
  const int fps = records.front().fps;
  const int64_t misalign_steps = int64_t(std::llround(cfg.misalign_max / cfg.frame_period));

  PairPlan plan;
  plan.negative = negative;
  plan.frame_rec = size_t(rng.uniform_int(0, int64_t(records.size())));
  plan.frame_idx = int(rng.uniform_int(0, records[plan.frame_rec].n_frames));

  plan.audio_rec = plan.frame_rec;
  if (negative) {
    do {
      plan.audio_rec = size_t(rng.uniform_int(0, int64_t(records.size())));
    } while (records[plan.audio_rec].clip_id == records[plan.frame_rec].clip_id);
  }
  const ClipRecord& audio_rec = records[plan.audio_rec];

  auto [glo, ghi] = detail::grid_range(audio_rec);
  if (negative && !cfg.negatives_on_grid) {
    plan.audio_center = rng.uniform(0.5, audio_rec.duration() - 0.5);
    plan.grid_index = -1;
  } else {
    int64_t base = negative ? rng.uniform_int(0, audio_rec.n_frames) : plan.frame_idx;
    int64_t offset = misalign_steps > 0 ? rng.uniform_int(-misalign_steps, misalign_steps + 1) : 0;
    int64_t k = std::clamp(base + offset, glo, ghi);
    plan.grid_index = k;
    plan.audio_center = double(k) / fps;
  }
  return plan;
}

inline std::vector<PairPlan> plan_avc_batch(const std::vector<ClipRecord>& records, int n,
                                            const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  if (n <= 0) return {};
  AVC_CHECK_ARG(records.size() >= 2, "sampler: need at least 2 clips, got " << records.size());
  std::vector<PairPlan> plans;
  plans.reserve(size_t(n));
  for (int i = 0; i < n; ++i)
    plans.push_back(plan_pair(records, rng.bernoulli(cfg.negative_ratio), cfg, rng));
  return plans;
}

inline AvcPair realize_pair(const std::vector<ClipRecord>& records, const PairPlan& plan,
                            bool augment, Rng& rng) {
  const ClipRecord& frame_rec = records[plan.frame_rec];
  const ClipRecord& audio_rec = records[plan.audio_rec];
  AvcPair pair;
  pair.label = plan.negative ? PairLabel::mismatch : PairLabel::correspond;
  pair.frame_clip = frame_rec.clip_id;
  pair.audio_clip = audio_rec.clip_id;
  pair.audio_center = plan.audio_center;
  pair.audio_grid_index = plan.grid_index;
  pair.frame = load_frame(frame_rec, plan.frame_idx, augment, rng);
  pair.spectrogram = load_audio_window(audio_rec, plan.audio_center, augment, rng);
  return pair;
}

// Shortcut-safe AVC pair stream: both labels receive grid-quantized
// misalignment, so audio-center statistics carry no label information.
inline std::vector<AvcPair> sample_avc_batch(const std::vector<ClipRecord>& records, int n,
                                             const SamplerConfig& cfg, bool augment, Rng& rng) {
  cfg.validate();
  if (n <= 0) return {};
  AVC_CHECK_ARG(records.size() >= 2, "sampler: need at least 2 clips, got " << records.size());
  std::vector<AvcPair> out;
  out.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    PairPlan plan = plan_pair(records, rng.bernoulli(cfg.negative_ratio), cfg, rng);
    out.push_back(realize_pair(records, plan, augment, rng));
  }
  return out;
}

// Exactly n/2 negatives, interleaved; used by evaluation paths.
inline std::vector<AvcPair> sample_avc_batch_balanced(const std::vector<ClipRecord>& records,
                                                      int n, const SamplerConfig& cfg,
                                                      bool augment, Rng& rng) {
  cfg.validate();
  if (n <= 0) return {};
  AVC_CHECK_ARG(records.size() >= 2, "sampler: need at least 2 clips, got " << records.size());
  std::vector<AvcPair> out;
  out.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    PairPlan plan = plan_pair(records, i % 2 == 0, cfg, rng);
    out.push_back(realize_pair(records, plan, augment, rng));
  }
  return out;
}

// ---- batch assembly ------------------------------------------------------------

struct AvcBatch {
  Tensor<float> frames;  // [N,3,224,224]
  Tensor<float> specs;   // [N,1,257,200]
  std::vector<int> labels;
};

inline AvcBatch to_batch(const std::vector<AvcPair>& pairs) {
  AVC_CHECK_ARG(!pairs.empty(), "to_batch: empty pair list");
  const int N = int(pairs.size());
  const auto& f0 = pairs.front().frame;
  const auto& s0 = pairs.front().spectrogram;
  AvcBatch batch;
  batch.frames = Tensor<float>(Shape{N, f0.channels, f0.h, f0.w});
  batch.specs = Tensor<float>(Shape{N, 1, s0.bins, s0.frames});
  batch.labels.resize(size_t(N));
  for (int i = 0; i < N; ++i) {
    const auto& p = pairs[size_t(i)];
    AVC_CHECK_ARG(int(p.frame.v.size()) == f0.channels * f0.h * f0.w &&
                      int(p.spectrogram.values.size()) == s0.bins * s0.frames,
                  "to_batch: inconsistent pair shapes");
    std::copy(p.frame.v.begin(), p.frame.v.end(),
              batch.frames.data() + size_t(i) * p.frame.v.size());
    std::copy(p.spectrogram.values.begin(), p.spectrogram.values.end(),
              batch.specs.data() + size_t(i) * p.spectrogram.values.size());
    batch.labels[size_t(i)] = int(p.label);
  }
  return batch;
}

// ---- localization probes -------------------------------------------------------

struct TwoGlyphProbe {
  ImageF frame;
  std::array<int, 4> box_a{}, box_b{};  // crop coordinates
  int class_a = 0, class_b = 0;
};

// Renders a fresh frame with one glyph of each class on a plain background,
// far enough apart that their ground-truth boxes do not overlap.
inline TwoGlyphProbe render_two_glyph_probe(int class_a, int class_b, int n_classes, Rng& rng,
                                            int frame_px = 256, int crop_px = 224) {
  AVC_CHECK_ARG(class_a != class_b, "two-glyph probe needs distinct classes");
  const int margin = (frame_px - crop_px) / 2;
  ImageU8 img = detail::render_background(frame_px, rng);

  auto place = [&](int cls_idx, double cx, double cy, double r) {
    GlyphClass cls = class_spec(cls_idx, n_classes);
    uint8_t rgb[3];
    hsv_to_rgb(cls.hue, 0.85, 0.95, rgb);
    detail::draw_glyph(img, cls.shape, cx, cy, r, rgb);
    std::array<int, 4> box{std::clamp(int(cx - r - 1) - margin, 0, crop_px - 1),
                           std::clamp(int(cy - r - 1) - margin, 0, crop_px - 1),
                           std::clamp(int(cx + r + 1) - margin, 0, crop_px - 1),
                           std::clamp(int(cy + r + 1) - margin, 0, crop_px - 1)};
    return box;
  };

  double ra = rng.uniform(26.0, 40.0), rb = rng.uniform(26.0, 40.0);
  bool a_left = rng.bernoulli(0.5);
  double xa = a_left ? rng.uniform(margin + ra + 6, frame_px / 2.0 - ra - 8)
                     : rng.uniform(frame_px / 2.0 + ra + 8, frame_px - margin - ra - 6);
  double xb = a_left ? rng.uniform(frame_px / 2.0 + rb + 8, frame_px - margin - rb - 6)
                     : rng.uniform(margin + rb + 6, frame_px / 2.0 - rb - 8);
  double ya = rng.uniform(margin + ra + 6, frame_px - margin - ra - 6);
  double yb = rng.uniform(margin + rb + 6, frame_px - margin - rb - 6);

  TwoGlyphProbe probe;
  probe.class_a = class_a;
  probe.class_b = class_b;
  probe.box_a = place(class_a, xa, ya, ra);
  probe.box_b = place(class_b, xb, yb, rb);
  probe.frame = center_crop(img, crop_px);
  return probe;
}

}  // namespace avc
