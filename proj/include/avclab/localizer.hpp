#pragma once

// Sound-source localization on top of a trained AVOL network: heatmap
// inference for matched or deliberately mismatched (frame, audio) inputs,
// the heatmap-mode pixel rule, and the hit-rate evaluation against the
// center-pixel baseline.

#include "avclab/checkpoint.hpp"
#include "avclab/dataset.hpp"
#include "avclab/models.hpp"

namespace avc {

struct Heatmap {
  int grid = 0;
  int frame_px = 224;
  std::vector<float> values;  // grid x grid, row-major, in [0,1]
  uint64_t frame_clip = 0;
  uint64_t audio_clip = 0;
  double score = 0;  // max cell

  // First max in row-major order.
  int argmax_cell() const {
    AVC_CHECK_ARG(!values.empty(), "heatmap: empty grid");
    int best = 0;
    for (int i = 1; i < int(values.size()); ++i)
      if (values[size_t(i)] > values[size_t(best)]) best = i;
    return best;
  }
};

inline Heatmap heatmap_infer(AvolNet<float>& net, const ImageF& frame, const Spectrogram& spec) {
  auto out = avol_forward(net, frame, spec);
  Heatmap h;
  h.grid = out.grid;
  h.frame_px = net.cfg.image_size;
  h.values = std::move(out.heatmap);
  h.score = out.score;
  h.audio_clip = spec.source_clip;
  return h;
}

inline Heatmap heatmap_infer(AnyModel& model, const ImageF& frame, const Spectrogram& spec) {
  auto* net = std::get_if<AvolNet<float>>(&model);
  AVC_CHECK_ARG(net != nullptr,
                "heatmap inference requires an avol checkpoint; this model cannot localize");
  return heatmap_infer(*net, frame, spec);
}

// Argmax cell mapped to its center pixel; ties already resolved row-major.
inline std::pair<int, int> mode_to_pixel(const Heatmap& h) {
  const int cell = h.argmax_cell();
  const int scale = h.frame_px / h.grid;
  const int i = cell / h.grid, j = cell % h.grid;
  return {scale * j + scale / 2, scale * i + scale / 2};
}

inline bool strictly_inside(int x, int y, const std::array<int, 4>& box) {
  return x > box[0] && x < box[2] && y > box[1] && y < box[3];
}

struct LocEval {
  double avol_hit_rate = 0;
  double center_hit_rate = 0;
  int n_evaluated = 0;
};

// Samples (frame, matched audio) pairs from the records and scores the
// heatmap mode against the annotated sounding box; the baseline always
// predicts the frame center.
inline LocEval eval_localization(AvolNet<float>& net, const std::vector<ClipRecord>& records,
                                 int n, uint64_t seed, std::ostream& warn = std::cerr) {
  AVC_CHECK_ARG(!records.empty(), "eval_localization: no records");
  std::vector<const ClipRecord*> usable;
  for (const auto& r : records) {
    if (r.boxes.empty()) {
      warn << "eval_localization: clip " << r.clip_id << " lacks sounding boxes, skipped\n";
      continue;
    }
    usable.push_back(&r);
  }
  AVC_CHECK_ARG(!usable.empty(), "eval_localization: no records carry sounding boxes");

  Rng rng(seed);
  const int center = net.cfg.image_size / 2;
  LocEval eval;
  int avol_hits = 0, center_hits = 0;
  for (int i = 0; i < n; ++i) {
    const ClipRecord& rec = *usable[size_t(rng.uniform_int(0, int64_t(usable.size())))];
    int frame_idx = int(rng.uniform_int(0, rec.n_frames));
    auto [glo, ghi] = detail::grid_range(rec);
    int64_t k = std::clamp<int64_t>(frame_idx, glo, ghi);

    ImageF frame = load_frame(rec, frame_idx, false, rng);
    Spectrogram spec = load_audio_window(rec, double(k) / rec.fps, false, rng);
    Heatmap h = heatmap_infer(net, frame, spec);
    h.frame_clip = rec.clip_id;
    auto [px, py] = mode_to_pixel(h);
    const auto& box = rec.boxes[size_t(frame_idx)];
    avol_hits += strictly_inside(px, py, box);
    center_hits += strictly_inside(center, center, box);
    ++eval.n_evaluated;
  }
  eval.avol_hit_rate = double(avol_hits) / double(eval.n_evaluated);
  eval.center_hit_rate = double(center_hits) / double(eval.n_evaluated);
  return eval;
}

// Mean max-score over matched pairs vs over mismatched pairs.
struct ScoreGap {
  double matched_mean = 0;
  double mismatched_mean = 0;
};

inline ScoreGap matched_mismatched_scores(AvolNet<float>& net,
                                          const std::vector<ClipRecord>& records, int n,
                                          uint64_t seed) {
  AVC_CHECK_ARG(records.size() >= 2, "score gap probe needs at least 2 clips");
  Rng rng(seed);
  double matched = 0, mismatched = 0;
  for (int i = 0; i < n; ++i) {
    size_t a = size_t(rng.uniform_int(0, int64_t(records.size())));
    size_t b = a;
    while (b == a) b = size_t(rng.uniform_int(0, int64_t(records.size())));
    const ClipRecord& frame_rec = records[a];
    int frame_idx = int(rng.uniform_int(0, frame_rec.n_frames));
    ImageF frame = load_frame(frame_rec, frame_idx, false, rng);

    auto audio_at_frame = [&](const ClipRecord& rec, int idx) {
      auto [glo, ghi] = detail::grid_range(rec);
      int64_t k = std::clamp<int64_t>(idx, glo, ghi);
      return load_audio_window(rec, double(k) / rec.fps, false, rng);
    };
    matched += heatmap_infer(net, frame, audio_at_frame(frame_rec, frame_idx)).score;
    int other_idx = int(rng.uniform_int(0, records[b].n_frames));
    mismatched += heatmap_infer(net, frame, audio_at_frame(records[b], other_idx)).score;
  }
  return {matched / n, mismatched / n};
}

// Two-object probes: a frame holding one glyph of each class, interrogated
// with audio of either class. A probe passes when the heatmap mode lands in
// the box of whichever glyph matches the sound.
struct ProbeEval {
  int n_probes = 0;
  int n_switched = 0;
  double switch_rate = 0;
};

inline ProbeEval two_object_probe(AvolNet<float>& net, const std::vector<ClipRecord>& records,
                                  int n_classes, int n_probes, uint64_t seed) {
  // index test clips by class
  std::map<int, std::vector<const ClipRecord*>> by_class;
  for (const auto& r : records)
    if (!r.labels.empty() && r.labels[0].rfind("class_", 0) == 0)
      by_class[std::stoi(r.labels[0].substr(6))].push_back(&r);
  AVC_CHECK_ARG(by_class.size() >= 2, "two-object probes need clips of at least 2 classes");

  Rng rng(seed);
  std::vector<int> classes;
  for (const auto& [cls, recs] : by_class) classes.push_back(cls);

  auto audio_of = [&](int cls) {
    const auto& pool = by_class[cls];
    const ClipRecord& rec = *pool[size_t(rng.uniform_int(0, int64_t(pool.size())))];
    auto [glo, ghi] = detail::grid_range(rec);
    int64_t k = rng.uniform_int(glo, ghi + 1);
    return load_audio_window(rec, double(k) / rec.fps, false, rng);
  };

  ProbeEval eval;
  for (int p = 0; p < n_probes; ++p) {
    int ca = classes[size_t(rng.uniform_int(0, int64_t(classes.size())))];
    int cb = ca;
    while (cb == ca) cb = classes[size_t(rng.uniform_int(0, int64_t(classes.size())))];
    auto probe = render_two_glyph_probe(ca, cb, n_classes, rng);

    Heatmap ha = heatmap_infer(net, probe.frame, audio_of(ca));
    Heatmap hb = heatmap_infer(net, probe.frame, audio_of(cb));
    auto [xa, ya] = mode_to_pixel(ha);
    auto [xb, yb] = mode_to_pixel(hb);
    bool switched = strictly_inside(xa, ya, probe.box_a) && strictly_inside(xb, yb, probe.box_b);
    eval.n_switched += switched;
    ++eval.n_probes;
  }
  eval.switch_rate = double(eval.n_switched) / double(eval.n_probes);
  return eval;
}

// ---- artifact output -------------------------------------------------------------

// 8-bit greyscale PNG, nearest-neighbour upscaled to the frame resolution.
inline void write_heatmap_png(const std::filesystem::path& path, const Heatmap& h) {
  const int scale = h.frame_px / h.grid;
  ImageU8 img(h.frame_px, h.frame_px, 1);
  for (int y = 0; y < h.frame_px; ++y)
    for (int x = 0; x < h.frame_px; ++x) {
      float v = h.values[size_t(y / scale) * h.grid + size_t(x / scale)];
      img.pixel(x, y)[0] = uint8_t(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
    }
  png_write(path, img);
}

inline void write_heatmap_sidecar(const std::filesystem::path& path, const Heatmap& h,
                                  std::optional<bool> hit = std::nullopt) {
  nlohmann::ordered_json j;
  j["score"] = h.score;
  int cell = h.argmax_cell();
  j["argmax_cell"] = {cell / h.grid, cell % h.grid};
  auto [px, py] = mode_to_pixel(h);
  j["predicted_pixel"] = {px, py};
  if (hit)
    j["hit"] = *hit;
  else
    j["hit"] = nullptr;
  j["frame_clip"] = h.frame_clip;
  j["audio_clip"] = h.audio_clip;
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace avc
