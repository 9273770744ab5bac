#include <catch2/catch_amalgamated.hpp>
#include <fstream>

#include "avclab/dataset.hpp"

using namespace avc;
using Catch::Approx;

namespace {

// Shared tiny corpus, generated once per test binary run.
const std::filesystem::path& tiny_corpus() {
  static std::filesystem::path manifest = [] {
    DatasetConfig cfg;
    cfg.n_clips = 8;
    cfg.n_classes = 4;
    cfg.seed = 99;
    cfg.out_dir = std::filesystem::temp_directory_path() / "avclab_tiny_corpus";
    std::filesystem::remove_all(cfg.out_dir);
    return generate_dataset(cfg);
  }();
  return manifest;
}

double chi_square_critical_99(int dof) {
  // Wilson-Hilferty approximation of the 0.99 quantile.
  double z = 2.3263478740408408;
  double t = 1.0 - 2.0 / (9.0 * dof) + z * std::sqrt(2.0 / (9.0 * dof));
  return dof * t * t * t;
}

}  // namespace

TEST_CASE("generate_dataset produces the declared corpus", "[dataset][generate]") {
  auto records = load_manifest(tiny_corpus());
  REQUIRE(records.size() == 8);
  for (const auto& r : records) {
    CHECK(r.n_frames == 250);
    CHECK(int(r.boxes.size()) == r.n_frames);
    REQUIRE(r.labels.size() == 1);
    CHECK(r.labels[0].rfind("class_", 0) == 0);
    WavInfo info = wav_probe(r.audio_path);
    CHECK(info.sample_rate == 48000);
    CHECK(info.n_frames == 480000);
    // ground-truth boxes stay inside the crop
    for (const auto& b : r.boxes) {
      CHECK(b[0] >= 0);
      CHECK(b[1] >= 0);
      CHECK(b[2] <= 223);
      CHECK(b[3] <= 223);
      CHECK(b[0] < b[2]);
      CHECK(b[1] < b[3]);
    }
  }
  // every class present
  std::set<std::string> classes;
  for (const auto& r : records) classes.insert(r.labels[0]);
  CHECK(classes.size() == 4);
  // ontology written next to the manifest
  CHECK(std::filesystem::exists(tiny_corpus().parent_path() / "ontology.json"));
}

TEST_CASE("generation is byte-deterministic in the seed", "[dataset][generate]") {
  DatasetConfig cfg;
  cfg.n_clips = 2;
  cfg.n_classes = 2;
  cfg.seed = 1234;
  cfg.out_dir = std::filesystem::temp_directory_path() / "avclab_det_a";
  std::filesystem::remove_all(cfg.out_dir);
  auto m1 = generate_dataset(cfg);
  cfg.out_dir = std::filesystem::temp_directory_path() / "avclab_det_b";
  std::filesystem::remove_all(cfg.out_dir);
  auto m2 = generate_dataset(cfg);

  CHECK(read_text_file(m1) == read_text_file(m2));
  for (const char* rel : {"clips/clip_000001/audio.wav", "clips/clip_000001/frames/f017.png"}) {
    CHECK(read_text_file(m1.parent_path() / rel) == read_text_file(m2.parent_path() / rel));
  }
}

TEST_CASE("load_manifest validation", "[dataset][manifest]") {
  auto tmp = std::filesystem::temp_directory_path() / "avclab_manifest_test";
  ensure_dir(tmp);

  SECTION("empty file gives an empty list") {
    write_text_file(tmp / "empty.jsonl", "");
    CHECK(load_manifest(tmp / "empty.jsonl").empty());
  }
  SECTION("malformed line is fatal") {
    write_text_file(tmp / "bad.jsonl", "{not json\n");
    CHECK_THROWS_AS(load_manifest(tmp / "bad.jsonl"), ConfigError);
  }
  SECTION("record with missing media is skipped with a warning") {
    nlohmann::ordered_json rec;
    rec["clip_id"] = 0;
    rec["audio_path"] = "missing/audio.wav";
    rec["frames_dir"] = "missing/frames";
    rec["labels"] = {"class_0"};
    rec["boxes"] = {{0, 0, 10, 10}};
    rec["split"] = "train";
    write_text_file(tmp / "missing.jsonl", rec.dump() + "\n");
    CHECK(load_manifest(tmp / "missing.jsonl").empty());
  }
  SECTION("frame-count mismatch against the audio duration is rejected") {
    // point at real media from the tiny corpus but drop one box
    auto good = read_text_file(tiny_corpus());
    auto first_line = good.substr(0, good.find('\n'));
    auto j = nlohmann::json::parse(first_line);
    j["boxes"].erase(249);
    write_text_file(tiny_corpus().parent_path() / "broken.jsonl", j.dump() + "\n");
    CHECK(load_manifest(tiny_corpus().parent_path() / "broken.jsonl").empty());
  }
  SECTION("round trip preserves every field") {
    auto records = load_manifest(tiny_corpus());
    auto text = read_text_file(tiny_corpus());
    std::istringstream ss(text);
    std::string line;
    size_t i = 0;
    while (std::getline(ss, line)) {
      auto j = nlohmann::json::parse(line);
      REQUIRE(i < records.size());
      CHECK(records[i].clip_id == j["clip_id"].get<uint64_t>());
      CHECK(records[i].labels == j["labels"].get<std::vector<std::string>>());
      CHECK(split_name(records[i].split) == j["split"].get<std::string>());
      CHECK(records[i].boxes.size() == j["boxes"].size());
      ++i;
    }
    CHECK(i == records.size());
  }
}

TEST_CASE("sampler respects the frame grid for both labels", "[dataset][sampler]") {
  auto records = load_manifest(tiny_corpus());
  SamplerConfig cfg;
  cfg.rng_seed = 5;
  Rng rng(cfg.rng_seed);
  auto plans = plan_avc_batch(records, 10000, cfg, rng);

  int positives = 0;
  for (const auto& p : plans) {
    double beats = p.audio_center * 25.0;
    CHECK(std::abs(beats - std::llround(beats)) < 1e-9);
    CHECK(p.grid_index == std::llround(beats));
    if (!p.negative) ++positives;
    if (p.negative) CHECK(records[p.frame_rec].clip_id != records[p.audio_rec].clip_id);
  }
  // negative_ratio 0.5 within sampling noise
  CHECK(positives > 4700);
  CHECK(positives < 5300);
}

TEST_CASE("positive pairs without misalignment sit exactly on the frame", "[dataset][sampler]") {
  auto records = load_manifest(tiny_corpus());
  SamplerConfig cfg;
  cfg.misalign_max = 0.0;
  Rng rng(31);
  for (int i = 0; i < 500; ++i) {
    auto plan = plan_pair(records, false, cfg, rng);
    int64_t clamped = std::clamp<int64_t>(plan.frame_idx, 13, 237);
    CHECK(plan.grid_index == clamped);
    if (plan.frame_idx >= 13 && plan.frame_idx <= 237)
      CHECK(plan.audio_center == Approx(plan.frame_idx * 0.04).margin(1e-12));
  }
}

TEST_CASE("offset residuals are degenerate and frame indices uniform", "[dataset][sampler]") {
  auto records = load_manifest(tiny_corpus());
  SamplerConfig cfg;
  Rng rng(7);
  auto plans = plan_avc_batch(records, 10000, cfg, rng);

  // residual distribution identically zero for both labels
  double max_residual_pos = 0, max_residual_neg = 0;
  for (const auto& p : plans) {
    double r = std::abs(p.audio_center * 25.0 - std::llround(p.audio_center * 25.0));
    (p.negative ? max_residual_neg : max_residual_pos) = std::max(
        p.negative ? max_residual_neg : max_residual_pos, r);
  }
  CHECK(max_residual_pos < 1e-9);
  CHECK(max_residual_neg < 1e-9);

  // chi-square uniformity of the frame index for one clip, 25 coarse bins
  std::vector<int> counts(25, 0);
  int total = 0;
  for (const auto& p : plans)
    if (p.frame_rec == 0) {
      ++counts[size_t(p.frame_idx / 10)];
      ++total;
    }
  REQUIRE(total > 500);
  double expect = double(total) / 25.0;
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < chi_square_critical_99(24));
}

TEST_CASE("off-grid mode reintroduces continuous negatives", "[dataset][sampler]") {
  auto records = load_manifest(tiny_corpus());
  SamplerConfig cfg;
  cfg.negatives_on_grid = false;
  Rng rng(13);
  int off_grid = 0, checked = 0;
  for (int i = 0; i < 2000; ++i) {
    auto plan = plan_pair(records, true, cfg, rng);
    double beats = plan.audio_center * 25.0;
    if (std::abs(beats - std::llround(beats)) > 1e-6) ++off_grid;
    ++checked;
    CHECK(plan.grid_index == -1);
  }
  CHECK(off_grid > checked * 95 / 100);
}

TEST_CASE("sampler determinism", "[dataset][sampler]") {
  auto records = load_manifest(tiny_corpus());
  SamplerConfig cfg;
  cfg.rng_seed = 77;
  Rng r1(cfg.rng_seed), r2(cfg.rng_seed);
  auto a = sample_avc_batch(records, 12, cfg, true, r1);
  auto b = sample_avc_batch(records, 12, cfg, true, r2);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].frame_clip == b[i].frame_clip);
    CHECK(a[i].audio_clip == b[i].audio_clip);
    CHECK(a[i].audio_center == b[i].audio_center);
    CHECK(a[i].frame.v == b[i].frame.v);
    CHECK(a[i].spectrogram.values == b[i].spectrogram.values);
  }
}

TEST_CASE("realized pairs carry model-ready media", "[dataset][sampler]") {
  auto records = load_manifest(tiny_corpus());
  SamplerConfig cfg;
  Rng rng(123);
  auto pairs = sample_avc_batch_balanced(records, 8, cfg, false, rng);
  REQUIRE(pairs.size() == 8);
  int negatives = 0;
  for (const auto& p : pairs) {
    CHECK(p.frame.channels == 3);
    CHECK(p.frame.h == 224);
    CHECK(p.frame.w == 224);
    CHECK(p.spectrogram.bins == 257);
    CHECK(p.spectrogram.frames == 200);
    if (p.label == PairLabel::mismatch) ++negatives;
    if (p.label == PairLabel::correspond) CHECK(p.frame_clip == p.audio_clip);
  }
  CHECK(negatives == 4);

  auto batch = to_batch(pairs);
  CHECK(batch.frames.shape() == Shape{8, 3, 224, 224});
  CHECK(batch.specs.shape() == Shape{8, 1, 257, 200});
  CHECK(batch.labels.size() == 8);
}

TEST_CASE("augment_frame contract", "[dataset][augment]") {
  auto records = load_manifest(tiny_corpus());
  ImageU8 img = png_read_rgb(records[0].frame_path(0));
  REQUIRE(img.w == 256);
  REQUIRE(img.h == 256);

  SECTION("all jitter off reduces to the deterministic center crop") {
    Rng r1(1), r2(2);
    auto a = augment_frame(img, AugmentParams::none(), r1);
    auto b = augment_frame(img, AugmentParams::none(), r2);
    CHECK(a.v == b.v);
    CHECK(a.h == 224);
    // matches a manual 16-pixel offset crop
    CHECK(a.at(0, 0, 0) == Approx(float(img.pixel(16, 16)[0]) / 255.f));
  }
  SECTION("two horizontal flips cancel") {
    ImageF once(3, 224, 224);
    Rng rng(4);
    auto p = AugmentParams::none();
    auto base = augment_frame(img, p, rng);
    // flip twice by hand
    ImageF flipped = base;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 224; ++y)
        for (int x = 0; x < 224; ++x) flipped.at(c, y, x) = base.at(c, y, 223 - x);
    ImageF twice = flipped;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 224; ++y)
        for (int x = 0; x < 224; ++x) twice.at(c, y, x) = flipped.at(c, y, 223 - x);
    CHECK(twice.v == base.v);
  }
  SECTION("augmented output is always 224x224x3 in range") {
    Rng rng(9);
    for (int k = 0; k < 10; ++k) {
      auto out = augment_frame(img, AugmentParams{}, rng);
      CHECK(out.channels == 3);
      CHECK(out.h == 224);
      CHECK(out.w == 224);
      for (float v : out.v) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
      }
    }
  }
  SECTION("undersized input is rejected") {
    ImageU8 small(100, 100, 3);
    Rng rng(2);
    CHECK_THROWS_AS(augment_frame(small, AugmentParams{}, rng), ConfigError);
  }
}

TEST_CASE("class audio is separable by nearest neighbours", "[dataset][separability]") {
  // 3-NN on time-averaged spectrogram columns, held-out fifth as queries.
  DatasetConfig cfg;
  cfg.n_clips = 60;
  cfg.n_classes = 8;
  cfg.seed = 2024;
  cfg.out_dir = std::filesystem::temp_directory_path() / "avclab_sep_corpus";
  if (!std::filesystem::exists(cfg.out_dir / "manifest.jsonl")) {
    std::filesystem::remove_all(cfg.out_dir);
    generate_dataset(cfg);
  }
  auto records = load_manifest(cfg.out_dir / "manifest.jsonl");
  REQUIRE(records.size() == 60);

  Rng rng(5);
  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  for (const auto& r : records) {
    auto spec = load_audio_window(r, 5.0, false, rng);
    std::vector<double> mean_col(257, 0.0);
    for (int b = 0; b < 257; ++b) {
      double s = 0;
      for (int f = 0; f < 200; ++f) s += spec.at(b, f);
      mean_col[size_t(b)] = s / 200.0;
    }
    // remove the per-clip loudness offset so distances compare spectral shape
    double m = 0;
    for (double v : mean_col) m += v;
    m /= 257.0;
    for (double& v : mean_col) v -= m;
    feats.push_back(std::move(mean_col));
    labels.push_back(std::stoi(r.labels[0].substr(6)));
  }

  int correct = 0, total = 0;
  for (size_t q = 0; q < feats.size(); q += 5) {  // held-out 20%
    std::vector<std::pair<double, int>> dist;
    for (size_t j = 0; j < feats.size(); ++j) {
      if (j % 5 == 0) continue;  // only train side
      double d = 0;
      for (int b = 0; b < 257; ++b) {
        double diff = feats[q][size_t(b)] - feats[j][size_t(b)];
        d += diff * diff;
      }
      dist.push_back({d, labels[j]});
    }
    std::partial_sort(dist.begin(), dist.begin() + 3, dist.end());
    std::map<int, int> votes;
    for (int k = 0; k < 3; ++k) ++votes[dist[size_t(k)].second];
    int best = -1, best_count = 0;
    for (auto [cls, count] : votes)
      if (count > best_count) {
        best = cls;
        best_count = count;
      }
    if (best == labels[q]) ++correct;
    ++total;
  }
  INFO("3-NN accuracy " << double(correct) / total);
  CHECK(double(correct) / total > 0.95);
}

TEST_CASE("two-glyph probes have disjoint in-bounds boxes", "[dataset][probe]") {
  Rng rng(77);
  for (int k = 0; k < 20; ++k) {
    auto probe = render_two_glyph_probe(1, 5, 8, rng);
    CHECK(probe.frame.h == 224);
    auto disjoint = probe.box_a[2] < probe.box_b[0] || probe.box_b[2] < probe.box_a[0] ||
                    probe.box_a[3] < probe.box_b[1] || probe.box_b[3] < probe.box_a[1];
    CHECK(disjoint);
  }
}
