#pragma once

// Command-line entry point: synth | train | embed | retrieve | eval-ndcg |
// cca | localize | gradcheck.
//
// Every option can also come from a flat key=value config file (--config);
// explicit flags override file values. Each run writes a resolved-config
// snapshot beside its outputs, and seeds are mandatory wherever randomness
// is involved, so runs are reproducible from the snapshot alone.
//
// Exit codes: 0 success, 1 configuration/validation error, 2 runtime failure.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <iostream>

#include "avclab/cca.hpp"
#include "avclab/localizer.hpp"
#include "avclab/retrieval.hpp"
#include "avclab/trainer.hpp"

namespace avc::cli {

namespace detail {

inline std::map<std::string, std::string> load_config_file(const std::filesystem::path& path) {
  require_exists(path, "config file");
  std::map<std::string, std::string> kv;
  std::istringstream ss(read_text_file(path));
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
      line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line = line.substr(start);
    auto eq = line.find('=');
    AVC_CHECK_ARG(eq != std::string::npos,
                  path.string() << ":" << line_no << ": expected key=value, got '" << line << "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

// Collects resolved settings for the snapshot while applying file values
// under CLI overrides.
class Settings {
 public:
  explicit Settings(std::string command) { resolved_["command"] = std::move(command); }

  void load_file(const std::string& path) {
    if (path.empty()) return;
    file_ = load_config_file(path);
    resolved_["config"] = path;
  }

  template <typename T>
  void overlay(const CLI::Option* opt, const std::string& key, T& field) {
    auto it = file_.find(key);
    if (opt->count() == 0 && it != file_.end()) parse_into(key, it->second, field);
    note(key, field);
    seen_.insert(key);
  }

  void finish() const {
    for (const auto& [key, value] : file_)
      AVC_CHECK_ARG(seen_.count(key),
                    "config key '" << key << "' is not recognized by this command");
  }

  template <typename T>
  void note(const std::string& key, const T& value) {
    std::ostringstream ss;
    ss << value;
    resolved_[key] = ss.str();
  }

  void write_snapshot(const std::filesystem::path& beside) const {
    std::filesystem::path target;
    if (std::filesystem::is_directory(beside))
      target = beside / "resolved_config.txt";
    else
      target = beside.string() + ".config";
    std::ostringstream out;
    for (const auto& [k, v] : resolved_) out << k << "=" << v << "\n";
    write_text_file(target, out.str());
    std::cout << "wrote " << target.string() << "\n";
  }

 private:
  template <typename T>
  static void parse_into(const std::string& key, const std::string& text, T& field) {
    std::istringstream ss(text);
    ss >> field;
    AVC_CHECK_ARG(!ss.fail(), "config key '" << key << "': cannot parse '" << text << "'");
  }
  static void parse_into(const std::string&, const std::string& text, std::string& field) {
    field = text;
  }
  static void parse_into(const std::string& key, const std::string& text, bool& field) {
    if (text == "1" || text == "true")
      field = true;
    else if (text == "0" || text == "false")
      field = false;
    else
      throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
  }

  std::map<std::string, std::string> file_;
  std::map<std::string, std::string> resolved_;
  std::set<std::string> seen_;
};

inline uint64_t require_seed(int64_t seed) {
  AVC_CHECK_ARG(seed >= 0, "a non-negative --seed is mandatory (reproducible runs only)");
  return uint64_t(seed);
}

inline std::vector<int> parse_channels(const std::string& text) {
  std::vector<int> v;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stoi(item));
  AVC_CHECK_ARG(!v.empty(), "channel list must not be empty");
  return v;
}

// Shared sampler flags.
struct SamplerFlags {
  double frame_period = 0.04;
  double misalign_max = 1.0;
  double negative_ratio = 0.5;
  bool off_grid_negatives = false;

  void attach(CLI::App* cmd, std::map<std::string, CLI::Option*>& opts) {
    opts["sampler.frame_period"] =
        cmd->add_option("--frame-period", frame_period, "frame grid period in seconds");
    opts["sampler.misalign_max"] =
        cmd->add_option("--misalign-max", misalign_max, "audio/frame misalignment bound (s)");
    opts["sampler.negative_ratio"] =
        cmd->add_option("--negative-ratio", negative_ratio, "fraction of mismatched pairs");
    opts["sampler.off_grid_negatives"] = cmd->add_flag(
        "--off-grid-negatives", off_grid_negatives,
        "sample negative audio centers continuously (reintroduces the sampling shortcut)");
  }

  SamplerConfig resolve(Settings& st, const std::map<std::string, CLI::Option*>& opts,
                        uint64_t seed) {
    st.overlay(opts.at("sampler.frame_period"), "sampler.frame_period", frame_period);
    st.overlay(opts.at("sampler.misalign_max"), "sampler.misalign_max", misalign_max);
    st.overlay(opts.at("sampler.negative_ratio"), "sampler.negative_ratio", negative_ratio);
    st.overlay(opts.at("sampler.off_grid_negatives"), "sampler.off_grid_negatives",
               off_grid_negatives);
    SamplerConfig cfg;
    cfg.frame_period = frame_period;
    cfg.misalign_max = misalign_max;
    cfg.negative_ratio = negative_ratio;
    cfg.negatives_on_grid = !off_grid_negatives;
    cfg.rng_seed = seed;
    cfg.validate();
    return cfg;
  }
};

inline void embed_records(AnyModel& model, const std::vector<ClipRecord>& records,
                          ModalityKind modality, uint64_t seed,
                          std::vector<EmbeddingRecord>& out, int chunk = 32) {
  // one frame (or surrounding second of audio) sampled per clip
  Rng rng(seed);
  struct PlanItem {
    const ClipRecord* rec;
    int frame_idx;
  };
  std::vector<PlanItem> plan;
  for (const auto& r : records) plan.push_back({&r, int(rng.uniform_int(0, r.n_frames))});

  const bool is_avol = std::holds_alternative<AvolNet<float>>(model);
  AVC_CHECK_ARG(!(is_avol && modality == ModalityKind::image),
                "an avol checkpoint has no global image embedding (its vision features form a "
                "14x14 grid); use an ave or l3 checkpoint for image embeddings");

  for (size_t base = 0; base < plan.size(); base += size_t(chunk)) {
    size_t n = std::min(size_t(chunk), plan.size() - base);
    Tensor<float> batch;
    if (modality == ModalityKind::image) {
      batch = Tensor<float>(Shape{int64_t(n), 3, 224, 224});
      for (size_t i = 0; i < n; ++i) {
        auto& item = plan[base + i];
        ImageF frame = load_frame(*item.rec, item.frame_idx, false, rng);
        std::copy(frame.v.begin(), frame.v.end(), batch.data() + i * frame.v.size());
      }
    } else {
      batch = Tensor<float>(Shape{int64_t(n), 1, 257, 200});
      for (size_t i = 0; i < n; ++i) {
        auto& item = plan[base + i];
        auto [glo, ghi] = avc::detail::grid_range(*item.rec);
        int64_t k = std::clamp<int64_t>(item.frame_idx, glo, ghi);
        Spectrogram spec = load_audio_window(*item.rec, double(k) / item.rec->fps, false, rng);
        std::copy(spec.values.begin(), spec.values.end(), batch.data() + i * spec.values.size());
      }
    }

    NoGradGuard ng;
    Tensor<float> emb = std::visit(
        [&](auto& net) -> Tensor<float> {
          using NetT = std::decay_t<decltype(net)>;
          if constexpr (std::is_same_v<NetT, AveNet<float>>) {
            return modality == ModalityKind::image ? net.embed_image(batch, Mode::eval)
                                                   : net.embed_audio(batch, Mode::eval);
          } else if constexpr (std::is_same_v<NetT, L3Net<float>>) {
            return modality == ModalityKind::image ? net.feature_image(batch, Mode::eval)
                                                   : net.feature_audio(batch, Mode::eval);
          } else {
            return net.embed_audio(batch, Mode::eval);
          }
        },
        model);

    const int dim = int(emb.dim(1));
    for (size_t i = 0; i < n; ++i) {
      EmbeddingRecord r;
      r.clip_id = plan[base + i].rec->clip_id;
      r.modality = modality;
      r.vec.assign(emb.data() + i * size_t(dim), emb.data() + (i + 1) * size_t(dim));
      out.push_back(std::move(r));
    }
  }
}

inline Eigen::MatrixXd embeddings_to_matrix(const std::vector<EmbeddingRecord>& records) {
  AVC_CHECK_ARG(!records.empty(), "no embeddings to convert");
  Eigen::MatrixXd m(int(records.size()), int(records[0].vec.size()));
  for (size_t i = 0; i < records.size(); ++i)
    for (size_t d = 0; d < records[i].vec.size(); ++d) m(int(i), int(d)) = records[i].vec[d];
  return m;
}

}  // namespace detail

inline int run(int argc, const char* const* argv) {
  if (const char* threads = std::getenv("AVCLAB_THREADS")) {
    int n = std::max(1, std::atoi(threads));
    Eigen::setNbThreads(n);
  }

  CLI::App app{"avclab: self-supervised audio-visual correspondence lab"};
  app.require_subcommand(1);

  // ---- synth -------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate the synthetic shapes-and-tones corpus");
  struct {
    std::string config, out;
    int clips = 100, classes = 8;
    int64_t seed = -1;
    double train_frac = 0.8, val_frac = 0.1;
  } sy;
  std::map<std::string, CLI::Option*> sy_opts;
  synth->add_option("--config", sy.config, "flat key=value config file");
  sy_opts["dataset.clips"] = synth->add_option("--clips", sy.clips, "number of clips");
  sy_opts["dataset.classes"] = synth->add_option("--classes", sy.classes, "number of classes");
  sy_opts["seed"] = synth->add_option("--seed", sy.seed, "generation seed (mandatory)");
  sy_opts["out"] = synth->add_option("--out", sy.out, "output directory")->required();
  sy_opts["dataset.train_frac"] = synth->add_option("--train-frac", sy.train_frac, "train share");
  sy_opts["dataset.val_frac"] = synth->add_option("--val-frac", sy.val_frac, "val share");

  synth->callback([&]() {
    detail::Settings st("synth");
    st.load_file(sy.config);
    st.overlay(sy_opts["dataset.clips"], "dataset.clips", sy.clips);
    st.overlay(sy_opts["dataset.classes"], "dataset.classes", sy.classes);
    st.overlay(sy_opts["seed"], "seed", sy.seed);
    st.overlay(sy_opts["out"], "out", sy.out);
    st.overlay(sy_opts["dataset.train_frac"], "dataset.train_frac", sy.train_frac);
    st.overlay(sy_opts["dataset.val_frac"], "dataset.val_frac", sy.val_frac);
    st.finish();
    DatasetConfig cfg;
    cfg.n_clips = sy.clips;
    cfg.n_classes = sy.classes;
    cfg.seed = detail::require_seed(sy.seed);
    cfg.out_dir = sy.out;
    cfg.train_frac = sy.train_frac;
    cfg.val_frac = sy.val_frac;
    auto manifest = generate_dataset(cfg);
    std::cout << "wrote " << manifest.string() << "\n";
    std::cout << "wrote " << (cfg.out_dir / "ontology.json").string() << "\n";
    st.write_snapshot(cfg.out_dir);
  });

  // ---- train -------------------------------------------------------------
  auto* train = app.add_subcommand("train", "train a model on the AVC task");
  struct {
    std::string config, model = "ave", manifest, out;
    std::string vision_channels = "16,32,64,64", audio_channels = "16,32,64,64";
    int embed_dim = 128;
    int64_t seed = -1;
    int epochs = 10, batch_size = 128, pairs_per_epoch = 0, val_pairs = 512;
    double lr0 = 1e-3, weight_decay = 1e-5, decay_factor = 0.94;
    int decay_every = 16;
  } tr;
  std::map<std::string, CLI::Option*> tr_opts;
  detail::SamplerFlags tr_sampler;
  train->add_option("--config", tr.config, "flat key=value config file");
  tr_opts["model.variant"] = train->add_option("--model", tr.model, "ave | avol | l3");
  tr_opts["manifest"] = train->add_option("--manifest", tr.manifest, "corpus manifest")->required();
  tr_opts["out"] = train->add_option("--out", tr.out, "run output directory")->required();
  tr_opts["seed"] = train->add_option("--seed", tr.seed, "training seed (mandatory)");
  tr_opts["trainer.epochs"] = train->add_option("--epochs", tr.epochs, "training epochs");
  tr_opts["trainer.batch_size"] = train->add_option("--batch-size", tr.batch_size, "batch size");
  tr_opts["trainer.pairs_per_epoch"] =
      train->add_option("--pairs-per-epoch", tr.pairs_per_epoch, "pairs per epoch (0 = auto)");
  tr_opts["trainer.val_pairs"] =
      train->add_option("--val-pairs", tr.val_pairs, "validation probe pairs per epoch");
  tr_opts["trainer.lr0"] = train->add_option("--lr0", tr.lr0, "initial learning rate");
  tr_opts["trainer.weight_decay"] =
      train->add_option("--weight-decay", tr.weight_decay, "weight decay");
  tr_opts["trainer.decay_factor"] =
      train->add_option("--decay-factor", tr.decay_factor, "learning-rate decay factor");
  tr_opts["trainer.decay_every_epochs"] =
      train->add_option("--decay-every", tr.decay_every, "epochs between decays");
  tr_opts["model.embed_dim"] = train->add_option("--embed-dim", tr.embed_dim, "embedding dim");
  tr_opts["model.vision_channels"] =
      train->add_option("--vision-channels", tr.vision_channels, "per-block channels");
  tr_opts["model.audio_channels"] =
      train->add_option("--audio-channels", tr.audio_channels, "per-block channels");
  tr_sampler.attach(train, tr_opts);

  train->callback([&]() {
    detail::Settings st("train");
    st.load_file(tr.config);
    st.overlay(tr_opts["model.variant"], "model.variant", tr.model);
    st.overlay(tr_opts["manifest"], "manifest", tr.manifest);
    st.overlay(tr_opts["out"], "out", tr.out);
    st.overlay(tr_opts["seed"], "seed", tr.seed);
    st.overlay(tr_opts["trainer.epochs"], "trainer.epochs", tr.epochs);
    st.overlay(tr_opts["trainer.batch_size"], "trainer.batch_size", tr.batch_size);
    st.overlay(tr_opts["trainer.pairs_per_epoch"], "trainer.pairs_per_epoch", tr.pairs_per_epoch);
    st.overlay(tr_opts["trainer.val_pairs"], "trainer.val_pairs", tr.val_pairs);
    st.overlay(tr_opts["trainer.lr0"], "trainer.lr0", tr.lr0);
    st.overlay(tr_opts["trainer.weight_decay"], "trainer.weight_decay", tr.weight_decay);
    st.overlay(tr_opts["trainer.decay_factor"], "trainer.decay_factor", tr.decay_factor);
    st.overlay(tr_opts["trainer.decay_every_epochs"], "trainer.decay_every_epochs",
               tr.decay_every);
    st.overlay(tr_opts["model.embed_dim"], "model.embed_dim", tr.embed_dim);
    st.overlay(tr_opts["model.vision_channels"], "model.vision_channels", tr.vision_channels);
    st.overlay(tr_opts["model.audio_channels"], "model.audio_channels", tr.audio_channels);
    uint64_t seed = detail::require_seed(tr.seed);
    SamplerConfig scfg = tr_sampler.resolve(st, tr_opts, seed);
    st.finish();

    ModelConfig mcfg;
    mcfg.variant = variant_from(tr.model);
    mcfg.embed_dim = tr.embed_dim;
    mcfg.vision_channels = detail::parse_channels(tr.vision_channels);
    mcfg.audio_channels = detail::parse_channels(tr.audio_channels);
    mcfg.validate();

    TrainerConfig tcfg;
    tcfg.lr0 = tr.lr0;
    tcfg.decay_factor = tr.decay_factor;
    tcfg.decay_every_epochs = tr.decay_every;
    tcfg.weight_decay = tr.weight_decay;
    tcfg.batch_size = tr.batch_size;
    tcfg.epochs = tr.epochs;
    tcfg.seed = seed;
    tcfg.pairs_per_epoch = tr.pairs_per_epoch;
    tcfg.val_pairs = tr.val_pairs;
    tcfg.validate();

    auto records = load_manifest(tr.manifest);
    ensure_dir(tr.out);
    AnyModel model = build_any_model(mcfg, seed);
    TrainResult result = std::visit(
        [&](auto& net) { return run_training(net, records, tcfg, scfg, tr.out); }, model);
    std::cout << "best val_acc " << result.best_val_acc << " at epoch " << result.best_epoch
              << "\n";
    std::cout << "wrote " << result.checkpoint_path.string() << "\n";
    std::cout << "wrote " << (std::filesystem::path(tr.out) / "trainlog.csv").string() << "\n";
    st.write_snapshot(tr.out);
  });

  // ---- embed -------------------------------------------------------------
  auto* embed = app.add_subcommand("embed", "embed one modality of a corpus split");
  struct {
    std::string config, checkpoint, manifest, split = "test", modality, out;
    int64_t seed = -1;
  } em;
  std::map<std::string, CLI::Option*> em_opts;
  embed->add_option("--config", em.config, "flat key=value config file");
  em_opts["checkpoint"] =
      embed->add_option("--checkpoint", em.checkpoint, "trained model checkpoint")->required();
  em_opts["manifest"] = embed->add_option("--manifest", em.manifest, "corpus manifest")->required();
  em_opts["split"] = embed->add_option("--split", em.split, "train | val | test");
  em_opts["modality"] =
      embed->add_option("--modality", em.modality, "image | audio")->required();
  em_opts["out"] = embed->add_option("--out", em.out, "output embedding file")->required();
  em_opts["seed"] = embed->add_option("--seed", em.seed, "sampling seed (mandatory)");

  embed->callback([&]() {
    detail::Settings st("embed");
    st.load_file(em.config);
    st.overlay(em_opts["checkpoint"], "checkpoint", em.checkpoint);
    st.overlay(em_opts["manifest"], "manifest", em.manifest);
    st.overlay(em_opts["split"], "split", em.split);
    st.overlay(em_opts["modality"], "modality", em.modality);
    st.overlay(em_opts["out"], "out", em.out);
    st.overlay(em_opts["seed"], "seed", em.seed);
    st.finish();
    uint64_t seed = detail::require_seed(em.seed);

    auto records = filter_split(load_manifest(em.manifest), split_from(em.split));
    AVC_CHECK_ARG(!records.empty(), "split '" << em.split << "' holds no usable clips");
    AnyModel model = load_model(em.checkpoint);
    std::vector<EmbeddingRecord> out;
    detail::embed_records(model, records, modality_from(em.modality), seed, out);
    uint32_t dim = uint32_t(out.front().vec.size());
    write_embeddings(em.out, out, dim);
    std::cout << "wrote " << em.out << " (" << out.size() << " embeddings, dim " << dim << ")\n";
    st.write_snapshot(em.out);
  });

  // ---- retrieve ----------------------------------------------------------
  auto* retrieve = app.add_subcommand("retrieve", "rank a database for every query embedding");
  struct {
    std::string config, query_emb, db_emb, out;
    int k = 30;
    bool exclude_self = false;
  } rt;
  std::map<std::string, CLI::Option*> rt_opts;
  retrieve->add_option("--config", rt.config, "flat key=value config file");
  rt_opts["query_emb"] =
      retrieve->add_option("--query-emb", rt.query_emb, "query embedding file")->required();
  rt_opts["db_emb"] = retrieve->add_option("--db-emb", rt.db_emb, "database embedding file")
                          ->required();
  rt_opts["out"] = retrieve->add_option("--out", rt.out, "output ranking CSV")->required();
  rt_opts["k"] = retrieve->add_option("--k", rt.k, "list length");
  rt_opts["exclude_self"] = retrieve->add_flag("--exclude-self", rt.exclude_self,
                                               "drop the query's own clip from the ranking");

  retrieve->callback([&]() {
    detail::Settings st("retrieve");
    st.load_file(rt.config);
    st.overlay(rt_opts["query_emb"], "query_emb", rt.query_emb);
    st.overlay(rt_opts["db_emb"], "db_emb", rt.db_emb);
    st.overlay(rt_opts["out"], "out", rt.out);
    st.overlay(rt_opts["k"], "k", rt.k);
    st.overlay(rt_opts["exclude_self"], "exclude_self", rt.exclude_self);
    st.finish();

    auto queries = read_embeddings(rt.query_emb);
    auto db = read_embeddings(rt.db_emb);
    std::ofstream f(rt.out);
    AVC_CHECK_RUNTIME(f.good(), "cannot write " << rt.out);
    f << "query_clip_id,rank,result_clip_id,distance\n";
    for (const auto& q : queries) {
      auto exclude = rt.exclude_self ? std::optional<uint64_t>(q.clip_id) : std::nullopt;
      auto hits = knn_query(db, q.vec, rt.k, exclude);
      for (size_t r = 0; r < hits.size(); ++r) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%llu,%zu,%llu,%.6f\n",
                      static_cast<unsigned long long>(q.clip_id), r + 1,
                      static_cast<unsigned long long>(hits[r].clip_id), hits[r].distance);
        f << buf;
      }
    }
    f.close();
    std::cout << "wrote " << rt.out << "\n";
    st.write_snapshot(rt.out);
  });

  // ---- eval-ndcg ---------------------------------------------------------
  auto* evalndcg = app.add_subcommand("eval-ndcg", "four-way retrieval evaluation with nDCG@k");
  struct {
    std::string config, image_emb, audio_emb, ontology, manifest, out;
    std::string relevance_c = "20";  // integer or "auto"
    int k = 30, chance_mc = 0;
    int64_t seed = -1;
  } ev;
  std::map<std::string, CLI::Option*> ev_opts;
  evalndcg->add_option("--config", ev.config, "flat key=value config file");
  ev_opts["image_emb"] =
      evalndcg->add_option("--image-emb", ev.image_emb, "image embedding file")->required();
  ev_opts["audio_emb"] =
      evalndcg->add_option("--audio-emb", ev.audio_emb, "audio embedding file")->required();
  ev_opts["ontology"] =
      evalndcg->add_option("--ontology", ev.ontology, "class ontology JSON")->required();
  ev_opts["manifest"] =
      evalndcg->add_option("--manifest", ev.manifest, "manifest for labels")->required();
  ev_opts["out"] = evalndcg->add_option("--out", ev.out, "output directory")->required();
  ev_opts["relevance.k"] = evalndcg->add_option("--k", ev.k, "ranking cutoff");
  ev_opts["relevance.C"] = evalndcg->add_option(
      "--relevance-c", ev.relevance_c, "relevance offset C, or 'auto' for the tree diameter");
  ev_opts["chance_mc"] = evalndcg->add_option(
      "--chance-mc", ev.chance_mc, "Monte Carlo shuffles per query for the chance level");
  ev_opts["seed"] = evalndcg->add_option("--seed", ev.seed, "seed for the chance estimate");

  evalndcg->callback([&]() {
    detail::Settings st("eval-ndcg");
    st.load_file(ev.config);
    st.overlay(ev_opts["image_emb"], "image_emb", ev.image_emb);
    st.overlay(ev_opts["audio_emb"], "audio_emb", ev.audio_emb);
    st.overlay(ev_opts["ontology"], "ontology", ev.ontology);
    st.overlay(ev_opts["manifest"], "manifest", ev.manifest);
    st.overlay(ev_opts["out"], "out", ev.out);
    st.overlay(ev_opts["relevance.k"], "relevance.k", ev.k);
    st.overlay(ev_opts["relevance.C"], "relevance.C", ev.relevance_c);
    st.overlay(ev_opts["chance_mc"], "chance_mc", ev.chance_mc);
    st.overlay(ev_opts["seed"], "seed", ev.seed);
    st.finish();

    auto ont = Ontology::load(ev.ontology);
    auto clips = load_manifest(ev.manifest);
    auto image_db = read_embeddings(ev.image_emb);
    auto audio_db = read_embeddings(ev.audio_emb);
    attach_labels(image_db, clips);
    attach_labels(audio_db, clips);

    RelevanceConfig cfg;
    cfg.k = ev.k;
    cfg.C = ev.relevance_c == "auto" ? ont.max_distance() : std::stoi(ev.relevance_c);
    cfg.validate(ont);
    st.note("relevance.C_resolved", cfg.C);

    ensure_dir(ev.out);
    auto rows = eval_suite(image_db, audio_db, ont, cfg);
    write_metrics_csv(std::filesystem::path(ev.out) / "metrics.csv", rows);
    for (const auto& r : rows)
      std::cout << modality_name(r.query_modality) << "-" << modality_name(r.db_modality) << " "
                << r.mean_ndcg << " (n=" << r.n_queries << ", k=" << r.k << ")\n";
    std::cout << "wrote " << (std::filesystem::path(ev.out) / "metrics.csv").string() << "\n";

    if (ev.chance_mc > 0) {
      uint64_t seed = detail::require_seed(ev.seed);
      double cross = chance_ndcg(image_db, audio_db, false, ont, cfg, ev.chance_mc, seed);
      double intra = chance_ndcg(image_db, image_db, true, ont, cfg, ev.chance_mc, seed + 1);
      std::ofstream f(std::filesystem::path(ev.out) / "chance.csv");
      f << "kind,mean_ndcg\ncross," << cross << "\nintra," << intra << "\n";
      std::cout << "chance cross " << cross << ", intra " << intra << "\n";
      std::cout << "wrote " << (std::filesystem::path(ev.out) / "chance.csv").string() << "\n";
    }
    st.write_snapshot(ev.out);
  });

  // ---- cca ---------------------------------------------------------------
  auto* cca = app.add_subcommand("cca", "fit or apply a CCA alignment of two embedding files");
  struct {
    std::string config, mode = "fit";
    std::string x_emb, y_emb, model_path, in_emb, side = "x", out;
    int components = 128;
    double reg = 1e-4;
  } cc;
  std::map<std::string, CLI::Option*> cc_opts;
  cca->add_option("--config", cc.config, "flat key=value config file");
  cc_opts["mode"] = cca->add_option("--mode", cc.mode, "fit | project");
  cc_opts["x_emb"] = cca->add_option("--x-emb", cc.x_emb, "x-side embedding file (fit)");
  cc_opts["y_emb"] = cca->add_option("--y-emb", cc.y_emb, "y-side embedding file (fit)");
  cc_opts["cca.components"] = cca->add_option("--components", cc.components, "components");
  cc_opts["cca.reg"] = cca->add_option("--reg", cc.reg, "relative covariance regularization");
  cc_opts["model"] = cca->add_option("--model", cc.model_path, "fitted CCA model (project)");
  cc_opts["in_emb"] = cca->add_option("--in-emb", cc.in_emb, "embeddings to project (project)");
  cc_opts["side"] = cca->add_option("--side", cc.side, "x | y (project)");
  cc_opts["out"] = cca->add_option("--out", cc.out, "output file")->required();

  cca->callback([&]() {
    detail::Settings st("cca");
    st.load_file(cc.config);
    st.overlay(cc_opts["mode"], "mode", cc.mode);
    st.overlay(cc_opts["x_emb"], "x_emb", cc.x_emb);
    st.overlay(cc_opts["y_emb"], "y_emb", cc.y_emb);
    st.overlay(cc_opts["cca.components"], "cca.components", cc.components);
    st.overlay(cc_opts["cca.reg"], "cca.reg", cc.reg);
    st.overlay(cc_opts["model"], "model", cc.model_path);
    st.overlay(cc_opts["in_emb"], "in_emb", cc.in_emb);
    st.overlay(cc_opts["side"], "side", cc.side);
    st.overlay(cc_opts["out"], "out", cc.out);
    st.finish();

    if (cc.mode == "fit") {
      AVC_CHECK_ARG(!cc.x_emb.empty() && !cc.y_emb.empty(),
                    "cca fit requires --x-emb and --y-emb");
      auto xs = read_embeddings(cc.x_emb);
      auto ys = read_embeddings(cc.y_emb);
      auto by_id = [](std::vector<EmbeddingRecord>& v) {
        std::sort(v.begin(), v.end(),
                  [](const auto& a, const auto& b) { return a.clip_id < b.clip_id; });
      };
      by_id(xs);
      by_id(ys);
      AVC_CHECK_ARG(xs.size() == ys.size(), "cca fit: embedding files differ in clip count");
      for (size_t i = 0; i < xs.size(); ++i)
        AVC_CHECK_ARG(xs[i].clip_id == ys[i].clip_id,
                      "cca fit: embedding files are not paired by clip id");
      auto model = fit_cca(detail::embeddings_to_matrix(xs), detail::embeddings_to_matrix(ys),
                           cc.components, cc.reg);
      save_cca(cc.out, model);
      std::cout << "top correlation " << model.correlations.front() << ", components "
                << model.components() << "\n";
      std::cout << "wrote " << cc.out << "\n";
    } else if (cc.mode == "project") {
      AVC_CHECK_ARG(!cc.model_path.empty() && !cc.in_emb.empty(),
                    "cca project requires --model and --in-emb");
      auto model = load_cca(cc.model_path);
      auto in = read_embeddings(cc.in_emb);
      CcaSide side = cc.side == "x" ? CcaSide::x : CcaSide::y;
      AVC_CHECK_ARG(cc.side == "x" || cc.side == "y", "cca project: --side must be x or y");
      Eigen::MatrixXd projected = project(model, detail::embeddings_to_matrix(in), side);
      std::vector<EmbeddingRecord> out_records;
      for (size_t i = 0; i < in.size(); ++i) {
        EmbeddingRecord r;
        r.clip_id = in[i].clip_id;
        r.modality = in[i].modality;
        r.vec.resize(size_t(projected.cols()));
        for (int d = 0; d < projected.cols(); ++d) r.vec[size_t(d)] = float(projected(int(i), d));
        out_records.push_back(std::move(r));
      }
      write_embeddings(cc.out, out_records, uint32_t(projected.cols()));
      std::cout << "wrote " << cc.out << " (" << out_records.size() << " embeddings, dim "
                << projected.cols() << ")\n";
    } else {
      throw ConfigError("cca: --mode must be fit or project");
    }
    st.write_snapshot(cc.out);
  });

  // ---- localize ----------------------------------------------------------
  auto* localize = app.add_subcommand("localize", "sound-source localization evaluation");
  struct {
    std::string config, checkpoint, manifest, split = "test", out;
    int n = 500, heatmaps = 0;
    int64_t seed = -1;
  } lo;
  std::map<std::string, CLI::Option*> lo_opts;
  localize->add_option("--config", lo.config, "flat key=value config file");
  lo_opts["checkpoint"] =
      localize->add_option("--checkpoint", lo.checkpoint, "avol checkpoint")->required();
  lo_opts["manifest"] =
      localize->add_option("--manifest", lo.manifest, "corpus manifest")->required();
  lo_opts["split"] = localize->add_option("--split", lo.split, "train | val | test");
  lo_opts["n"] = localize->add_option("--n", lo.n, "number of evaluation pairs");
  lo_opts["heatmaps"] =
      localize->add_option("--heatmaps", lo.heatmaps, "also render this many heatmap images");
  lo_opts["seed"] = localize->add_option("--seed", lo.seed, "evaluation seed (mandatory)");
  lo_opts["out"] = localize->add_option("--out", lo.out, "output directory")->required();

  localize->callback([&]() {
    detail::Settings st("localize");
    st.load_file(lo.config);
    st.overlay(lo_opts["checkpoint"], "checkpoint", lo.checkpoint);
    st.overlay(lo_opts["manifest"], "manifest", lo.manifest);
    st.overlay(lo_opts["split"], "split", lo.split);
    st.overlay(lo_opts["n"], "n", lo.n);
    st.overlay(lo_opts["heatmaps"], "heatmaps", lo.heatmaps);
    st.overlay(lo_opts["seed"], "seed", lo.seed);
    st.overlay(lo_opts["out"], "out", lo.out);
    st.finish();
    uint64_t seed = detail::require_seed(lo.seed);

    AnyModel model = load_model(lo.checkpoint);
    auto* net = std::get_if<AvolNet<float>>(&model);
    AVC_CHECK_ARG(net != nullptr, "localize requires an avol checkpoint");
    auto records = filter_split(load_manifest(lo.manifest), split_from(lo.split));
    AVC_CHECK_ARG(!records.empty(), "split '" << lo.split << "' holds no usable clips");

    ensure_dir(lo.out);
    auto eval = eval_localization(*net, records, lo.n, seed);
    nlohmann::ordered_json j;
    j["avol_hit_rate"] = eval.avol_hit_rate;
    j["center_hit_rate"] = eval.center_hit_rate;
    j["n"] = eval.n_evaluated;
    write_text_file(std::filesystem::path(lo.out) / "localization.json", j.dump(2) + "\n");
    std::cout << "avol_hit_rate " << eval.avol_hit_rate << ", center_hit_rate "
              << eval.center_hit_rate << " over " << eval.n_evaluated << " pairs\n";
    std::cout << "wrote " << (std::filesystem::path(lo.out) / "localization.json").string()
              << "\n";

    Rng rng(seed + 1);
    for (int i = 0; i < lo.heatmaps; ++i) {
      const auto& rec = records[size_t(rng.uniform_int(0, int64_t(records.size())))];
      int frame_idx = int(rng.uniform_int(0, rec.n_frames));
      auto [glo, ghi] = avc::detail::grid_range(rec);
      int64_t k = std::clamp<int64_t>(frame_idx, glo, ghi);
      ImageF frame = load_frame(rec, frame_idx, false, rng);
      Spectrogram spec = load_audio_window(rec, double(k) / rec.fps, false, rng);
      Heatmap h = heatmap_infer(*net, frame, spec);
      h.frame_clip = rec.clip_id;
      auto [px, py] = mode_to_pixel(h);
      bool hit = strictly_inside(px, py, rec.boxes[size_t(frame_idx)]);
      char name[64];
      std::snprintf(name, sizeof(name), "heatmap_%03d", i);
      write_heatmap_png(std::filesystem::path(lo.out) / (std::string(name) + ".png"), h);
      write_heatmap_sidecar(std::filesystem::path(lo.out) / (std::string(name) + ".json"), h,
                            hit);
    }
    if (lo.heatmaps > 0)
      std::cout << "wrote " << lo.heatmaps << " heatmap images under " << lo.out << "\n";
    st.write_snapshot(lo.out);
  });

  // ---- gradcheck ---------------------------------------------------------
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference backward verification");
  struct {
    std::string config, out;
    int instances = 10;
    double tolerance = 1e-4;
  } gc;
  std::map<std::string, CLI::Option*> gc_opts;
  gradcheck->add_option("--config", gc.config, "flat key=value config file");
  gc_opts["instances"] =
      gradcheck->add_option("--instances", gc.instances, "random instances per operation");
  gc_opts["tolerance"] = gradcheck->add_option("--tolerance", gc.tolerance, "relative tolerance");
  gc_opts["out"] = gradcheck->add_option("--out", gc.out, "optional report directory");

  gradcheck->callback([&]() {
    detail::Settings st("gradcheck");
    st.load_file(gc.config);
    st.overlay(gc_opts["instances"], "instances", gc.instances);
    st.overlay(gc_opts["tolerance"], "tolerance", gc.tolerance);
    st.overlay(gc_opts["out"], "out", gc.out);
    st.finish();

    Rng rng(20240800);
    bool all_passed = true;
    std::ostringstream report;
    auto run_specs = [&](std::vector<GradCheckSpec> specs, int instances) {
      for (auto& spec : specs) {
        spec.tolerance = gc.tolerance;
        Rng sub = rng.fork(fnv1a64(spec.name));
        auto r = grad_check_many(spec, instances, sub);
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-24s max_rel_error %.3e  %s\n", r.op_name.c_str(),
                      r.max_rel_error, r.passed ? "pass" : "FAIL");
        std::cout << buf;
        report << buf;
        all_passed = all_passed && r.passed;
      }
    };
    run_specs(standard_grad_checks(), gc.instances);
    run_specs(composed_grad_checks(), std::max(1, gc.instances / 2));
    if (!gc.out.empty()) {
      ensure_dir(gc.out);
      write_text_file(std::filesystem::path(gc.out) / "gradcheck.txt", report.str());
      std::cout << "wrote " << (std::filesystem::path(gc.out) / "gradcheck.txt").string() << "\n";
      st.write_snapshot(gc.out);
    }
    AVC_CHECK_RUNTIME(all_passed, "gradient check failed");
  });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace avc::cli
