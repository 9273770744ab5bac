#pragma once

// Retrieval evaluation: the embedding database format, exact k-nearest-
// neighbour search, tree-distance relevance, nDCG@k and the four-way
// query/database modality suite with a Monte Carlo chance reference.
//
// nDCG uses linear gain with a 1/log2(i+1) discount from rank 1. The ideal
// pool for a query is the full database's relevance multiset (after any
// self-exclusion), so a score of 1 means the ranking is relevance-sorted.

#include <optional>

#include "avclab/dataset.hpp"
#include "avclab/ontology.hpp"

namespace avc {

enum class ModalityKind : uint8_t { image = 0, audio = 1 };

inline const char* modality_name(ModalityKind m) {
  return m == ModalityKind::image ? "image" : "audio";
}

inline ModalityKind modality_from(const std::string& s) {
  if (s == "image") return ModalityKind::image;
  if (s == "audio") return ModalityKind::audio;
  throw ConfigError("unknown modality '" + s + "' (expected image or audio)");
}

struct EmbeddingRecord {
  uint64_t clip_id = 0;
  ModalityKind modality = ModalityKind::image;
  std::vector<float> vec;
  std::vector<std::string> labels;
};

// Embeddings are re-normalized on ingest; a no-op for vectors that are
// already unit length.
inline void normalize_embedding(std::vector<float>& v) {
  double s = 0;
  for (float x : v) s += double(x) * x;
  double n = std::sqrt(s);
  if (n > 1e-12)
    for (float& x : v) x = float(double(x) / n);
}

// ---- embedding file format -------------------------------------------------

inline void write_embeddings(const std::filesystem::path& path,
                             const std::vector<EmbeddingRecord>& records, uint32_t dim) {
  std::ofstream f(path, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open embedding file for writing: " << path.string());
  write_bytes(f, "AVEB", 4);
  write_u32(f, 1);  // version
  write_u32(f, dim);
  write_u64(f, records.size());
  for (const auto& r : records) {
    AVC_CHECK_ARG(r.vec.size() == dim, "embedding for clip " << r.clip_id << " has dim "
                                                             << r.vec.size() << ", expected "
                                                             << dim);
    write_u64(f, r.clip_id);
    write_u8(f, uint8_t(r.modality));
    for (float v : r.vec) write_f32(f, v);
  }
  AVC_CHECK_RUNTIME(f.good(), "embedding write failed: " << path.string());
}

inline std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path,
                                                    uint32_t* dim_out = nullptr) {
  require_exists(path, "embedding file");
  std::ifstream f(path, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open " << path.string());
  char magic[4];
  read_bytes(f, magic, 4, "embedding magic");
  AVC_CHECK_ARG(std::memcmp(magic, "AVEB", 4) == 0,
                path.string() << " is not an embedding file");
  uint32_t version = read_u32(f, "embedding version");
  AVC_CHECK_ARG(version == 1, "unsupported embedding file version " << version);
  uint32_t dim = read_u32(f, "embedding dim");
  uint64_t count = read_u64(f, "embedding count");
  if (dim_out) *dim_out = dim;
  std::vector<EmbeddingRecord> records;
  records.reserve(size_t(count));
  for (uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord r;
    r.clip_id = read_u64(f, "embedding clip id");
    r.modality = ModalityKind(read_u8(f, "embedding modality"));
    r.vec.resize(dim);
    for (auto& v : r.vec) v = read_f32(f, "embedding value");
    normalize_embedding(r.vec);
    records.push_back(std::move(r));
  }
  return records;
}

// Joins class labels from the manifest records.
inline void attach_labels(std::vector<EmbeddingRecord>& embeddings,
                          const std::vector<ClipRecord>& clips) {
  std::map<uint64_t, const ClipRecord*> by_id;
  for (const auto& c : clips) by_id[c.clip_id] = &c;
  for (auto& e : embeddings) {
    auto it = by_id.find(e.clip_id);
    AVC_CHECK_ARG(it != by_id.end(),
                  "embedding clip " << e.clip_id << " is not present in the manifest");
    e.labels = it->second->labels;
  }
}

// ---- relevance ----------------------------------------------------------------

struct RelevanceConfig {
  int C = 20;  // offset: relevance = C - tree distance
  int k = 30;  // ranking cutoff

  void validate(const Ontology& ont) const {
    AVC_CHECK_ARG(k >= 1, "relevance: k must be positive");
    AVC_CHECK_ARG(C >= ont.max_distance(),
                  "relevance: C = " << C << " is below the ontology's maximum tree distance "
                                    << ont.max_distance());
  }
};

inline int class_relevance(const std::string& a, const std::string& b, const Ontology& ont,
                           const RelevanceConfig& cfg) {
  return cfg.C - ont.tree_distance(a, b);
}

// Video relevance: maximal class relevance across the two label sets.
inline int video_relevance(const std::vector<std::string>& a, const std::vector<std::string>& b,
                           const Ontology& ont, const RelevanceConfig& cfg) {
  AVC_CHECK_ARG(!a.empty() && !b.empty(), "video_relevance: empty label set");
  int best = std::numeric_limits<int>::min();
  for (const auto& la : a)
    for (const auto& lb : b) best = std::max(best, class_relevance(la, lb, ont, cfg));
  return best;
}

// ---- nearest neighbours ---------------------------------------------------------

struct KnnHit {
  size_t index = 0;
  uint64_t clip_id = 0;
  double distance = 0;
};

// Exact full-scan ranking by ascending Euclidean distance; ties break by
// clip id so the ordering is database-order independent.
inline std::vector<KnnHit> knn_query(const std::vector<EmbeddingRecord>& db,
                                     const std::vector<float>& query, int k,
                                     std::optional<uint64_t> exclude_clip = std::nullopt) {
  AVC_CHECK_ARG(!db.empty(), "knn_query: empty database");
  if (k <= 0) return {};
  std::vector<KnnHit> hits;
  hits.reserve(db.size());
  for (size_t i = 0; i < db.size(); ++i) {
    const auto& r = db[i];
    if (exclude_clip && r.clip_id == *exclude_clip) continue;
    AVC_CHECK_ARG(r.vec.size() == query.size(), "knn_query: dimension mismatch");
    double s = 0;
    for (size_t d = 0; d < query.size(); ++d) {
      double diff = double(query[d]) - r.vec[d];
      s += diff * diff;
    }
    hits.push_back(KnnHit{i, r.clip_id, std::sqrt(s)});
  }
  std::sort(hits.begin(), hits.end(), [](const KnnHit& a, const KnnHit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.clip_id < b.clip_id;
  });
  if (int(hits.size()) > k) hits.resize(size_t(k));
  return hits;
}

// ---- nDCG -----------------------------------------------------------------------

inline double dcg_at_k(const std::vector<int>& rels, int k) {
  double dcg = 0;
  int n = std::min<int>(k, int(rels.size()));
  for (int i = 1; i <= n; ++i)
    dcg += double(rels[size_t(i - 1)]) / std::log2(double(i) + 1.0);
  return dcg;
}

// ranked: relevances in retrieved order. ideal_pool: the achievable relevance
// multiset for this query. Returns 1 when the ideal gain is zero.
inline double ndcg_at_k(const std::vector<int>& ranked, std::vector<int> ideal_pool,
                        const RelevanceConfig& cfg) {
  std::sort(ideal_pool.begin(), ideal_pool.end(), std::greater<int>());
  double idcg = dcg_at_k(ideal_pool, cfg.k);
  if (idcg == 0) return 1.0;
  return dcg_at_k(ranked, cfg.k) / idcg;
}

// ---- four-way retrieval suite ---------------------------------------------------

struct RetrievalRow {
  ModalityKind query_modality;
  ModalityKind db_modality;
  double mean_ndcg = 0;
  int n_queries = 0;
  int k = 0;
};

namespace detail {

inline double mean_ndcg_run(const std::vector<EmbeddingRecord>& queries,
                            const std::vector<EmbeddingRecord>& db, bool intra_modal,
                            const Ontology& ont, const RelevanceConfig& cfg, int k_eff) {
  double sum = 0;
  for (const auto& q : queries) {
    auto exclude = intra_modal ? std::optional<uint64_t>(q.clip_id) : std::nullopt;
    auto hits = knn_query(db, q.vec, k_eff, exclude);
    std::vector<int> ranked;
    ranked.reserve(hits.size());
    for (const auto& h : hits)
      ranked.push_back(video_relevance(q.labels, db[h.index].labels, ont, cfg));
    std::vector<int> pool;
    pool.reserve(db.size());
    for (const auto& r : db) {
      if (exclude && r.clip_id == *exclude) continue;
      pool.push_back(video_relevance(q.labels, r.labels, ont, cfg));
    }
    RelevanceConfig run_cfg = cfg;
    run_cfg.k = k_eff;
    sum += ndcg_at_k(ranked, pool, run_cfg);
  }
  return sum / double(queries.size());
}

}  // namespace detail

// All four query/database modality combinations, averaged over every query;
// intra-modal runs drop the query's own record.
inline std::vector<RetrievalRow> eval_suite(const std::vector<EmbeddingRecord>& image_db,
                                            const std::vector<EmbeddingRecord>& audio_db,
                                            const Ontology& ont, const RelevanceConfig& cfg,
                                            std::ostream& warn = std::cerr) {
  cfg.validate(ont);
  AVC_CHECK_ARG(!image_db.empty() && !audio_db.empty(), "eval_suite: empty database");
  for (const auto& r : image_db)
    AVC_CHECK_ARG(!r.labels.empty(), "eval_suite: image record " << r.clip_id << " has no labels");
  for (const auto& r : audio_db)
    AVC_CHECK_ARG(!r.labels.empty(), "eval_suite: audio record " << r.clip_id << " has no labels");

  std::vector<RetrievalRow> rows;
  const std::vector<EmbeddingRecord>* dbs[2] = {&image_db, &audio_db};
  for (int qi = 0; qi < 2; ++qi) {
    for (int di = 0; di < 2; ++di) {
      const auto& queries = *dbs[qi];
      const auto& db = *dbs[di];
      const bool intra = qi == di;
      const int avail = int(db.size()) - (intra ? 1 : 0);
      int k_eff = cfg.k;
      if (avail < cfg.k) {
        warn << "eval_suite: database smaller than k (" << avail << " < " << cfg.k
             << "), evaluating with k = " << avail << "\n";
        k_eff = avail;
      }
      RetrievalRow row;
      row.query_modality = ModalityKind(qi);
      row.db_modality = ModalityKind(di);
      row.n_queries = int(queries.size());
      row.k = k_eff;
      row.mean_ndcg = detail::mean_ndcg_run(queries, db, intra, ont, cfg, k_eff);
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<RetrievalRow>& rows) {
  std::ofstream f(path);
  AVC_CHECK_RUNTIME(f.good(), "cannot write metrics " << path.string());
  f << "query_modality,db_modality,mean_ndcg,n_queries,k\n";
  for (const auto& r : rows) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%d,%d\n", modality_name(r.query_modality),
                  modality_name(r.db_modality), r.mean_ndcg, r.n_queries, r.k);
    f << buf;
  }
}

// Monte Carlo chance level: expected mean nDCG@k of a uniformly random
// ranking, for the same query/database label structure.
inline double chance_ndcg(const std::vector<EmbeddingRecord>& queries,
                          const std::vector<EmbeddingRecord>& db, bool intra_modal,
                          const Ontology& ont, const RelevanceConfig& cfg, int n_shuffles,
                          uint64_t seed) {
  cfg.validate(ont);
  Rng rng(seed);
  double total = 0;
  int count = 0;
  for (const auto& q : queries) {
    std::vector<int> pool;
    for (const auto& r : db) {
      if (intra_modal && r.clip_id == q.clip_id) continue;
      pool.push_back(video_relevance(q.labels, r.labels, ont, cfg));
    }
    RelevanceConfig run_cfg = cfg;
    run_cfg.k = std::min<int>(cfg.k, int(pool.size()));
    std::vector<int> shuffled = pool;
    for (int s = 0; s < n_shuffles; ++s) {
      for (size_t i = shuffled.size() - 1; i > 0; --i)
        std::swap(shuffled[i], shuffled[size_t(rng.uniform_int(0, int64_t(i) + 1))]);
      total += ndcg_at_k(shuffled, pool, run_cfg);
      ++count;
    }
  }
  return total / double(count);
}

}  // namespace avc
