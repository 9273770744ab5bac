#pragma once

// Checkpoint container: magic, version, variant, a digest of the resolved
// model configuration, the configuration text itself, then named parameter
// blocks as 32-bit little-endian reals. The same container persists CCA
// models (variant code "cca") as named matrices.

#include <map>

#include "avclab/models.hpp"

namespace avc {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointBlock {
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string variant;      // "ave", "avol", "l3", "cca"
  uint64_t config_digest = 0;
  std::string config_text;
  std::map<std::string, CheckpointBlock> blocks;
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open checkpoint for writing: " << path.string());
  write_bytes(f, "AVCK", 4);
  write_u32(f, kCheckpointVersion);
  write_u32(f, uint32_t(ckpt.variant.size()));
  write_bytes(f, ckpt.variant.data(), ckpt.variant.size());
  write_u64(f, ckpt.config_digest);
  write_u64(f, ckpt.config_text.size());
  write_bytes(f, ckpt.config_text.data(), ckpt.config_text.size());
  write_u64(f, ckpt.blocks.size());
  for (const auto& [name, block] : ckpt.blocks) {
    write_u32(f, uint32_t(name.size()));
    write_bytes(f, name.data(), name.size());
    write_u32(f, uint32_t(block.shape.size()));
    for (int64_t d : block.shape) write_u64(f, uint64_t(d));
    for (float v : block.data) write_f32(f, v);
  }
  AVC_CHECK_RUNTIME(f.good(), "checkpoint write failed: " << path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  require_exists(path, "checkpoint");
  std::ifstream f(path, std::ios::binary);
  AVC_CHECK_RUNTIME(f.good(), "cannot open checkpoint: " << path.string());
  char magic[4];
  read_bytes(f, magic, 4, "checkpoint magic");
  AVC_CHECK_ARG(std::memcmp(magic, "AVCK", 4) == 0,
                path.string() << " is not a checkpoint file");
  uint32_t version = read_u32(f, "checkpoint version");
  AVC_CHECK_ARG(version == kCheckpointVersion,
                "unsupported checkpoint version " << version << " in " << path.string());
  Checkpoint ckpt;
  uint32_t vlen = read_u32(f, "variant length");
  ckpt.variant.resize(vlen);
  read_bytes(f, ckpt.variant.data(), vlen, "variant");
  ckpt.config_digest = read_u64(f, "config digest");
  uint64_t clen = read_u64(f, "config length");
  ckpt.config_text.resize(size_t(clen));
  read_bytes(f, ckpt.config_text.data(), size_t(clen), "config text");
  uint64_t n_blocks = read_u64(f, "block count");
  for (uint64_t i = 0; i < n_blocks; ++i) {
    uint32_t nlen = read_u32(f, "block name length");
    std::string name(nlen, '\0');
    read_bytes(f, name.data(), nlen, "block name");
    uint32_t ndim = read_u32(f, "block rank");
    CheckpointBlock block;
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      block.shape.push_back(int64_t(read_u64(f, "block extent")));
      numel *= block.shape.back();
    }
    block.data.resize(size_t(numel));
    for (auto& v : block.data) v = read_f32(f, "block data");
    ckpt.blocks.emplace(std::move(name), std::move(block));
  }
  return ckpt;
}

// ---- model <-> checkpoint ------------------------------------------------------

template <typename Net>
void save_model(const std::filesystem::path& path, Net& net) {
  Checkpoint ckpt;
  ckpt.variant = variant_name(net.cfg.variant);
  ckpt.config_text = net.cfg.canonical_text();
  ckpt.config_digest = net.cfg.digest();
  for (auto& p : net.state_blocks()) {
    CheckpointBlock block;
    block.shape = p.tensor.shape();
    block.data.reserve(size_t(p.tensor.numel()));
    for (int64_t i = 0; i < p.tensor.numel(); ++i) block.data.push_back(float(p.tensor.at(i)));
    ckpt.blocks.emplace(p.name, std::move(block));
  }
  save_checkpoint(path, ckpt);
}

template <typename Net>
void fill_model_from(Net& net, const Checkpoint& ckpt, const std::string& path_for_errors) {
  auto blocks = net.state_blocks();
  AVC_CHECK_ARG(blocks.size() == ckpt.blocks.size(),
                path_for_errors << ": checkpoint has " << ckpt.blocks.size()
                                << " blocks, model expects " << blocks.size());
  for (auto& p : blocks) {
    auto it = ckpt.blocks.find(p.name);
    AVC_CHECK_ARG(it != ckpt.blocks.end(), path_for_errors << ": missing block " << p.name);
    AVC_CHECK_ARG(it->second.shape == p.tensor.shape(),
                  path_for_errors << ": block " << p.name << " shape "
                                  << shape_str(it->second.shape) << " != model "
                                  << shape_str(p.tensor.shape()));
    for (int64_t i = 0; i < p.tensor.numel(); ++i)
      p.tensor.at(i) = float(it->second.data[size_t(i)]);
  }
}

using AnyModel = std::variant<AveNet<float>, AvolNet<float>, L3Net<float>>;

inline AnyModel build_any_model(const ModelConfig& cfg, uint64_t seed) {
  switch (cfg.variant) {
    case ModelVariant::ave: return AveNet<float>::build(cfg, seed);
    case ModelVariant::avol: return AvolNet<float>::build(cfg, seed);
    default: return L3Net<float>::build(cfg, seed);
  }
}

inline AnyModel load_model(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  AVC_CHECK_ARG(ckpt.variant == "ave" || ckpt.variant == "avol" || ckpt.variant == "l3",
                path.string() << ": checkpoint holds a '" << ckpt.variant
                              << "' model, expected ave/avol/l3");
  ModelConfig cfg = ModelConfig::parse(ckpt.config_text);
  AVC_CHECK_ARG(cfg.digest() == ckpt.config_digest,
                path.string() << ": config digest mismatch (corrupt checkpoint?)");
  AnyModel model = build_any_model(cfg, 0);
  std::visit([&](auto& net) { fill_model_from(net, ckpt, path.string()); }, model);
  return model;
}

inline void save_any_model(const std::filesystem::path& path, AnyModel& model) {
  std::visit([&](auto& net) { save_model(path, net); }, model);
}

}  // namespace avc
