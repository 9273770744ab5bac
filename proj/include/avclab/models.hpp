#pragma once

// The three audio-visual correspondence architectures.
//
// All variants share the same two-tower backbone: stacks of conv-bn-relu
// pairs (3x3 kernels, stride 2 in the very first convolution, 2x2 max pool
// between blocks). On 224x224 RGB input the vision tower ends at a 14x14
// grid; the audio tower runs on the 257x200 log-spectrogram after a stem
// crop to pool-friendly extents.
//
//  * AveNet pools both towers globally, maps to L2-normalized embeddings,
//    and classifies correspondence from the single scalar distance between
//    them through a scale-and-shift calibration.
//  * AvolNet keeps the vision tower spatial: the embedding FCs become 1x1
//    convolutions (no normalization on the vision side), each cell's scalar
//    product with the audio embedding is calibrated and squashed into a
//    heatmap, and the max cell is the correspondence score.
//  * L3Net fuses the two tower features by concatenation through an MLP; its
//    per-modality features are exposed for retrieval baselines.

#include <variant>

#include "avclab/dataset.hpp"
#include "avclab/gradcheck.hpp"
#include "avclab/ops.hpp"

namespace avc {

enum class ModelVariant { ave, avol, l3 };

inline const char* variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::ave: return "ave";
    case ModelVariant::avol: return "avol";
    default: return "l3";
  }
}

inline ModelVariant variant_from(const std::string& s) {
  if (s == "ave") return ModelVariant::ave;
  if (s == "avol") return ModelVariant::avol;
  if (s == "l3") return ModelVariant::l3;
  throw ConfigError("unknown model variant '" + s + "'");
}

struct ModelConfig {
  ModelVariant variant = ModelVariant::ave;
  int embed_dim = 128;
  std::vector<int> vision_channels{16, 32, 64, 64};
  std::vector<int> audio_channels{16, 32, 64, 64};
  int first_conv_stride = 2;
  int image_size = 224;
  int spec_bins = 257;
  int spec_frames = 200;
  int audio_crop_h = 256;  // stem crop: drops the top frequency bin
  int audio_crop_w = 192;  // stem crop: trims 4 frames from either end
  int grid = 14;

  int downsample_factor(size_t n_blocks) const {
    return first_conv_stride * (1 << (int(n_blocks) - 1));
  }
  int audio_grid_h() const { return audio_crop_h / downsample_factor(audio_channels.size()); }
  int audio_grid_w() const { return audio_crop_w / downsample_factor(audio_channels.size()); }

  void validate() const {
    AVC_CHECK_ARG(embed_dim > 0 && first_conv_stride >= 1, "model config: bad extents");
    AVC_CHECK_ARG(vision_channels.size() >= 1 && audio_channels.size() >= 1,
                  "model config: at least one block per tower");
    const int vf = downsample_factor(vision_channels.size());
    AVC_CHECK_ARG(image_size % vf == 0 && image_size / vf == grid,
                  "model config: image " << image_size << " / downsample " << vf
                                         << " must equal grid " << grid);
    const int af = downsample_factor(audio_channels.size());
    AVC_CHECK_ARG(audio_crop_h % af == 0 && audio_crop_w % af == 0,
                  "model config: audio crop " << audio_crop_h << "x" << audio_crop_w
                                              << " not divisible by downsample " << af);
    AVC_CHECK_ARG(audio_crop_h <= spec_bins && audio_crop_w <= spec_frames,
                  "model config: audio crop exceeds the spectrogram");
  }

  std::string canonical_text() const {
    std::ostringstream ss;
    auto list = [](const std::vector<int>& v) {
      std::string s;
      for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[size_t(i)]);
      return s;
    };
    ss << "variant=" << variant_name(variant) << "\n"
       << "embed_dim=" << embed_dim << "\n"
       << "vision_channels=" << list(vision_channels) << "\n"
       << "audio_channels=" << list(audio_channels) << "\n"
       << "first_conv_stride=" << first_conv_stride << "\n"
       << "image_size=" << image_size << "\n"
       << "spec_bins=" << spec_bins << "\n"
       << "spec_frames=" << spec_frames << "\n"
       << "audio_crop_h=" << audio_crop_h << "\n"
       << "audio_crop_w=" << audio_crop_w << "\n"
       << "grid=" << grid << "\n";
    return ss.str();
  }

  static ModelConfig parse(const std::string& text) {
    ModelConfig cfg;
    std::istringstream ss(text);
    std::string line;
    auto list = [](const std::string& s) {
      std::vector<int> v;
      std::istringstream ls(s);
      std::string item;
      while (std::getline(ls, item, ',')) v.push_back(std::stoi(item));
      return v;
    };
    while (std::getline(ss, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      if (key == "variant") cfg.variant = variant_from(val);
      else if (key == "embed_dim") cfg.embed_dim = std::stoi(val);
      else if (key == "vision_channels") cfg.vision_channels = list(val);
      else if (key == "audio_channels") cfg.audio_channels = list(val);
      else if (key == "first_conv_stride") cfg.first_conv_stride = std::stoi(val);
      else if (key == "image_size") cfg.image_size = std::stoi(val);
      else if (key == "spec_bins") cfg.spec_bins = std::stoi(val);
      else if (key == "spec_frames") cfg.spec_frames = std::stoi(val);
      else if (key == "audio_crop_h") cfg.audio_crop_h = std::stoi(val);
      else if (key == "audio_crop_w") cfg.audio_crop_w = std::stoi(val);
      else if (key == "grid") cfg.grid = std::stoi(val);
      else throw ConfigError("model config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
  }

  uint64_t digest() const { return fnv1a64(canonical_text()); }

  // Tiny 8x8 instantiation used for wide-precision whole-graph checks.
  static ModelConfig miniature(ModelVariant v) {
    ModelConfig m;
    m.variant = v;
    m.embed_dim = 6;
    m.vision_channels = {3, 4};
    m.audio_channels = {3, 4};
    m.first_conv_stride = 2;
    m.image_size = 8;
    m.spec_bins = 8;
    m.spec_frames = 8;
    m.audio_crop_h = 8;
    m.audio_crop_w = 8;
    m.grid = 2;
    m.validate();
    return m;
  }
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool decay_exempt = false;
};

// ---- shared tower --------------------------------------------------------------

template <typename T>
struct ConvBnBlock {
  LayerParams<T> conv1, bn1, conv2, bn2;
};

template <typename T>
struct Tower {
  std::vector<ConvBnBlock<T>> blocks;
  int first_stride = 2;

  static Tower build(int in_channels, const std::vector<int>& channels, int first_stride,
                     Rng& rng) {
    Tower t;
    t.first_stride = first_stride;
    int in_c = in_channels;
    for (int out_c : channels) {
      ConvBnBlock<T> b;
      b.conv1 = LayerParams<T>::conv(out_c, in_c, 3, 3, rng);
      b.bn1 = LayerParams<T>::batchnorm(out_c);
      b.conv2 = LayerParams<T>::conv(out_c, out_c, 3, 3, rng);
      b.bn2 = LayerParams<T>::batchnorm(out_c);
      t.blocks.push_back(std::move(b));
      in_c = out_c;
    }
    return t;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> h = x;
    for (size_t i = 0; i < blocks.size(); ++i) {
      auto& b = blocks[i];
      h = relu(batchnorm2d(conv2d(h, b.conv1, i == 0 ? first_stride : 1), b.bn1, mode));
      h = relu(batchnorm2d(conv2d(h, b.conv2, 1), b.bn2, mode));
      if (i + 1 < blocks.size()) h = maxpool2d(h, 2);
    }
    return h;
  }

  void collect(const std::string& prefix, bool with_running,
               std::vector<NamedParam<T>>& out) {
    for (size_t i = 0; i < blocks.size(); ++i) {
      auto& b = blocks[i];
      std::string base = prefix + ".b" + std::to_string(i);
      out.push_back({base + ".conv1.w", b.conv1.weights, false});
      out.push_back({base + ".conv1.b", b.conv1.bias, true});
      out.push_back({base + ".bn1.gamma", b.bn1.weights, true});
      out.push_back({base + ".bn1.beta", b.bn1.bias, true});
      out.push_back({base + ".conv2.w", b.conv2.weights, false});
      out.push_back({base + ".conv2.b", b.conv2.bias, true});
      out.push_back({base + ".bn2.gamma", b.bn2.weights, true});
      out.push_back({base + ".bn2.beta", b.bn2.bias, true});
      if (with_running) {
        out.push_back({base + ".bn1.running_mean", b.bn1.running_mean, true});
        out.push_back({base + ".bn1.running_var", b.bn1.running_var, true});
        out.push_back({base + ".bn2.running_mean", b.bn2.running_mean, true});
        out.push_back({base + ".bn2.running_var", b.bn2.running_var, true});
      }
    }
  }
};

namespace detail {

// Audio stem: crop the spectrogram to pool-friendly extents. Keeps the low
// frequencies (drops the top bins) and trims time symmetrically.
template <typename T>
Tensor<T> audio_stem(const Tensor<T>& specs, const ModelConfig& cfg) {
  const int H = int(specs.dim(2)), W = int(specs.dim(3));
  AVC_CHECK_ARG(H == cfg.spec_bins && W == cfg.spec_frames,
                "audio input " << H << "x" << W << " does not match configured "
                               << cfg.spec_bins << "x" << cfg.spec_frames);
  if (H == cfg.audio_crop_h && W == cfg.audio_crop_w) return specs;
  return slice_hw(specs, 0, cfg.audio_crop_h, (W - cfg.audio_crop_w) / 2, cfg.audio_crop_w);
}

template <typename T>
Tensor<T> global_maxpool_flat(const Tensor<T>& grid_map) {
  const int C = int(grid_map.dim(1)), H = int(grid_map.dim(2)), W = int(grid_map.dim(3));
  auto pooled = maxpool2d(grid_map, H, W);
  return reshape(pooled, Shape{grid_map.dim(0), C});
}

}  // namespace detail

// ---- AVE-Net -------------------------------------------------------------------

struct AveOutput {
  double p_correspond = 0.0;
  double distance = 0.0;
  std::vector<float> v_embed, a_embed;
};

template <typename T>
class AveNet {
 public:
  ModelConfig cfg;
  Tower<T> vision, audio;
  LayerParams<T> v_fc1, v_fc2, a_fc1, a_fc2;
  LayerParams<T> calib;  // dense [2,1]: two affine logits of the distance

  static AveNet build(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    AVC_CHECK_ARG(cfg.variant == ModelVariant::ave, "AveNet::build: config variant mismatch");
    AveNet net;
    net.cfg = cfg;
    Rng root(seed);
    Rng vr = root.fork(1), ar = root.fork(2), hr = root.fork(3);
    net.vision = Tower<T>::build(3, cfg.vision_channels, cfg.first_conv_stride, vr);
    net.audio = Tower<T>::build(1, cfg.audio_channels, cfg.first_conv_stride, ar);
    net.v_fc1 = LayerParams<T>::dense_layer(cfg.embed_dim, cfg.vision_channels.back(), hr);
    net.v_fc2 = LayerParams<T>::dense_layer(cfg.embed_dim, cfg.embed_dim, hr);
    net.a_fc1 = LayerParams<T>::dense_layer(cfg.embed_dim, cfg.audio_channels.back(), hr);
    net.a_fc2 = LayerParams<T>::dense_layer(cfg.embed_dim, cfg.embed_dim, hr);
    net.calib = correct_sign_calibration();
    return net;
  }

  // The correspondence probability must start out decreasing in the distance:
  // negative weight on the "correspond" logit, threshold at sqrt(2) (the
  // expected distance between unrelated unit vectors).
  static LayerParams<T> correct_sign_calibration() {
    LayerParams<T> calib;
    calib.weights = Tensor<T>(Shape{2, 1}, std::vector<T>{T(1), T(-1)});
    const T thr = T(std::sqrt(2.0));
    calib.bias = Tensor<T>(Shape{2}, std::vector<T>{-thr, thr});
    calib.weights.set_requires_grad();
    calib.bias.set_requires_grad();
    return calib;
  }

  Tensor<T> embed_image(const Tensor<T>& frames, Mode mode) {
    auto h = detail::global_maxpool_flat(vision.forward(frames, mode));
    return l2_normalize(dense(relu(dense(h, v_fc1)), v_fc2));
  }

  Tensor<T> embed_audio(const Tensor<T>& specs, Mode mode) {
    auto h = detail::global_maxpool_flat(audio.forward(detail::audio_stem(specs, cfg), mode));
    return l2_normalize(dense(relu(dense(h, a_fc1)), a_fc2));
  }

  struct PairForward {
    Tensor<T> logits;    // [N,2]: {mismatch, correspond}
    Tensor<T> distance;  // [N]
    Tensor<T> v_embed, a_embed;
  };

  PairForward forward_pair(const Tensor<T>& frames, const Tensor<T>& specs, Mode mode) {
    PairForward out;
    out.v_embed = embed_image(frames, mode);
    out.a_embed = embed_audio(specs, mode);
    out.distance = euclidean_distance(out.v_embed, out.a_embed);
    out.logits = dense(reshape(out.distance, Shape{out.distance.dim(0), 1}), calib);
    return out;
  }

  // Correspondence probability as a function of the scalar distance alone;
  // the whole pair forward routes through this same calibration.
  double p_from_distance(double d) const {
    double l0 = double(calib.weights.at(0)) * d + double(calib.bias.at(0));
    double l1 = double(calib.weights.at(1)) * d + double(calib.bias.at(1));
    double m = std::max(l0, l1);
    double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    return e1 / (e0 + e1);
  }

  std::vector<NamedParam<T>> parameters() { return named(false); }
  std::vector<NamedParam<T>> state_blocks() { return named(true); }

 private:
  std::vector<NamedParam<T>> named(bool with_running) {
    std::vector<NamedParam<T>> out;
    vision.collect("vision", with_running, out);
    audio.collect("audio", with_running, out);
    out.push_back({"vision.fc1.w", v_fc1.weights, false});
    out.push_back({"vision.fc1.b", v_fc1.bias, true});
    out.push_back({"vision.fc2.w", v_fc2.weights, false});
    out.push_back({"vision.fc2.b", v_fc2.bias, true});
    out.push_back({"audio.fc1.w", a_fc1.weights, false});
    out.push_back({"audio.fc1.b", a_fc1.bias, true});
    out.push_back({"audio.fc2.w", a_fc2.weights, false});
    out.push_back({"audio.fc2.b", a_fc2.bias, true});
    out.push_back({"calib.w", calib.weights, false});
    out.push_back({"calib.b", calib.bias, true});
    return out;
  }
};

// ---- AVOL-Net ------------------------------------------------------------------

struct AvolOutput {
  double score = 0.0;               // max over heatmap cells
  int grid = 0;
  std::vector<float> heatmap;       // grid x grid, row-major, in [0,1]
  std::vector<float> v_grid;        // embed_dim x grid x grid features
  std::vector<float> a_embed;
};

template <typename T>
class AvolNet {
 public:
  ModelConfig cfg;
  Tower<T> vision, audio;
  LayerParams<T> v_conv5, v_conv6;  // 1x1 convolutions, the FC equivalents
  LayerParams<T> a_fc1, a_fc2;
  LayerParams<T> calib;             // 1x1 convolution on the similarity map

  static AvolNet build(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    AVC_CHECK_ARG(cfg.variant == ModelVariant::avol, "AvolNet::build: config variant mismatch");
    AvolNet net;
    net.cfg = cfg;
    Rng root(seed);
    Rng vr = root.fork(1), ar = root.fork(2), hr = root.fork(3);
    net.vision = Tower<T>::build(3, cfg.vision_channels, cfg.first_conv_stride, vr);
    net.audio = Tower<T>::build(1, cfg.audio_channels, cfg.first_conv_stride, ar);
    net.v_conv5 = LayerParams<T>::conv(cfg.embed_dim, cfg.vision_channels.back(), 1, 1, hr);
    net.v_conv6 = LayerParams<T>::conv(cfg.embed_dim, cfg.embed_dim, 1, 1, hr);
    net.a_fc1 = LayerParams<T>::dense_layer(cfg.embed_dim, cfg.audio_channels.back(), hr);
    net.a_fc2 = LayerParams<T>::dense_layer(cfg.embed_dim, cfg.embed_dim, hr);
    // Correct sign: higher similarity must mean higher correspondence, so the
    // calibration scale starts positive (and small, to keep early scores soft).
    net.calib.weights = Tensor<T>(Shape{1, 1, 1, 1}, std::vector<T>{T(0.1)});
    net.calib.bias = Tensor<T>(Shape{1});
    net.calib.weights.set_requires_grad();
    net.calib.bias.set_requires_grad();
    return net;
  }

  Tensor<T> vision_grid(const Tensor<T>& frames, Mode mode) {
    auto h = vision.forward(frames, mode);
    return conv2d(relu(conv2d(h, v_conv5, 1)), v_conv6, 1);  // no normalization
  }

  Tensor<T> embed_audio(const Tensor<T>& specs, Mode mode) {
    auto h = detail::global_maxpool_flat(audio.forward(detail::audio_stem(specs, cfg), mode));
    return l2_normalize(dense(relu(dense(h, a_fc1)), a_fc2));
  }

  struct PairForward {
    Tensor<T> calibrated;    // [N,1,g,g] pre-sigmoid cell logits
    Tensor<T> score_logits;  // [N] max cell logit (the training signal)
    Tensor<T> v_grid, a_embed;
  };

  PairForward forward_pair(const Tensor<T>& frames, const Tensor<T>& specs, Mode mode) {
    PairForward out;
    out.v_grid = vision_grid(frames, mode);
    out.a_embed = embed_audio(specs, mode);
    auto sim = grid_dot(out.v_grid, out.a_embed);
    out.calibrated = conv2d(sim, calib, 1);
    auto pooled = maxpool2d(out.calibrated, int(out.calibrated.dim(2)), int(out.calibrated.dim(3)));
    out.score_logits = reshape(pooled, Shape{out.calibrated.dim(0)});
    return out;
  }

  std::vector<NamedParam<T>> parameters() { return named(false); }
  std::vector<NamedParam<T>> state_blocks() { return named(true); }

 private:
  std::vector<NamedParam<T>> named(bool with_running) {
    std::vector<NamedParam<T>> out;
    vision.collect("vision", with_running, out);
    audio.collect("audio", with_running, out);
    out.push_back({"vision.conv5.w", v_conv5.weights, false});
    out.push_back({"vision.conv5.b", v_conv5.bias, true});
    out.push_back({"vision.conv6.w", v_conv6.weights, false});
    out.push_back({"vision.conv6.b", v_conv6.bias, true});
    out.push_back({"audio.fc1.w", a_fc1.weights, false});
    out.push_back({"audio.fc1.b", a_fc1.bias, true});
    out.push_back({"audio.fc2.w", a_fc2.weights, false});
    out.push_back({"audio.fc2.b", a_fc2.bias, true});
    out.push_back({"calib.w", calib.weights, false});
    out.push_back({"calib.b", calib.bias, true});
    return out;
  }
};

// ---- L3-Net --------------------------------------------------------------------

template <typename T>
class L3Net {
 public:
  ModelConfig cfg;
  Tower<T> vision, audio;
  LayerParams<T> v_fc1, v_fc2, a_fc1, a_fc2;  // per-modality features, unnormalized
  LayerParams<T> fuse1, fuse2;                // concat -> hidden -> 2 logits

  static L3Net build(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    AVC_CHECK_ARG(cfg.variant == ModelVariant::l3, "L3Net::build: config variant mismatch");
    L3Net net;
    net.cfg = cfg;
    Rng root(seed);
    Rng vr = root.fork(1), ar = root.fork(2), hr = root.fork(3);
    net.vision = Tower<T>::build(3, cfg.vision_channels, cfg.first_conv_stride, vr);
    net.audio = Tower<T>::build(1, cfg.audio_channels, cfg.first_conv_stride, ar);
    net.v_fc1 = LayerParams<T>::dense_layer(cfg.embed_dim, cfg.vision_channels.back(), hr);
    net.v_fc2 = LayerParams<T>::dense_layer(cfg.embed_dim, cfg.embed_dim, hr);
    net.a_fc1 = LayerParams<T>::dense_layer(cfg.embed_dim, cfg.audio_channels.back(), hr);
    net.a_fc2 = LayerParams<T>::dense_layer(cfg.embed_dim, cfg.embed_dim, hr);
    net.fuse1 = LayerParams<T>::dense_layer(cfg.embed_dim, 2 * cfg.embed_dim, hr);
    net.fuse2 = LayerParams<T>::dense_layer(2, cfg.embed_dim, hr);
    return net;
  }

  Tensor<T> feature_image(const Tensor<T>& frames, Mode mode) {
    auto h = detail::global_maxpool_flat(vision.forward(frames, mode));
    return dense(relu(dense(h, v_fc1)), v_fc2);
  }

  Tensor<T> feature_audio(const Tensor<T>& specs, Mode mode) {
    auto h = detail::global_maxpool_flat(audio.forward(detail::audio_stem(specs, cfg), mode));
    return dense(relu(dense(h, a_fc1)), a_fc2);
  }

  struct PairForward {
    Tensor<T> logits;  // [N,2]
    Tensor<T> v_feat, a_feat;
  };

  PairForward forward_pair(const Tensor<T>& frames, const Tensor<T>& specs, Mode mode) {
    PairForward out;
    out.v_feat = feature_image(frames, mode);
    out.a_feat = feature_audio(specs, mode);
    auto fused = relu(dense(concat_cols(out.v_feat, out.a_feat), fuse1));
    out.logits = dense(fused, fuse2);
    return out;
  }

  std::vector<NamedParam<T>> parameters() { return named(false); }
  std::vector<NamedParam<T>> state_blocks() { return named(true); }

 private:
  std::vector<NamedParam<T>> named(bool with_running) {
    std::vector<NamedParam<T>> out;
    vision.collect("vision", with_running, out);
    audio.collect("audio", with_running, out);
    out.push_back({"vision.fc1.w", v_fc1.weights, false});
    out.push_back({"vision.fc1.b", v_fc1.bias, true});
    out.push_back({"vision.fc2.w", v_fc2.weights, false});
    out.push_back({"vision.fc2.b", v_fc2.bias, true});
    out.push_back({"audio.fc1.w", a_fc1.weights, false});
    out.push_back({"audio.fc1.b", a_fc1.bias, true});
    out.push_back({"audio.fc2.w", a_fc2.weights, false});
    out.push_back({"audio.fc2.b", a_fc2.bias, true});
    out.push_back({"fuse1.w", fuse1.weights, false});
    out.push_back({"fuse1.b", fuse1.bias, true});
    out.push_back({"fuse2.w", fuse2.weights, false});
    out.push_back({"fuse2.b", fuse2.bias, true});
    return out;
  }
};

// ---- training-loss and evaluation hooks ---------------------------------------

template <typename T>
Tensor<T> batch_training_loss(AveNet<T>& net, const Tensor<T>& frames, const Tensor<T>& specs,
                              const std::vector<int>& labels) {
  return softmax_xent(net.forward_pair(frames, specs, Mode::train).logits, labels);
}

template <typename T>
Tensor<T> batch_training_loss(AvolNet<T>& net, const Tensor<T>& frames, const Tensor<T>& specs,
                              const std::vector<int>& labels) {
  return logistic_loss(net.forward_pair(frames, specs, Mode::train).score_logits, labels);
}

template <typename T>
Tensor<T> batch_training_loss(L3Net<T>& net, const Tensor<T>& frames, const Tensor<T>& specs,
                              const std::vector<int>& labels) {
  return softmax_xent(net.forward_pair(frames, specs, Mode::train).logits, labels);
}

// Per-pair correspondence probabilities in eval mode, no graph recorded.
template <typename T>
std::vector<double> batch_p_correspond(AveNet<T>& net, const Tensor<T>& frames,
                                       const Tensor<T>& specs) {
  NoGradGuard ng;
  auto fwd = net.forward_pair(frames, specs, Mode::eval);
  auto probs = softmax_values(fwd.logits);
  std::vector<double> out(size_t(frames.dim(0)));
  for (size_t i = 0; i < out.size(); ++i) out[i] = double(probs[2 * i + 1]);
  return out;
}

template <typename T>
std::vector<double> batch_p_correspond(AvolNet<T>& net, const Tensor<T>& frames,
                                       const Tensor<T>& specs) {
  NoGradGuard ng;
  auto fwd = net.forward_pair(frames, specs, Mode::eval);
  std::vector<double> out(size_t(frames.dim(0)));
  for (size_t i = 0; i < out.size(); ++i) {
    double z = double(fwd.score_logits.at(int64_t(i)));
    out[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return out;
}

template <typename T>
std::vector<double> batch_p_correspond(L3Net<T>& net, const Tensor<T>& frames,
                                       const Tensor<T>& specs) {
  NoGradGuard ng;
  auto fwd = net.forward_pair(frames, specs, Mode::eval);
  auto probs = softmax_values(fwd.logits);
  std::vector<double> out(size_t(frames.dim(0)));
  for (size_t i = 0; i < out.size(); ++i) out[i] = double(probs[2 * i + 1]);
  return out;
}

// ---- single-pair conveniences --------------------------------------------------

template <typename T>
Tensor<T> image_to_tensor(const ImageF& img) {
  Tensor<T> t(Shape{1, img.channels, img.h, img.w});
  for (size_t i = 0; i < img.v.size(); ++i) t.at(int64_t(i)) = T(img.v[i]);
  return t;
}

template <typename T>
Tensor<T> spectrogram_to_tensor(const Spectrogram& s) {
  Tensor<T> t(Shape{1, 1, s.bins, s.frames});
  for (size_t i = 0; i < s.values.size(); ++i) t.at(int64_t(i)) = T(s.values[i]);
  return t;
}

inline AveOutput ave_forward(AveNet<float>& net, const ImageF& frame, const Spectrogram& spec) {
  NoGradGuard ng;
  auto fwd = net.forward_pair(image_to_tensor<float>(frame), spectrogram_to_tensor<float>(spec),
                              Mode::eval);
  AveOutput out;
  out.distance = double(fwd.distance.at(0));
  auto probs = softmax_values(fwd.logits);
  out.p_correspond = double(probs[1]);
  out.v_embed = fwd.v_embed.values();
  out.a_embed = fwd.a_embed.values();
  return out;
}

inline AvolOutput avol_forward(AvolNet<float>& net, const ImageF& frame, const Spectrogram& spec) {
  NoGradGuard ng;
  auto fwd = net.forward_pair(image_to_tensor<float>(frame), spectrogram_to_tensor<float>(spec),
                              Mode::eval);
  AvolOutput out;
  out.grid = int(fwd.calibrated.dim(2));
  out.heatmap.resize(size_t(out.grid) * out.grid);
  for (size_t i = 0; i < out.heatmap.size(); ++i) {
    double z = double(fwd.calibrated.at(int64_t(i)));
    out.heatmap[i] = float(z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)));
  }
  out.score = double(*std::max_element(out.heatmap.begin(), out.heatmap.end()));
  out.v_grid = fwd.v_grid.values();
  out.a_embed = fwd.a_embed.values();
  return out;
}

// ---- whole-graph gradient checks ----------------------------------------------

// Miniature AVE and AVOL graphs exercised end to end at double precision:
// every backward rule composed exactly as the real models compose them.
inline std::vector<GradCheckSpec> composed_grad_checks() {
  std::vector<GradCheckSpec> specs;

  auto ave = std::make_shared<AveNet<double>>(
      AveNet<double>::build(ModelConfig::miniature(ModelVariant::ave), 41));
  auto ave_params = std::make_shared<std::vector<NamedParam<double>>>(ave->parameters());
  specs.push_back(GradCheckSpec{
      "ave_miniature_graph",
      [ave, ave_params](Rng& rng) {
        std::vector<Tensor<double>> inputs;
        inputs.push_back(detail::rand_leaf({2, 3, 8, 8}, rng, 0.7));
        inputs.push_back(detail::rand_leaf({2, 1, 8, 8}, rng, 0.7));
        for (auto& p : *ave_params) {
          for (auto& v : p.tensor.values()) v = rng.normal() * 0.5;
          inputs.push_back(p.tensor);
        }
        // keep the calibration near its correct-sign setup
        ave->calib.weights.values() = {0.8, -0.8};
        ave->calib.bias.values() = {-1.1, 1.1};
        return inputs;
      },
      [ave](const std::vector<Tensor<double>>& in) {
        return softmax_xent(ave->forward_pair(in[0], in[1], Mode::train).logits,
                            std::vector<int>{1, 0});
      }});

  auto avol = std::make_shared<AvolNet<double>>(
      AvolNet<double>::build(ModelConfig::miniature(ModelVariant::avol), 43));
  auto avol_params = std::make_shared<std::vector<NamedParam<double>>>(avol->parameters());
  specs.push_back(GradCheckSpec{
      "avol_miniature_graph",
      [avol, avol_params](Rng& rng) {
        std::vector<Tensor<double>> inputs;
        inputs.push_back(detail::rand_leaf({2, 3, 8, 8}, rng, 0.7));
        inputs.push_back(detail::rand_leaf({2, 1, 8, 8}, rng, 0.7));
        for (auto& p : *avol_params) {
          for (auto& v : p.tensor.values()) v = rng.normal() * 0.5;
          inputs.push_back(p.tensor);
        }
        return inputs;
      },
      [avol](const std::vector<Tensor<double>>& in) {
        return logistic_loss(avol->forward_pair(in[0], in[1], Mode::train).score_logits,
                             std::vector<int>{1, 0});
      }});

  return specs;
}

}  // namespace avc
