#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "fadapt/container.hpp"
#include "fadapt/margin_loss.hpp"
#include "fadapt/ops.hpp"
#include "fadapt/optim.hpp"
#include "fadapt/rng.hpp"
#include "fadapt/schedule.hpp"

namespace fadapt {

/// Square grayscale images, stored 32-bit, with integer identity labels.
struct LabeledImages {
  std::size_t image_size = 0;
  std::vector<float> pixels;  // [n, size, size]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t pixels_per_image() const { return image_size * image_size; }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * pixels_per_image(), pixels_per_image());
  }
  std::span<float> image(std::size_t i) { return std::span<float>(pixels).subspan(i * pixels_per_image(), pixels_per_image()); }

  /// Images at `idx` as a [B, H, W] tensor.
  template <class T>
  Tensor<T> batch(std::span<const std::size_t> idx) const {
    std::vector<T> v;
    v.reserve(idx.size() * pixels_per_image());
    for (auto i : idx) {
      auto im = image(i);
      v.insert(v.end(), im.begin(), im.end());
    }
    return Tensor<T>({idx.size(), image_size, image_size}, std::move(v));
  }
  std::vector<int> batch_labels(std::span<const std::size_t> idx) const {
    std::vector<int> out;
    for (auto i : idx) out.push_back(labels[i]);
    return out;
  }
  int num_classes() const { return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1; }
};

struct BackboneConfig {
  std::size_t image_size = 64;
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t kernel = 3;
  std::size_t embedding_dim = 64;

  std::size_t flat_dim() const {
    std::size_t s = image_size;
    for (std::size_t i = 0; i < channels.size(); ++i) s /= 2;
    return s * s * channels.back();
  }
  void validate() const {
    if (channels.empty()) throw ConfigError("backbone: at least one conv stage is required");
    if (kernel % 2 == 0) throw ConfigError("backbone: kernel must be odd");
    if (embedding_dim == 0) throw ConfigError("backbone: embedding_dim must be positive");
    std::size_t s = image_size;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      if (s < 2) throw ConfigError("backbone: image_size too small for " + std::to_string(channels.size()) + " pooling stages");
      s /= 2;
    }
  }
};

/// conv-silu-avgpool stages followed by one dense layer.
template <class T>
struct BackboneParams {
  BackboneConfig cfg;
  std::vector<Tensor<T>> conv_w, conv_b;
  Tensor<T> fc_w, fc_b;

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
      out.push_back(conv_w[i]);
      out.push_back(conv_b[i]);
    }
    out.push_back(fc_w);
    out.push_back(fc_b);
    return out;
  }

  /// Deep copy (the HQ branch starts as an exact copy of the LQ branch).
  BackboneParams clone(bool trainable) const {
    BackboneParams c;
    c.cfg = cfg;
    auto cp = [trainable](const Tensor<T>& t) {
      auto x = t.clone();
      x.set_requires_grad(trainable);
      return x;
    };
    for (auto& t : conv_w) c.conv_w.push_back(cp(t));
    for (auto& t : conv_b) c.conv_b.push_back(cp(t));
    c.fc_w = cp(fc_w);
    c.fc_b = cp(fc_b);
    return c;
  }

  void set_trainable(bool on) {
    for (auto& t : parameters()) {
      Tensor<T> h = t;
      h.set_requires_grad(on);
    }
  }

  static BackboneParams random(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, {stream::kInit, 0xBAC4}));
    BackboneParams p;
    p.cfg = cfg;
    std::size_t in = 1;
    for (std::size_t c : cfg.channels) {
      const std::size_t fan_in = in * cfg.kernel * cfg.kernel;
      std::vector<T> w(c * fan_in);
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : w) v = static_cast<T>(sd * rng.normal());
      p.conv_w.emplace_back(Shape{c, in, cfg.kernel, cfg.kernel}, std::move(w), true);
      p.conv_b.emplace_back(Shape{c}, T(0), true);
      in = c;
    }
    const std::size_t flat = cfg.flat_dim();
    std::vector<T> w(flat * cfg.embedding_dim);
    const double sd = std::sqrt(1.0 / static_cast<double>(flat));
    for (auto& v : w) v = static_cast<T>(sd * rng.normal());
    p.fc_w = Tensor<T>({flat, cfg.embedding_dim}, std::move(w), true);
    p.fc_b = Tensor<T>({cfg.embedding_dim}, T(0), true);
    return p;
  }
};

/// Embeddings [B, D] (unnormalised) for images [B, H, W].
template <class T>
Tensor<T> embed(const Tensor<T>& images, const BackboneParams<T>& p) {
  if (images.rank() != 3 || images.dim(1) != p.cfg.image_size || images.dim(2) != p.cfg.image_size)
    throw ConfigError("embed: images " + shape_str(images.shape()) + " do not match backbone image_size " +
                      std::to_string(p.cfg.image_size));
  const std::size_t b = images.dim(0);
  Tensor<T> x = reshape(images, {b, 1, p.cfg.image_size, p.cfg.image_size});
  for (std::size_t i = 0; i < p.conv_w.size(); ++i)
    x = avg_pool2(silu(conv2d(x, p.conv_w[i], p.conv_b[i], p.cfg.kernel / 2)));
  return linear(reshape(x, {b, x.numel() / b}), p.fc_w, p.fc_b);
}

/// Embeds a whole image set without recording a graph, in chunks.
template <class T>
std::vector<std::vector<T>> embed_all(const LabeledImages& images, const BackboneParams<T>& p, std::size_t chunk = 64) {
  NoGradGuard ng;
  std::vector<std::vector<T>> out;
  out.reserve(images.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(images.size(), start + chunk); ++i) idx.push_back(i);
    auto e = embed(images.template batch<T>(idx), p);
    const std::size_t d = e.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) out.emplace_back(e.vec().begin() + r * d, e.vec().begin() + (r + 1) * d);
  }
  return out;
}

template <class T>
TensorBundle<T> backbone_bundle(const BackboneParams<T>& p) {
  TensorBundle<T> b;
  for (std::size_t i = 0; i < p.conv_w.size(); ++i) {
    b.emplace("conv" + std::to_string(i) + ".w", p.conv_w[i]);
    b.emplace("conv" + std::to_string(i) + ".b", p.conv_b[i]);
  }
  b.emplace("fc.w", p.fc_w);
  b.emplace("fc.b", p.fc_b);
  return b;
}

template <class T>
BackboneParams<T> backbone_from_bundle(const TensorBundle<T>& b, const BackboneConfig& cfg, bool trainable) {
  cfg.validate();
  auto get = [&](const std::string& k) {
    auto it = b.find(k);
    if (it == b.end()) throw ConfigError("backbone checkpoint is missing '" + k + "'");
    auto t = it->second.clone();
    t.set_requires_grad(trainable);
    return t;
  };
  BackboneParams<T> p;
  p.cfg = cfg;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    p.conv_w.push_back(get("conv" + std::to_string(i) + ".w"));
    p.conv_b.push_back(get("conv" + std::to_string(i) + ".b"));
  }
  p.fc_w = get("fc.w");
  p.fc_b = get("fc.b");
  if (p.fc_w.dim(1) != cfg.embedding_dim || p.fc_w.dim(0) != cfg.flat_dim())
    throw ConfigError("backbone checkpoint does not match the configured architecture");
  return p;
}

struct TrainHistory {
  std::vector<double> loss;
  std::vector<double> lr;
  std::size_t steps_per_epoch = 0;

  /// Mean loss over epoch `e` (0-based).
  double epoch_mean(std::size_t e) const {
    const std::size_t a = e * steps_per_epoch, b = std::min(loss.size(), a + steps_per_epoch);
    if (a >= b) return 0;
    return std::accumulate(loss.begin() + a, loss.begin() + b, 0.0) / static_cast<double>(b - a);
  }
};

/// Deterministic epoch order for n samples.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {stream::kShuffle, epoch}));
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

/// Generic minibatch SGD loop. `step_loss(batch_indices)` builds the loss graph.
template <class T, class LossFn>
TrainHistory sgd_train(std::size_t n, const TrainConfig& cfg, std::vector<Tensor<T>> params, LossFn&& step_loss) {
  cfg.validate();
  TrainHistory h;
  h.steps_per_epoch = steps_per_epoch(n, cfg.batch_size);
  const std::size_t total = h.steps_per_epoch * cfg.epochs;
  const std::size_t warmup = std::min(cfg.warmup_steps, total > 1 ? total - 1 : 0);
  OptimState<T> st;
  st.momentum = static_cast<T>(cfg.momentum);
  st.weight_decay = static_cast<T>(cfg.weight_decay);
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    auto order = epoch_order(n, cfg.seed, e);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size, ++step) {
      std::span<const std::size_t> idx(order.data() + s, std::min(cfg.batch_size, order.size() - s));
      for (auto& p : params) p.zero_grad();
      Tensor<T> loss = step_loss(idx);
      const double lv = static_cast<double>(loss.item());
      const double lr = total > 1 ? lr_at(step, cfg.lr_base, warmup, total, cfg.poly_power) : cfg.lr_base;
      if (!std::isfinite(lv))
        throw NumericalError("training diverged at step " + std::to_string(step) + " (loss " + std::to_string(lv) +
                             ", lr " + std::to_string(lr) + ")");
      backward(loss);
      st.lr = static_cast<T>(lr);
      sgd_step<T>(params, st);
      h.loss.push_back(lv);
      h.lr.push_back(lr);
    }
  }
  return h;
}

template <class T>
struct PretrainResult {
  BackboneParams<T> backbone;
  ClassifierHead<T> head;
  TrainHistory history;
  double initial_loss = 0;
  double final_loss = 0;
};

/// Mean margin loss over a labelled set (no graph).
template <class T>
double dataset_loss(const LabeledImages& data, const BackboneParams<T>& p, const ClassifierHead<T>& head,
                    const MarginParams& margin, std::size_t chunk = 64) {
  NoGradGuard ng;
  double total = 0;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < data.size(); s += chunk) {
    idx.clear();
    for (std::size_t i = s; i < std::min(data.size(), s + chunk); ++i) idx.push_back(i);
    auto labels = data.batch_labels(idx);
    total += static_cast<double>(angular_margin_loss(embed(data.template batch<T>(idx), p), labels, head, margin).item()) *
             static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.size());
}

/// Trains a fresh backbone and classifier head on clean labelled images.
template <class T>
PretrainResult<T> pretrain(const LabeledImages& data, const BackboneConfig& bcfg, const MarginParams& margin,
                           const TrainConfig& tcfg) {
  if (data.size() == 0) throw ContractError("pretrain: empty dataset");
  const int classes = data.num_classes();
  if (classes < 2) throw ContractError("pretrain: at least two identities are required");
  PretrainResult<T> r{BackboneParams<T>::random(bcfg, tcfg.seed),
                      ClassifierHead<T>::random(static_cast<std::size_t>(classes), bcfg.embedding_dim, tcfg.seed),
                      {}};
  r.initial_loss = dataset_loss(data, r.backbone, r.head, margin);
  auto params = r.backbone.parameters();
  params.push_back(r.head.class_weights);
  r.history = sgd_train<T>(data.size(), tcfg, params, [&](std::span<const std::size_t> idx) {
    auto labels = data.batch_labels(idx);
    return angular_margin_loss(embed(data.template batch<T>(idx), r.backbone), labels, r.head, margin);
  });
  r.final_loss = dataset_loss(data, r.backbone, r.head, margin);
  return r;
}

}  // namespace fadapt
