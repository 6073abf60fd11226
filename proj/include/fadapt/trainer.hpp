#pragma once

// Dual-branch training: the LQ branch is frozen, the HQ branch (a copy of the
// pretrained backbone), the fusion stack and the classifier head are trained.
// Also the single-branch strategies used for comparison.

#include <optional>
#include <span>
#include <vector>

#include "fadapt/backbone.hpp"
#include "fadapt/datagen.hpp"
#include "fadapt/eval.hpp"
#include "fadapt/fusion.hpp"
#include "fadapt/margin_loss.hpp"
#include "fadapt/schedule.hpp"

namespace fadapt {

/// Probe embedding R = fuse(embed(lq, frozen), embed(restored, hq)).
template <class T>
Tensor<T> forward_framework(const Tensor<T>& lq, const Tensor<T>& restored, const BackboneParams<T>& frozen,
                            const BackboneParams<T>& hq, const FusionParams<T>& fp, const FusionConfig& cfg) {
  if (lq.shape() != restored.shape()) throw DimensionError("forward_framework: LQ and restored batches differ in shape");
  Tensor<T> f;
  {
    NoGradGuard ng;
    f = embed(lq, frozen);
  }
  return fuse(f, embed(restored, hq), fp, cfg);
}

/// Rows of `embs` at `idx` as a constant [B, D] tensor.
template <class T>
Tensor<T> gather_rows(const std::vector<std::vector<T>>& embs, std::span<const std::size_t> idx) {
  if (idx.empty()) throw ContractError("gather_rows: empty index list");
  const std::size_t d = embs[idx[0]].size();
  std::vector<T> v;
  v.reserve(idx.size() * d);
  for (auto i : idx) v.insert(v.end(), embs[i].begin(), embs[i].end());
  return Tensor<T>({idx.size(), d}, std::move(v));
}

template <class T>
struct AdapterModel {
  BackboneParams<T> hq;
  FusionParams<T> fusion;
  ClassifierHead<T> head;
  TrainHistory history;
};

template <class T>
ClassifierHead<T> initial_head(const ClassifierHead<T>& pretrained, std::size_t classes, std::size_t dim, bool from_pretrained,
                               std::uint64_t seed) {
  if (from_pretrained) {
    if (pretrained.class_weights.dim(0) != classes || pretrained.class_weights.dim(1) != dim)
      throw ConfigError("classifier head: pretrained head shape does not match the training identities");
    auto w = pretrained.class_weights.clone();
    w.set_requires_grad(true);
    return {w};
  }
  return ClassifierHead<T>::random(classes, dim, derive_seed(seed, {0xADA9}));
}

/// Trains HQ branch + fusion + head on paired (LQ, restored) images with the
/// margin loss on R. `frozen` is never written to.
template <class T>
AdapterModel<T> train_adapter(const LabeledImages& lq, const LabeledImages& restored, const BackboneParams<T>& frozen,
                              const ClassifierHead<T>& pretrained_head, const FusionConfig& fcfg, const MarginParams& margin,
                              const TrainConfig& tcfg) {
  if (lq.size() == 0) throw ContractError("train_adapter: empty training set");
  if (lq.labels != restored.labels) throw ContractError("train_adapter: LQ and restored sets are not aligned");
  if (fcfg.d_model != frozen.cfg.embedding_dim)
    throw ConfigError("fusion.d_model (" + std::to_string(fcfg.d_model) + ") must equal backbone.embedding_dim (" +
                      std::to_string(frozen.cfg.embedding_dim) + ")");
  AdapterModel<T> m{frozen.clone(true), init_fusion<T>(fcfg, tcfg.seed),
                    initial_head(pretrained_head, static_cast<std::size_t>(lq.num_classes()), fcfg.d_model,
                                 tcfg.head_from_pretrained, tcfg.seed),
                    {}};
  const auto lq_embs = embed_all(lq, frozen);
  auto params = m.hq.parameters();
  for (auto& t : fusion_parameters(m.fusion, fcfg)) params.push_back(t);
  params.push_back(m.head.class_weights);
  m.history = sgd_train<T>(lq.size(), tcfg, params, [&](std::span<const std::size_t> idx) {
    auto labels = lq.batch_labels(idx);
    auto r = fuse(gather_rows(lq_embs, idx), embed(restored.template batch<T>(idx), m.hq), m.fusion, fcfg);
    return angular_margin_loss(r, labels, m.head, margin);
  });
  return m;
}

template <class T>
struct FinetuneModel {
  BackboneParams<T> backbone;
  ClassifierHead<T> head;
  TrainHistory history;
};

/// Fine-tunes a copy of the backbone on restored images only.
template <class T>
FinetuneModel<T> train_finetune(const LabeledImages& restored, const BackboneParams<T>& frozen,
                                const ClassifierHead<T>& pretrained_head, const MarginParams& margin, const TrainConfig& tcfg) {
  if (restored.size() == 0) throw ContractError("train_finetune: empty training set");
  FinetuneModel<T> m{frozen.clone(true),
                     initial_head(pretrained_head, static_cast<std::size_t>(restored.num_classes()), frozen.cfg.embedding_dim,
                                  tcfg.head_from_pretrained, tcfg.seed),
                     {}};
  auto params = m.backbone.parameters();
  params.push_back(m.head.class_weights);
  m.history = sgd_train<T>(restored.size(), tcfg, params, [&](std::span<const std::size_t> idx) {
    auto labels = restored.batch_labels(idx);
    return angular_margin_loss(embed(restored.template batch<T>(idx), m.backbone), labels, m.head, margin);
  });
  return m;
}

/// R for every image pair of two aligned sets, without a graph.
template <class T>
std::vector<std::vector<T>> framework_embed_all(const LabeledImages& lq, const LabeledImages& restored,
                                                const BackboneParams<T>& frozen, const BackboneParams<T>& hq,
                                                const FusionParams<T>& fp, const FusionConfig& cfg, std::size_t chunk = 64) {
  NoGradGuard ng;
  const auto f = embed_all(lq, frozen, chunk);
  const auto a = embed_all(restored, hq, chunk);
  std::vector<std::vector<T>> out;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < lq.size(); s += chunk) {
    idx.clear();
    for (std::size_t i = s; i < std::min(lq.size(), s + chunk); ++i) idx.push_back(i);
    auto r = fuse(gather_rows(f, idx), gather_rows(a, idx), fp, cfg);
    const std::size_t d = r.dim(1);
    for (std::size_t k = 0; k < idx.size(); ++k) out.emplace_back(r.vec().begin() + k * d, r.vec().begin() + (k + 1) * d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation protocol

struct EvalConfig {
  std::size_t n_folds = 10;
  std::size_t n_genuine = 1000;
  std::size_t n_impostor = 1000;
  std::vector<double> far_targets{0.01, 0.1};
  std::vector<std::size_t> rank_k{1, 5};

  void validate() const {
    if (n_folds == 0) throw ConfigError("eval: n_folds must be positive");
    if (n_genuine < n_folds || n_impostor < n_folds) throw ConfigError("eval: need at least n_folds pairs of each kind");
    for (double f : far_targets)
      if (!(f > 0 && f <= 1)) throw ConfigError("eval: far targets must be in (0, 1]");
    for (auto k : rank_k)
      if (k == 0) throw ConfigError("eval: rank K must be positive");
  }
};

struct EvalOutcome {
  VerificationReport report;
  ScoreSet scores;
  std::vector<Pair> pairs;
};

/// Gallery embeddings vs probe embeddings of the same test split. Gallery and
/// probe index lists come from gallery_probe_split.
template <class T>
EvalOutcome evaluate_probes(const std::vector<std::vector<T>>& gallery, std::span<const int> gallery_labels,
                            const std::vector<std::vector<T>>& probes, std::span<const int> probe_labels,
                            const EvalConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  EvalOutcome out;
  out.pairs = make_cross_pairs(gallery_labels, probe_labels, cfg.n_genuine, cfg.n_impostor, seed);
  for (auto& p : out.pairs) {
    out.scores.scores.push_back(cosine_similarity<T, T>(gallery[p.a], probes[p.b]));
    out.scores.genuine.push_back(p.genuine);
  }
  auto v = verification_accuracy(out.scores, cfg.n_folds);
  out.report.accuracy = v.accuracy;
  out.report.thresholds = v.thresholds;
  for (double f : cfg.far_targets) out.report.tar_at_far[f] = tar_at_far(out.scores, f);
  for (auto k : cfg.rank_k)
    out.report.rank_k_hit_rate[k] =
        k <= gallery.size() ? top_k_hits(probes, probe_labels, gallery, gallery_labels, k) : 1.0;
  return out;
}

template <class T>
std::vector<std::vector<T>> select_rows(const std::vector<std::vector<T>>& v, std::span<const std::size_t> idx) {
  std::vector<std::vector<T>> out;
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

inline std::vector<int> select_labels(std::span<const int> labels, std::span<const std::size_t> idx) {
  std::vector<int> out;
  for (auto i : idx) out.push_back(labels[i]);
  return out;
}

inline LabeledImages select_images(const LabeledImages& s, std::span<const std::size_t> idx) {
  LabeledImages out;
  out.image_size = s.image_size;
  for (auto i : idx) {
    auto im = s.image(i);
    out.pixels.insert(out.pixels.end(), im.begin(), im.end());
    out.labels.push_back(s.labels[i]);
  }
  return out;
}

}  // namespace fadapt
