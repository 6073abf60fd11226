#pragma once

// End-to-end benchmark: synthesise, pretrain, degrade, restore, train each
// strategy and evaluate on held-out identities.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fadapt/datagen.hpp"
#include "fadapt/restore.hpp"
#include "fadapt/trainer.hpp"
#include "fadapt/turbsim.hpp"

namespace fadapt {

/// Per-image degradation seed; `split` keeps train and test streams apart.
inline std::uint64_t image_seed(std::uint64_t seed, std::uint64_t split, std::size_t index) {
  return derive_seed(seed, {stream::kDegrade, split, index});
}

inline LabeledImages degrade_set(const LabeledImages& clean, const TurbulenceParams& p, std::uint64_t seed,
                                 std::uint64_t split, std::vector<PsfKernel>* psfs = nullptr) {
  LabeledImages out;
  out.image_size = clean.image_size;
  out.labels = clean.labels;
  out.pixels.reserve(clean.pixels.size());
  if (psfs) psfs->clear();
  for (std::size_t i = 0; i < clean.size(); ++i) {
    PsfKernel k;
    auto d = degrade(clean.image(i), p, image_seed(seed, split, i), &k);
    out.pixels.insert(out.pixels.end(), d.begin(), d.end());
    if (psfs) psfs->push_back(std::move(k));
  }
  return out;
}

inline LabeledImages restore_set(const LabeledImages& lq, const LabeledImages& clean, const std::vector<PsfKernel>& psfs,
                                 const RestoreConfig& cfg, std::uint64_t seed, std::uint64_t split) {
  LabeledImages out;
  out.image_size = lq.image_size;
  out.labels = lq.labels;
  out.pixels.reserve(lq.pixels.size());
  for (std::size_t i = 0; i < lq.size(); ++i) {
    const PsfKernel* k = i < psfs.size() ? &psfs[i] : nullptr;
    auto r = restore(lq.image(i), cfg, clean.image(i), k, image_seed(seed, split, i), seed);
    out.pixels.insert(out.pixels.end(), r.begin(), r.end());
  }
  return out;
}

struct ExperimentConfig {
  DatasetConfig dataset;
  double level = 40000;  // propagation length used for training and evaluation
  TurbulenceOverrides turbulence;
  RestoreConfig restore;
  BackboneConfig backbone;
  FusionConfig fusion;
  MarginParams margin;
  TrainConfig pretrain;
  TrainConfig train;
  EvalConfig eval;

  TurbulenceParams turbulence_params(double intensity) const {
    return init_params(intensity, dataset.generator.image_size, turbulence);
  }
};

/// Clean data plus a pretrained backbone: everything that does not depend on
/// the degradation level or strategy.
struct Workbench {
  Dataset data;
  PretrainResult<float> base;
  std::vector<std::size_t> gallery_idx, probe_idx;
  std::vector<std::vector<float>> gallery;  // frozen embeddings of clean gallery images
  std::vector<int> gallery_labels, probe_labels;
};

inline Workbench make_workbench(const ExperimentConfig& cfg, std::uint64_t seed) {
  Workbench w;
  w.data = synth_dataset(cfg.dataset, seed);
  TrainConfig pt = cfg.pretrain;
  pt.seed = seed;
  w.base = pretrain<float>(w.data.train, cfg.backbone, cfg.margin, pt);
  std::tie(w.gallery_idx, w.probe_idx) = gallery_probe_split(w.data.test.labels);
  w.gallery = embed_all(select_images(w.data.test, w.gallery_idx), w.base.backbone);
  w.gallery_labels = select_labels(w.data.test.labels, w.gallery_idx);
  w.probe_labels = select_labels(w.data.test.labels, w.probe_idx);
  return w;
}

/// Degraded and restored copies of both splits at one level.
struct DegradedSets {
  LabeledImages train_lq, train_restored, test_lq, test_restored;
  std::vector<PsfKernel> train_psfs, test_psfs;
};

inline DegradedSets make_degraded(const Workbench& w, const ExperimentConfig& cfg, double level, std::uint64_t seed) {
  const auto p = cfg.turbulence_params(level);
  DegradedSets d;
  d.train_lq = degrade_set(w.data.train, p, seed, 0, &d.train_psfs);
  d.train_restored = restore_set(d.train_lq, w.data.train, d.train_psfs, cfg.restore, seed, 0);
  d.test_lq = degrade_set(w.data.test, p, seed, 1, &d.test_psfs);
  d.test_restored = restore_set(d.test_lq, w.data.test, d.test_psfs, cfg.restore, seed, 1);
  return d;
}

/// Same degraded images, restored with a different restorer.
inline DegradedSets restore_again(const Workbench& w, const DegradedSets& d, const RestoreConfig& rc, std::uint64_t seed) {
  DegradedSets out = d;
  out.train_restored = restore_set(d.train_lq, w.data.train, d.train_psfs, rc, seed, 0);
  out.test_restored = restore_set(d.test_lq, w.data.test, d.test_psfs, rc, seed, 1);
  return out;
}

/// Test split only (for strategies that need no training).
inline DegradedSets make_degraded_test(const Workbench& w, const ExperimentConfig& cfg, double level, std::uint64_t seed) {
  const auto p = cfg.turbulence_params(level);
  DegradedSets d;
  d.test_lq = degrade_set(w.data.test, p, seed, 1, &d.test_psfs);
  d.test_restored = restore_set(d.test_lq, w.data.test, d.test_psfs, cfg.restore, seed, 1);
  return d;
}

/// Mean squared difference of two aligned image sets.
inline double mean_mse(const LabeledImages& a, const LabeledImages& b) {
  if (a.pixels.size() != b.pixels.size() || a.pixels.empty()) throw ContractError("mean_mse: sets differ in size");
  double s = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    s += d * d;
  }
  return s / static_cast<double>(a.pixels.size());
}

/// Probe embeddings of the test split for a strategy that needs no training.
inline std::vector<std::vector<float>> untrained_probes(Strategy s, const Workbench& w, const DegradedSets& d) {
  if (s == Strategy::baseline_lq) return embed_all(select_images(d.test_lq, w.probe_idx), w.base.backbone);
  if (s == Strategy::eval_restored) return embed_all(select_images(d.test_restored, w.probe_idx), w.base.backbone);
  throw ContractError("untrained_probes: " + to_string(s) + " requires training");
}

struct StrategyResult {
  Strategy strategy = Strategy::baseline_lq;
  EvalOutcome outcome;
  TrainHistory history;
  std::size_t optimizer_steps = 0;
};

/// Trains (if needed) and evaluates one strategy on prepared data.
inline StrategyResult run_strategy(Strategy s, const Workbench& w, const DegradedSets& d, const ExperimentConfig& cfg,
                                   std::uint64_t seed, const FusionConfig* fusion_override = nullptr) {
  StrategyResult r;
  r.strategy = s;
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  tc.strategy = s;
  const auto probe_lq = select_images(d.test_lq, w.probe_idx);
  const auto probe_restored = select_images(d.test_restored, w.probe_idx);
  std::vector<std::vector<float>> probes;
  switch (s) {
    case Strategy::baseline_lq:
    case Strategy::eval_restored:
      probes = untrained_probes(s, w, d);
      break;
    case Strategy::finetune_restored: {
      auto m = train_finetune<float>(d.train_restored, w.base.backbone, w.base.head, cfg.margin, tc);
      probes = embed_all(probe_restored, m.backbone);
      r.history = m.history;
      break;
    }
    case Strategy::adapter_joint: {
      const FusionConfig& fc = fusion_override ? *fusion_override : cfg.fusion;
      auto m = train_adapter<float>(d.train_lq, d.train_restored, w.base.backbone, w.base.head, fc, cfg.margin, tc);
      probes = framework_embed_all(probe_lq, probe_restored, w.base.backbone, m.hq, m.fusion, fc);
      r.history = m.history;
      break;
    }
  }
  r.optimizer_steps = r.history.loss.size();
  r.outcome = evaluate_probes(w.gallery, w.gallery_labels, probes, w.probe_labels, cfg.eval, seed);
  return r;
}

}  // namespace fadapt
