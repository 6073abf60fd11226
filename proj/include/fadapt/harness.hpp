#pragma once

// Command orchestration. Staged commands (synth, degrade, restore, pretrain,
// train, eval) exchange artifacts through the output directory:
//
//   out/config.json                  resolved config of the last command
//   out/data/{clean,lq,restored}/    image sets (manifest.json + images/*.fat)
//   out/data/lq/psfs_{train,test}.fat
//   out/checkpoints/{backbone,adapter,finetune}/
//   out/history/<name>.jsonl         step, loss, lr
//   out/reports/<command>.json       {command, version, config_hash, seed, results}
//
// ablate and gradcheck are self-contained.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fadapt/config.hpp"
#include "fadapt/container.hpp"
#include "fadapt/pipeline_check.hpp"

#ifndef FADAPT_VERSION
#define FADAPT_VERSION "0.1.0"
#endif

namespace fadapt {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = FADAPT_VERSION;

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"synth", "degrade", "restore", "pretrain", "train", "eval", "ablate", "gradcheck"};
  return c;
}

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int environment = 1;
inline constexpr int config = 2;
inline constexpr int dependency = 3;
inline constexpr int numerical = 4;
}  // namespace exit_code

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return exit_code::config;
  if (dynamic_cast<const DependencyError*>(&e)) return exit_code::dependency;
  if (dynamic_cast<const NumericalError*>(&e)) return exit_code::numerical;
  return exit_code::environment;
}

// ---------------------------------------------------------------------------
// Config resolution

/// Config file + overrides + FADAPT_SEED + optional output directory.
inline RunConfig resolve_config(const fs::path& path, const std::vector<std::string>& sets = {},
                                const std::optional<std::string>& out = std::nullopt, const char* env_seed = nullptr) {
  if (!fs::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
  RunConfig c = parse_config(read_file(path), path.string());
  apply_overrides(c, sets);
  if (env_seed && *env_seed) {
    const std::string s = env_seed;
    if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 19)
      throw ConfigError("FADAPT_SEED must be a nonnegative integer, got '" + s + "'");
    c.seed = std::stoull(s);
  }
  if (out) {
    if (out->empty()) throw ConfigError("--out must not be empty");
    c.output_dir = *out;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Reports

/// Rate in [0, 1] as a percentage with three decimals (0.99133 -> 99.133).
inline double percent3(double rate) { return std::round(rate * 1e5) / 1e3; }

inline std::string format3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

/// Key for a FAR target or other small number: shortest round-trip form.
inline std::string number_key(double v) {
  if (v == std::trunc(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
  return json(v).dump();
}

inline json metrics_json(const VerificationReport& r) {
  json j = {{"accuracy", percent3(r.accuracy)}, {"tar_at_far", json::object()}, {"rank_k_hit_rate", json::object()}};
  for (auto [far, tar] : r.tar_at_far) j["tar_at_far"][number_key(far)] = percent3(tar);
  for (auto [k, h] : r.rank_k_hit_rate) j["rank_k_hit_rate"][std::to_string(k)] = percent3(h);
  return j;
}

inline json make_report(const std::string& command, const RunConfig& c, json results) {
  return {{"command", command}, {"version", kVersion}, {"config_hash", config_hash(c)}, {"seed", c.seed}, {"results", std::move(results)}};
}

inline std::string report_text(const json& report) { return report.dump(2) + "\n"; }

struct Layout {
  fs::path root;
  fs::path clean() const { return root / "data" / "clean"; }
  fs::path lq() const { return root / "data" / "lq"; }
  fs::path restored() const { return root / "data" / "restored"; }
  fs::path checkpoint(const std::string& name) const { return root / "checkpoints" / name; }
  fs::path history(const std::string& name) const { return root / "history" / (name + ".jsonl"); }
  fs::path report(const std::string& name) const { return root / "reports" / name; }
};

inline void write_history(const fs::path& path, const TrainHistory& h) {
  std::string text;
  for (std::size_t i = 0; i < h.loss.size(); ++i)
    text += json{{"step", i}, {"loss", h.loss[i]}, {"lr", h.lr[i]}}.dump() + "\n";
  write_file(path, text);
}

inline json history_summary(const TrainHistory& h) {
  const std::size_t epochs = h.steps_per_epoch ? h.loss.size() / h.steps_per_epoch : 0;
  json j = {{"optimizer_steps", h.loss.size()}};
  if (epochs > 0) {
    j["first_epoch_loss"] = h.epoch_mean(0);
    j["last_epoch_loss"] = h.epoch_mean(epochs - 1);
  }
  return j;
}

inline json turbulence_json(const TurbulenceParams& p) {
  return {{"level", p.intensity_meters},       {"aperture_diameter", p.aperture_diameter},
          {"wavelength", p.wavelength},        {"cn2", p.cn2},
          {"fried_r0", p.fried_r0},            {"d_over_r0", p.d_over_r0()},
          {"tilt_rms_pixels", tilt_rms_pixels(p)}, {"n_zernike", p.n_zernike},
          {"psf_size", p.psf_size}};
}

inline json fusion_variant_json(const FusionConfig& f) {
  return {{"use_residual", f.use_residual},
          {"cascade_depth", f.cascade_depth},
          {"attention_order", to_string(f.attention_order)},
          {"role_variant", to_string(f.role_variant)}};
}

// ---------------------------------------------------------------------------
// Artifact helpers

inline Dataset with_images(const Dataset& like, LabeledImages train, LabeledImages test) {
  Dataset d;
  d.train = std::move(train);
  d.test = std::move(test);
  d.records = like.records;
  return d;
}

inline void save_psfs(const fs::path& path, const std::vector<PsfKernel>& psfs) {
  const std::size_t k = psfs.empty() ? 0 : psfs.front().size;
  std::vector<double> v;
  v.reserve(psfs.size() * k * k);
  for (auto& p : psfs) v.insert(v.end(), p.k.begin(), p.k.end());
  save_tensor(path, Tensor<double>({psfs.size(), k, k}, std::move(v)));
}

inline std::vector<PsfKernel> load_psfs(const fs::path& path) {
  if (!fs::exists(path)) throw DependencyError("missing PSF file '" + path.string() + "'; run `degrade` first", "degrade");
  auto t = load_tensor<double>(path);
  if (t.rank() != 3) throw EnvironmentError("PSF file '" + path.string() + "' has the wrong rank");
  std::vector<PsfKernel> out(t.dim(0));
  const std::size_t k = t.dim(1), n = k * k;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].size = k;
    out[i].k.assign(t.vec().begin() + static_cast<std::ptrdiff_t>(i * n), t.vec().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
  }
  return out;
}

template <class T>
TensorBundle<T> prefixed(const TensorBundle<T>& b, const std::string& prefix) {
  TensorBundle<T> out;
  for (auto& [k, v] : b) out.emplace(prefix + k, v);
  return out;
}

template <class T>
TensorBundle<T> strip_prefix(const TensorBundle<T>& b, const std::string& prefix) {
  TensorBundle<T> out;
  for (auto& [k, v] : b)
    if (k.rfind(prefix, 0) == 0) out.emplace(k.substr(prefix.size()), v);
  return out;
}

inline TensorBundle<float> load_checkpoint(const fs::path& dir, const std::string& producer) {
  if (!fs::exists(dir / "index.json"))
    throw DependencyError("missing checkpoint '" + dir.string() + "'; run `" + producer + "` first", producer);
  return load_bundle<float>(dir);
}

inline ClassifierHead<float> head_from(const TensorBundle<float>& b) {
  auto it = b.find("head.w");
  if (it == b.end()) throw EnvironmentError("checkpoint has no classifier head");
  return {it->second.clone()};
}

struct Pretrained {
  BackboneParams<float> backbone;
  ClassifierHead<float> head;
};

inline Pretrained load_pretrained(const Layout& L, const RunConfig& c) {
  auto b = load_checkpoint(L.checkpoint("backbone"), "pretrain");
  return {backbone_from_bundle(strip_prefix(b, "backbone."), c.exp.backbone, false), head_from(b)};
}

/// Clean data plus the pretrained backbone, as in make_workbench but from disk.
inline Workbench load_workbench(const Layout& L, const RunConfig& c) {
  Workbench w;
  w.data = read_image_set(L.clean(), "synth");
  auto pre = load_pretrained(L, c);
  w.base.backbone = std::move(pre.backbone);
  w.base.head = std::move(pre.head);
  std::tie(w.gallery_idx, w.probe_idx) = gallery_probe_split(w.data.test.labels);
  w.gallery = embed_all(select_images(w.data.test, w.gallery_idx), w.base.backbone);
  w.gallery_labels = select_labels(w.data.test.labels, w.gallery_idx);
  w.probe_labels = select_labels(w.data.test.labels, w.probe_idx);
  return w;
}

inline DegradedSets load_degraded(const Layout& L) {
  auto lq = read_image_set(L.lq(), "degrade");
  auto rs = read_image_set(L.restored(), "restore");
  DegradedSets d;
  d.train_lq = std::move(lq.train);
  d.test_lq = std::move(lq.test);
  d.train_restored = std::move(rs.train);
  d.test_restored = std::move(rs.test);
  return d;
}

// ---------------------------------------------------------------------------
// Staged commands. Each returns the `results` object of its report.

inline json cmd_synth(const RunConfig& c, const Layout& L) {
  auto ds = synth_dataset(c.exp.dataset, c.seed);
  write_image_set(L.clean(), ds, config_hash(c), {{"command", "synth"}, {"seed", c.seed}});
  return {{"train_images", ds.train.size()},
          {"test_images", ds.test.size()},
          {"train_identities", c.exp.dataset.train_identities},
          {"test_identities", c.exp.dataset.test_identities},
          {"image_size", ds.train.image_size},
          {"generator_version", kGeneratorVersion}};
}

inline json cmd_degrade(const RunConfig& c, const Layout& L) {
  auto clean = read_image_set(L.clean(), "synth");
  const auto p = c.exp.turbulence_params(c.exp.level);
  std::vector<PsfKernel> tr_psf, te_psf;
  auto tr = degrade_set(clean.train, p, c.seed, 0, &tr_psf);
  auto te = degrade_set(clean.test, p, c.seed, 1, &te_psf);
  json res = turbulence_json(p);
  res["mse_train"] = mean_mse(tr, clean.train);
  res["mse_test"] = mean_mse(te, clean.test);
  write_image_set(L.lq(), with_images(clean, std::move(tr), std::move(te)), config_hash(c),
                  {{"command", "degrade"}, {"seed", c.seed}, {"turbulence", turbulence_json(p)}});
  save_psfs(L.lq() / "psfs_train.fat", tr_psf);
  save_psfs(L.lq() / "psfs_test.fat", te_psf);
  return res;
}

inline json cmd_restore(const RunConfig& c, const Layout& L) {
  auto clean = read_image_set(L.clean(), "synth");
  auto lq = read_image_set(L.lq(), "degrade");
  if (lq.train.size() != clean.train.size() || lq.test.size() != clean.test.size())
    throw DependencyError("degraded set does not match the clean set; rerun `degrade`", "degrade");
  const auto& rc = c.exp.restore;
  auto tr = restore_set(lq.train, clean.train, load_psfs(L.lq() / "psfs_train.fat"), rc, c.seed, 0);
  auto te = restore_set(lq.test, clean.test, load_psfs(L.lq() / "psfs_test.fat"), rc, c.seed, 1);
  json res = {{"mode", to_string(rc.mode)},
              {"fidelity_w", rc.fidelity_w},
              {"artifact_sigma", rc.artifact_sigma},
              {"mse_train", mean_mse(tr, clean.train)},
              {"mse_test", mean_mse(te, clean.test)},
              {"mse_lq_test", mean_mse(lq.test, clean.test)}};
  write_image_set(L.restored(), with_images(clean, std::move(tr), std::move(te)), config_hash(c),
                  {{"command", "restore"}, {"seed", c.seed}, {"mode", to_string(rc.mode)}});
  return res;
}

inline json cmd_pretrain(const RunConfig& c, const Layout& L) {
  auto clean = read_image_set(L.clean(), "synth");
  TrainConfig pt = c.exp.pretrain;
  pt.seed = c.seed;
  auto r = pretrain<float>(clean.train, c.exp.backbone, c.exp.margin, pt);
  auto b = prefixed(backbone_bundle(r.backbone), "backbone.");
  b.emplace("head.w", r.head.class_weights);
  save_bundle(L.checkpoint("backbone"), b, {{"config_hash", config_hash(c)}, {"seed", c.seed}});
  write_history(L.history("pretrain"), r.history);
  json res = history_summary(r.history);
  res["initial_loss"] = r.initial_loss;
  res["final_loss"] = r.final_loss;
  return res;
}

inline std::string strategy_checkpoint(Strategy s) { return s == Strategy::adapter_joint ? "adapter" : "finetune"; }

inline bool needs_training(Strategy s) { return s == Strategy::finetune_restored || s == Strategy::adapter_joint; }

inline json cmd_train(const RunConfig& c, const Layout& L) {
  const Strategy s = c.exp.train.strategy;
  json res = {{"strategy", to_string(s)}};
  if (!needs_training(s)) {
    res["optimizer_steps"] = 0;
    return res;
  }
  auto pre = load_pretrained(L, c);
  auto d = load_degraded(L);
  TrainConfig tc = c.exp.train;
  tc.seed = c.seed;
  TensorBundle<float> ckpt;
  TrainHistory h;
  if (s == Strategy::finetune_restored) {
    auto m = train_finetune<float>(d.train_restored, pre.backbone, pre.head, c.exp.margin, tc);
    ckpt = prefixed(backbone_bundle(m.backbone), "backbone.");
    ckpt.emplace("head.w", m.head.class_weights);
    h = std::move(m.history);
  } else {
    auto bytes = [&] {
      std::string s;
      for (auto& [k, t] : backbone_bundle(pre.backbone)) s += encode_tensor(t);
      return s;
    };
    const std::string before = bytes();
    auto m = train_adapter<float>(d.train_lq, d.train_restored, pre.backbone, pre.head, c.exp.fusion, c.exp.margin, tc);
    if (bytes() != before) throw ContractError("train: frozen branch was modified");
    ckpt = prefixed(backbone_bundle(m.hq), "hq.");
    for (auto& [k, v] : fusion_bundle(m.fusion)) ckpt.emplace("fusion." + k, v);
    ckpt.emplace("head.w", m.head.class_weights);
    h = std::move(m.history);
  }
  save_bundle(L.checkpoint(strategy_checkpoint(s)), ckpt,
              {{"config_hash", config_hash(c)}, {"seed", c.seed}, {"strategy", to_string(s)}});
  write_history(L.history(to_string(s)), h);
  res.update(history_summary(h));
  return res;
}

inline void write_scores_csv(const fs::path& path, const EvalOutcome& o) {
  std::string text = "pair_id,score,label\n";
  char buf[96];
  for (std::size_t i = 0; i < o.scores.scores.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%d\n", i, o.scores.scores[i], o.scores.genuine[i] ? 1 : 0);
    text += buf;
  }
  write_file(path, text);
}

inline json cmd_eval(const RunConfig& c, const Layout& L) {
  const Strategy s = c.exp.train.strategy;
  auto w = load_workbench(L, c);
  auto d = load_degraded(L);
  std::vector<std::vector<float>> probes;
  if (!needs_training(s)) {
    probes = untrained_probes(s, w, d);
  } else {
    auto b = load_checkpoint(L.checkpoint(strategy_checkpoint(s)), "train");
    const auto probe_restored = select_images(d.test_restored, w.probe_idx);
    if (s == Strategy::finetune_restored) {
      probes = embed_all(probe_restored, backbone_from_bundle(strip_prefix(b, "backbone."), c.exp.backbone, false));
    } else {
      auto hq = backbone_from_bundle(strip_prefix(b, "hq."), c.exp.backbone, false);
      auto fp = fusion_from_bundle(strip_prefix(b, "fusion."), c.exp.fusion);
      probes = framework_embed_all(select_images(d.test_lq, w.probe_idx), probe_restored, w.base.backbone, hq, fp, c.exp.fusion);
    }
  }
  auto o = evaluate_probes(w.gallery, w.gallery_labels, probes, w.probe_labels, c.exp.eval, c.seed);
  if (c.write_scores) write_scores_csv(L.report("scores_" + to_string(s) + ".csv"), o);
  json res = metrics_json(o.report);
  res["strategy"] = to_string(s);
  res["pairs"] = o.pairs.size();
  return res;
}

// ---------------------------------------------------------------------------
// Gradient check

inline json gradcheck_json(const PipelineCheckResult& r) {
  auto one = [](const GradCheckResult& g, double eps, int stencil, double tol) {
    return json{{"max_rel_error", g.max_rel_error}, {"coords_checked", g.coords_checked},
                {"coords_skipped", g.coords_skipped}, {"eps", eps},
                {"stencil", stencil}, {"tolerance", tol}};
  };
  return {{"f32", one(r.f32, r.eps32, kPipelineStencil32, 1e-3)}, {"f64", one(r.f64, r.eps64, 2, 1e-6)}, {"passed", r.passed()}};
}

inline json cmd_gradcheck(const RunConfig& c, bool& passed) {
  auto r = pipeline_gradcheck_both(c.exp.fusion, c.exp.margin, c.seed);
  passed = r.passed();
  json res = gradcheck_json(r);
  res["fusion"] = fusion_variant_json(c.exp.fusion);
  return res;
}

// ---------------------------------------------------------------------------
// Ablation grid

/// The default fusion structure plus one-factor-at-a-time departures along
/// each configured axis, without duplicates.
inline std::vector<FusionConfig> fusion_variants(const RunConfig& c) {
  const auto& a = c.ablations;
  std::vector<FusionConfig> out;
  if (a.residual.empty() && a.cascade.empty() && a.attention_order.empty() && a.role_variants.empty()) return out;
  std::set<std::string> seen;
  auto add = [&](const FusionConfig& f) {
    if (seen.insert(fusion_variant_json(f).dump()).second) out.push_back(f);
  };
  const FusionConfig base = c.exp.fusion;
  add(base);
  for (bool r : a.residual) {
    auto f = base;
    f.use_residual = r;
    add(f);
  }
  for (auto d : a.cascade) {
    auto f = base;
    f.cascade_depth = d;
    add(f);
  }
  for (auto o : a.attention_order) {
    auto f = base;
    f.attention_order = o;
    add(f);
  }
  for (auto v : a.role_variants) {
    auto f = base;
    f.role_variant = v;
    add(f);
  }
  return out;
}

namespace detail {

/// Rows keyed by their non-metric fields; metrics are averaged over seeds.
class TableBuilder {
 public:
  void add(const std::string& table, json key, const VerificationReport& r, std::uint64_t seed, json extra = json::object()) {
    auto& t = tables_[table];
    const std::string k = key.dump();
    auto it = t.index.find(k);
    if (it == t.index.end()) {
      it = t.index.emplace(k, t.rows.size()).first;
      t.rows.push_back({std::move(key), {}, {}, {}});
    }
    t.rows[it->second].runs.push_back(r);
    t.rows[it->second].seeds.push_back(seed);
    t.rows[it->second].extra.push_back(std::move(extra));
  }

  json finish(const std::vector<std::string>& order) const {
    json out = json::object();
    for (auto& name : order) {
      out[name] = json::array();
      auto t = tables_.find(name);
      if (t == tables_.end()) continue;
      for (auto& row : t->second.rows) out[name].push_back(finish_row(row));
    }
    return out;
  }

 private:
  struct Row {
    json key;
    std::vector<VerificationReport> runs;
    std::vector<std::uint64_t> seeds;
    std::vector<json> extra;
  };
  struct Table {
    std::vector<Row> rows;
    std::map<std::string, std::size_t> index;
  };
  std::map<std::string, Table> tables_;

  static json finish_row(const Row& row) {
    VerificationReport mean;
    const double n = static_cast<double>(row.runs.size());
    for (auto& r : row.runs) {
      mean.accuracy += r.accuracy / n;
      for (auto [f, v] : r.tar_at_far) mean.tar_at_far[f] += v / n;
      for (auto [k, v] : r.rank_k_hit_rate) mean.rank_k_hit_rate[k] += v / n;
    }
    json j = row.key;
    j.update(metrics_json(mean));
    json per = json::array();
    for (std::size_t i = 0; i < row.runs.size(); ++i) {
      json p = {{"seed", row.seeds[i]}, {"accuracy", percent3(row.runs[i].accuracy)}};
      p.update(row.extra[i]);
      per.push_back(p);
    }
    j["per_seed"] = per;
    return j;
  }
};

inline json restorer_json(const RestoreConfig& r) { return {{"mode", to_string(r.mode)}, {"fidelity_w", r.fidelity_w}}; }

}  // namespace detail

inline const std::vector<std::string>& ablation_tables() {
  static const std::vector<std::string> t{"strategies", "fusion_variants", "restorers", "levels"};
  return t;
}

struct AblationOutcome {
  json results;
  bool gradchecks_passed = true;
};

/// Runs the grid; `log` (may be null) receives progress lines.
inline AblationOutcome run_ablation(const RunConfig& c, std::ostream* log = nullptr) {
  const auto& a = c.ablations;
  const ExperimentConfig& e = c.exp;
  auto say = [&](const std::string& s) {
    if (log) *log << "[ablate] " << s << std::endl;
  };
  auto has = [&](Strategy s) { return std::find(a.strategies.begin(), a.strategies.end(), s) != a.strategies.end(); };
  const auto variants = fusion_variants(c);
  const bool any_work = !a.strategies.empty() || !variants.empty() || !a.restorers.empty() || !a.levels.empty();

  AblationOutcome out;
  json checks = json::array();
  if (a.gradcheck)
    for (auto& f : variants) {
      say("gradcheck " + fusion_variant_json(f).dump());
      auto r = pipeline_gradcheck_both(f, e.margin, c.seed);
      json j = fusion_variant_json(f);
      j.update(gradcheck_json(r));
      checks.push_back(j);
      out.gradchecks_passed = out.gradchecks_passed && r.passed();
    }

  detail::TableBuilder tb;
  const json default_restorer = detail::restorer_json(e.restore);
  const json default_fusion = fusion_variant_json(e.fusion);
  for (auto seed : any_work ? a.seeds : std::vector<std::uint64_t>{}) {
    say("seed " + std::to_string(seed) + ": synthesise and pretrain");
    const auto w = make_workbench(e, seed);
    const bool need_train_split = !a.strategies.empty() || !variants.empty() || !a.restorers.empty();
    std::optional<DegradedSets> d;
    if (need_train_split) {
      say("seed " + std::to_string(seed) + ": degrade at " + number_key(e.level));
      d = make_degraded(w, e, e.level, seed);
    }
    std::optional<VerificationReport> default_adapter;
    auto key = [&](const json& restorer, Strategy s, const json& fusion) {
      return json{{"level", e.level}, {"restorer", restorer}, {"strategy", to_string(s)}, {"fusion", fusion}};
    };

    for (auto s : a.strategies) {
      say("strategy " + to_string(s));
      auto r = run_strategy(s, w, *d, e, seed);
      if (s == Strategy::adapter_joint) default_adapter = r.outcome.report;
      tb.add("strategies", key(default_restorer, s, default_fusion), r.outcome.report, seed,
             {{"optimizer_steps", r.optimizer_steps}});
    }
    for (auto& f : variants) {
      const json fj = fusion_variant_json(f);
      VerificationReport rep;
      if (fj == default_fusion && default_adapter) {
        rep = *default_adapter;
      } else {
        say("fusion variant " + fj.dump());
        rep = run_strategy(Strategy::adapter_joint, w, *d, e, seed, &f).outcome.report;
      }
      tb.add("fusion_variants", key(default_restorer, Strategy::adapter_joint, fj), rep, seed);
    }
    for (auto& entry : a.restorers) {
      ExperimentConfig e2 = e;
      e2.restore.mode = entry.mode;
      e2.restore.fidelity_w = entry.fidelity_w;
      const json rj = detail::restorer_json(e2.restore);
      say("restorer " + rj.dump());
      const auto d2 = restore_again(w, *d, e2.restore, seed);
      const double mse = mean_mse(d2.test_restored, w.data.test);
      for (auto s : {Strategy::eval_restored, Strategy::adapter_joint}) {
        if (!has(s)) continue;
        auto r = run_strategy(s, w, d2, e2, seed);
        tb.add("restorers", key(rj, s, default_fusion), r.outcome.report, seed, {{"mse_restored", mse}});
      }
    }
    for (double level : a.levels) {
      say("level " + number_key(level));
      const auto dl = make_degraded_test(w, e, level, seed);
      const double mse = mean_mse(dl.test_lq, w.data.test);
      for (auto s : {Strategy::baseline_lq, Strategy::eval_restored}) {
        auto o = evaluate_probes(w.gallery, w.gallery_labels, untrained_probes(s, w, dl), w.probe_labels, e.eval, seed);
        json k = key(default_restorer, s, default_fusion);
        k["level"] = level;
        tb.add("levels", k, o.report, seed, {{"mse_lq", mse}});
      }
    }
  }
  out.results = {{"tables", tb.finish(ablation_tables())}, {"gradcheck", checks}, {"gradchecks_passed", out.gradchecks_passed}};
  return out;
}

/// One CSV for all tables, one line per row.
inline std::string ablation_csv(const json& results) {
  std::set<std::string> fars, ranks;
  for (auto& name : ablation_tables())
    for (auto& row : results.at("tables").at(name)) {
      for (auto it = row.at("tar_at_far").begin(); it != row.at("tar_at_far").end(); ++it) fars.insert(it.key());
      for (auto it = row.at("rank_k_hit_rate").begin(); it != row.at("rank_k_hit_rate").end(); ++it) ranks.insert(it.key());
    }
  std::string text = "table,level,restorer,fidelity_w,strategy,use_residual,cascade_depth,attention_order,role_variant,n_seeds,accuracy";
  for (auto& f : fars) text += ",tar_at_far_" + f;
  for (auto& k : ranks) text += ",rank" + k;
  text += "\n";
  for (auto& name : ablation_tables())
    for (auto& row : results.at("tables").at(name)) {
      const auto& fu = row.at("fusion");
      std::ostringstream os;
      os << name << ',' << number_key(row.at("level").get<double>()) << ',' << row.at("restorer").at("mode").get<std::string>()
         << ',' << number_key(row.at("restorer").at("fidelity_w").get<double>()) << ',' << row.at("strategy").get<std::string>()
         << ',' << (fu.at("use_residual").get<bool>() ? "true" : "false") << ',' << fu.at("cascade_depth").get<std::size_t>()
         << ',' << fu.at("attention_order").get<std::string>() << ',' << fu.at("role_variant").get<std::string>() << ','
         << row.at("per_seed").size() << ',' << format3(row.at("accuracy").get<double>());
      for (auto& f : fars) os << ',' << (row.at("tar_at_far").contains(f) ? format3(row["tar_at_far"][f].get<double>()) : "");
      for (auto& k : ranks)
        os << ',' << (row.at("rank_k_hit_rate").contains(k) ? format3(row["rank_k_hit_rate"][k].get<double>()) : "");
      text += os.str() + "\n";
    }
  return text;
}

// ---------------------------------------------------------------------------
// Entry point

struct RunOutcome {
  int status = exit_code::ok;
  json report;
};

/// Executes `command` with a resolved config, writes its report and returns it.
inline RunOutcome run_command(const std::string& command, const RunConfig& c, std::ostream* log = nullptr) {
  if (std::find(commands().begin(), commands().end(), command) == commands().end())
    throw ConfigError("unknown command '" + command + "'");
  const Layout L{c.output_dir};
  json results;
  RunOutcome out;
  if (command == "synth") {
    results = cmd_synth(c, L);
  } else if (command == "degrade") {
    results = cmd_degrade(c, L);
  } else if (command == "restore") {
    results = cmd_restore(c, L);
  } else if (command == "pretrain") {
    results = cmd_pretrain(c, L);
  } else if (command == "train") {
    results = cmd_train(c, L);
  } else if (command == "eval") {
    results = cmd_eval(c, L);
  } else if (command == "gradcheck") {
    bool passed = false;
    results = cmd_gradcheck(c, passed);
    if (!passed) out.status = exit_code::numerical;
  } else {
    auto a = run_ablation(c, log);
    results = std::move(a.results);
    if (!a.gradchecks_passed) out.status = exit_code::numerical;
    write_file(L.report("ablate.csv"), ablation_csv(results));
  }
  out.report = make_report(command, c, std::move(results));
  write_file(L.root / "config.json", to_json(c).dump(2) + "\n");
  write_file(L.report(command + ".json"), report_text(out.report));
  return out;
}

}  // namespace fadapt
