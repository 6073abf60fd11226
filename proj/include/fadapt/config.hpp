#pragma once

// Run configuration: one JSON document with sections, validated against a
// fixed schema before any work starts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fadapt/experiment.hpp"

namespace fadapt {

struct RestoreSweepEntry {
  RestoreMode mode = RestoreMode::oracle_blend;
  double fidelity_w = 0.5;
};

struct AblationConfig {
  std::vector<Strategy> strategies{Strategy::baseline_lq, Strategy::eval_restored, Strategy::finetune_restored,
                                   Strategy::adapter_joint};
  std::vector<bool> residual{true, false};
  std::vector<std::size_t> cascade{1, 3, 5};
  std::vector<AttentionOrder> attention_order{AttentionOrder::cross_first, AttentionOrder::self_first};
  std::vector<RoleVariant> role_variants{RoleVariant::a, RoleVariant::b, RoleVariant::c, RoleVariant::d};
  std::vector<RestoreSweepEntry> restorers{{RestoreMode::oracle_blend, 0.3}, {RestoreMode::oracle_blend, 0.7},
                                           {RestoreMode::wiener, 0.5}};
  std::vector<double> levels{10000, 20000, 30000, 40000};
  std::vector<std::uint64_t> seeds{1};
  bool gradcheck = true;
};

struct RunConfig {
  ExperimentConfig exp;
  AblationConfig ablations;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  bool write_scores = false;

  RunConfig() {
    exp.backbone.embedding_dim = 64;
    exp.fusion.d_model = 64;
    exp.fusion.n_heads = 8;
    exp.fusion.ffn_hidden = 256;
    exp.margin.s = 16;
    exp.restore.artifact_sigma = 0.6;
    exp.restore.artifact_shared = 1.0;
    exp.train.lr_base = 0.05;
    exp.train.epochs = 10;
  }
};

// ---------------------------------------------------------------------------
// Schema

namespace detail {

struct FieldError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class T>
T as(const json& v, const char* what);

template <>
inline bool as<bool>(const json& v, const char*) {
  if (!v.is_boolean()) throw FieldError("expected a boolean");
  return v.get<bool>();
}
template <>
inline double as<double>(const json& v, const char*) {
  if (!v.is_number()) throw FieldError("expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw FieldError("expected a finite number");
  return d;
}
template <>
inline std::size_t as<std::size_t>(const json& v, const char*) {
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() < 0) throw FieldError("expected a nonnegative integer");
    return static_cast<std::size_t>(v.get<std::int64_t>());
  }
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d >= 0 && d == std::floor(d) && d < 1e15) return static_cast<std::size_t>(d);
  }
  throw FieldError("expected a nonnegative integer");
}
template <>
inline std::string as<std::string>(const json& v, const char*) {
  if (!v.is_string()) throw FieldError("expected a string");
  return v.get<std::string>();
}

template <class T>
std::vector<T> as_list(const json& v) {
  if (!v.is_array()) throw FieldError("expected an array");
  std::vector<T> out;
  for (auto& e : v) out.push_back(as<T>(e, ""));
  return out;
}

using Setter = std::function<void(RunConfig&, const json&)>;
using Getter = std::function<json(const RunConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

template <class T, class Ref>
Field scalar(Ref ref) {
  return {[ref](RunConfig& c, const json& v) { ref(c) = as<T>(v, ""); }, [ref](const RunConfig& c) {
            return json(ref(const_cast<RunConfig&>(c)));
          }};
}

template <class T, class Ref>
Field list(Ref ref) {
  return {[ref](RunConfig& c, const json& v) { ref(c) = as_list<T>(v); },
          [ref](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c))); }};
}

template <class E, class Ref, class Parse, class Show>
Field enum_list(Ref ref, Parse parse, Show show) {
  return {[=](RunConfig& c, const json& v) {
            std::vector<E> out;
            for (auto& s : as_list<std::string>(v)) out.push_back(parse(s));
            ref(c) = out;
          },
          [=](const RunConfig& c) {
            json a = json::array();
            for (auto& e : ref(const_cast<RunConfig&>(c))) a.push_back(show(e));
            return a;
          }};
}

#define FADAPT_REF(expr) [](RunConfig& c) -> auto& { return c.expr; }

inline const std::map<std::string, std::map<std::string, Field>>& schema() {
  static const auto s = [] {
    std::map<std::string, std::map<std::string, Field>> m;
    auto& ds = m["dataset"];
    ds["train_identities"] = scalar<std::size_t>(FADAPT_REF(exp.dataset.train_identities));
    ds["train_per_identity"] = scalar<std::size_t>(FADAPT_REF(exp.dataset.train_per_identity));
    ds["test_identities"] = scalar<std::size_t>(FADAPT_REF(exp.dataset.test_identities));
    ds["test_per_identity"] = scalar<std::size_t>(FADAPT_REF(exp.dataset.test_per_identity));
    ds["image_size"] = scalar<std::size_t>(FADAPT_REF(exp.dataset.generator.image_size));
    ds["latent_dim"] = scalar<std::size_t>(FADAPT_REF(exp.dataset.generator.latent_dim));
    ds["band_lo"] = scalar<double>(FADAPT_REF(exp.dataset.generator.band_lo));
    ds["band_hi"] = scalar<double>(FADAPT_REF(exp.dataset.generator.band_hi));
    ds["identity_contrast"] = scalar<double>(FADAPT_REF(exp.dataset.generator.identity_contrast));
    ds["latent_jitter"] = scalar<double>(FADAPT_REF(exp.dataset.generator.latent_jitter));
    ds["max_shift"] = scalar<double>(FADAPT_REF(exp.dataset.generator.max_shift));
    ds["illumination"] = scalar<double>(FADAPT_REF(exp.dataset.generator.illumination));
    ds["pixel_noise"] = scalar<double>(FADAPT_REF(exp.dataset.generator.pixel_noise));

    auto& tb = m["turbulence"];
    tb["level"] = scalar<double>(FADAPT_REF(exp.level));
    auto opt = [](auto ref, double dflt) {
      return Field{[ref](RunConfig& c, const json& v) { ref(c) = as<double>(v, ""); },
                   [ref, dflt](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c)).value_or(dflt)); }};
    };
    auto opt_n = [](auto ref, std::size_t dflt) {
      return Field{[ref](RunConfig& c, const json& v) { ref(c) = as<std::size_t>(v, ""); },
                   [ref, dflt](const RunConfig& c) { return json(ref(const_cast<RunConfig&>(c)).value_or(dflt)); }};
    };
    const TurbulenceParams td;
    tb["aperture_diameter"] = opt(FADAPT_REF(exp.turbulence.aperture_diameter), td.aperture_diameter);
    tb["wavelength"] = opt(FADAPT_REF(exp.turbulence.wavelength), td.wavelength);
    tb["cn2"] = opt(FADAPT_REF(exp.turbulence.cn2), td.cn2);
    tb["outer_scale"] = opt(FADAPT_REF(exp.turbulence.outer_scale), td.outer_scale);
    tb["pixels_per_lambda_d"] = opt(FADAPT_REF(exp.turbulence.pixels_per_lambda_d), td.pixels_per_lambda_d);
    tb["n_zernike"] = opt_n(FADAPT_REF(exp.turbulence.n_zernike), td.n_zernike);
    tb["psf_size"] = opt_n(FADAPT_REF(exp.turbulence.psf_size), td.psf_size);
    tb["pupil_grid"] = opt_n(FADAPT_REF(exp.turbulence.pupil_grid), td.pupil_grid);

    auto& rs = m["restore"];
    rs["mode"] = {[](RunConfig& c, const json& v) { c.exp.restore.mode = parse_restore_mode(as<std::string>(v, "")); },
                  [](const RunConfig& c) { return json(to_string(c.exp.restore.mode)); }};
    rs["fidelity_w"] = scalar<double>(FADAPT_REF(exp.restore.fidelity_w));
    rs["artifact_sigma"] = scalar<double>(FADAPT_REF(exp.restore.artifact_sigma));
    rs["artifact_shared"] = scalar<double>(FADAPT_REF(exp.restore.artifact_shared));
    rs["artifact_band_lo"] = scalar<double>(FADAPT_REF(exp.restore.artifact_band_lo));
    rs["artifact_band_hi"] = scalar<double>(FADAPT_REF(exp.restore.artifact_band_hi));
    rs["wiener_nsr"] = scalar<double>(FADAPT_REF(exp.restore.wiener_nsr));

    auto& bb = m["backbone"];
    bb["channels"] = list<std::size_t>(FADAPT_REF(exp.backbone.channels));
    bb["kernel"] = scalar<std::size_t>(FADAPT_REF(exp.backbone.kernel));
    bb["embedding_dim"] = scalar<std::size_t>(FADAPT_REF(exp.backbone.embedding_dim));
    bb["pretrain_epochs"] = scalar<std::size_t>(FADAPT_REF(exp.pretrain.epochs));
    bb["pretrain_batch_size"] = scalar<std::size_t>(FADAPT_REF(exp.pretrain.batch_size));
    bb["pretrain_lr"] = scalar<double>(FADAPT_REF(exp.pretrain.lr_base));
    bb["pretrain_warmup_steps"] = scalar<std::size_t>(FADAPT_REF(exp.pretrain.warmup_steps));

    auto& fu = m["fusion"];
    fu["d_model"] = scalar<std::size_t>(FADAPT_REF(exp.fusion.d_model));
    fu["n_heads"] = scalar<std::size_t>(FADAPT_REF(exp.fusion.n_heads));
    fu["ffn_hidden"] = scalar<std::size_t>(FADAPT_REF(exp.fusion.ffn_hidden));
    fu["attention_order"] = {
        [](RunConfig& c, const json& v) { c.exp.fusion.attention_order = parse_attention_order(as<std::string>(v, "")); },
        [](const RunConfig& c) { return json(to_string(c.exp.fusion.attention_order)); }};
    fu["role_variant"] = {
        [](RunConfig& c, const json& v) { c.exp.fusion.role_variant = parse_role_variant(as<std::string>(v, "")); },
        [](const RunConfig& c) { return json(to_string(c.exp.fusion.role_variant)); }};
    fu["cascade_depth"] = scalar<std::size_t>(FADAPT_REF(exp.fusion.cascade_depth));
    fu["use_residual"] = scalar<bool>(FADAPT_REF(exp.fusion.use_residual));
    fu["block_norm"] = scalar<bool>(FADAPT_REF(exp.fusion.block_norm));
    fu["normalize_inputs"] = scalar<bool>(FADAPT_REF(exp.fusion.normalize_inputs));
    fu["zero_init_output"] = scalar<bool>(FADAPT_REF(exp.fusion.zero_init_output));
    fu["dropout"] = {[](RunConfig&, const json& v) {
                       if (as<double>(v, "") != 0.0) throw FieldError("only dropout 0.0 is supported");
                     },
                     [](const RunConfig&) { return json(0.0); }};

    auto& lo = m["loss"];
    lo["m1"] = scalar<double>(FADAPT_REF(exp.margin.m1));
    lo["m2"] = scalar<double>(FADAPT_REF(exp.margin.m2));
    lo["m3"] = scalar<double>(FADAPT_REF(exp.margin.m3));
    lo["s"] = scalar<double>(FADAPT_REF(exp.margin.s));

    auto& tr = m["train"];
    tr["batch_size"] = scalar<std::size_t>(FADAPT_REF(exp.train.batch_size));
    tr["epochs"] = scalar<std::size_t>(FADAPT_REF(exp.train.epochs));
    tr["lr_base"] = scalar<double>(FADAPT_REF(exp.train.lr_base));
    tr["momentum"] = scalar<double>(FADAPT_REF(exp.train.momentum));
    tr["weight_decay"] = scalar<double>(FADAPT_REF(exp.train.weight_decay));
    tr["warmup_steps"] = scalar<std::size_t>(FADAPT_REF(exp.train.warmup_steps));
    tr["poly_power"] = scalar<double>(FADAPT_REF(exp.train.poly_power));
    tr["strategy"] = {[](RunConfig& c, const json& v) { c.exp.train.strategy = parse_strategy(as<std::string>(v, "")); },
                      [](const RunConfig& c) { return json(to_string(c.exp.train.strategy)); }};
    tr["head_from_pretrained"] = scalar<bool>(FADAPT_REF(exp.train.head_from_pretrained));

    auto& ev = m["eval"];
    ev["n_folds"] = scalar<std::size_t>(FADAPT_REF(exp.eval.n_folds));
    ev["n_genuine"] = scalar<std::size_t>(FADAPT_REF(exp.eval.n_genuine));
    ev["n_impostor"] = scalar<std::size_t>(FADAPT_REF(exp.eval.n_impostor));
    ev["far_targets"] = list<double>(FADAPT_REF(exp.eval.far_targets));
    ev["rank_k"] = list<std::size_t>(FADAPT_REF(exp.eval.rank_k));
    ev["write_scores"] = scalar<bool>(FADAPT_REF(write_scores));

    auto& ab = m["ablations"];
    ab["strategies"] = enum_list<Strategy>(FADAPT_REF(ablations.strategies), parse_strategy,
                                           [](Strategy s) { return to_string(s); });
    ab["residual"] = list<bool>(FADAPT_REF(ablations.residual));
    ab["cascade"] = list<std::size_t>(FADAPT_REF(ablations.cascade));
    ab["attention_order"] = enum_list<AttentionOrder>(FADAPT_REF(ablations.attention_order), parse_attention_order,
                                                      [](AttentionOrder o) { return to_string(o); });
    ab["role_variants"] = enum_list<RoleVariant>(FADAPT_REF(ablations.role_variants), parse_role_variant,
                                                 [](RoleVariant v) { return to_string(v); });
    ab["restorers"] = {[](RunConfig& c, const json& v) {
                         if (!v.is_array()) throw FieldError("expected an array of {mode, fidelity_w}");
                         c.ablations.restorers.clear();
                         for (auto& e : v) {
                           if (!e.is_object()) throw FieldError("expected {\"mode\": ..., \"fidelity_w\": ...}");
                           RestoreSweepEntry r;
                           for (auto it = e.begin(); it != e.end(); ++it) {
                             if (it.key() == "mode")
                               r.mode = parse_restore_mode(as<std::string>(it.value(), ""));
                             else if (it.key() == "fidelity_w")
                               r.fidelity_w = as<double>(it.value(), "");
                             else
                               throw FieldError("unknown restorer key '" + it.key() + "'");
                           }
                           c.ablations.restorers.push_back(r);
                         }
                       },
                       [](const RunConfig& c) {
                         json a = json::array();
                         for (auto& r : c.ablations.restorers)
                           a.push_back({{"mode", to_string(r.mode)}, {"fidelity_w", r.fidelity_w}});
                         return a;
                       }};
    ab["levels"] = list<double>(FADAPT_REF(ablations.levels));
    ab["seeds"] = list<std::uint64_t>(FADAPT_REF(ablations.seeds));
    ab["gradcheck"] = scalar<bool>(FADAPT_REF(ablations.gradcheck));
    return m;
  }();
  return s;
}

#undef FADAPT_REF

/// 1-based line of the first `"key"` after the line where `"section"` appears.
inline std::size_t locate(const std::string& text, const std::string& section, const std::string& key) {
  std::size_t from = 0;
  if (!section.empty()) {
    const auto s = text.find("\"" + section + "\"");
    if (s != std::string::npos) from = s;
  }
  auto k = text.find("\"" + key + "\"", from);
  if (k == std::string::npos) k = from;
  return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(k), '\n')) + 1;
}

}  // namespace detail

/// Cross-field checks run after all values are in place.
inline void validate(const RunConfig& c) {
  const auto& e = c.exp;
  e.dataset.validate();
  e.restore.validate();
  e.backbone.validate();
  e.fusion.validate();
  e.margin.validate();
  e.pretrain.validate();
  e.train.validate();
  e.eval.validate();
  if (e.backbone.image_size != e.dataset.generator.image_size)
    throw ConfigError("backbone image size must equal dataset.image_size");
  if (e.fusion.d_model != e.backbone.embedding_dim)
    throw ConfigError("fusion.d_model must equal backbone.embedding_dim");
  init_params(e.level, e.dataset.generator.image_size, e.turbulence);
  for (double l : c.ablations.levels) init_params(l, e.dataset.generator.image_size, e.turbulence);
  for (auto d : c.ablations.cascade)
    if (d == 0) throw ConfigError("ablations.cascade entries must be >= 1");
  for (auto& r : c.ablations.restorers)
    if (!(r.fidelity_w >= 0 && r.fidelity_w <= 1)) throw ConfigError("ablations.restorers fidelity_w must be in [0, 1]");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

/// Sets one `section.key` (or top-level `seed` / `output_dir`) from JSON.
inline void apply_setting(RunConfig& c, const std::string& section, const std::string& key, const json& v) {
  if (section.empty()) {
    if (key == "seed")
      c.seed = detail::as<std::uint64_t>(v, "");
    else if (key == "output_dir")
      c.output_dir = detail::as<std::string>(v, "");
    else
      throw detail::FieldError("unknown top-level key '" + key + "'");
    return;
  }
  const auto& s = detail::schema();
  auto sec = s.find(section);
  if (sec == s.end()) throw detail::FieldError("unknown section '" + section + "'");
  auto f = sec->second.find(key);
  if (f == sec->second.end()) throw detail::FieldError("unknown key '" + key + "' in section '" + section + "'");
  f->second.set(c, v);
}

/// Parses config text. Errors carry `<source>:<line>: ...` diagnostics.
inline RunConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto pos = std::min<std::size_t>(e.byte, text.size());
    const auto line = static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n')) + 1;
    throw ConfigError(source + ":" + std::to_string(line) + ": JSON syntax error: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(source + ":1: top level must be an object");
  RunConfig c;
  std::vector<std::string> errors;
  auto fail = [&](const std::string& sec, const std::string& key, const std::string& msg) {
    errors.push_back(source + ":" + std::to_string(detail::locate(text, sec, key)) + ": " +
                     (sec.empty() ? key : sec + "." + key) + ": " + msg);
  };
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& top = it.key();
    if (top == "seed" || top == "output_dir") {
      try {
        apply_setting(c, "", top, it.value());
      } catch (const std::exception& e) {
        fail("", top, e.what());
      }
      continue;
    }
    const auto& s = detail::schema();
    if (!s.count(top)) {
      fail("", top, "unknown key");
      continue;
    }
    if (!it.value().is_object()) {
      fail("", top, "section must be an object");
      continue;
    }
    for (auto kv = it.value().begin(); kv != it.value().end(); ++kv) {
      try {
        apply_setting(c, top, kv.key(), kv.value());
      } catch (const std::exception& e) {
        fail(top, kv.key(), e.what());
      }
    }
  }
  c.exp.backbone.image_size = c.exp.dataset.generator.image_size;
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  try {
    validate(c);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  } catch (const ContractError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

/// Applies `section.key=value` overrides; the value is parsed as JSON when
/// possible, otherwise taken as a string. `out` is unchanged on error.
inline void apply_overrides(RunConfig& out, const std::vector<std::string>& sets) {
  RunConfig c = out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set '" + s + "': expected section.key=value");
    const std::string path = s.substr(0, eq), raw = s.substr(eq + 1);
    const auto dot = path.find('.');
    const std::string section = dot == std::string::npos ? "" : path.substr(0, dot);
    const std::string key = dot == std::string::npos ? path : path.substr(dot + 1);
    json v;
    try {
      v = json::parse(raw);
    } catch (const json::parse_error&) {
      v = raw;
    }
    try {
      apply_setting(c, section, key, v);
    } catch (const std::exception& e) {
      throw ConfigError("--set " + path + ": " + e.what());
    }
  }
  c.exp.backbone.image_size = c.exp.dataset.generator.image_size;
  try {
    validate(c);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  out = std::move(c);
}

/// The fully resolved config (defaults included) as canonical JSON.
inline json to_json(const RunConfig& c) {
  json j = json::object();
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  for (const auto& [sec, fields] : detail::schema())
    for (const auto& [key, f] : fields) j[sec][key] = f.get(c);
  return j;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the resolved config, excluding output_dir (which does not affect results).
inline std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(j.dump());
  return os.str();
}

}  // namespace fadapt
