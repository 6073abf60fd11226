#pragma once

// Procedural identity images, dataset manifests and verification pairs.

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fadapt/backbone.hpp"
#include "fadapt/container.hpp"
#include "fadapt/restore.hpp"
#include "fadapt/rng.hpp"

namespace fadapt {

inline constexpr const char* kGeneratorVersion = "procedural-1";

struct GeneratorConfig {
  std::size_t image_size = 64;
  std::size_t latent_dim = 24;
  /// Identity detail pass band, cycles per image.
  double band_lo = 4.0;
  double band_hi = 14.0;
  double identity_contrast = 1.2;
  /// Per-sample latent perturbation, relative to the unit latent.
  double latent_jitter = 0.35;
  double max_shift = 1.5;
  double illumination = 0.25;
  double pixel_noise = 0.02;

  void validate() const {
    if (image_size < 8) throw ConfigError("dataset: image_size must be >= 8");
    if (latent_dim == 0) throw ConfigError("dataset: latent_dim must be positive");
    if (!(band_hi > band_lo && band_lo >= 0)) throw ConfigError("dataset: band must satisfy 0 <= band_lo < band_hi");
    if (latent_jitter < 0 || max_shift < 0 || illumination < 0 || pixel_noise < 0)
      throw ConfigError("dataset: jitter magnitudes must be nonnegative");
  }
};

struct IdentitySpec {
  int id = 0;
  std::vector<double> latent;
};

inline IdentitySpec make_identity(int id, std::size_t latent_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {stream::kIdentity, static_cast<std::uint64_t>(id)}));
  IdentitySpec s{id, std::vector<double>(latent_dim)};
  for (auto& v : s.latent) v = rng.normal();
  return s;
}

/// Frozen latent-to-image map shared by every identity of a generator seed.
struct Decoder {
  GeneratorConfig cfg;
  std::vector<std::vector<double>> basis;  // latent_dim fields, unit RMS
  std::vector<double> face;                // shared face-like template

  static Decoder make(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Decoder d;
    d.cfg = cfg;
    const std::size_t n = cfg.image_size;
    for (std::size_t z = 0; z < cfg.latent_dim; ++z)
      d.basis.push_back(band_noise(n, cfg.band_lo, cfg.band_hi, derive_seed(seed, {stream::kDecoder, z})));
    d.face.resize(n * n);
    const double c = (static_cast<double>(n) - 1) / 2;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double u = (static_cast<double>(x) - c) / (0.36 * n), v = (static_cast<double>(y) - c) / (0.45 * n);
        const double r = std::sqrt(u * u + v * v);
        // Soft oval on a dark background, with two darker eye regions and a mouth bar.
        double f = 1.5 / (1 + std::exp((r - 1) * 10)) - 0.8;
        auto blob = [&](double bx, double by, double sx, double sy) {
          const double a = (u - bx) / sx, b = (v - by) / sy;
          return std::exp(-0.5 * (a * a + b * b));
        };
        f -= 0.7 * (blob(-0.4, -0.2, 0.16, 0.09) + blob(0.4, -0.2, 0.16, 0.09)) + 0.5 * blob(0, 0.5, 0.3, 0.06);
        d.face[y * n + x] = f;
      }
    return d;
  }
};

/// One rendering of an identity; jitter_seed selects pose, expression and lighting.
inline std::vector<float> render(const IdentitySpec& id, std::uint64_t jitter_seed, const Decoder& dec) {
  const auto& cfg = dec.cfg;
  if (id.latent.size() != cfg.latent_dim) throw ContractError("render: latent size does not match the decoder");
  const std::size_t n = cfg.image_size;
  Rng rng(derive_seed(jitter_seed, {stream::kRender}));
  std::vector<double> z(id.latent);
  for (auto& v : z) v += cfg.latent_jitter * rng.normal();
  const double inv = cfg.identity_contrast / std::sqrt(static_cast<double>(cfg.latent_dim));
  std::vector<float> pattern(n * n);
  for (std::size_t i = 0; i < n * n; ++i) {
    double v = dec.face[i];
    for (std::size_t k = 0; k < z.size(); ++k) v += inv * z[k] * dec.basis[k][i];
    pattern[i] = static_cast<float>(v);
  }
  TiltField shift{n, std::vector<double>(n * n, rng.uniform(-cfg.max_shift, cfg.max_shift)),
                  std::vector<double>(n * n, rng.uniform(-cfg.max_shift, cfg.max_shift))};
  auto img = apply_tilt(pattern, shift);
  const double gain = 1 + cfg.illumination * rng.uniform(-1, 1);
  const double gx = cfg.illumination * rng.uniform(-1, 1), gy = cfg.illumination * rng.uniform(-1, 1);
  const double c = (static_cast<double>(n) - 1) / 2;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double light = gx * (static_cast<double>(x) - c) / c + gy * (static_cast<double>(y) - c) / c;
      const double v = gain * img[y * n + x] + light + cfg.pixel_noise * rng.normal();
      img[y * n + x] = static_cast<float>(std::clamp(1 / (1 + std::exp(-2.0 * v)), 0.0, 1.0));
    }
  return img;
}

inline std::vector<float> render(const IdentitySpec& id, std::uint64_t jitter_seed, std::size_t image_size,
                                 std::uint64_t generator_seed) {
  GeneratorConfig cfg;
  cfg.image_size = image_size;
  return render(id, jitter_seed, Decoder::make(cfg, generator_seed));
}

struct DatasetConfig {
  GeneratorConfig generator;
  std::size_t train_identities = 64;
  std::size_t train_per_identity = 50;
  std::size_t test_identities = 16;
  std::size_t test_per_identity = 20;

  void validate() const {
    generator.validate();
    if (train_identities + test_identities < 4) throw ContractError("dataset: at least 4 identities are required");
    if (test_identities < 1 || train_identities < 1) throw ContractError("dataset: both splits need identities");
    if (train_per_identity < 2 || test_per_identity < 2) throw ContractError("dataset: at least 2 images per identity");
  }
};

struct ImageRecord {
  std::string path;
  int label = 0;
  std::string split;
  std::uint64_t seed = 0;
};

/// In-memory dataset: train labels are 0..T-1, test labels T..T+S-1.
struct Dataset {
  LabeledImages train, test;
  std::vector<ImageRecord> records;  // train first, then test
};

inline Dataset synth_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto dec = Decoder::make(cfg.generator, seed);
  const std::size_t total = cfg.train_identities + cfg.test_identities;
  std::vector<IdentitySpec> ids;
  for (std::size_t i = 0; i < total; ++i) ids.push_back(make_identity(static_cast<int>(i), cfg.generator.latent_dim, seed));
  for (std::size_t i = 0; i < total; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < ids[i].latent.size(); ++k) d += std::pow(ids[i].latent[k] - ids[j].latent[k], 2);
      if (d == 0) throw ContractError("synth_dataset: duplicate identity latents");
    }
  Dataset ds;
  ds.train.image_size = ds.test.image_size = cfg.generator.image_size;
  for (std::size_t i = 0; i < total; ++i) {
    const bool train = i < cfg.train_identities;
    const std::size_t per = train ? cfg.train_per_identity : cfg.test_per_identity;
    auto& set = train ? ds.train : ds.test;
    for (std::size_t k = 0; k < per; ++k) {
      const std::uint64_t js = derive_seed(seed, {stream::kRender, i, k});
      auto img = render(ids[i], js, dec);
      set.pixels.insert(set.pixels.end(), img.begin(), img.end());
      set.labels.push_back(static_cast<int>(i));
      const std::string split = train ? "train" : "test";
      ds.records.push_back({"images/" + split + "_" + std::to_string(set.labels.size() - 1) + ".fat", static_cast<int>(i), split, js});
    }
  }
  return ds;
}

/// Simple form: a quarter of the identities (at least one) are held out for test.
inline Dataset synth_dataset(std::size_t n_identities, std::size_t per_identity, std::size_t image_size, std::uint64_t seed) {
  if (n_identities < 4) throw ContractError("synth_dataset: n_identities must be >= 4");
  DatasetConfig cfg;
  cfg.generator.image_size = image_size;
  cfg.test_identities = std::max<std::size_t>(1, n_identities / 4);
  cfg.train_identities = n_identities - cfg.test_identities;
  cfg.train_per_identity = cfg.test_per_identity = per_identity;
  return synth_dataset(cfg, seed);
}

// ---------------------------------------------------------------------------
// Image sets on disk: FAT1 images plus a JSON manifest

inline json manifest_json(const std::vector<ImageRecord>& recs, const std::string& config_hash) {
  json imgs = json::array();
  for (auto& r : recs) imgs.push_back({{"path", r.path}, {"label", r.label}, {"split", r.split}, {"seed", r.seed}});
  return {{"images", imgs}, {"config_hash", config_hash}, {"generator_version", kGeneratorVersion}};
}

/// Writes the images of both splits under dir/images and dir/manifest.json.
inline void write_image_set(const fs::path& dir, const Dataset& ds, const std::string& config_hash, const json& extra = {}) {
  fs::create_directories(dir / "images");
  std::size_t ti = 0, si = 0;
  for (auto& r : ds.records) {
    const bool train = r.split == "train";
    const auto& set = train ? ds.train : ds.test;
    const std::size_t i = train ? ti++ : si++;
    auto im = set.image(i);
    save_tensor(dir / r.path, Tensor<float>({set.image_size, set.image_size}, std::vector<float>(im.begin(), im.end())));
  }
  json m = manifest_json(ds.records, config_hash);
  for (auto it = extra.begin(); extra.is_object() && it != extra.end(); ++it) m[it.key()] = it.value();
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

/// Reads an image set written by write_image_set. `command` names the step that produces it.
inline Dataset read_image_set(const fs::path& dir, const std::string& command, json* manifest_out = nullptr) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath))
    throw DependencyError("missing image set '" + dir.string() + "'; run `" + command + "` first", command);
  const json m = json::parse(read_file(mpath));
  Dataset ds;
  for (auto& e : m.at("images")) {
    ImageRecord r{e.at("path").get<std::string>(), e.at("label").get<int>(), e.at("split").get<std::string>(),
                  e.at("seed").get<std::uint64_t>()};
    const fs::path p = dir / r.path;
    if (!fs::exists(p)) throw EnvironmentError("manifest references missing file '" + p.string() + "'");
    auto t = load_tensor<float>(p);
    auto& set = r.split == "train" ? ds.train : ds.test;
    set.image_size = t.dim(0);
    set.pixels.insert(set.pixels.end(), t.vec().begin(), t.vec().end());
    set.labels.push_back(r.label);
    ds.records.push_back(std::move(r));
  }
  if (manifest_out) *manifest_out = m;
  return ds;
}

// ---------------------------------------------------------------------------
// Pairs

struct Pair {
  std::size_t a = 0, b = 0;
  bool genuine = false;
};

namespace detail {

template <class Draw>
std::vector<Pair> draw_pairs(std::size_t n_genuine, std::size_t n_impostor, std::size_t max_genuine,
                             std::size_t max_impostor, std::uint64_t seed, Draw&& draw) {
  if (n_genuine > max_genuine || n_impostor > max_impostor)
    throw ContractError("make_pairs: requested " + std::to_string(n_genuine) + " genuine / " + std::to_string(n_impostor) +
                        " impostor pairs but only " + std::to_string(max_genuine) + " / " + std::to_string(max_impostor) +
                        " exist");
  Rng rng(derive_seed(seed, {stream::kPairs}));
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::vector<Pair> out;
  for (bool want : {true, false}) {
    const std::size_t target = want ? n_genuine : n_impostor;
    std::size_t got = 0;
    while (got < target) {
      auto [a, b, genuine] = draw(rng);
      if (genuine != want || !seen.insert({a, b}).second) continue;
      out.push_back({a, b, genuine});
      ++got;
    }
  }
  return out;
}

}  // namespace detail

/// Balanced unordered pairs within one labelled list (a < b).
inline std::vector<Pair> make_pairs(std::span<const int> labels, std::size_t n_genuine, std::size_t n_impostor,
                                    std::uint64_t seed) {
  std::map<int, std::size_t> count;
  for (int l : labels) ++count[l];
  std::size_t multi = 0, genuine_total = 0;
  for (auto& [l, c] : count) {
    multi += c >= 2;
    genuine_total += c * (c - 1) / 2;
  }
  if (count.size() < 2 || multi < 1) throw ContractError("make_pairs: need >= 2 identities and one with >= 2 images");
  const std::size_t n = labels.size();
  const std::size_t impostor_total = n * (n - 1) / 2 - genuine_total;
  return detail::draw_pairs(n_genuine, n_impostor, genuine_total, impostor_total, seed, [&](Rng& rng) {
    std::size_t a = rng.index(n), b = rng.index(n);
    while (b == a) b = rng.index(n);
    if (a > b) std::swap(a, b);
    return Pair{a, b, labels[a] == labels[b]};
  });
}

/// Pairs restricted to one split of a dataset; indices refer to that split's images.
inline std::vector<Pair> make_pairs(const Dataset& ds, const std::string& split, std::size_t n_genuine,
                                    std::size_t n_impostor, std::uint64_t seed) {
  if (split != "train" && split != "test") throw ContractError("make_pairs: split must be train or test");
  const auto& set = split == "train" ? ds.train : ds.test;
  return make_pairs(set.labels, n_genuine, n_impostor, seed);
}

/// Gallery-probe pairs: a indexes the gallery, b the probe list.
inline std::vector<Pair> make_cross_pairs(std::span<const int> gallery_labels, std::span<const int> probe_labels,
                                          std::size_t n_genuine, std::size_t n_impostor, std::uint64_t seed) {
  if (gallery_labels.empty() || probe_labels.empty()) throw ContractError("make_cross_pairs: empty gallery or probe set");
  std::map<int, std::size_t> gc;
  for (int l : gallery_labels) ++gc[l];
  std::size_t genuine_total = 0;
  for (int l : probe_labels) genuine_total += gc.count(l) ? gc[l] : 0;
  const std::size_t impostor_total = gallery_labels.size() * probe_labels.size() - genuine_total;
  return detail::draw_pairs(n_genuine, n_impostor, genuine_total, impostor_total, seed, [&](Rng& rng) {
    const std::size_t a = rng.index(gallery_labels.size()), b = rng.index(probe_labels.size());
    return Pair{a, b, gallery_labels[a] == probe_labels[b]};
  });
}

/// Splits each identity's images into two halves (first half gallery, rest probe).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> gallery_probe_split(std::span<const int> labels) {
  std::map<int, std::vector<std::size_t>> by;
  for (std::size_t i = 0; i < labels.size(); ++i) by[labels[i]].push_back(i);
  std::vector<std::size_t> g, p;
  for (auto& [l, v] : by) {
    const std::size_t h = v.size() / 2;
    g.insert(g.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h));
    p.insert(p.end(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
  }
  return {g, p};
}

}  // namespace fadapt
