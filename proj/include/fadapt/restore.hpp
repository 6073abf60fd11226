#pragma once

// Restoration proxies: a controllable oracle blend and Wiener deconvolution.

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fadapt/error.hpp"
#include "fadapt/rng.hpp"
#include "fadapt/turbsim.hpp"

namespace fadapt {

enum class RestoreMode { oracle_blend, wiener };

inline std::string to_string(RestoreMode m) { return m == RestoreMode::oracle_blend ? "oracle_blend" : "wiener"; }

inline RestoreMode parse_restore_mode(const std::string& s) {
  if (s == "oracle_blend") return RestoreMode::oracle_blend;
  if (s == "wiener") return RestoreMode::wiener;
  throw ConfigError("unknown restore mode '" + s + "' (expected oracle_blend or wiener)");
}

struct RestoreConfig {
  RestoreMode mode = RestoreMode::oracle_blend;
  /// 0 returns the clean image, 1 the degraded one.
  double fidelity_w = 0.5;
  double artifact_sigma = 0.02;
  /// Fraction of artifact energy shared by every image of a run (a fixed
  /// hallucinated pattern); the rest is drawn per image.
  double artifact_shared = 0.0;
  /// Artifact pass band, cycles per image.
  double artifact_band_lo = 3.0;
  double artifact_band_hi = 10.0;
  double wiener_nsr = 1e-2;

  void validate() const {
    if (!(fidelity_w >= 0 && fidelity_w <= 1)) throw ConfigError("restore: fidelity_w must be in [0, 1]");
    if (!(artifact_sigma >= 0)) throw ConfigError("restore: artifact_sigma must be nonnegative");
    if (!(artifact_shared >= 0 && artifact_shared <= 1)) throw ConfigError("restore: artifact_shared must be in [0, 1]");
    if (!(artifact_band_lo >= 0 && artifact_band_hi > artifact_band_lo))
      throw ConfigError("restore: artifact band must satisfy 0 <= lo < hi");
    if (!(wiener_nsr > 0)) throw ConfigError("restore: wiener_nsr must be positive");
  }
};

/// Unit-RMS noise with a smooth band-pass spectrum centred between lo and hi
/// cycles per image.
inline std::vector<double> band_noise(std::size_t n, double lo, double hi, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::complex<double>> g(n * n);
  for (auto& v : g) v = rng.normal();
  detail::fft2(g, n, false);
  const double mid = 0.5 * (lo + hi), width = 0.5 * (hi - lo);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double f = std::hypot(detail::fft_freq(r, n), detail::fft_freq(c, n));
      const double z = (f - mid) / width;
      g[r * n + c] *= (r == 0 && c == 0) ? 0.0 : std::exp(-0.5 * z * z);
    }
  detail::fft2(g, n, true);
  std::vector<double> out(n * n);
  double ss = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = g[i].real();
    ss += out[i] * out[i];
  }
  const double rms = std::sqrt(ss / static_cast<double>(out.size()));
  if (rms > 0)
    for (auto& v : out) v /= rms;
  return out;
}

/// Frequency-domain Wiener deconvolution with a known PSF (circular boundary).
inline std::vector<float> wiener_deconvolve(std::span<const float> degraded, std::size_t n, const PsfKernel& psf, double nsr) {
  if (psf.size > n) throw ContractError("wiener: PSF larger than the image");
  std::vector<std::complex<double>> g(degraded.begin(), degraded.end()), h(n * n, 0.0);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(psf.size / 2), nn = static_cast<std::ptrdiff_t>(n);
  for (std::ptrdiff_t u = -half; u <= half; ++u)
    for (std::ptrdiff_t v = -half; v <= half; ++v)
      h[static_cast<std::size_t>(((u + nn) % nn) * nn + (v + nn) % nn)] +=
          psf.k[static_cast<std::size_t>((u + half) * static_cast<std::ptrdiff_t>(psf.size) + (v + half))];
  detail::fft2(g, n, false);
  detail::fft2(h, n, false);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= std::conj(h[i]) / (std::norm(h[i]) + nsr);
  detail::fft2(g, n, true);
  std::vector<float> out(n * n);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(g[i].real());
  return out;
}

/// Restored image in [0, 1]. oracle_blend needs `clean`, wiener needs `psf`.
/// `seed` drives the per-image artifacts, `pattern_seed` the shared ones.
inline std::vector<float> restore(std::span<const float> degraded, const RestoreConfig& cfg,
                                  std::optional<std::span<const float>> clean, const PsfKernel* psf, std::uint64_t seed,
                                  std::uint64_t pattern_seed = 0) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(degraded.size()))));
  if (n * n != degraded.size() || n == 0) throw DimensionError("restore: image is not square");
  std::vector<float> out(degraded.size());
  if (cfg.mode == RestoreMode::oracle_blend) {
    if (!clean) throw ContractError("restore: oracle_blend requires the clean image");
    if (clean->size() != degraded.size()) throw DimensionError("restore: clean and degraded sizes differ");
    std::vector<double> art;
    if (cfg.artifact_sigma > 0) {
      const double a = std::sqrt(cfg.artifact_shared), b = std::sqrt(1 - cfg.artifact_shared);
      art = band_noise(n, cfg.artifact_band_lo, cfg.artifact_band_hi, derive_seed(seed, {stream::kArtifact}));
      for (auto& v : art) v *= b;
      if (a > 0) {
        const auto shared = band_noise(n, cfg.artifact_band_lo, cfg.artifact_band_hi, derive_seed(pattern_seed, {stream::kArtifact, 0x5EA4ED}));
        for (std::size_t i = 0; i < art.size(); ++i) art[i] += a * shared[i];
      }
    }
    const double w = cfg.fidelity_w;
    for (std::size_t i = 0; i < out.size(); ++i) {
      double v = (1 - w) * (*clean)[i] + w * degraded[i];
      if (!art.empty()) v += cfg.artifact_sigma * art[i];
      out[i] = static_cast<float>(v);
    }
  } else {
    if (!psf) throw ContractError("restore: wiener mode requires the PSF");
    out = wiener_deconvolve(degraded, n, *psf, cfg.wiener_nsr);
  }
  for (auto& v : out) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
  return out;
}

}  // namespace fadapt
