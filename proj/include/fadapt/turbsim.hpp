#pragma once

// Turbulence degradation: parameter setup, tilt PSD, tilt warp, Zernike
// phase sampling and PSF blur. Spatially invariant (isoplanatic) model.

#include <unsupported/Eigen/FFT>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <tuple>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "fadapt/error.hpp"
#include "fadapt/rng.hpp"

namespace fadapt {

struct TurbulenceParams {
  double intensity_meters = 10000;  // propagation length L
  std::size_t image_size = 64;
  double aperture_diameter = 0.1;
  double wavelength = 525e-9;
  double cn2 = 2.4e-16;
  double fried_r0 = 0;  // derived
  std::size_t n_zernike = 36;
  double outer_scale = 10.0;
  /// Image pixels per lambda/D (2 = Nyquist).
  double pixels_per_lambda_d = 2.0;
  std::size_t psf_size = 31;
  std::size_t pupil_grid = 128;

  double d_over_r0() const { return std::isinf(fried_r0) ? 0.0 : aperture_diameter / fried_r0; }
};

/// Optional overrides for init_params; unset fields keep their defaults.
struct TurbulenceOverrides {
  std::optional<double> aperture_diameter, wavelength, cn2, outer_scale, pixels_per_lambda_d;
  std::optional<std::size_t> n_zernike, psf_size, pupil_grid;
};

/// Plane-wave Fried parameter r0 = (0.423 k^2 Cn2 L)^(-3/5), k = 2 pi / lambda.
inline double fried_parameter(double wavelength, double cn2, double length) {
  const double k = 2 * std::numbers::pi / wavelength;
  const double x = 0.423 * k * k * cn2 * length;
  return x > 0 ? std::pow(x, -0.6) : std::numeric_limits<double>::infinity();
}

inline TurbulenceParams init_params(double intensity_meters, std::size_t image_size, const TurbulenceOverrides& o = {}) {
  if (!(intensity_meters > 0)) throw ContractError("turbulence: propagation length must be positive");
  if (image_size < 4) throw ContractError("turbulence: image_size must be >= 4");
  TurbulenceParams p;
  p.intensity_meters = intensity_meters;
  p.image_size = image_size;
  if (o.aperture_diameter) p.aperture_diameter = *o.aperture_diameter;
  if (o.wavelength) p.wavelength = *o.wavelength;
  if (o.cn2) p.cn2 = *o.cn2;
  if (o.outer_scale) p.outer_scale = *o.outer_scale;
  if (o.pixels_per_lambda_d) p.pixels_per_lambda_d = *o.pixels_per_lambda_d;
  if (o.n_zernike) p.n_zernike = *o.n_zernike;
  if (o.psf_size) p.psf_size = *o.psf_size;
  if (o.pupil_grid) p.pupil_grid = *o.pupil_grid;
  if (!(p.aperture_diameter > 0) || !(p.wavelength > 0) || !(p.outer_scale > 0) || !(p.pixels_per_lambda_d >= 1))
    throw ContractError("turbulence: aperture, wavelength, outer scale must be positive and sampling >= 1");
  if (p.cn2 < 0) throw ContractError("turbulence: cn2 must be nonnegative");
  if (p.n_zernike < 3) throw ContractError("turbulence: n_zernike must be >= 3");
  if (p.psf_size % 2 == 0 || p.psf_size > p.pupil_grid) throw ContractError("turbulence: psf_size must be odd and <= pupil_grid");
  p.fried_r0 = fried_parameter(p.wavelength, p.cn2, p.intensity_meters);
  return p;
}

// ---------------------------------------------------------------------------
// FFT helpers (row-major n x n complex grids)

namespace detail {

inline void fft2(std::vector<std::complex<double>>& g, std::size_t n, bool inverse) {
  thread_local Eigen::FFT<double> fft;
  std::vector<std::complex<double>> in(n), out(n);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) in[c] = pass == 0 ? g[r * n + c] : g[c * n + r];
      if (inverse)
        fft.inv(out, in);
      else
        fft.fwd(out, in);
      for (std::size_t c = 0; c < n; ++c) (pass == 0 ? g[r * n + c] : g[c * n + r]) = out[c];
    }
  }
}

/// Signed integer frequency of FFT bin i on an n-point grid.
inline double fft_freq(std::size_t i, std::size_t n) {
  return i <= n / 2 ? static_cast<double>(i) : static_cast<double>(i) - static_cast<double>(n);
}

}  // namespace detail


// ---------------------------------------------------------------------------
// Zernike modes (Noll ordering, orthonormal over the unit disk)

struct ZernikeIndex {
  int n = 0;
  int m = 0;  // signed: > 0 cosine, < 0 sine
};

inline ZernikeIndex noll_to_nm(int j) {
  if (j < 1) throw ContractError("Noll index must be >= 1");
  int n = 0, j1 = j - 1;
  while (j1 > n) {
    ++n;
    j1 -= n;
  }
  const int mag = (n % 2) + 2 * ((j1 + ((n + 1) % 2)) / 2);
  return {n, (j % 2 == 0) ? mag : -mag};
}

inline double zernike_radial(int n, int m, double rho) {
  m = std::abs(m);
  double r = 0;
  for (int s = 0; s <= (n - m) / 2; ++s) {
    const double num = std::tgamma(n - s + 1.0);
    const double den = std::tgamma(s + 1.0) * std::tgamma((n + m) / 2 - s + 1.0) * std::tgamma((n - m) / 2 - s + 1.0);
    r += ((s % 2) ? -1.0 : 1.0) * num / den * std::pow(rho, n - 2 * s);
  }
  return r;
}

inline double zernike(int j, double rho, double theta) {
  const auto [n, m] = noll_to_nm(j);
  const double r = std::sqrt(n + 1.0) * zernike_radial(n, m, rho);
  if (m == 0) return r;
  return std::numbers::sqrt2 * r * (m > 0 ? std::cos(m * theta) : std::sin(-m * theta));
}

/// Kolmogorov variance of a Noll-normalised coefficient of radial order n,
/// in units of (D/r0)^(5/3) rad^2.
inline double noll_mode_variance(int n) {
  if (n < 1) throw ContractError("piston variance is unbounded");
  const double pi83 = std::pow(std::numbers::pi, 8.0 / 3.0);
  return 0.0072 * (n + 1.0) * pi83 * std::tgamma(14.0 / 3.0) * std::tgamma(n - 5.0 / 6.0) /
         (std::pow(std::tgamma(17.0 / 6.0), 2) * std::tgamma(n + 23.0 / 6.0));
}

/// Configured variance of coefficient j (Noll index, j >= 2) for these params.
inline double zernike_coefficient_variance(int j, const TurbulenceParams& p) {
  return noll_mode_variance(noll_to_nm(j).n) * std::pow(p.d_over_r0(), 5.0 / 3.0);
}

/// Independent zero-mean Gaussian draws for Noll modes 4..n_zernike (piston and
/// tilts excluded). Element i holds mode i + 4.
inline std::vector<double> sample_zernike_coefficients(const TurbulenceParams& p, Rng& rng) {
  std::vector<double> a;
  for (int j = 4; j <= static_cast<int>(p.n_zernike); ++j)
    a.push_back(std::sqrt(zernike_coefficient_variance(j, p)) * rng.normal());
  return a;
}

// ---------------------------------------------------------------------------
// Tilt

struct TiltField {
  std::size_t size = 0;
  std::vector<double> dx, dy;  // pixels, row-major
};

/// Expected per-axis RMS image shift in pixels: Noll tilt variance converted
/// with angle = (2 a / pi) lambda / D.
inline double tilt_rms_pixels(const TurbulenceParams& p) {
  const double var_a = noll_mode_variance(1) * std::pow(p.d_over_r0(), 5.0 / 3.0);
  return 2.0 * p.pixels_per_lambda_d / std::numbers::pi * std::sqrt(var_a);
}

/// Spatial extent of the image field in the object plane, meters.
inline double field_extent_meters(const TurbulenceParams& p) {
  return static_cast<double>(p.image_size) * p.intensity_meters * p.wavelength /
         (p.pixels_per_lambda_d * p.aperture_diameter);
}

/// Amplitude filter sqrt(PSD) with PSD ~ (f^2 + f0^2)^(-11/6), zero at DC.
inline std::vector<double> tilt_filter(const TurbulenceParams& p) {
  const std::size_t n = p.image_size;
  const double f0 = field_extent_meters(p) / p.outer_scale;
  std::vector<double> h(n * n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      if (r == 0 && c == 0) continue;
      const double fy = detail::fft_freq(r, n), fx = detail::fft_freq(c, n);
      h[r * n + c] = std::pow(fx * fx + fy * fy + f0 * f0, -11.0 / 12.0);
    }
  return h;
}

/// White noise shaped by the tilt PSD, scaled so the expected RMS shift per
/// axis equals tilt_rms_pixels(p).
inline TiltField tilt_field(const TurbulenceParams& p, std::uint64_t seed) {
  const std::size_t n = p.image_size;
  TiltField t;
  t.size = n;
  t.dx.assign(n * n, 0.0);
  t.dy.assign(n * n, 0.0);
  const double target = tilt_rms_pixels(p);
  if (target == 0.0) return t;
  const auto h = tilt_filter(p);
  double energy = 0;
  for (double v : h) energy += v * v;
  const double gain = target / std::sqrt(energy / static_cast<double>(n * n));
  Rng rng(derive_seed(seed, {stream::kTilt}));
  for (auto* out : {&t.dx, &t.dy}) {
    std::vector<std::complex<double>> g(n * n);
    for (auto& v : g) v = rng.normal();
    detail::fft2(g, n, false);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= h[i] * gain;
    detail::fft2(g, n, true);
    for (std::size_t i = 0; i < g.size(); ++i) (*out)[i] = g[i].real();
  }
  return t;
}

/// Backward warp: out(y, x) = in(y + dy, x + dx), bilinear, edge-clamped.
inline std::vector<float> apply_tilt(std::span<const float> image, const TiltField& t) {
  const std::size_t n = t.size;
  if (image.size() != n * n) throw DimensionError("apply_tilt: image does not match the tilt field size");
  std::vector<float> out(n * n);
  const double hi = static_cast<double>(n - 1);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double sx = std::clamp(static_cast<double>(x) + t.dx[y * n + x], 0.0, hi);
      const double sy = std::clamp(static_cast<double>(y) + t.dy[y * n + x], 0.0, hi);
      const auto x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, n - 1), y1 = std::min(y0 + 1, n - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      const double v = (1 - fy) * ((1 - fx) * image[y0 * n + x0] + fx * image[y0 * n + x1]) +
                       fy * ((1 - fx) * image[y1 * n + x0] + fx * image[y1 * n + x1]);
      out[y * n + x] = static_cast<float>(v);
    }
  return out;
}

// ---------------------------------------------------------------------------
// PSF

struct PsfKernel {
  std::size_t size = 0;  // odd
  std::vector<double> k;  // row-major, nonnegative, sums to 1
};

namespace detail {

/// Zernike modes 4..n_zernike sampled on the pupil grid, for the pixels inside
/// the aperture. Cached per (grid, sampling, mode count).
struct PupilBasis {
  std::vector<std::size_t> inside;         // flat grid indices
  std::vector<std::vector<double>> modes;  // modes[i][k] = Z_{i+4} at inside[k]
};

inline const PupilBasis& pupil_basis(std::size_t grid, double pixels_per_lambda_d, std::size_t n_zernike) {
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, double, std::size_t>, PupilBasis> cache;
  std::lock_guard lock(mu);
  auto key = std::make_tuple(grid, pixels_per_lambda_d, n_zernike);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  PupilBasis b;
  const double radius = static_cast<double>(grid) / pixels_per_lambda_d / 2.0;
  const double c0 = static_cast<double>(grid / 2);
  std::vector<std::pair<double, double>> polar;
  for (std::size_t r = 0; r < grid; ++r)
    for (std::size_t c = 0; c < grid; ++c) {
      const double x = (static_cast<double>(c) - c0) / radius, y = (static_cast<double>(r) - c0) / radius;
      const double rho = std::hypot(x, y);
      if (rho > 1.0) continue;
      b.inside.push_back(r * grid + c);
      polar.emplace_back(rho, std::atan2(y, x));
    }
  for (int j = 4; j <= static_cast<int>(n_zernike); ++j) {
    std::vector<double> m(polar.size());
    for (std::size_t k = 0; k < polar.size(); ++k) m[k] = zernike(j, polar[k].first, polar[k].second);
    b.modes.push_back(std::move(m));
  }
  return cache.emplace(key, std::move(b)).first->second;
}

}  // namespace detail

/// PSF for explicit coefficients (mode j = i + 4 at index i): squared modulus of
/// the Fourier transform of the aberrated pupil, cropped and normalised.
inline PsfKernel psf_from_coefficients(const TurbulenceParams& p, std::span<const double> coeffs) {
  const std::size_t g = p.pupil_grid;
  const auto& basis = detail::pupil_basis(g, p.pixels_per_lambda_d, std::max<std::size_t>(p.n_zernike, 3));
  if (coeffs.size() > basis.modes.size()) throw ContractError("psf: more coefficients than configured Zernike modes");
  std::vector<double> phase(basis.inside.size(), 0.0);
  for (std::size_t i = 0; i < coeffs.size(); ++i)
    if (coeffs[i] != 0.0)
      for (std::size_t k = 0; k < phase.size(); ++k) phase[k] += coeffs[i] * basis.modes[i][k];
  std::vector<std::complex<double>> pupil(g * g, 0.0);
  for (std::size_t k = 0; k < phase.size(); ++k) pupil[basis.inside[k]] = std::polar(1.0, phase[k]);
  detail::fft2(pupil, g, false);
  PsfKernel psf;
  psf.size = p.psf_size;
  psf.k.resize(psf.size * psf.size);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(psf.size / 2), gg = static_cast<std::ptrdiff_t>(g);
  double total = 0;
  for (std::ptrdiff_t r = -half; r <= half; ++r)
    for (std::ptrdiff_t c = -half; c <= half; ++c) {
      const auto& v = pupil[static_cast<std::size_t>(((r + gg) % gg) * gg + (c + gg) % gg)];
      const double e = std::norm(v);
      psf.k[static_cast<std::size_t>((r + half) * static_cast<std::ptrdiff_t>(psf.size) + (c + half))] = e;
      total += e;
    }
  for (auto& v : psf.k) v /= total;
  return psf;
}

inline PsfKernel zernike_psf(const TurbulenceParams& p, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {stream::kZernike}));
  const auto a = sample_zernike_coefficients(p, rng);
  return psf_from_coefficients(p, a);
}

/// Same-size convolution with edge-clamped borders.
inline std::vector<float> convolve(std::span<const float> image, std::size_t n, const PsfKernel& psf) {
  if (image.size() != n * n) throw DimensionError("convolve: image is not n x n");
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(psf.size / 2), nn = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t ks = static_cast<std::ptrdiff_t>(psf.size);
  // Pad once so the inner loop has no bounds checks.
  const std::ptrdiff_t pn = nn + 2 * half;
  std::vector<double> padded(static_cast<std::size_t>(pn * pn));
  for (std::ptrdiff_t y = 0; y < pn; ++y)
    for (std::ptrdiff_t x = 0; x < pn; ++x) {
      const auto sy = std::clamp<std::ptrdiff_t>(y - half, 0, nn - 1), sx = std::clamp<std::ptrdiff_t>(x - half, 0, nn - 1);
      padded[static_cast<std::size_t>(y * pn + x)] = image[static_cast<std::size_t>(sy * nn + sx)];
    }
  std::vector<float> out(n * n);
  for (std::ptrdiff_t y = 0; y < nn; ++y)
    for (std::ptrdiff_t x = 0; x < nn; ++x) {
      double acc = 0;
      for (std::ptrdiff_t u = 0; u < ks; ++u) {
        // out(y, x) = sum k(u, v) in(y - (u - half), x - (v - half))
        const double* row = padded.data() + (y + 2 * half - u) * pn + x + 2 * half;
        const double* kr = psf.k.data() + u * ks;
        for (std::ptrdiff_t v = 0; v < ks; ++v) acc += kr[v] * row[-v];
      }
      out[static_cast<std::size_t>(y * nn + x)] = static_cast<float>(acc);
    }
  return out;
}

/// Tilt then blur, clipped to the input's value range. Tilt and PSF draws use
/// independent streams derived from `seed`.
inline std::vector<float> degrade(std::span<const float> image, const TurbulenceParams& p, std::uint64_t seed,
                                  PsfKernel* psf_out = nullptr) {
  if (image.size() != p.image_size * p.image_size) throw DimensionError("degrade: image does not match image_size");
  const auto tilted = apply_tilt(image, tilt_field(p, seed));
  const auto psf = zernike_psf(p, seed);
  auto out = convolve(tilted, p.image_size, psf);
  const auto [lo, hi] = std::minmax_element(image.begin(), image.end());
  for (auto& v : out) v = std::clamp(v, *lo, *hi);
  if (psf_out) *psf_out = psf;
  return out;
}

}  // namespace fadapt
