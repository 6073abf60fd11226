#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fadapt/turbsim.hpp"

using namespace fadapt;

namespace {

std::vector<float> smooth_image(std::size_t n, Rng& rng) {
  std::vector<float> im(n * n);
  double a[4], fx[4], fy[4], ph[4];
  for (int k = 0; k < 4; ++k) {
    a[k] = rng.uniform(0.05, 0.15);
    fx[k] = rng.uniform(1, 6);
    fy[k] = rng.uniform(1, 6);
    ph[k] = rng.uniform(0, 6.28);
  }
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      double v = 0.5;
      for (int k = 0; k < 4; ++k)
        v += a[k] * std::sin(2 * std::numbers::pi * (fx[k] * x + fy[k] * y) / static_cast<double>(n) + ph[k]);
      im[y * n + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return im;
}

double mse(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

TurbulenceParams small(double level, std::size_t n = 32) {
  TurbulenceOverrides o;
  o.psf_size = 15;
  o.pupil_grid = 64;
  return init_params(level, n, o);
}

}  // namespace

TEST(Params, DoublingLengthScalesFriedParameter) {
  for (double L : {5000.0, 10000.0, 20000.0}) {
    const double r = init_params(2 * L, 64).fried_r0 / init_params(L, 64).fried_r0;
    EXPECT_NEAR(r, std::pow(2.0, -0.6), 1e-12);
  }
  EXPECT_NEAR(std::pow(2.0, -0.6), 0.6598, 1e-4);
}

TEST(Params, FriedParameterDecreasesOverLevels) {
  double prev = std::numeric_limits<double>::infinity();
  for (double L : {10000.0, 20000.0, 30000.0, 40000.0}) {
    const double r0 = init_params(L, 64).fried_r0;
    EXPECT_LT(r0, prev);
    prev = r0;
  }
}

TEST(Params, FriedFormulaOracle) {
  const double k = 2 * std::numbers::pi / 525e-9;
  const double want = std::pow(0.423 * k * k * 2.4e-16 * 10000.0, -3.0 / 5.0);
  EXPECT_NEAR(init_params(10000, 64).fried_r0, want, 1e-12 * want);
  EXPECT_NEAR(init_params(10000, 64).d_over_r0(), 2.0, 0.1);
}

TEST(Params, InvalidInputs) {
  EXPECT_THROW(init_params(0, 64), ContractError);
  EXPECT_THROW(init_params(-5, 64), ContractError);
  TurbulenceOverrides o;
  o.aperture_diameter = 0;
  EXPECT_THROW(init_params(1000, 64, o), ContractError);
  o = {};
  o.n_zernike = 2;
  EXPECT_THROW(init_params(1000, 64, o), ContractError);
  o = {};
  o.psf_size = 16;
  EXPECT_THROW(init_params(1000, 64, o), ContractError);
}

TEST(Zernike, NollIndexing) {
  const std::pair<int, int> want[] = {{0, 0}, {1, 1}, {1, -1}, {2, 0}, {2, -2}, {2, 2}, {3, -1}, {3, 1}, {3, -3}, {3, 3}, {4, 0}};
  for (int j = 1; j <= 11; ++j) {
    auto [n, m] = noll_to_nm(j);
    EXPECT_EQ(n, want[j - 1].first) << j;
    EXPECT_EQ(m, want[j - 1].second) << j;
  }
}

TEST(Zernike, OrthonormalOverUnitDisk) {
  const int J = 15, g = 400;
  std::vector<std::vector<double>> z(J);
  std::size_t count = 0;
  for (int iy = 0; iy < g; ++iy)
    for (int ix = 0; ix < g; ++ix) {
      const double x = (ix + 0.5) / g * 2 - 1, y = (iy + 0.5) / g * 2 - 1;
      const double r = std::hypot(x, y);
      if (r > 1) continue;
      ++count;
      for (int j = 1; j <= J; ++j) z[j - 1].push_back(zernike(j, r, std::atan2(y, x)));
    }
  for (int a = 0; a < J; ++a)
    for (int b = a; b < J; ++b) {
      double s = 0;
      for (std::size_t k = 0; k < count; ++k) s += z[a][k] * z[b][k];
      EXPECT_NEAR(s / static_cast<double>(count), a == b ? 1.0 : 0.0, 2e-3) << a + 1 << "," << b + 1;
    }
}

TEST(Zernike, ResidualVariancesMatchNollTable) {
  // Residual phase variance after removing the first J modes, units (D/r0)^(5/3).
  const std::pair<int, double> table[] = {{1, 1.0299}, {3, 0.134}, {6, 0.0648}, {10, 0.0401}, {21, 0.0208}};
  for (auto [J, delta] : table) {
    double removed = 0;
    for (int j = 2; j <= J; ++j) removed += noll_mode_variance(noll_to_nm(j).n);
    EXPECT_NEAR(1.0299 - removed, delta, 2e-3 * std::max(1.0, delta / 0.02)) << J;
  }
  EXPECT_NEAR(noll_mode_variance(1), 0.448, 1e-3);
  EXPECT_THROW(noll_mode_variance(0), ContractError);
}

TEST(Zernike, SampledVarianceMatchesConfiguration) {
  auto p = init_params(20000, 64);
  Rng rng(3);
  const int draws = 20000;
  std::vector<double> s2(p.n_zernike - 3, 0.0);
  for (int t = 0; t < draws; ++t) {
    auto a = sample_zernike_coefficients(p, rng);
    ASSERT_EQ(a.size(), s2.size());
    for (std::size_t i = 0; i < a.size(); ++i) s2[i] += a[i] * a[i];
  }
  for (std::size_t i = 0; i < s2.size(); ++i) {
    const double want = zernike_coefficient_variance(static_cast<int>(i) + 4, p);
    EXPECT_NEAR(s2[i] / draws / want, 1.0, 0.05) << "mode " << i + 4;
  }
}

TEST(Psf, UnitSumAndNonnegative) {
  for (double L : {10000.0, 40000.0})
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto k = zernike_psf(small(L), seed);
      double s = 0;
      for (double v : k.k) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
      EXPECT_EQ(k.size, 15u);
    }
}

TEST(Psf, AberrationFreeIsPointSymmetric) {
  auto p = small(10000);
  std::vector<double> zero(p.n_zernike - 3, 0.0);
  auto k = psf_from_coefficients(p, zero);
  const std::size_t n = k.size;
  for (std::size_t i = 0; i < n * n; ++i) EXPECT_NEAR(k.k[i], k.k[n * n - 1 - i], 1e-6);
  const double centre = k.k[(n / 2) * n + n / 2];
  EXPECT_EQ(centre, *std::max_element(k.k.begin(), k.k.end()));
}

TEST(Psf, StrongerTurbulenceSpreadsEnergy) {
  double c10 = 0, c40 = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto a = zernike_psf(small(10000), s), b = zernike_psf(small(40000), s);
    c10 += *std::max_element(a.k.begin(), a.k.end());
    c40 += *std::max_element(b.k.begin(), b.k.end());
  }
  EXPECT_GT(c10, c40);
}

TEST(Tilt, SameSeedSameField) {
  auto p = small(20000);
  auto a = tilt_field(p, 9), b = tilt_field(p, 9), c = tilt_field(p, 10);
  EXPECT_EQ(a.dx, b.dx);
  EXPECT_EQ(a.dy, b.dy);
  EXPECT_NE(a.dx, c.dx);
}

TEST(Tilt, RmsGrowsWithLength) {
  auto rms = [](double L) {
    double s = 0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      auto t = tilt_field(small(L), seed);
      for (double v : t.dx) s += v * v;
      n += t.dx.size();
    }
    return std::sqrt(s / static_cast<double>(n));
  };
  const double r10 = rms(10000), r40 = rms(40000);
  EXPECT_GT(r40, r10);
  EXPECT_NEAR(r10, tilt_rms_pixels(small(10000)), 0.3 * tilt_rms_pixels(small(10000)));
}

TEST(Tilt, FieldIsSpatiallyCorrelated) {
  auto p = small(20000);
  const std::size_t n = p.image_size;
  auto corr = [&](std::size_t lag) {
    double num = 0, den = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      auto t = tilt_field(p, seed);
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
          num += t.dx[y * n + x] * t.dx[y * n + (x + lag) % n];
          den += t.dx[y * n + x] * t.dx[y * n + x];
        }
    }
    return num / den;
  };
  const double c1 = corr(1), c4 = corr(4), c12 = corr(12);
  EXPECT_GT(c1, 0.5);
  EXPECT_GT(c1, c4);
  EXPECT_GT(c4, c12);
}

TEST(Tilt, ZeroFieldIsIdentity) {
  Rng rng(1);
  auto im = smooth_image(16, rng);
  TiltField t{16, std::vector<double>(256, 0.0), std::vector<double>(256, 0.0)};
  EXPECT_EQ(apply_tilt(im, t), im);
}

TEST(Tilt, UnitShiftTranslatesWithEdgeClamp) {
  Rng rng(2);
  auto im = smooth_image(16, rng);
  TiltField t{16, std::vector<double>(256, 1.0), std::vector<double>(256, 0.0)};
  auto out = apply_tilt(im, t);
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x + 1 < 16; ++x) EXPECT_EQ(out[y * 16 + x], im[y * 16 + x + 1]);
    EXPECT_EQ(out[y * 16 + 15], im[y * 16 + 15]);
  }
}

TEST(Tilt, HalfShiftAveragesNeighbours) {
  Rng rng(3);
  auto im = smooth_image(16, rng);
  TiltField t{16, std::vector<double>(256, 0.5), std::vector<double>(256, 0.0)};
  auto out = apply_tilt(im, t);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x + 1 < 16; ++x)
      EXPECT_NEAR(out[y * 16 + x], 0.5 * (im[y * 16 + x] + im[y * 16 + x + 1]), 1e-6);
}

TEST(Tilt, ShapeMismatchThrows) {
  std::vector<float> im(10);
  TiltField t{4, std::vector<double>(16, 0.0), std::vector<double>(16, 0.0)};
  EXPECT_THROW(apply_tilt(im, t), DimensionError);
}

TEST(Degrade, DeterministicPerSeed) {
  Rng rng(4);
  auto im = smooth_image(32, rng);
  auto p = small(30000);
  EXPECT_EQ(degrade(im, p, 11), degrade(im, p, 11));
  EXPECT_NE(degrade(im, p, 11), degrade(im, p, 12));
}

TEST(Degrade, ZeroTurbulenceIsDiffractionBlur) {
  Rng rng(5);
  auto im = smooth_image(32, rng);
  TurbulenceOverrides o;
  o.cn2 = 0;
  o.psf_size = 15;
  o.pupil_grid = 64;
  auto p = init_params(40000, 32, o);
  EXPECT_EQ(p.d_over_r0(), 0.0);
  auto t = tilt_field(p, 1);
  for (double v : t.dx) EXPECT_EQ(v, 0.0);
  std::vector<double> zero(p.n_zernike - 3, 0.0);
  auto blurred = convolve(im, 32, psf_from_coefficients(p, zero));
  const auto [lo, hi] = std::minmax_element(im.begin(), im.end());
  for (auto& v : blurred) v = std::clamp(v, *lo, *hi);
  EXPECT_EQ(degrade(im, p, 1), blurred);
}

TEST(Degrade, OutputStaysInInputRange) {
  Rng rng(6);
  auto im = smooth_image(32, rng);
  auto out = degrade(im, small(40000), 3);
  const auto [lo, hi] = std::minmax_element(im.begin(), im.end());
  for (float v : out) {
    EXPECT_GE(v, *lo);
    EXPECT_LE(v, *hi);
  }
}

TEST(Degrade, ErrorGrowsOverLevels) {
  Rng rng(7);
  std::vector<std::vector<float>> images;
  for (int i = 0; i < 30; ++i) images.push_back(smooth_image(32, rng));
  double prev = 0;
  for (double L : {10000.0, 20000.0, 30000.0, 40000.0}) {
    auto p = small(L);
    double m = 0;
    for (std::size_t i = 0; i < images.size(); ++i)
      for (std::uint64_t s = 0; s < 2; ++s) m += mse(images[i], degrade(images[i], p, 100 * i + s));
    EXPECT_GT(m, prev) << L;
    prev = m;
  }
}

TEST(Convolve, DeltaKernelIsIdentity) {
  Rng rng(8);
  auto im = smooth_image(16, rng);
  PsfKernel d{3, {0, 0, 0, 0, 1, 0, 0, 0, 0}};
  EXPECT_EQ(convolve(im, 16, d), im);
  PsfKernel shift{3, {0, 0, 0, 1, 0, 0, 0, 0, 0}};
  auto out = convolve(im, 16, shift);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x + 1 < 16; ++x) EXPECT_EQ(out[y * 16 + x], im[y * 16 + x + 1]);
}
