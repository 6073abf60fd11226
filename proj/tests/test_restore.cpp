#include <gtest/gtest.h>

#include <cmath>

#include "fadapt/restore.hpp"

using namespace fadapt;

namespace {

std::vector<float> random_image(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n * n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(0.1, 0.9));
  return v;
}

double mse(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

RestoreConfig blend(double w, double sigma = 0) {
  RestoreConfig c;
  c.fidelity_w = w;
  c.artifact_sigma = sigma;
  return c;
}

}  // namespace

TEST(Restore, BlendEndpoints) {
  auto clean = random_image(16, 1), deg = random_image(16, 2);
  std::span<const float> cs(clean);
  EXPECT_EQ(restore(deg, blend(0), cs, nullptr, 5), clean);
  EXPECT_EQ(restore(deg, blend(1), cs, nullptr, 5), deg);
}

TEST(Restore, BlendIsLinearWithoutArtifacts) {
  auto clean = random_image(16, 3), deg = random_image(16, 4);
  auto out = restore(deg, blend(0.3), std::span<const float>(clean), nullptr, 0);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.7 * clean[i] + 0.3 * deg[i], 1e-6);
}

TEST(Restore, ErrorMonotoneInFidelityWeight) {
  auto clean = random_image(32, 5), deg = random_image(32, 6);
  double prev = -1;
  for (double w = 0; w <= 1.0001; w += 0.05) {
    const double m = mse(clean, restore(deg, blend(std::min(w, 1.0)), std::span<const float>(clean), nullptr, 0));
    EXPECT_GE(m, prev);
    prev = m;
  }
}

TEST(Restore, WienerWithDeltaPsfIsIdentity) {
  auto deg = random_image(32, 7);
  RestoreConfig c;
  c.mode = RestoreMode::wiener;
  c.wiener_nsr = 1e-9;
  PsfKernel delta{3, {0, 0, 0, 0, 1, 0, 0, 0, 0}};
  auto out = restore(deg, c, std::nullopt, &delta, 0);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], deg[i], 1e-4);
}

TEST(Restore, WienerUndoesKnownBlur) {
  TurbulenceOverrides o;
  o.psf_size = 15;
  o.pupil_grid = 64;
  auto p = init_params(20000, 32, o);
  auto psf = zernike_psf(p, 3);
  // Smooth periodic image so the circular model holds.
  std::vector<float> clean(32 * 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x)
      clean[y * 32 + x] = static_cast<float>(0.5 + 0.2 * std::sin(2 * M_PI * 3 * x / 32.0) * std::cos(2 * M_PI * 2 * y / 32.0));
  auto blurred = convolve(clean, 32, psf);
  RestoreConfig c;
  c.mode = RestoreMode::wiener;
  auto out = restore(blurred, c, std::nullopt, &psf, 0);
  EXPECT_LT(mse(clean, out), mse(clean, blurred));
}

TEST(Restore, OutputInUnitRangeAndFinite) {
  auto clean = random_image(32, 8), deg = random_image(32, 9);
  for (float& v : deg) v = v * 3 - 1;
  for (double sigma : {0.0, 0.5, 2.0}) {
    auto out = restore(deg, blend(0.5, sigma), std::span<const float>(clean), nullptr, 3, 4);
    for (float v : out) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  RestoreConfig c;
  c.mode = RestoreMode::wiener;
  c.wiener_nsr = 1e-12;
  PsfKernel flat{3, std::vector<double>(9, 1.0 / 9)};
  for (float v : restore(deg, c, std::nullopt, &flat, 0)) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Restore, ArtifactsAreSeededAndShared) {
  auto clean = random_image(32, 10), deg = random_image(32, 11);
  std::span<const float> cs(clean);
  auto c = blend(0.5, 0.05);
  EXPECT_EQ(restore(deg, c, cs, nullptr, 1), restore(deg, c, cs, nullptr, 1));
  EXPECT_NE(restore(deg, c, cs, nullptr, 1), restore(deg, c, cs, nullptr, 2));
  c.artifact_shared = 1.0;
  EXPECT_EQ(restore(deg, c, cs, nullptr, 1, 7), restore(deg, c, cs, nullptr, 2, 7));
  EXPECT_NE(restore(deg, c, cs, nullptr, 1, 7), restore(deg, c, cs, nullptr, 1, 8));
}

TEST(Restore, BandNoiseIsUnitRmsAndZeroMean) {
  auto v = band_noise(32, 3, 10, 5);
  double s = 0, ss = 0;
  for (double x : v) {
    s += x;
    ss += x * x;
  }
  EXPECT_NEAR(s / v.size(), 0.0, 1e-9);
  EXPECT_NEAR(ss / v.size(), 1.0, 1e-9);
}

TEST(Restore, Errors) {
  auto deg = random_image(16, 12);
  EXPECT_THROW(restore(deg, blend(0.5), std::nullopt, nullptr, 0), ContractError);
  RestoreConfig w;
  w.mode = RestoreMode::wiener;
  EXPECT_THROW(restore(deg, w, std::nullopt, nullptr, 0), ContractError);
  std::vector<float> other(9);
  EXPECT_THROW(restore(deg, blend(0.5), std::span<const float>(other), nullptr, 0), DimensionError);
  EXPECT_THROW(restore(deg, blend(1.5), std::span<const float>(deg), nullptr, 0), ConfigError);
  std::vector<float> rect(12);
  EXPECT_THROW(restore(rect, blend(0.5), std::span<const float>(rect), nullptr, 0), DimensionError);
  EXPECT_THROW(parse_restore_mode("codeformer"), ConfigError);
  EXPECT_EQ(parse_restore_mode(to_string(RestoreMode::wiener)), RestoreMode::wiener);
}
