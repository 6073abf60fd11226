#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "fadapt/container.hpp"
#include "fadapt/fusion.hpp"
#include "fadapt/gradcheck.hpp"
#include "test_util.hpp"

using namespace fadapt;
using fadapt::testing::randn;

namespace {

template <class T>
MhaParams<T> identity_mha(std::size_t d, std::size_t h) {
  MhaParams<T> p;
  p.d_model = d;
  p.n_heads = h;
  std::vector<T> eye(d * d, T(0));
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = T(1);
  p.wq = p.wk = p.wv = p.wo = Tensor<T>({d, d}, eye);
  p.wq = Tensor<T>({d, d}, eye);
  p.wk = Tensor<T>({d, d}, eye);
  p.wv = Tensor<T>({d, d}, eye);
  p.wo = Tensor<T>({d, d}, eye);
  p.bq = Tensor<T>({d}, T(0));
  p.bk = Tensor<T>({d}, T(0));
  p.bv = Tensor<T>({d}, T(0));
  p.bo = Tensor<T>({d}, T(0));
  return p;
}

FusionConfig small_cfg(std::size_t d = 16, std::size_t h = 4) {
  FusionConfig c;
  c.d_model = d;
  c.n_heads = h;
  c.ffn_hidden = 32;
  c.zero_init_output = false;
  return c;
}

// Independent per-head attention for length-1 sequences: x W + b per projection,
// softmax over a single key, concatenate, output projection.
std::vector<double> mha_oracle(const std::vector<double>& q, const std::vector<double>& k, const std::vector<double>& v,
                               const MhaParams<double>& p, std::size_t batch) {
  const std::size_t d = p.d_model, dh = d / p.n_heads;
  auto proj = [&](const std::vector<double>& x, const Tensor<double>& w, const Tensor<double>& b, std::size_t r) {
    std::vector<double> out(d);
    for (std::size_t j = 0; j < d; ++j) {
      double s = b[j];
      for (std::size_t i = 0; i < d; ++i) s += x[r * d + i] * w[i * d + j];
      out[j] = s;
    }
    return out;
  };
  std::vector<double> out;
  for (std::size_t r = 0; r < batch; ++r) {
    auto qq = proj(q, p.wq, p.bq, r), kk = proj(k, p.wk, p.bk, r), vv = proj(v, p.wv, p.bv, r);
    std::vector<double> heads(d);
    for (std::size_t h = 0; h < p.n_heads; ++h) {
      double s = 0;
      for (std::size_t e = 0; e < dh; ++e) s += qq[h * dh + e] * kk[h * dh + e];
      s /= std::sqrt(static_cast<double>(dh));
      const double w = std::exp(s - s);  // one key
      for (std::size_t e = 0; e < dh; ++e) heads[h * dh + e] = w * vv[h * dh + e];
    }
    auto o = proj(heads, p.wo, p.bo, 0);
    out.insert(out.end(), o.begin(), o.end());
  }
  return out;
}

}  // namespace

TEST(Mha, IdentityProjectionsReturnValues) {
  Rng rng(1);
  auto p = identity_mha<double>(8, 2);
  auto q = randn<double>({3, 1, 8}, rng), k = randn<double>({3, 1, 8}, rng), v = randn<double>({3, 1, 8}, rng);
  EXPECT_EQ(multi_head_attention(q, k, v, p).vec(), v.vec());
}

TEST(Mha, OutputIndependentOfQueryAtLengthOne) {
  Rng rng(2);
  auto p = MhaParams<double>::random(8, 2, rng);
  auto q1 = randn<double>({2, 1, 8}, rng), q2 = randn<double>({2, 1, 8}, rng), kv = randn<double>({2, 1, 8}, rng);
  auto a = multi_head_attention(q1, kv, kv, p), b = multi_head_attention(q2, kv, kv, p);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Mha, MatchesPerHeadLoop) {
  Rng rng(3);
  auto p = MhaParams<double>::random(8, 2, rng);
  for (auto* b : {&p.bq, &p.bk, &p.bv, &p.bo})
    for (auto& x : b->vec()) x = rng.normal();
  auto q = randn<double>({4, 1, 8}, rng), k = randn<double>({4, 1, 8}, rng), v = randn<double>({4, 1, 8}, rng);
  auto got = multi_head_attention(q, k, v, p);
  auto want = mha_oracle(q.vec(), k.vec(), v.vec(), p, 4);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6);
}

TEST(Mha, WeightsAreExactlyOneAtLengthOne) {
  Rng rng(4);
  auto p = MhaParams<float>::random(16, 4, rng);
  auto x = randn<float>({5, 1, 16}, rng, false, 10.0), y = randn<float>({5, 1, 16}, rng, false, 10.0);
  std::vector<float> w;
  multi_head_attention(x, y, y, p, &w);
  ASSERT_EQ(w.size(), 5u * 4u);
  for (float v : w) EXPECT_EQ(v, 1.0f);
}

TEST(Mha, BadHeadCountIsConfigError) {
  Rng rng(5);
  EXPECT_THROW(MhaParams<double>::random(10, 3, rng), ConfigError);
  auto p = MhaParams<double>::random(8, 2, rng);
  auto x = randn<double>({2, 1, 6}, rng);
  EXPECT_THROW(multi_head_attention(x, x, x, p), ConfigError);
}

TEST(Blocks, CrossAttentionZeroQueryIdentityProjections) {
  Rng rng(6);
  AttnBlockParams<double> b{identity_mha<double>(8, 2), Tensor<double>({8}, 1.0), Tensor<double>({8}, 0.0)};
  Tensor<double> xq({2, 1, 8}, 0.0);
  auto kv = randn<double>({2, 1, 8}, rng);
  EXPECT_EQ(cross_attention_block(xq, kv, b, false).vec(), kv.vec());
}

TEST(Blocks, ZeroOutputProjectionIsResidualIdentity) {
  Rng rng(7);
  AttnBlockParams<double> b{MhaParams<double>::random(8, 2, rng), Tensor<double>({8}, 1.0), Tensor<double>({8}, 0.0)};
  std::fill(b.mha.wo.vec().begin(), b.mha.wo.vec().end(), 0.0);
  auto xq = randn<double>({2, 1, 8}, rng), kv = randn<double>({2, 1, 8}, rng);
  EXPECT_EQ(cross_attention_block(xq, kv, b, false).vec(), xq.vec());
  EXPECT_EQ(self_attention_block(xq, b, false).vec(), xq.vec());
}

TEST(Blocks, CompositionalOracle) {
  Rng rng(8);
  AttnBlockParams<double> b{MhaParams<double>::random(8, 2, rng), randn<double>({8}, rng), randn<double>({8}, rng)};
  auto xq = randn<double>({3, 1, 8}, rng), kv = randn<double>({3, 1, 8}, rng);
  auto want = layer_norm(add(xq, multi_head_attention(xq, kv, kv, b.mha)), b.gamma, b.beta);
  EXPECT_EQ(cross_attention_block(xq, kv, b, true).vec(), want.vec());
  EXPECT_EQ(self_attention_block(xq, b, true).vec(), cross_attention_block(xq, xq, b, true).vec());
}

TEST(Ffn, ZeroWeightsIdentity) {
  Rng rng(9);
  FfnParams<double> f{Tensor<double>({8, 16}, 0.0), Tensor<double>({16}, 0.0), Tensor<double>({16, 8}, 0.0),
                      Tensor<double>({8}, 0.0), Tensor<double>({8}, 1.0), Tensor<double>({8}, 0.0)};
  auto x = randn<double>({2, 1, 8}, rng);
  EXPECT_EQ(feed_forward(x, f, false).vec(), x.vec());
}

TEST(Ffn, NegativePreActivationsIdentity) {
  Rng rng(10);
  FfnParams<double> f{randn<double>({8, 16}, rng), Tensor<double>({16}, -1e3), randn<double>({16, 8}, rng),
                      Tensor<double>({8}, 0.0), Tensor<double>({8}, 1.0), Tensor<double>({8}, 0.0)};
  auto x = randn<double>({2, 1, 8}, rng);
  EXPECT_EQ(feed_forward(x, f, false).vec(), x.vec());
}

TEST(Ffn, MatchesTwoMatmuls) {
  Rng rng(11);
  FfnParams<double> f{randn<double>({8, 16}, rng), randn<double>({16}, rng), randn<double>({16, 8}, rng),
                      randn<double>({8}, rng), Tensor<double>({8}, 1.0), Tensor<double>({8}, 0.0)};
  auto x = randn<double>({3, 1, 8}, rng);
  auto y = feed_forward(x, f, false);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 8; ++j) {
      double s = f.b2[j] + x[r * 8 + j];
      for (std::size_t h = 0; h < 16; ++h) {
        double a = f.b1[h];
        for (std::size_t i = 0; i < 8; ++i) a += x[r * 8 + i] * f.w1[i * 16 + h];
        s += std::max(a, 0.0) * f.w2[h * 8 + j];
      }
      EXPECT_NEAR(y[r * 8 + j], s, 1e-10);
    }
}

TEST(Fuse, ZeroFusionGivesLowQualityFeatureExactly) {
  Rng rng(12);
  for (std::size_t depth : {1u, 3u}) {
    auto c = small_cfg();
    c.cascade_depth = depth;
    auto p = init_fusion<float>(c, 5);
    zero_fusion_output(p, c);
    auto f = randn<float>({4, 16}, rng), a = randn<float>({4, 16}, rng);
    EXPECT_EQ(fuse(f, a, p, c).vec(), f.vec());
    c.use_residual = false;
    const auto r = fuse(f, a, p, c);
    for (float v : r.vec()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(Fuse, ZeroInitStartsAtLowQualityFeature) {
  Rng rng(13);
  auto c = small_cfg();
  c.zero_init_output = true;
  auto p = init_fusion<float>(c, 1);
  auto f = randn<float>({4, 16}, rng), a = randn<float>({4, 16}, rng);
  EXPECT_EQ(fuse(f, a, p, c).vec(), f.vec());
}

TEST(Fuse, DepthOneMatchesManualComposition) {
  Rng rng(14);
  auto c = small_cfg();
  auto p = init_fusion<double>(c, 2);
  auto f = randn<double>({3, 16}, rng), a = randn<double>({3, 16}, rng);
  const auto& s = p.stages[0];
  auto f3 = reshape(f, {3, 1, 16}), a3 = reshape(a, {3, 1, 16});
  auto aff = self_attention_block(cross_attention_block(a3, f3, s.ca1, true), s.sa1, true);
  auto faa = self_attention_block(cross_attention_block(f3, a3, s.ca2, true), s.sa2, true);
  auto fusion = feed_forward(cross_attention_block(aff, faa, s.ca3, true), s.ffn, true);
  auto want = add(f, reshape(fusion, {3, 16}));
  EXPECT_EQ(fuse(f, a, p, c).vec(), want.vec());
}

TEST(Fuse, ShapesForEveryVariant) {
  Rng rng(15);
  auto f = randn<float>({5, 16}, rng), a = randn<float>({5, 16}, rng);
  for (auto v : {RoleVariant::a, RoleVariant::b, RoleVariant::c, RoleVariant::d})
    for (auto o : {AttentionOrder::cross_first, AttentionOrder::self_first})
      for (std::size_t depth : {1u, 3u, 5u})
        for (bool res : {true, false}) {
          auto c = small_cfg();
          c.role_variant = v;
          c.attention_order = o;
          c.cascade_depth = depth;
          c.use_residual = res;
          auto r = fuse(f, a, init_fusion<float>(c, 3), c);
          EXPECT_EQ(r.shape(), f.shape());
          EXPECT_TRUE(all_finite(r));
        }
}

TEST(Fuse, VariantsAreDistinguishable) {
  Rng rng(16);
  auto f = randn<double>({4, 16}, rng), a = randn<double>({4, 16}, rng);
  std::vector<std::vector<double>> outs;
  for (auto v : {RoleVariant::a, RoleVariant::b, RoleVariant::c, RoleVariant::d}) {
    auto c = small_cfg();
    c.role_variant = v;
    outs.push_back(fuse(f, a, init_fusion<double>(c, 4), c).vec());
  }
  for (std::size_t i = 0; i < outs.size(); ++i)
    for (std::size_t j = i + 1; j < outs.size(); ++j) EXPECT_NE(outs[i], outs[j]) << i << " vs " << j;
}

TEST(Fuse, ResidualToggleDiffersByLowQualityFeature) {
  Rng rng(17);
  auto c = small_cfg();
  auto p = init_fusion<double>(c, 6);
  auto f = randn<double>({4, 16}, rng), a = randn<double>({4, 16}, rng);
  auto on = fuse(f, a, p, c);
  c.use_residual = false;
  auto off = fuse(f, a, p, c);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(on[i] - off[i], f[i], 1e-12);
}

TEST(Fuse, MismatchedInputsThrow) {
  auto c = small_cfg();
  auto p = init_fusion<float>(c, 1);
  Tensor<float> f({2, 16}), a({3, 16});
  EXPECT_THROW(fuse(f, a, p, c), ConfigError);
  c.cascade_depth = 2;
  Tensor<float> g({2, 16});
  EXPECT_THROW(fuse(g, g, p, c), ConfigError);
}

TEST(Fuse, GradientsMatchFiniteDifferences) {
  for (auto v : {RoleVariant::a, RoleVariant::c, RoleVariant::d}) {
    auto c = small_cfg();
    c.role_variant = v;
    auto run = [&](auto tag, double eps, int stencil) {
      using T = decltype(tag);
      Rng rng(18);
      auto p = init_fusion<T>(c, 7);
      auto f = randn<T>({4, 16}, rng, true), a = randn<T>({4, 16}, rng, true);
      auto w = randn<T>({4, 16}, rng);
      auto params = fusion_parameters(p, c);
      params.push_back(f);
      params.push_back(a);
      std::function<Tensor<T>()> loss = [&] { return sum(mul(fuse(f, a, p, c), w)); };
      GradCheckOptions opt;
      opt.stencil = stencil;
      opt.max_coords = 1500;
      return finite_diff_check_detailed<T>(loss, params, eps, opt);
    };
    EXPECT_LT(run(float{}, 1e-2, 4).max_rel_error, 1e-3);
    EXPECT_LT(run(double{}, 1e-6, 2).max_rel_error, 1e-6);
  }
}

TEST(Fuse, BundleRoundTrip) {
  Rng rng(19);
  auto c = small_cfg();
  c.cascade_depth = 3;
  auto p = init_fusion<float>(c, 8);
  auto q = fusion_from_bundle(fusion_bundle(p), c);
  auto f = randn<float>({2, 16}, rng), a = randn<float>({2, 16}, rng);
  EXPECT_EQ(fuse(f, a, p, c).vec(), fuse(f, a, q, c).vec());
  auto b = fusion_bundle(p);
  b.erase("stage1.CA3.wq");
  EXPECT_THROW(fusion_from_bundle(b, c), ConfigError);
}

TEST(Fuse, FusionParametersExcludeUnusedBlocks) {
  auto c = small_cfg();
  auto p = init_fusion<float>(c, 9);
  const auto nested = fusion_parameters(p, c).size();
  c.role_variant = RoleVariant::a;
  EXPECT_LT(fusion_parameters(p, c).size(), nested);
}
