#pragma once

// Finite-difference check of the whole trainable path:
// embed (HQ branch) -> fuse -> angular margin loss.

#include <vector>

#include "fadapt/backbone.hpp"
#include "fadapt/fusion.hpp"
#include "fadapt/gradcheck.hpp"
#include "fadapt/margin_loss.hpp"

namespace fadapt {

struct PipelineCheckSize {
  std::size_t d_model = 16;
  std::size_t n_heads = 4;
  std::size_t batch = 4;
  std::size_t classes = 8;
  std::size_t image_size = 8;
  std::vector<std::size_t> channels{2, 4};
  std::size_t ffn_hidden = 32;
};

struct PipelineCheckResult {
  GradCheckResult f32, f64;
  double eps32 = 0, eps64 = 0;
  bool passed(double tol32 = 1e-3, double tol64 = 1e-6) const {
    return f32.max_rel_error < tol32 && f64.max_rel_error < tol64;
  }
};

/// Builds a small random problem with the structural options of `structure`
/// (order, role variant, depth, residual, norms) and checks every trainable tensor.
template <class T>
GradCheckResult pipeline_gradcheck(const FusionConfig& structure, const MarginParams& margin, std::uint64_t seed,
                                   double eps, const PipelineCheckSize& sz = {}, int stencil = 2,
                                   std::size_t max_coords = 4096) {
  FusionConfig fc = structure;
  fc.d_model = sz.d_model;
  fc.n_heads = sz.n_heads;
  fc.ffn_hidden = sz.ffn_hidden;
  // A zero output norm would make every upstream gradient vanish and the check vacuous.
  fc.zero_init_output = false;
  BackboneConfig bc;
  bc.image_size = sz.image_size;
  bc.channels = sz.channels;
  bc.embedding_dim = sz.d_model;
  auto frozen = BackboneParams<T>::random(bc, derive_seed(seed, {1}));
  frozen.set_trainable(false);
  auto hq = BackboneParams<T>::random(bc, derive_seed(seed, {2}));
  auto fusion = init_fusion<T>(fc, derive_seed(seed, {3}));
  auto head = ClassifierHead<T>::random(sz.classes, sz.d_model, derive_seed(seed, {4}));
  // Non-trivial norm affines so the norm parameters get generic gradients.
  Rng rng(derive_seed(seed, {5}));
  for (auto& t : fusion_parameters(fusion, fc))
    if (t.rank() == 1)
      for (auto& v : Tensor<T>(t).data()) v = static_cast<T>(v + 0.1 * rng.normal());
  const std::size_t px = sz.batch * sz.image_size * sz.image_size;
  std::vector<T> lq(px), rs(px);
  for (auto& v : lq) v = static_cast<T>(rng.uniform());
  for (auto& v : rs) v = static_cast<T>(rng.uniform());
  Tensor<T> lq_t({sz.batch, sz.image_size, sz.image_size}, lq), rs_t({sz.batch, sz.image_size, sz.image_size}, rs);
  std::vector<int> labels(sz.batch);
  for (std::size_t i = 0; i < sz.batch; ++i) labels[i] = static_cast<int>(i % sz.classes);
  Tensor<T> f;
  {
    NoGradGuard ng;
    f = embed(lq_t, frozen);
  }
  auto params = hq.parameters();
  for (auto& t : fusion_parameters(fusion, fc)) params.push_back(t);
  params.push_back(head.class_weights);
  std::function<Tensor<T>()> loss = [&] {
    return angular_margin_loss(fuse(f, embed(rs_t, hq), fusion, fc), labels, head, margin);
  };
  GradCheckOptions opt;
  opt.max_coords = max_coords;
  opt.seed = seed;
  opt.stencil = stencil;
  return finite_diff_check_detailed<T>(loss, params, eps, opt);
}

inline constexpr double kPipelineEps32 = 1e-2;
inline constexpr double kPipelineEps64 = 1e-6;
inline constexpr int kPipelineStencil32 = 4;

inline PipelineCheckResult pipeline_gradcheck_both(const FusionConfig& structure, const MarginParams& margin,
                                                   std::uint64_t seed, const PipelineCheckSize& sz = {}) {
  PipelineCheckResult r;
  r.eps32 = kPipelineEps32;
  r.eps64 = kPipelineEps64;
  r.f32 = pipeline_gradcheck<float>(structure, margin, seed, r.eps32, sz, kPipelineStencil32);
  r.f64 = pipeline_gradcheck<double>(structure, margin, seed, r.eps64, sz);
  return r;
}

}  // namespace fadapt
