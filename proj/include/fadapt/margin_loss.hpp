#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "fadapt/ops.hpp"
#include "fadapt/rng.hpp"

namespace fadapt {

/// Unified angular margin: target logit s * (cos(m1 * theta + m2) - m3),
/// other logits s * cos(theta). (1, 0.5, 0, s) is ArcFace, (1, 0, m, s) CosFace.
struct MarginParams {
  double m1 = 1.0;
  double m2 = 0.5;
  double m3 = 0.0;
  double s = 64.0;

  void validate() const {
    if (!(s > 0)) throw ConfigError("margin: s must be positive");
    if (!(m1 >= 1)) throw ConfigError("margin: m1 must be >= 1");
    if (!(m2 >= 0) || !(m3 >= 0)) throw ConfigError("margin: m2 and m3 must be nonnegative");
  }
};

inline constexpr double kCosClampEps = 1e-7;

/// Target-class margin transform psi(cos theta) and its derivative.
/// Past m1 * theta + m2 > pi the fallback cos(theta) - m2 * sin(m2) - m3 is used.
inline double margin_target_cos(double c, const MarginParams& p, double* dpsi_dc = nullptr) {
  const double theta = std::acos(c);
  const double ang = p.m1 * theta + p.m2;
  if (ang > std::numbers::pi) {
    if (dpsi_dc) *dpsi_dc = 1.0;
    return c - p.m2 * std::sin(p.m2) - p.m3;
  }
  if (dpsi_dc) {
    // d/dc cos(m1 acos(c) + m2) = m1 sin(m1 theta + m2) / sin(theta)
    *dpsi_dc = (p.m1 == 1.0 && p.m2 == 0.0) ? 1.0 : p.m1 * std::sin(ang) / std::sin(theta);
  }
  if (p.m1 == 1.0 && p.m2 == 0.0) return c - p.m3;
  return std::cos(ang) - p.m3;
}

/// Maps cos[B, C] to logits: s * psi(cos) on the label column, s * cos elsewhere.
template <class T>
Tensor<T> margin_logits(const Tensor<T>& cosines, std::span<const int> labels, const MarginParams& p) {
  if (cosines.rank() != 2 || labels.size() != cosines.dim(0))
    throw DimensionError("margin_logits: cosines " + shape_str(cosines.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t b = cosines.dim(0), c = cosines.dim(1);
  std::vector<T> out(cosines.numel());
  std::vector<T> dtarget(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw ContractError("margin loss: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = static_cast<T>(p.s * cosines[i * c + j]);
    double dpsi;
    const std::size_t k = i * c + static_cast<std::size_t>(labels[i]);
    out[k] = static_cast<T>(p.s * margin_target_cos(static_cast<double>(cosines[k]), p, &dpsi));
    dtarget[i] = static_cast<T>(p.s * dpsi);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  const T s = static_cast<T>(p.s);
  return Tensor<T>::make_result(cosines.shape(), std::move(out), {cosines},
                                [b, c, s, lab = std::move(lab), dtarget = std::move(dtarget)](detail::Node<T>& n) {
                                  T* g = detail::pgrad(n, 0);
                                  if (!g) return;
                                  for (std::size_t i = 0; i < b; ++i)
                                    for (std::size_t j = 0; j < c; ++j) {
                                      const std::size_t k = i * c + j;
                                      g[k] += n.grad[k] * (static_cast<int>(j) == lab[i] ? dtarget[i] : s);
                                    }
                                });
}

/// Class centres W [C, D], used L2-normalised.
template <class T>
struct ClassifierHead {
  Tensor<T> class_weights;

  std::size_t num_classes() const { return class_weights.dim(0); }

  static ClassifierHead random(std::size_t classes, std::size_t dim, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {stream::kInit, 0x4EAD}));
    std::vector<T> w(classes * dim);
    for (auto& v : w) v = static_cast<T>(rng.normal() / std::sqrt(static_cast<double>(dim)));
    return {Tensor<T>({classes, dim}, std::move(w), true)};
  }
};

/// Cosine matrix between normalised features [B, D] and normalised class centres, clamped.
template <class T>
Tensor<T> cosine_logits(const Tensor<T>& features, const ClassifierHead<T>& head) {
  if (features.rank() != 2 || features.dim(1) != head.class_weights.dim(1))
    throw DimensionError("angular margin loss: features " + shape_str(features.shape()) + " vs class weights " +
                         shape_str(head.class_weights.shape()));
  auto cos = matmul(l2_normalize_rows(features), transpose(l2_normalize_rows(head.class_weights)));
  return clamp(cos, static_cast<T>(-1 + kCosClampEps), static_cast<T>(1 - kCosClampEps));
}

/// Mean cross-entropy over the batch of the margin-adjusted scaled cosine logits.
template <class T>
Tensor<T> angular_margin_loss(const Tensor<T>& features, std::span<const int> labels, const ClassifierHead<T>& head,
                              const MarginParams& p) {
  p.validate();
  if (labels.size() != features.dim(0)) throw DimensionError("angular margin loss: label count != batch size");
  auto logits = margin_logits(cosine_logits(features, head), labels, p);
  return cross_entropy(logits, labels);
}

}  // namespace fadapt
