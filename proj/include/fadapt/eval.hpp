#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "fadapt/error.hpp"

namespace fadapt {

struct ScoreSet {
  std::vector<double> scores;
  std::vector<bool> genuine;

  void validate() const {
    if (scores.size() != genuine.size()) throw ContractError("ScoreSet: scores and labels differ in length");
    for (double s : scores)
      if (!std::isfinite(s)) throw ContractError("ScoreSet: non-finite score");
  }
  std::size_t n_genuine() const { return static_cast<std::size_t>(std::count(genuine.begin(), genuine.end(), true)); }
  std::size_t n_impostor() const { return genuine.size() - n_genuine(); }
};

template <class A, class B>
double cosine_similarity(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw ContractError("cosine_similarity: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na == 0 || nb == 0) throw ContractError("cosine_similarity: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  return cosine_similarity<double, double>(a, b);
}

// ---------------------------------------------------------------------------
// 1:1 verification accuracy

namespace detail {

/// Best threshold (predict genuine iff score > t) over {lowest, midpoints of
/// sorted unique scores, max}; ties go to the smallest threshold.
inline double best_threshold(std::vector<std::pair<double, bool>> pts) {
  std::sort(pts.begin(), pts.end(), [](auto& x, auto& y) { return x.first < y.first; });
  const std::size_t n = pts.size();
  std::size_t genuine_total = 0;
  for (auto& p : pts) genuine_total += p.second;
  // Threshold below everything: all predicted genuine.
  std::size_t correct = genuine_total;
  std::size_t best_correct = correct;
  double best_t = std::numeric_limits<double>::lowest();
  std::size_t i = 0;
  while (i < n) {
    const double v = pts[i].first;
    // Move every point with score == v to the "rejected" side.
    while (i < n && pts[i].first == v) {
      correct += pts[i].second ? std::size_t(0) : std::size_t(1);
      correct -= pts[i].second ? std::size_t(1) : std::size_t(0);
      ++i;
    }
    const double t = i < n ? 0.5 * (v + pts[i].first) : std::numeric_limits<double>::max();
    if (correct > best_correct) {
      best_correct = correct;
      best_t = t;
    }
  }
  return best_t;
}

inline double accuracy_at(std::span<const std::pair<double, bool>> pts, double t) {
  std::size_t ok = 0;
  for (auto& p : pts) ok += ((p.first > t) == p.second);
  return static_cast<double>(ok) / static_cast<double>(pts.size());
}

}  // namespace detail

struct VerificationResult {
  double accuracy = 0;
  std::vector<double> thresholds;  // one per fold
};

/// k-fold verification accuracy: sample i belongs to fold i % k; each fold is
/// scored with the threshold that is best on the other folds. With k == 1 the
/// threshold is chosen and evaluated on the full set.
inline VerificationResult verification_accuracy(const ScoreSet& s, std::size_t n_folds = 10) {
  s.validate();
  if (n_folds == 0) throw ContractError("verification_accuracy: n_folds must be positive");
  if (s.n_genuine() < n_folds || s.n_impostor() < n_folds)
    throw ContractError("verification_accuracy: need at least n_folds genuine and impostor scores");
  std::vector<std::vector<std::pair<double, bool>>> folds(n_folds);
  for (std::size_t i = 0; i < s.scores.size(); ++i) folds[i % n_folds].emplace_back(s.scores[i], s.genuine[i]);
  for (auto& f : folds)
    if (f.empty()) throw ContractError("verification_accuracy: empty fold");
  VerificationResult r;
  double acc = 0;
  for (std::size_t k = 0; k < n_folds; ++k) {
    std::vector<std::pair<double, bool>> train;
    for (std::size_t j = 0; j < n_folds; ++j)
      if (j != k || n_folds == 1) train.insert(train.end(), folds[j].begin(), folds[j].end());
    const double t = detail::best_threshold(std::move(train));
    r.thresholds.push_back(t);
    acc += detail::accuracy_at(folds[k], t);
  }
  r.accuracy = acc / static_cast<double>(n_folds);
  return r;
}

// ---------------------------------------------------------------------------
// TAR @ FAR

struct TarResult {
  double tar = 0;
  double threshold = 0;
  double far_achieved = 0;
};

/// Accept iff score >= threshold. Candidate thresholds, smallest first: -inf,
/// each impostor score, then just above the largest impostor score. The
/// smallest candidate with impostor acceptance <= far is used.
inline TarResult tar_at_far_detailed(const ScoreSet& s, double far) {
  s.validate();
  if (!(far > 0 && far <= 1)) throw ContractError("tar_at_far: far must be in (0, 1]");
  std::vector<double> imp, gen;
  for (std::size_t i = 0; i < s.scores.size(); ++i) (s.genuine[i] ? gen : imp).push_back(s.scores[i]);
  if (imp.empty() || gen.empty()) throw ContractError("tar_at_far: need both genuine and impostor scores");
  std::sort(imp.begin(), imp.end());
  std::sort(gen.begin(), gen.end());
  const double ni = static_cast<double>(imp.size());
  auto tar_for = [&](double t) {
    auto it = std::lower_bound(gen.begin(), gen.end(), t);
    return static_cast<double>(gen.end() - it) / static_cast<double>(gen.size());
  };
  if (far >= 1.0) return {1.0, -std::numeric_limits<double>::infinity(), 1.0};
  // At t = imp[i] (first occurrence of its value) the accepted impostors are imp[i..].
  for (std::size_t i = 0; i < imp.size(); ++i) {
    if (i > 0 && imp[i] == imp[i - 1]) continue;
    const double fa = static_cast<double>(imp.size() - i) / ni;
    if (fa <= far) return {tar_for(imp[i]), imp[i], fa};
  }
  const double above = std::nextafter(imp.back(), std::numeric_limits<double>::infinity());
  return {tar_for(above), above, 0.0};
}

inline double tar_at_far(const ScoreSet& s, double far) { return tar_at_far_detailed(s, far).tar; }

// ---------------------------------------------------------------------------
// Identification

/// Fraction of probes whose label appears among the K most similar gallery
/// entries (cosine, descending; ties by lower gallery index).
template <class V>
double top_k_hits(const std::vector<V>& probe_embs, std::span<const int> probe_labels, const std::vector<V>& gallery_embs,
                  std::span<const int> gallery_labels, std::size_t k) {
  if (gallery_embs.empty()) throw ContractError("top_k_hits: empty gallery");
  if (k == 0 || k > gallery_embs.size()) throw ContractError("top_k_hits: K out of range");
  if (probe_embs.size() != probe_labels.size() || gallery_embs.size() != gallery_labels.size())
    throw ContractError("top_k_hits: embeddings and labels differ in length");
  if (probe_embs.empty()) throw ContractError("top_k_hits: no probes");
  using E = typename V::value_type;
  std::vector<std::pair<double, std::size_t>> sims(gallery_embs.size());
  std::size_t hits = 0;
  for (std::size_t p = 0; p < probe_embs.size(); ++p) {
    for (std::size_t g = 0; g < gallery_embs.size(); ++g)
      sims[g] = {cosine_similarity<E, E>(probe_embs[p], gallery_embs[g]), g};
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(), [](auto& a, auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t r = 0; r < k; ++r)
      if (gallery_labels[sims[r].second] == probe_labels[p]) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(probe_embs.size());
}

struct VerificationReport {
  double accuracy = 0;
  std::vector<double> thresholds;
  std::map<double, double> tar_at_far;
  std::map<std::size_t, double> rank_k_hit_rate;
};

}  // namespace fadapt
