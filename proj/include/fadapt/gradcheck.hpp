#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "fadapt/rng.hpp"
#include "fadapt/tensor.hpp"

namespace fadapt {

struct GradCheckOptions {
  /// Upper bound on checked coordinates; all coordinates are checked when the
  /// parameter set is smaller.
  std::size_t max_coords = 4096;
  std::uint64_t seed = 0;
  /// 2: (f(x+h) - f(x-h)) / 2h. 4: fourth-order central stencil using +-h and
  /// +-2h, which allows larger steps where rounding noise dominates (32-bit).
  int stencil = 2;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t coords_checked = 0;
  /// Coordinates whose stencil crossed a kink of a piecewise op (relu, clamp);
  /// the central difference is not a valid reference there.
  std::size_t coords_skipped = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

/// Compares analytic gradients of `f` against central differences.
/// Error per coordinate is |analytic - fd| / max(1, |fd|); the maximum is returned.
/// Coordinates where x - eps, x, x + eps do not share one branch pattern of the
/// piecewise ops are counted in coords_skipped instead.
template <class T>
GradCheckResult finite_diff_check_detailed(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> params, double eps,
                                           GradCheckOptions opt = {}) {
  if (!(eps >= 1e-6 && eps <= 1e-2)) throw ContractError("finite_diff_check: eps out of range");
  for (auto& p : params) {
    if (!p.requires_grad()) p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tensor<T> loss = f();
    if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericalError("finite_diff_check: f is not finite");
    backward(loss);
  }
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].numel(); ++j) coords.emplace_back(i, j);
  if (coords.size() > opt.max_coords) {
    Rng rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng.engine());
    coords.resize(opt.max_coords);
    std::sort(coords.begin(), coords.end());
  }
  auto eval = [&](std::uint64_t& pattern) {
    NoGradGuard ng;
    BranchTrace trace;
    const double v = static_cast<double>(f().item());
    if (!std::isfinite(v)) throw NumericalError("finite_diff_check: f is not finite at a perturbed point");
    pattern = trace.hash();
    return v;
  };
  std::uint64_t base_pattern = 0;
  eval(base_pattern);
  GradCheckResult res;
  if (opt.stencil != 2 && opt.stencil != 4) throw ContractError("finite_diff_check: stencil must be 2 or 4");
  for (auto [pi, j] : coords) {
    auto& p = params[pi];
    const T orig = p[j];
    bool kink = false;
    // f at orig + k * eps; returns the realised offset through `step`.
    auto at = [&](double k, double& step) {
      std::uint64_t pat = 0;
      p[j] = static_cast<T>(orig + k * eps);
      step = static_cast<double>(p[j]) - orig;
      const double v = eval(pat);
      kink |= pat != base_pattern;
      return v;
    };
    double s1, s2, s3, s4;
    double fd;
    if (opt.stencil == 2) {
      const double fp = at(1, s1), fm = at(-1, s2);
      // Divide by the realised step; in 32-bit orig +- eps is rounded.
      fd = (fp - fm) / (s1 - s2);
    } else {
      const double f1 = at(1, s1), fm1 = at(-1, s2), f2 = at(2, s3), fm2 = at(-2, s4);
      const double d1 = (f1 - fm1) / (s1 - s2), d2 = (f2 - fm2) / (s3 - s4);
      fd = (4 * d1 - d2) / 3;
    }
    p[j] = orig;
    if (kink) {
      ++res.coords_skipped;
      continue;
    }
    const double err = std::abs(static_cast<double>(p.grad()[j]) - fd) / std::max(1.0, std::abs(fd));
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_param = pi;
      res.worst_index = j;
    }
    ++res.coords_checked;
  }
  return res;
}

template <class T>
double finite_diff_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> params, double eps,
                         GradCheckOptions opt = {}) {
  return finite_diff_check_detailed<T>(f, params, eps, opt).max_rel_error;
}

}  // namespace fadapt
