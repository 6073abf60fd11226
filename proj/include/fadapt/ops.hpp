#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "fadapt/tensor.hpp"

// Differentiable tensor operations. Reductions accumulate in double regardless
// of the tensor precision.

namespace fadapt {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<RowMat<T>>;
template <class T>
using CMapM = Eigen::Map<const RowMat<T>>;

/// Gradient buffer of parent i, or nullptr if that parent is not differentiated.
template <class T>
T* pgrad(Node<T>& n, std::size_t i) {
  auto& p = *n.parents[i];
  return p.requires_grad ? p.grad.data() : nullptr;
}

template <class T>
const std::vector<T>& pdata(Node<T>& n, std::size_t i) {
  return n.parents[i]->data;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
    for (std::size_t k = 0; k < 2; ++k)
      if (T* g = detail::pgrad(n, k))
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
    if (T* g = detail::pgrad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    if (T* g = detail::pgrad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
  });
}

/// Hadamard product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
    const auto& ad = detail::pdata(n, 0);
    const auto& bd = detail::pdata(n, 1);
    if (T* g = detail::pgrad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * bd[i];
    if (T* g = detail::pgrad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * ad[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [c](detail::Node<T>& n) {
    if (T* g = detail::pgrad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * c;
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  if (detail::branch_trace())
    for (std::size_t i = 0; i < out.size(); ++i) detail::trace_branch(a[i] > T(0));
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [](detail::Node<T>& n) {
    const auto& ad = detail::pdata(n, 0);
    if (T* g = detail::pgrad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (ad[i] > T(0)) g[i] += n.grad[i];
  });
}

/// x * sigmoid(x)
template <class T>
Tensor<T> silu(const Tensor<T>& a) {
  std::vector<T> out(a.numel()), sig(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    sig[i] = T(1) / (T(1) + std::exp(-a[i]));
    out[i] = a[i] * sig[i];
  }
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [sig = std::move(sig)](detail::Node<T>& n) {
    const auto& ad = detail::pdata(n, 0);
    if (T* g = detail::pgrad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * sig[i] * (T(1) + ad[i] * (T(1) - sig[i]));
  });
}

/// Clamp with zero gradient outside the open interval (lo, hi).
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a[i], lo, hi);
  if (detail::branch_trace())
    for (std::size_t i = 0; i < out.size(); ++i) detail::trace_branch(a[i] <= lo ? 0 : a[i] >= hi ? 2 : 1);
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [lo, hi](detail::Node<T>& n) {
    const auto& ad = detail::pdata(n, 0);
    if (T* g = detail::pgrad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (ad[i] > lo && ad[i] < hi) g[i] += n.grad[i];
  });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, T c) { return scale(a, c); }

/// x[..., D] + b[D]
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  const std::size_t d = b.numel();
  if (b.rank() != 1 || x.shape().back() != d)
    throw DimensionError("add_bias: last dim of " + shape_str(x.shape()) + " vs bias " + shape_str(b.shape()));
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + b[i % d];
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, b}, [d](detail::Node<T>& n) {
    if (T* g = detail::pgrad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    if (T* g = detail::pgrad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % d] += n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Shape

/// Same values, new shape. Data is copied; gradient passes through unchanged.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return Tensor<T>::make_result(std::move(shape), x.vec(), {x}, [](detail::Node<T>& n) {
    if (T* g = detail::pgrad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return Tensor<T>::make_result({c, r}, std::move(out), {x}, [r, c](detail::Node<T>& n) {
    if (T* g = detail::pgrad(n, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto nc = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(m * nc));
  detail::MapM<T>(out.data(), m, nc).noalias() =
      detail::CMapM<T>(a.vec().data(), m, k) * detail::CMapM<T>(b.vec().data(), k, nc);
  return Tensor<T>::make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [m, k, nc](detail::Node<T>& n) {
    detail::CMapM<T> dc(n.grad.data(), m, nc);
    if (T* g = detail::pgrad(n, 0))
      detail::MapM<T>(g, m, k).noalias() += dc * detail::CMapM<T>(detail::pdata(n, 1).data(), k, nc).transpose();
    if (T* g = detail::pgrad(n, 1))
      detail::MapM<T>(g, k, nc).noalias() += detail::CMapM<T>(detail::pdata(n, 0).data(), m, k).transpose() * dc;
  });
}

/// x[..., in] · w[in, out] + b[out]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const std::size_t in = w.dim(0);
  if (x.shape().back() != in)
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  auto y = add_bias(matmul(reshape(x, {x.numel() / in, in}), w), b);
  return reshape(y, std::move(out_shape));
}

// ---------------------------------------------------------------------------
// Reductions / normalisation

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0;
  for (T v : x.data()) s += v;
  return Tensor<T>::make_result({1}, {static_cast<T>(s)}, {x}, [](detail::Node<T>& n) {
    if (T* g = detail::pgrad(n, 0)) {
      const std::size_t len = n.parents[0]->data.size();
      for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[0];
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

namespace detail {
inline void axis_split(const Shape& s, int axis, std::size_t& outer, std::size_t& len, std::size_t& inner) {
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("invalid axis for shape " + shape_str(s));
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < r; ++i) inner *= s[i];
  len = s[axis];
}
}  // namespace detail

/// Softmax along `axis` (negative counts from the end), max-subtracted.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
  std::size_t outer, len, inner;
  detail::axis_split(x.shape(), axis, outer, len, inner);
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      double z = 0;
      for (std::size_t j = 0; j < len; ++j) z += std::exp(static_cast<double>(x[base + j * inner] - mx));
      for (std::size_t j = 0; j < len; ++j)
        out[base + j * inner] = static_cast<T>(std::exp(static_cast<double>(x[base + j * inner] - mx)) / z);
    }
  return Tensor<T>::make_result(x.shape(), out, {x}, [outer, len, inner, y = out](detail::Node<T>& n) {
    T* g = detail::pgrad(n, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0;
        for (std::size_t j = 0; j < len; ++j) dot += static_cast<double>(n.grad[base + j * inner]) * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t k = base + j * inner;
          g[k] += static_cast<T>(y[k] * (n.grad[k] - dot));
        }
      }
  });
}

/// Layer normalisation over the last dimension with affine gamma/beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d)
    throw DimensionError("layer_norm: last dim " + std::to_string(d) + " vs gamma/beta " +
                         shape_str(gamma.shape()) + "/" + shape_str(beta.shape()));
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.vec().data() + r * d;
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[r] = static_cast<T>(is);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = static_cast<T>((xr[j] - mu) * is);
      out[r * d + j] = gamma[j] * xhat[r * d + j] + beta[j];
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& n) {
        const auto& gm = detail::pdata(n, 1);
        T* gx = detail::pgrad(n, 0);
        T* gg = detail::pgrad(n, 1);
        T* gb = detail::pgrad(n, 2);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dy = n.grad.data() + r * d;
          const T* xh = xhat.data() + r * d;
          if (gg)
            for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * xh[j];
          if (gb)
            for (std::size_t j = 0; j < d; ++j) gb[j] += dy[j];
          if (gx) {
            double s1 = 0, s2 = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = static_cast<double>(dy[j]) * gm[j];
              s1 += dxh;
              s2 += dxh * xh[j];
            }
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = static_cast<double>(dy[j]) * gm[j];
              gx[r * d + j] += static_cast<T>(inv_std[r] * (dxh - s1 * inv_d - xh[j] * s2 * inv_d));
            }
          }
        }
      });
}

/// Divides each row of x[N, D] by its L2 norm. Zero rows are a contract error.
template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("l2_normalize_rows expects a matrix, got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), d = x.dim(1);
  std::vector<T> out(x.numel()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(x[r * d + j]) * x[r * d + j];
    if (!(s > 0)) throw ContractError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    const double nr = std::sqrt(s);
    norms[r] = static_cast<T>(nr);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = static_cast<T>(x[r * d + j] / nr);
  }
  return Tensor<T>::make_result(x.shape(), out, {x},
                                [rows, d, y = out, norms = std::move(norms)](detail::Node<T>& n) {
                                  T* g = detail::pgrad(n, 0);
                                  if (!g) return;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    double dot = 0;
                                    for (std::size_t j = 0; j < d; ++j)
                                      dot += static_cast<double>(n.grad[r * d + j]) * y[r * d + j];
                                    for (std::size_t j = 0; j < d; ++j)
                                      g[r * d + j] +=
                                          static_cast<T>((n.grad[r * d + j] - y[r * d + j] * dot) / norms[r]);
                                  }
                                });
}

/// Mean softmax cross-entropy of logits[B, C] against integer labels.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects [B, C] logits");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) throw DimensionError("cross_entropy: label count does not match batch");
  std::vector<T> probs(logits.numel());
  double loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw ContractError("cross_entropy: label out of range");
    const T* row = logits.vec().data() + i * c;
    const T mx = *std::max_element(row, row + c);
    double z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / z);
    loss += std::log(z) - static_cast<double>(row[y] - mx);
  }
  loss /= static_cast<double>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor<T>::make_result({1}, {static_cast<T>(loss)}, {logits},
                                [b, c, probs = std::move(probs), lab = std::move(lab)](detail::Node<T>& n) {
                                  T* g = detail::pgrad(n, 0);
                                  if (!g) return;
                                  const T s = n.grad[0] / static_cast<T>(b);
                                  for (std::size_t i = 0; i < b; ++i)
                                    for (std::size_t j = 0; j < c; ++j)
                                      g[i * c + j] += s * (probs[i * c + j] - (static_cast<int>(j) == lab[i] ? T(1) : T(0)));
                                });
}

// ---------------------------------------------------------------------------
// Convolution / pooling on [B, C, H, W]

/// 2D cross-correlation, stride 1, zero padding `pad`. w: [O, C, K, K], b: [O].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3) || bias.numel() != w.dim(0))
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()) + " bias " +
                         shape_str(bias.shape()));
  const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  if (h + 2 * pad < k || wd + 2 * pad < k) throw DimensionError("conv2d: kernel larger than padded input");
  const std::size_t oh = h + 2 * pad - k + 1, ow = wd + 2 * pad - k + 1;
  const std::size_t ckk = c * k * k, hw = oh * ow;
  std::vector<T> cols(nb * ckk * hw, T(0));
  for (std::size_t n = 0; n < nb; ++n) {
    T* col = cols.data() + n * ckk * hw;
    const T* xin = x.vec().data() + n * c * h * wd;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          T* crow = col + ((ci * k + ky) * k + kx) * hw;
          for (std::size_t y = 0; y < oh; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - static_cast<std::ptrdiff_t>(pad);
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(wd)) continue;
              crow[y * ow + xx] = xin[(ci * h + sy) * wd + sx];
            }
          }
        }
  }
  std::vector<T> out(nb * o * hw);
  const auto eo = static_cast<Eigen::Index>(o), eckk = static_cast<Eigen::Index>(ckk),
             ehw = static_cast<Eigen::Index>(hw);
  detail::CMapM<T> wm(w.vec().data(), eo, eckk);
  for (std::size_t n = 0; n < nb; ++n) {
    detail::MapM<T> om(out.data() + n * o * hw, eo, ehw);
    om.noalias() = wm * detail::CMapM<T>(cols.data() + n * ckk * hw, eckk, ehw);
    for (std::size_t oc = 0; oc < o; ++oc) om.row(static_cast<Eigen::Index>(oc)).array() += bias[oc];
  }
  return Tensor<T>::make_result(
      {nb, o, oh, ow}, std::move(out), {x, w, bias},
      [=, cols = std::move(cols)](detail::Node<T>& nd) {
        T* gx = detail::pgrad(nd, 0);
        T* gw = detail::pgrad(nd, 1);
        T* gb = detail::pgrad(nd, 2);
        detail::CMapM<T> wm2(detail::pdata(nd, 1).data(), eo, eckk);
        std::vector<T> dcol(gx ? ckk * hw : 0);
        for (std::size_t n = 0; n < nb; ++n) {
          detail::CMapM<T> dout(nd.grad.data() + n * o * hw, eo, ehw);
          if (gw)
            detail::MapM<T>(gw, eo, eckk).noalias() +=
                dout * detail::CMapM<T>(cols.data() + n * ckk * hw, eckk, ehw).transpose();
          if (gb)
            for (std::size_t oc = 0; oc < o; ++oc) gb[oc] += dout.row(static_cast<Eigen::Index>(oc)).sum();
          if (gx) {
            detail::MapM<T>(dcol.data(), eckk, ehw).noalias() = wm2.transpose() * dout;
            T* gxi = gx + n * c * h * wd;
            for (std::size_t ci = 0; ci < c; ++ci)
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const T* crow = dcol.data() + ((ci * k + ky) * k + kx) * hw;
                  for (std::size_t y = 0; y < oh; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t xx = 0; xx < ow; ++xx) {
                      const std::ptrdiff_t sx =
                          static_cast<std::ptrdiff_t>(xx + kx) - static_cast<std::ptrdiff_t>(pad);
                      if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(wd)) continue;
                      gxi[(ci * h + sy) * wd + sx] += crow[y * ow + xx];
                    }
                  }
                }
          }
        }
      });
}

/// 2x2 average pooling, stride 2. Odd trailing rows/columns are dropped.
template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(2) < 2 || x.dim(3) < 2) throw DimensionError("avg_pool2: input " + shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), oh = h / 2, ow = w / 2;
  std::vector<T> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T* b = x.vec().data() + p * h * w + 2 * y * w + 2 * xx;
        out[(p * oh + y) * ow + xx] = (b[0] + b[1] + b[w] + b[w + 1]) * T(0.25);
      }
  return Tensor<T>::make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                                [planes, h, w, oh, ow](detail::Node<T>& n) {
                                  T* g = detail::pgrad(n, 0);
                                  if (!g) return;
                                  for (std::size_t p = 0; p < planes; ++p)
                                    for (std::size_t y = 0; y < oh; ++y)
                                      for (std::size_t xx = 0; xx < ow; ++xx) {
                                        const T v = n.grad[(p * oh + y) * ow + xx] * T(0.25);
                                        T* b = g + p * h * w + 2 * y * w + 2 * xx;
                                        b[0] += v;
                                        b[1] += v;
                                        b[w] += v;
                                        b[w + 1] += v;
                                      }
                                });
}

}  // namespace fadapt
