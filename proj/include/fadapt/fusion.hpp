#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fadapt/container.hpp"
#include "fadapt/ops.hpp"
#include "fadapt/rng.hpp"

namespace fadapt {

// ---------------------------------------------------------------------------
// Scaled dot-product attention over [B, L, D] tensors split into heads.

/// Attention with already-projected q [B, Lq, D], k/v [B, Lk, D]. If `weights`
/// is non-null it receives the softmax weights, laid out [B, H, Lq, Lk].
template <class T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                               std::vector<T>* weights = nullptr) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || k.shape() != v.shape() || q.dim(0) != k.dim(0) ||
      q.dim(2) != k.dim(2))
    throw DimensionError("attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                         shape_str(v.shape()));
  const std::size_t nb = q.dim(0), lq = q.dim(1), lk = k.dim(1), d = q.dim(2);
  if (heads == 0 || d % heads != 0) throw ConfigError("attention: d_model not divisible by head count");
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<T> probs(nb * heads * lq * lk), out(nb * lq * d, T(0));
  std::vector<double> row(lk);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < lq; ++i) {
        const T* qi = q.vec().data() + (b * lq + i) * d + h * dh;
        double mx = -1e300;
        for (std::size_t j = 0; j < lk; ++j) {
          const T* kj = k.vec().data() + (b * lk + j) * d + h * dh;
          double s = 0;
          for (std::size_t e = 0; e < dh; ++e) s += static_cast<double>(qi[e]) * kj[e];
          row[j] = s * sc;
          mx = std::max(mx, row[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < lk; ++j) z += (row[j] = std::exp(row[j] - mx));
        T* pr = probs.data() + ((b * heads + h) * lq + i) * lk;
        T* oi = out.data() + (b * lq + i) * d + h * dh;
        for (std::size_t j = 0; j < lk; ++j) {
          pr[j] = static_cast<T>(row[j] / z);
          const T* vj = v.vec().data() + (b * lk + j) * d + h * dh;
          for (std::size_t e = 0; e < dh; ++e) oi[e] += pr[j] * vj[e];
        }
      }
  if (weights) *weights = probs;
  return Tensor<T>::make_result(
      q.shape(), std::move(out), {q, k, v},
      [=, probs = std::move(probs)](detail::Node<T>& n) {
        const auto& qd = detail::pdata(n, 0);
        const auto& kd = detail::pdata(n, 1);
        const auto& vd = detail::pdata(n, 2);
        T* gq = detail::pgrad(n, 0);
        T* gk = detail::pgrad(n, 1);
        T* gv = detail::pgrad(n, 2);
        std::vector<double> dp(lk);
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < lq; ++i) {
              const T* pr = probs.data() + ((b * heads + h) * lq + i) * lk;
              const T* doi = n.grad.data() + (b * lq + i) * d + h * dh;
              double dot = 0;
              for (std::size_t j = 0; j < lk; ++j) {
                const std::size_t kv_off = (b * lk + j) * d + h * dh;
                double s = 0;
                for (std::size_t e = 0; e < dh; ++e) s += static_cast<double>(doi[e]) * vd[kv_off + e];
                dp[j] = s;
                dot += s * pr[j];
                if (gv)
                  for (std::size_t e = 0; e < dh; ++e) gv[kv_off + e] += pr[j] * doi[e];
              }
              const std::size_t q_off = (b * lq + i) * d + h * dh;
              for (std::size_t j = 0; j < lk; ++j) {
                const double ds = pr[j] * (dp[j] - dot) * sc;
                if (ds == 0.0) continue;
                const std::size_t kv_off = (b * lk + j) * d + h * dh;
                if (gq)
                  for (std::size_t e = 0; e < dh; ++e) gq[q_off + e] += static_cast<T>(ds * kd[kv_off + e]);
                if (gk)
                  for (std::size_t e = 0; e < dh; ++e) gk[kv_off + e] += static_cast<T>(ds * qd[q_off + e]);
              }
            }
      });
}

// ---------------------------------------------------------------------------
// Parameters

template <class T>
struct MhaParams {
  std::size_t d_model = 512;
  std::size_t n_heads = 8;
  T dropout = T(0);
  // Projections act as x · W (W is [in, out]).
  Tensor<T> wq, wk, wv, wo;
  Tensor<T> bq, bk, bv, bo;

  std::vector<Tensor<T>> tensors() const { return {wq, wk, wv, wo, bq, bk, bv, bo}; }
  static constexpr const char* kNames[8] = {"wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"};

  void validate() const {
    if (n_heads == 0 || d_model % n_heads != 0)
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(n_heads) +
                        " heads");
    if (dropout != T(0)) throw ConfigError("attention dropout must be 0");
    const Shape sq{d_model, d_model}, sb{d_model};
    for (const auto* w : {&wq, &wk, &wv, &wo})
      if (w->shape() != sq) throw ConfigError("projection shape " + shape_str(w->shape()) + ", want " + shape_str(sq));
    for (const auto* b : {&bq, &bk, &bv, &bo})
      if (b->shape() != sb) throw ConfigError("bias shape " + shape_str(b->shape()) + ", want " + shape_str(sb));
  }

  static MhaParams random(std::size_t d_model, std::size_t n_heads, Rng& rng) {
    MhaParams p;
    p.d_model = d_model;
    p.n_heads = n_heads;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d_model));
    auto mat = [&] {
      std::vector<T> v(d_model * d_model);
      for (auto& x : v) x = static_cast<T>(sd * rng.normal());
      return Tensor<T>({d_model, d_model}, std::move(v), true);
    };
    p.wq = mat();
    p.wk = mat();
    p.wv = mat();
    p.wo = mat();
    p.bq = Tensor<T>({d_model}, T(0), true);
    p.bk = Tensor<T>({d_model}, T(0), true);
    p.bv = Tensor<T>({d_model}, T(0), true);
    p.bo = Tensor<T>({d_model}, T(0), true);
    p.validate();
    return p;
  }
};

/// Multi-head attention on [B, L, D] inputs. `weights` (optional) receives the
/// attention matrix [B, H, Lq, Lk].
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                               const MhaParams<T>& p, std::vector<T>* weights = nullptr) {
  p.validate();
  for (const auto* x : {&q_in, &k_in, &v_in})
    if (x->rank() != 3 || x->dim(2) != p.d_model)
      throw ConfigError("attention input " + shape_str(x->shape()) + " does not end in d_model " +
                        std::to_string(p.d_model));
  auto q = linear(q_in, p.wq, p.bq);
  auto k = linear(k_in, p.wk, p.bk);
  auto v = linear(v_in, p.wv, p.bv);
  auto a = scaled_dot_attention(q, k, v, p.n_heads, weights);
  return linear(a, p.wo, p.bo);
}

template <class T>
struct AttnBlockParams {
  MhaParams<T> mha;
  Tensor<T> gamma, beta;  // post-norm affine
};

template <class T>
struct FfnParams {
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> gamma, beta;
};

/// One fusion stage: CA1, SA1, CA2, SA2, CA3 and the FFN.
template <class T>
struct StageParams {
  AttnBlockParams<T> ca1, sa1, ca2, sa2, ca3;
  FfnParams<T> ffn;
};

enum class AttentionOrder { cross_first, self_first };
enum class RoleVariant { a, b, c, d };

inline std::string to_string(AttentionOrder o) { return o == AttentionOrder::cross_first ? "cross_first" : "self_first"; }
inline std::string to_string(RoleVariant v) { return std::string(1, static_cast<char>('a' + static_cast<int>(v))); }

inline AttentionOrder parse_attention_order(const std::string& s) {
  if (s == "cross_first") return AttentionOrder::cross_first;
  if (s == "self_first") return AttentionOrder::self_first;
  throw ConfigError("attention_order must be cross_first or self_first, got '" + s + "'");
}

inline RoleVariant parse_role_variant(const std::string& s) {
  if (s.size() == 1 && s[0] >= 'a' && s[0] <= 'd') return static_cast<RoleVariant>(s[0] - 'a');
  throw ConfigError("role_variant must be one of a, b, c, d, got '" + s + "'");
}

struct FusionConfig {
  std::size_t d_model = 512;
  std::size_t n_heads = 8;
  std::size_t ffn_hidden = 2048;
  AttentionOrder attention_order = AttentionOrder::cross_first;
  RoleVariant role_variant = RoleVariant::d;
  std::size_t cascade_depth = 1;
  bool use_residual = true;
  bool block_norm = true;
  /// L2-normalise F_f and F_a before fusion.
  bool normalize_inputs = false;
  /// Initialise every stage's FFN output norm to zero so R starts at F_f.
  /// Ignored without the residual path, where it would make R identically 0.
  bool zero_init_output = true;

  bool nested() const { return role_variant == RoleVariant::c || role_variant == RoleVariant::d; }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw ConfigError("fusion: d_model must be a positive multiple of n_heads");
    if (ffn_hidden == 0) throw ConfigError("fusion: ffn_hidden must be positive");
    if (cascade_depth == 0) throw ConfigError("fusion: cascade_depth must be >= 1");
    if (zero_init_output && !block_norm)
      throw ConfigError("fusion: zero_init_output requires block_norm (the output norm is what gets zeroed)");
  }
};

template <class T>
struct FusionParams {
  std::vector<StageParams<T>> stages;
};

// ---------------------------------------------------------------------------
// Blocks

/// x_q + MHA(x_q, x_kv, x_kv), post-normed when `block_norm`.
template <class T>
Tensor<T> cross_attention_block(const Tensor<T>& x_q, const Tensor<T>& x_kv, const AttnBlockParams<T>& p,
                                bool block_norm) {
  auto y = add(x_q, multi_head_attention(x_q, x_kv, x_kv, p.mha));
  return block_norm ? layer_norm(y, p.gamma, p.beta) : y;
}

template <class T>
Tensor<T> self_attention_block(const Tensor<T>& x, const AttnBlockParams<T>& p, bool block_norm) {
  return cross_attention_block(x, x, p, block_norm);
}

/// x + dense(relu(dense(x))), post-normed when `block_norm`.
template <class T>
Tensor<T> feed_forward(const Tensor<T>& x, const FfnParams<T>& p, bool block_norm) {
  if (x.shape().back() != p.w1.dim(0) || p.w2.dim(1) != x.shape().back())
    throw ConfigError("feed_forward: input " + shape_str(x.shape()) + " vs weights " + shape_str(p.w1.shape()) + "/" +
                      shape_str(p.w2.shape()));
  auto y = add(x, linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2));
  return block_norm ? layer_norm(y, p.gamma, p.beta) : y;
}

/// F_fusion for one stage (no outer residual). Inputs are [B, 1, D].
template <class T>
Tensor<T> fusion_stage(const Tensor<T>& f, const Tensor<T>& a, const StageParams<T>& s, const FusionConfig& cfg) {
  const bool bn = cfg.block_norm;
  Tensor<T> x;
  switch (cfg.role_variant) {
    case RoleVariant::a:
      x = cross_attention_block(f, a, s.ca1, bn);
      break;
    case RoleVariant::b:
      x = cross_attention_block(a, f, s.ca1, bn);
      break;
    case RoleVariant::c:
    case RoleVariant::d: {
      Tensor<T> aff, faa;
      if (cfg.attention_order == AttentionOrder::cross_first) {
        aff = self_attention_block(cross_attention_block(a, f, s.ca1, bn), s.sa1, bn);
        faa = self_attention_block(cross_attention_block(f, a, s.ca2, bn), s.sa2, bn);
      } else {
        auto a1 = self_attention_block(a, s.sa1, bn);
        auto f1 = self_attention_block(f, s.sa2, bn);
        aff = cross_attention_block(a1, f1, s.ca1, bn);
        faa = cross_attention_block(f1, a1, s.ca2, bn);
      }
      x = cfg.role_variant == RoleVariant::d ? cross_attention_block(aff, faa, s.ca3, bn)
                                             : cross_attention_block(faa, aff, s.ca3, bn);
      break;
    }
  }
  return feed_forward(x, s.ffn, bn);
}

/// R for F_f, F_a of shape [B, D]. Stage i+1 consumes stage i's output as its
/// LQ-side input; F_a is shared by all stages.
template <class T>
Tensor<T> fuse(const Tensor<T>& F_f, const Tensor<T>& F_a, const FusionParams<T>& params, const FusionConfig& cfg) {
  cfg.validate();
  if (F_f.rank() != 2 || F_f.shape() != F_a.shape() || F_f.dim(1) != cfg.d_model)
    throw ConfigError("fuse: inputs " + shape_str(F_f.shape()) + " / " + shape_str(F_a.shape()) +
                      " inconsistent with d_model " + std::to_string(cfg.d_model));
  if (params.stages.size() != cfg.cascade_depth)
    throw ConfigError("fuse: parameter set has " + std::to_string(params.stages.size()) + " stages, config wants " +
                      std::to_string(cfg.cascade_depth));
  const std::size_t b = F_f.dim(0), d = F_f.dim(1);
  Tensor<T> lq = cfg.normalize_inputs ? l2_normalize_rows(F_f) : F_f;
  Tensor<T> hq = cfg.normalize_inputs ? l2_normalize_rows(F_a) : F_a;
  Tensor<T> a = reshape(hq, {b, 1, d});
  Tensor<T> r = lq;
  for (const auto& stage : params.stages) {
    auto fusion = reshape(fusion_stage(reshape(r, {b, 1, d}), a, stage, cfg), {b, d});
    r = cfg.use_residual ? add(r, fusion) : fusion;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Initialisation / parameter bookkeeping

template <class T>
FusionParams<T> init_fusion(const FusionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, {stream::kInit, 0xF05E}));
  const std::size_t d = cfg.d_model, hdim = cfg.ffn_hidden;
  auto block = [&] {
    AttnBlockParams<T> b;
    b.mha = MhaParams<T>::random(d, cfg.n_heads, rng);
    b.gamma = Tensor<T>({d}, T(1), true);
    b.beta = Tensor<T>({d}, T(0), true);
    return b;
  };
  auto dense = [&](std::size_t in, std::size_t out) {
    std::vector<T> v(in * out);
    const double sd = std::sqrt(2.0 / static_cast<double>(in));
    for (auto& x : v) x = static_cast<T>(sd * rng.normal());
    return Tensor<T>({in, out}, std::move(v), true);
  };
  FusionParams<T> p;
  for (std::size_t s = 0; s < cfg.cascade_depth; ++s) {
    StageParams<T> st;
    st.ca1 = block();
    st.sa1 = block();
    st.ca2 = block();
    st.sa2 = block();
    st.ca3 = block();
    st.ffn.w1 = dense(d, hdim);
    st.ffn.b1 = Tensor<T>({hdim}, T(0), true);
    st.ffn.w2 = dense(hdim, d);
    st.ffn.b2 = Tensor<T>({d}, T(0), true);
    st.ffn.gamma = Tensor<T>({d}, cfg.zero_init_output && cfg.use_residual ? T(0) : T(1), true);
    st.ffn.beta = Tensor<T>({d}, T(0), true);
    p.stages.push_back(std::move(st));
  }
  return p;
}

/// Forces F_fusion to exactly zero by zeroing each stage's output-norm affine.
template <class T>
void zero_fusion_output(FusionParams<T>& p, const FusionConfig& cfg) {
  if (!cfg.block_norm) throw ConfigError("zero_fusion_output requires block_norm");
  for (auto& s : p.stages) {
    std::fill(s.ffn.gamma.data().begin(), s.ffn.gamma.data().end(), T(0));
    std::fill(s.ffn.beta.data().begin(), s.ffn.beta.data().end(), T(0));
  }
}

/// Named view of every tensor, e.g. "stage0.CA1.wq", "stage0.FFN.w1".
template <class T>
TensorBundle<T> fusion_bundle(const FusionParams<T>& p) {
  TensorBundle<T> out;
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    const auto& st = p.stages[s];
    const std::string pre = "stage" + std::to_string(s) + ".";
    auto put_block = [&](const std::string& name, const AttnBlockParams<T>& b) {
      auto ts = b.mha.tensors();
      for (std::size_t i = 0; i < ts.size(); ++i) out.emplace(pre + name + "." + MhaParams<T>::kNames[i], ts[i]);
      out.emplace(pre + name + ".gamma", b.gamma);
      out.emplace(pre + name + ".beta", b.beta);
    };
    put_block("CA1", st.ca1);
    put_block("SA1", st.sa1);
    put_block("CA2", st.ca2);
    put_block("SA2", st.sa2);
    put_block("CA3", st.ca3);
    out.emplace(pre + "FFN.w1", st.ffn.w1);
    out.emplace(pre + "FFN.b1", st.ffn.b1);
    out.emplace(pre + "FFN.w2", st.ffn.w2);
    out.emplace(pre + "FFN.b2", st.ffn.b2);
    out.emplace(pre + "FFN.gamma", st.ffn.gamma);
    out.emplace(pre + "FFN.beta", st.ffn.beta);
  }
  return out;
}

/// Rebuilds parameters from a bundle produced by fusion_bundle.
template <class T>
FusionParams<T> fusion_from_bundle(const TensorBundle<T>& b, const FusionConfig& cfg) {
  cfg.validate();
  auto get = [&](const std::string& k) {
    auto it = b.find(k);
    if (it == b.end()) throw ConfigError("fusion checkpoint is missing '" + k + "'");
    auto t = it->second.clone();
    t.set_requires_grad(true);
    return t;
  };
  FusionParams<T> p;
  for (std::size_t s = 0; s < cfg.cascade_depth; ++s) {
    const std::string pre = "stage" + std::to_string(s) + ".";
    StageParams<T> st;
    auto block = [&](const std::string& name) {
      AttnBlockParams<T> bl;
      bl.mha.d_model = cfg.d_model;
      bl.mha.n_heads = cfg.n_heads;
      Tensor<T>* slots[8] = {&bl.mha.wq, &bl.mha.wk, &bl.mha.wv, &bl.mha.wo,
                             &bl.mha.bq, &bl.mha.bk, &bl.mha.bv, &bl.mha.bo};
      for (std::size_t i = 0; i < 8; ++i) *slots[i] = get(pre + name + "." + MhaParams<T>::kNames[i]);
      bl.mha.validate();
      bl.gamma = get(pre + name + ".gamma");
      bl.beta = get(pre + name + ".beta");
      return bl;
    };
    st.ca1 = block("CA1");
    st.sa1 = block("SA1");
    st.ca2 = block("CA2");
    st.sa2 = block("SA2");
    st.ca3 = block("CA3");
    st.ffn.w1 = get(pre + "FFN.w1");
    st.ffn.b1 = get(pre + "FFN.b1");
    st.ffn.w2 = get(pre + "FFN.w2");
    st.ffn.b2 = get(pre + "FFN.b2");
    st.ffn.gamma = get(pre + "FFN.gamma");
    st.ffn.beta = get(pre + "FFN.beta");
    p.stages.push_back(std::move(st));
  }
  return p;
}

/// Tensors that influence the output under `cfg` (unused blocks of the
/// single-cross-attention variants are excluded; norms only with block_norm).
template <class T>
std::vector<Tensor<T>> fusion_parameters(const FusionParams<T>& p, const FusionConfig& cfg) {
  std::vector<Tensor<T>> out;
  auto add_block = [&](const AttnBlockParams<T>& b) {
    for (auto& t : b.mha.tensors()) out.push_back(t);
    if (cfg.block_norm) {
      out.push_back(b.gamma);
      out.push_back(b.beta);
    }
  };
  for (const auto& s : p.stages) {
    add_block(s.ca1);
    if (cfg.nested()) {
      add_block(s.sa1);
      add_block(s.ca2);
      add_block(s.sa2);
      add_block(s.ca3);
    }
    out.push_back(s.ffn.w1);
    out.push_back(s.ffn.b1);
    out.push_back(s.ffn.w2);
    out.push_back(s.ffn.b2);
    if (cfg.block_norm) {
      out.push_back(s.ffn.gamma);
      out.push_back(s.ffn.beta);
    }
  }
  return out;
}

}  // namespace fadapt
