#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

#include "hug/gaussian.hpp"
#include "hug/tape.hpp"
#include "hug/tensor.hpp"

namespace hug {

struct ModelConfig {
  std::size_t k = 32;       // fine-grained components
  std::size_t d = 16;       // token / embedding width
  std::size_t d_hidden = 32;
  std::size_t d_txt = 32;
  std::size_t d_img = 32;
};

/// Single-layer cross-attention composer over projected modality tokens,
/// queried by K learnable tokens. Stand-in for a pretrained multimodal
/// composer with the same calling conventions (both / image-only / text-only).
struct ComposerParams {
  Tensor x_lq;      // K x D learnable query tokens
  Tensor proj_txt;  // d_txt x D
  Tensor proj_img;  // d_img x D
  Tensor w_q, w_k, w_v;    // D x D
  Tensor ff_w1;            // D x D_h
  Tensor ff_b1;            // 1 x D_h
  Tensor ff_w2;            // D_h x D
  Tensor ff_b2;            // 1 x D

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".x_lq", x_lq);
    f(prefix + ".proj_txt", proj_txt);
    f(prefix + ".proj_img", proj_img);
    f(prefix + ".w_q", w_q);
    f(prefix + ".w_k", w_k);
    f(prefix + ".w_v", w_v);
    f(prefix + ".ff_w1", ff_w1);
    f(prefix + ".ff_b1", ff_b1);
    f(prefix + ".ff_w2", ff_w2);
    f(prefix + ".ff_b2", ff_b2);
  }
};

/// One-layer self-attention block over the K component tokens followed by a
/// feed-forward stack emitting a K x D log-variance field.
struct UncertaintyHeadParams {
  Tensor w_q, w_k, w_v;  // D x D
  Tensor ff_w1;          // D x D_h
  Tensor ff_b1;          // 1 x D_h
  Tensor ff_w2;          // D_h x D
  Tensor ff_b2;          // 1 x D (log-variance bias)

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w_q", w_q);
    f(prefix + ".w_k", w_k);
    f(prefix + ".w_v", w_v);
    f(prefix + ".ff_w1", ff_w1);
    f(prefix + ".ff_b1", ff_b1);
    f(prefix + ".ff_w2", ff_w2);
    f(prefix + ".ff_b2", ff_b2);
  }
};

/// Full parameter set: composer, the three uncertainty heads (g_V shared
/// between target and query reference-image legs), and the loss scalars.
struct ModelParams {
  ModelConfig cfg;
  ComposerParams composer;
  UncertaintyHeadParams head_v, head_t, head_m;
  Tensor a, b;    // holistic-contrast scalars, init 1 and 0
  Tensor ap, bp;  // fine-grained-contrast scalars, init 1 and 0

  template <typename F>
  void visit(F&& f) {
    composer.visit("composer", f);
    head_v.visit("head_v", f);
    head_t.visit("head_t", f);
    head_m.visit("head_m", f);
    f(std::string("loss.a"), a);
    f(std::string("loss.b"), b);
    f(std::string("loss.ap"), ap);
    f(std::string("loss.bp"), bp);
  }

  template <typename F>
  void visit(F&& f) const {
    const_cast<ModelParams*>(this)->visit(
        [&](const std::string& n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); });
  }
};

namespace detail {

inline Tensor init_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  return uniform_tensor({r, c}, 1.0 / std::sqrt(static_cast<double>(r)), rng);
}

inline UncertaintyHeadParams init_head(const ModelConfig& cfg, std::mt19937_64& rng) {
  UncertaintyHeadParams h;
  h.w_q = init_matrix(cfg.d, cfg.d, rng);
  h.w_k = init_matrix(cfg.d, cfg.d, rng);
  h.w_v = init_matrix(cfg.d, cfg.d, rng);
  h.ff_w1 = init_matrix(cfg.d, cfg.d_hidden, rng);
  h.ff_b1 = Tensor::zeros({1, cfg.d_hidden});
  h.ff_w2 = init_matrix(cfg.d_hidden, cfg.d, rng);
  h.ff_b2 = Tensor::full({1, cfg.d}, -2.0);  // variance starts near exp(-2)
  return h;
}

}  // namespace detail

inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams m;
  m.cfg = cfg;
  m.composer.x_lq = normal_tensor({cfg.k, cfg.d}, 0.02, rng);
  m.composer.proj_txt = detail::init_matrix(cfg.d_txt, cfg.d, rng);
  m.composer.proj_img = detail::init_matrix(cfg.d_img, cfg.d, rng);
  m.composer.w_q = detail::init_matrix(cfg.d, cfg.d, rng);
  m.composer.w_k = detail::init_matrix(cfg.d, cfg.d, rng);
  m.composer.w_v = detail::init_matrix(cfg.d, cfg.d, rng);
  m.composer.ff_w1 = detail::init_matrix(cfg.d, cfg.d_hidden, rng);
  m.composer.ff_b1 = Tensor::zeros({1, cfg.d_hidden});
  m.composer.ff_w2 = detail::init_matrix(cfg.d_hidden, cfg.d, rng);
  m.composer.ff_b2 = Tensor::zeros({1, cfg.d});
  m.head_v = detail::init_head(cfg, rng);
  m.head_t = detail::init_head(cfg, rng);
  m.head_m = detail::init_head(cfg, rng);
  m.a = Tensor::scalar(1.0);
  m.b = Tensor::scalar(0.0);
  m.ap = Tensor::scalar(4.0);
  m.bp = Tensor::scalar(0.0);
  return m;
}

struct ComposerVars {
  Var x_lq, proj_txt, proj_img, w_q, w_k, w_v, ff_w1, ff_b1, ff_w2, ff_b2;
};
struct HeadVars {
  Var w_q, w_k, w_v, ff_w1, ff_b1, ff_w2, ff_b2;
};

/// Tape-bound mirror of ModelParams. Binding order matches visit() order so
/// gradients can be collected back into named tensors.
struct ModelVars {
  ModelConfig cfg;
  ComposerVars composer;
  HeadVars head_v, head_t, head_m;
  Var a, b, ap, bp;
};

inline ModelVars bind_model(Tape& tape, const ModelParams& m) {
  ModelVars v;
  v.cfg = m.cfg;
  auto p = [&](const Tensor& t) { return tape.param(t); };
  v.composer = ComposerVars{p(m.composer.x_lq),  p(m.composer.proj_txt),
                            p(m.composer.proj_img), p(m.composer.w_q),
                            p(m.composer.w_k),   p(m.composer.w_v),
                            p(m.composer.ff_w1), p(m.composer.ff_b1),
                            p(m.composer.ff_w2), p(m.composer.ff_b2)};
  auto bind_head = [&](const UncertaintyHeadParams& h) {
    return HeadVars{p(h.w_q), p(h.w_k), p(h.w_v), p(h.ff_w1), p(h.ff_b1), p(h.ff_w2),
                    p(h.ff_b2)};
  };
  v.head_v = bind_head(m.head_v);
  v.head_t = bind_head(m.head_t);
  v.head_m = bind_head(m.head_m);
  v.a = p(m.a);
  v.b = p(m.b);
  v.ap = p(m.ap);
  v.bp = p(m.bp);
  return v;
}

namespace detail {

// rows-broadcast of a 1 x n bias to m rows via ones(m,1) @ bias
inline Var add_row_bias(Var x, Var bias) {
  Tape& t = *x.tape;
  Var ones = t.constant(Tensor::full({x.val().rows(), 1}, 1.0));
  return ops::add(x, ops::matmul(ones, bias));
}

// one cross-attention layer (queries q_tokens, keys/values kv_tokens) plus a
// tanh feed-forward, both with residual connections
inline Var attention_block(Var q_tokens, Var kv_tokens, Var w_q, Var w_k, Var w_v,
                           Var ff_w1, Var ff_b1, Var ff_w2, Var ff_b2,
                           bool residual_attn) {
  using namespace ops;
  const double inv_sqrt_d =
      1.0 / std::sqrt(static_cast<double>(q_tokens.val().cols()));
  Var q = matmul(q_tokens, w_q);
  Var k = matmul(kv_tokens, w_k);
  Var v = matmul(kv_tokens, w_v);
  Var scores = scalar_mul(matmul(q, transpose(k)), inv_sqrt_d);
  Var attn = row_softmax(scores);
  Var o = matmul(attn, v);
  Var h = residual_attn ? add(q_tokens, o) : o;
  Var f = ops::tanh(add_row_bias(matmul(h, ff_w1), ff_b1));
  return add(h, add_row_bias(matmul(f, ff_w2), ff_b2));
}

// Constant selection matrices for stacking P independent pair computations
// into one (P*K)-row graph. Row p*K + k addresses component k of pair p.
inline Tensor replicate_pairs(std::size_t p, std::size_t k) {
  Tensor m({p * k, p});
  for (std::size_t pp = 0; pp < p; ++pp)
    for (std::size_t kk = 0; kk < k; ++kk) m.at(pp * k + kk, pp) = 1.0;
  return m;
}

inline Tensor replicate_tokens(std::size_t p, std::size_t k) {
  Tensor m({p * k, k});
  for (std::size_t pp = 0; pp < p; ++pp)
    for (std::size_t kk = 0; kk < k; ++kk) m.at(pp * k + kk, kk) = 1.0;
  return m;
}

// Additive attention mask confining each pair to its own K x K block. The
// -1e30 entries underflow to exactly zero after the softmax, so the result
// matches P independent softmaxes bit for bit.
inline Tensor pair_block_mask(std::size_t p, std::size_t k) {
  Tensor m = Tensor::full({p * k, p * k}, -1e30);
  for (std::size_t pp = 0; pp < p; ++pp)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) m.at(pp * k + i, pp * k + j) = 0.0;
  return m;
}

// Per-pair means of a (P*K) x D field, as a P x 1 column.
inline Var pair_means(Tape& tape, Var field, std::size_t p, std::size_t k) {
  using namespace ops;
  const std::size_t d = field.val().cols();
  Var ones_d = tape.constant(Tensor::full({d, 1}, 1.0));
  Tensor collect({p, p * k});
  for (std::size_t pp = 0; pp < p; ++pp)
    for (std::size_t kk = 0; kk < k; ++kk) collect.at(pp, pp * k + kk) = 1.0;
  Var sums = matmul(tape.constant(std::move(collect)), matmul(field, ones_d));
  return scalar_mul(sums, 1.0 / static_cast<double>(k * d));
}

/// Composer forward for P independent pairs at once: stacked text features
/// (P x d_txt) and/or image features (P x d_img) produce a (P*K) x D mean
/// field equal to running `compose` on each pair separately.
inline Var batched_compose(Tape& tape, const ComposerVars& c, const Tensor* text_feats,
                           const Tensor* image_feats) {
  using namespace ops;
  if (!text_feats && !image_feats)
    throw std::invalid_argument("batched_compose: both modalities absent");
  const std::size_t p = text_feats ? text_feats->rows() : image_feats->rows();
  if (text_feats && image_feats && text_feats->rows() != image_feats->rows())
    throw std::invalid_argument("batched_compose: text/image row count mismatch");
  const std::size_t k = c.x_lq.val().rows();
  const std::size_t d = c.x_lq.val().cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Var rep = tape.constant(replicate_pairs(p, k));    // (PK) x P
  Var xrep = matmul(tape.constant(replicate_tokens(p, k)), c.x_lq);  // (PK) x D

  Var o;
  if (text_feats && image_feats) {
    Var t_tok = matmul(tape.constant(*text_feats), c.proj_txt);   // P x D
    Var i_tok = matmul(tape.constant(*image_feats), c.proj_img);  // P x D
    Var q = matmul(c.x_lq, c.w_q);                                // K x D
    Var s_t = scalar_mul(matmul(q, transpose(matmul(t_tok, c.w_k))), inv_sqrt_d);
    Var s_i = scalar_mul(matmul(q, transpose(matmul(i_tok, c.w_k))), inv_sqrt_d);
    // scores land in kv order [text, image], matching the per-pair layout
    Var w = row_softmax(concat({reshape(transpose(s_t), {p * k, 1}),
                                reshape(transpose(s_i), {p * k, 1})}, 1));
    Var ones_row = tape.constant(Tensor::full({1, d}, 1.0));
    Var w_t = matmul(slice(w, 1, 0, 1), ones_row);
    Var w_i = matmul(slice(w, 1, 1, 1), ones_row);
    o = add(mul(w_t, matmul(rep, matmul(t_tok, c.w_v))),
            mul(w_i, matmul(rep, matmul(i_tok, c.w_v))));
  } else {
    // one kv token per pair: the softmax weight is exactly 1
    const Tensor* feats = text_feats ? text_feats : image_feats;
    Var tok = matmul(tape.constant(*feats), text_feats ? c.proj_txt : c.proj_img);
    o = matmul(rep, matmul(tok, c.w_v));
  }
  Var h = add(xrep, o);
  Var f = ops::tanh(add_row_bias(matmul(h, c.ff_w1), c.ff_b1));
  return add(h, add_row_bias(matmul(f, c.ff_w2), c.ff_b2));
}

/// Variance head over P stacked pairs: block-masked self-attention keeps
/// each pair's K tokens independent, matching per-pair `estimate_uncertainty`.
inline Var batched_uncertainty(Tape& tape, const HeadVars& h, Var means, std::size_t p,
                               std::size_t k) {
  using namespace ops;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(means.val().cols()));
  Var q = matmul(means, h.w_q);
  Var key = matmul(means, h.w_k);
  Var v = matmul(means, h.w_v);
  Var scores = add(scalar_mul(matmul(q, transpose(key)), inv_sqrt_d),
                   tape.constant(pair_block_mask(p, k)));
  Var o = add(means, matmul(row_softmax(scores), v));
  Var f = ops::tanh(add_row_bias(matmul(o, h.ff_w1), h.ff_b1));
  Var logvar = add_row_bias(matmul(f, h.ff_w2), h.ff_b2);
  return exp(clamp(logvar, -10.0, 10.0));
}

}  // namespace detail

/// Composer forward pass. Projects the present modalities into single D-dim
/// tokens and cross-attends from the learnable query tokens. At least one
/// modality must be present (query mode: both; target/reference: image only;
/// text leg: text only).
inline Var compose(Tape& tape, const ComposerVars& c, const Tensor* text_feat,
                   const Tensor* image_feat) {
  using namespace ops;
  if (!text_feat && !image_feat)
    throw std::invalid_argument("compose: both modalities absent");
  std::vector<Var> tokens;
  if (text_feat) {
    Var xt = tape.constant(Tensor({1, text_feat->size()}, text_feat->data));
    tokens.push_back(matmul(xt, c.proj_txt));
  }
  if (image_feat) {
    Var xi = tape.constant(Tensor({1, image_feat->size()}, image_feat->data));
    tokens.push_back(matmul(xi, c.proj_img));
  }
  Var kv = tokens.size() == 1 ? tokens[0] : concat(tokens, 0);
  return detail::attention_block(c.x_lq, kv, c.w_q, c.w_k, c.w_v, c.ff_w1, c.ff_b1,
                                 c.ff_w2, c.ff_b2, /*residual_attn=*/true);
}

/// Variance head: self-attention across the K component tokens, feed-forward
/// to a log-variance field, then exp(clamp(., -10, 10)).
inline Var estimate_uncertainty(Tape& tape, const HeadVars& h, Var means) {
  using namespace ops;
  (void)tape;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(means.val().cols()));
  Var q = matmul(means, h.w_q);
  Var k = matmul(means, h.w_k);
  Var v = matmul(means, h.w_v);
  Var attn = row_softmax(scalar_mul(matmul(q, transpose(k)), inv_sqrt_d));
  Var o = add(means, matmul(attn, v));
  Var f = ops::tanh(detail::add_row_bias(matmul(o, h.ff_w1), h.ff_b1));
  Var logvar = detail::add_row_bias(matmul(f, h.ff_w2), h.ff_b2);
  return exp(clamp(logvar, -10.0, 10.0));
}

struct FusionVars {
  Var var_q;              // K x D fused variance
  Var w_r, w_t, w_m;      // K x D simplex weights over {r,t,m}
};

/// Element-wise softmax of negated variances over the three sources; lower
/// uncertainty receives larger weight.
inline FusionVars fuse_query_uncertainty(Var var_r, Var var_t, Var var_m) {
  using namespace ops;
  for (Var v : {var_r, var_t, var_m})
    for (double x : v.val().data)
      if (x <= 0.0)
        throw std::invalid_argument("fuse_query_uncertainty: non-positive variance " +
                                    std::to_string(x));
  // shift by the detached elementwise min: leaves the softmax (and its
  // gradients) unchanged, keeps every exponent in [-range, 0], and makes
  // symmetric inputs yield exactly 1/3
  Tensor sh(var_r.val().shape);
  for (std::size_t i = 0; i < sh.data.size(); ++i)
    sh.data[i] = std::min({var_r.val().data[i], var_t.val().data[i],
                           var_m.val().data[i]});
  Var shift = var_r.tape->constant(std::move(sh));
  Var er = exp(neg(sub(var_r, shift)));
  Var et = exp(neg(sub(var_t, shift)));
  Var em = exp(neg(sub(var_m, shift)));
  Var denom = add(add(er, et), em);
  FusionVars f;
  f.w_r = div(er, denom);
  f.w_t = div(et, denom);
  f.w_m = div(em, denom);
  f.var_q = add(add(mul(f.w_r, var_r), mul(f.w_t, var_t)), mul(f.w_m, var_m));
  return f;
}

/// Variant knobs for the ablation ladder.
struct EncodeOptions {
  bool point = false;      // deterministic means only, variance heads untouched
  bool use_m = true;       // include coordination variance in the fusion
  bool dynamic_w = true;   // adaptive weights vs static uniform
  bool pooled = false;     // collapse the variance field to its global mean
};

struct QueryBundleVars {
  Var var_r, var_t, var_m;
  Var var_q;
  Var w_r, w_t, w_m;
  Var sbar_m;  // mean coordination uncertainty, scalar
};

struct QueryEncodingVars {
  Var mu_q;
  QueryBundleVars bundle;
};

inline Var pool_field(Var field) {
  return ops::broadcast(ops::mean(field), field.val().shape);
}

inline QueryEncodingVars encode_query(Tape& tape, const ModelVars& m, const Tensor& x_r,
                                      const Tensor& x_t,
                                      const EncodeOptions& opt = {}) {
  using namespace ops;
  QueryEncodingVars out;
  out.mu_q = compose(tape, m.composer, &x_t, &x_r);
  if (opt.point) {
    Var z = tape.constant(Tensor::zeros(out.mu_q.val().shape));
    out.bundle.var_r = out.bundle.var_t = out.bundle.var_m = out.bundle.var_q = z;
    out.bundle.w_r = out.bundle.w_t = out.bundle.w_m = z;
    out.bundle.sbar_m = tape.constant(Tensor::scalar(0.0));
    return out;
  }
  Var mu_img = compose(tape, m.composer, nullptr, &x_r);
  Var mu_txt = compose(tape, m.composer, &x_t, nullptr);
  out.bundle.var_r = estimate_uncertainty(tape, m.head_v, mu_img);
  out.bundle.var_t = estimate_uncertainty(tape, m.head_t, mu_txt);
  out.bundle.var_m = estimate_uncertainty(tape, m.head_m, out.mu_q);
  out.bundle.sbar_m = mean(out.bundle.var_m);
  const auto shape = out.bundle.var_r.val().shape;
  if (opt.use_m && opt.dynamic_w) {
    FusionVars f = fuse_query_uncertainty(out.bundle.var_r, out.bundle.var_t,
                                          out.bundle.var_m);
    out.bundle.var_q = f.var_q;
    out.bundle.w_r = f.w_r;
    out.bundle.w_t = f.w_t;
    out.bundle.w_m = f.w_m;
  } else if (opt.use_m) {
    out.bundle.var_q = scalar_mul(
        add(add(out.bundle.var_r, out.bundle.var_t), out.bundle.var_m), 1.0 / 3.0);
    out.bundle.w_r = tape.constant(Tensor::full(shape, 1.0 / 3.0));
    out.bundle.w_t = out.bundle.w_r;
    out.bundle.w_m = out.bundle.w_r;
  } else {
    out.bundle.var_q = scalar_mul(add(out.bundle.var_r, out.bundle.var_t), 0.5);
    out.bundle.w_r = tape.constant(Tensor::full(shape, 0.5));
    out.bundle.w_t = out.bundle.w_r;
    out.bundle.w_m = tape.constant(Tensor::zeros(shape));
  }
  if (opt.pooled) out.bundle.var_q = pool_field(out.bundle.var_q);
  return out;
}

struct TargetEncodingVars {
  Var mu_c;
  Var var_c;
};

inline TargetEncodingVars encode_target(Tape& tape, const ModelVars& m,
                                        const Tensor& x_c,
                                        const EncodeOptions& opt = {}) {
  TargetEncodingVars out;
  out.mu_c = compose(tape, m.composer, nullptr, &x_c);
  if (opt.point) {
    out.var_c = tape.constant(Tensor::zeros(out.mu_c.val().shape));
    return out;
  }
  out.var_c = estimate_uncertainty(tape, m.head_v, out.mu_c);
  if (opt.pooled) out.var_c = pool_field(out.var_c);
  return out;
}

/// Value-level bundle mirroring QueryBundleVars, for evaluation paths.
struct QueryUncertaintyBundle {
  Tensor var_r, var_t, var_m;
  Tensor var_q;
  Tensor w_r, w_t, w_m;
  double mean_coord_uncertainty = 0.0;
};

inline std::pair<FineGrainedGaussian, QueryUncertaintyBundle> encode_query_value(
    const ModelParams& m, const Tensor& x_r, const Tensor& x_t,
    const EncodeOptions& opt = {}) {
  Tape tape;
  ModelVars mv = bind_model(tape, m);
  QueryEncodingVars q = encode_query(tape, mv, x_r, x_t, opt);
  QueryUncertaintyBundle b;
  b.var_r = q.bundle.var_r.val();
  b.var_t = q.bundle.var_t.val();
  b.var_m = q.bundle.var_m.val();
  b.var_q = q.bundle.var_q.val();
  b.w_r = q.bundle.w_r.val();
  b.w_t = q.bundle.w_t.val();
  b.w_m = q.bundle.w_m.val();
  b.mean_coord_uncertainty = q.bundle.sbar_m.val().item();
  return {FineGrainedGaussian(q.mu_q.val(), b.var_q), std::move(b)};
}

inline FineGrainedGaussian encode_target_value(const ModelParams& m, const Tensor& x_c,
                                               const EncodeOptions& opt = {}) {
  Tape tape;
  ModelVars mv = bind_model(tape, m);
  TargetEncodingVars t = encode_target(tape, mv, x_c, opt);
  return FineGrainedGaussian(t.mu_c.val(), t.var_c.val());
}

}  // namespace hug
