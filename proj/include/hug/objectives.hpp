#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "hug/encoder.hpp"
#include "hug/tape.hpp"

namespace hug {

struct BatchInputs {
  std::vector<Tensor> x_r, x_t, x_c;  // B entries each
  std::size_t size() const { return x_r.size(); }
};

struct BatchVars {
  std::vector<QueryEncodingVars> queries;
  std::vector<TargetEncodingVars> targets;
  std::size_t size() const { return queries.size(); }
};

namespace detail {

// Features may be rank-1 {d} or row vectors {1, d}; stack by flat layout.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  Tensor out({rows.size(), rows[0].size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t d = 0; d < out.cols(); ++d) out.at(i, d) = rows[i].data[d];
  return out;
}

// Replace each instance's K x D block with its scalar mean, batched analogue
// of pool_field.
inline Var pooled_blocks(Tape& tape, Var field, std::size_t b, std::size_t k) {
  using namespace ops;
  Var means = pair_means(tape, field, b, k);  // b x 1
  Var ones_row = tape.constant(Tensor::full({1, field.val().cols()}, 1.0));
  return matmul(matmul(tape.constant(replicate_pairs(b, k)), means), ones_row);
}

}  // namespace detail

/// Encodes the whole batch through one stacked graph (per-instance attention
/// blocks kept independent), then slices out per-instance views. Matches the
/// per-example encoders' arithmetic.
inline BatchVars encode_batch(Tape& tape, const ModelVars& m, const BatchInputs& in,
                              const EncodeOptions& opt = {}) {
  using namespace ops;
  BatchVars out;
  const std::size_t b = in.size();
  if (b == 0) return out;
  const std::size_t k = m.composer.x_lq.val().rows();
  const Tensor xr = detail::stack_rows(in.x_r);
  const Tensor xt = detail::stack_rows(in.x_t);
  const Tensor xc = detail::stack_rows(in.x_c);
  Var mu_q_all = detail::batched_compose(tape, m.composer, &xt, &xr);
  Var mu_c_all = detail::batched_compose(tape, m.composer, nullptr, &xc);
  auto blk = [&](Var v, std::size_t i) { return slice(v, 0, i * k, k); };

  if (opt.point) {
    for (std::size_t i = 0; i < b; ++i) {
      QueryEncodingVars q;
      q.mu_q = blk(mu_q_all, i);
      Var z = tape.constant(Tensor::zeros(q.mu_q.val().shape));
      q.bundle.var_r = q.bundle.var_t = q.bundle.var_m = q.bundle.var_q = z;
      q.bundle.w_r = q.bundle.w_t = q.bundle.w_m = z;
      q.bundle.sbar_m = tape.constant(Tensor::scalar(0.0));
      out.queries.push_back(q);
      out.targets.push_back({blk(mu_c_all, i), z});
    }
    return out;
  }

  Var mu_img_all = detail::batched_compose(tape, m.composer, nullptr, &xr);
  Var mu_txt_all = detail::batched_compose(tape, m.composer, &xt, nullptr);
  Var var_r_all = detail::batched_uncertainty(tape, m.head_v, mu_img_all, b, k);
  Var var_t_all = detail::batched_uncertainty(tape, m.head_t, mu_txt_all, b, k);
  Var var_m_all = detail::batched_uncertainty(tape, m.head_m, mu_q_all, b, k);
  Var var_c_all = detail::batched_uncertainty(tape, m.head_v, mu_c_all, b, k);

  const auto shape = var_r_all.val().shape;
  Var var_q_all, w_r_all, w_t_all, w_m_all;
  if (opt.use_m && opt.dynamic_w) {
    FusionVars f = fuse_query_uncertainty(var_r_all, var_t_all, var_m_all);
    var_q_all = f.var_q;
    w_r_all = f.w_r;
    w_t_all = f.w_t;
    w_m_all = f.w_m;
  } else if (opt.use_m) {
    var_q_all = scalar_mul(add(add(var_r_all, var_t_all), var_m_all), 1.0 / 3.0);
    w_r_all = w_t_all = w_m_all = tape.constant(Tensor::full(shape, 1.0 / 3.0));
  } else {
    var_q_all = scalar_mul(add(var_r_all, var_t_all), 0.5);
    w_r_all = w_t_all = tape.constant(Tensor::full(shape, 0.5));
    w_m_all = tape.constant(Tensor::zeros(shape));
  }
  if (opt.pooled) {
    var_q_all = detail::pooled_blocks(tape, var_q_all, b, k);
    var_c_all = detail::pooled_blocks(tape, var_c_all, b, k);
  }

  for (std::size_t i = 0; i < b; ++i) {
    QueryEncodingVars q;
    q.mu_q = blk(mu_q_all, i);
    q.bundle.var_r = blk(var_r_all, i);
    q.bundle.var_t = blk(var_t_all, i);
    q.bundle.var_m = blk(var_m_all, i);
    q.bundle.var_q = blk(var_q_all, i);
    q.bundle.w_r = blk(w_r_all, i);
    q.bundle.w_t = blk(w_t_all, i);
    q.bundle.w_m = blk(w_m_all, i);
    q.bundle.sbar_m = mean(q.bundle.var_m);
    out.queries.push_back(q);
    out.targets.push_back({blk(mu_c_all, i), blk(var_c_all, i)});
  }
  return out;
}

namespace detail {

// B x B matrix of holistic distances, assembled from stacked flattened means
// and per-instance variance masses:
//   dist(i,j) = ||mu_q_i - mu_c_j||_F^2 + sum(var_q_i) + sum(var_c_j)
inline Var pairwise_holistic_distance(Tape& tape, const BatchVars& batch) {
  using namespace ops;
  const std::size_t b = batch.size();
  std::vector<Var> q_rows, c_rows, q_var, c_var;
  for (std::size_t i = 0; i < b; ++i) {
    const auto& mu_q = batch.queries[i].mu_q;
    const auto& mu_c = batch.targets[i].mu_c;
    q_rows.push_back(reshape(mu_q, {1, mu_q.val().size()}));
    c_rows.push_back(reshape(mu_c, {1, mu_c.val().size()}));
    q_var.push_back(reshape(sum(batch.queries[i].bundle.var_q), {1, 1}));
    c_var.push_back(reshape(sum(batch.targets[i].var_c), {1, 1}));
  }
  Var mq = concat(q_rows, 0);  // B x KD
  Var mc = concat(c_rows, 0);
  Var ones_col = tape.constant(Tensor::full({b, 1}, 1.0));
  Var ones_d = tape.constant(Tensor::full({mq.val().cols(), 1}, 1.0));
  Var nq = matmul(mul(mq, mq), ones_d);  // B x 1 row squared norms
  Var nc = matmul(mul(mc, mc), ones_d);
  Var cross = matmul(mq, transpose(mc));
  Var sq = sub(add(matmul(nq, transpose(ones_col)), matmul(ones_col, transpose(nc))),
               scalar_mul(cross, 2.0));
  Var sv = add(matmul(concat(q_var, 0), transpose(ones_col)),
               matmul(ones_col, transpose(concat(c_var, 0))));
  return add(sq, sv);
}

}  // namespace detail

/// Sigmoid pairwise contrast over all B^2 query-target pairs: the diagonal
/// pairs are pulled together, both directions of mismatched pairs pushed
/// apart, with the mismatched means weighted up by B.
inline Var holistic_contrast_loss(Tape& tape, const BatchVars& batch, Var a, Var b) {
  using namespace ops;
  const std::size_t bs = batch.size();
  if (bs < 2) throw std::invalid_argument("holistic_contrast_loss: batch size must be >= 2");
  Var dist = detail::pairwise_holistic_distance(tape, batch);
  Var z = add(scale(dist, a), broadcast(b, {bs, bs}));
  Tensor eye({bs, bs}), off({bs, bs});
  for (std::size_t i = 0; i < bs; ++i)
    for (std::size_t j = 0; j < bs; ++j)
      (i == j ? eye : off).at(i, j) = 1.0;
  // -log S(-a d - b) = softplus(a d + b); -log S(a d + b) = softplus(-a d - b)
  Var pos = sum(mul(softplus(z), tape.constant(eye)));
  Var neg_terms = sum(mul(softplus(ops::neg(z)), tape.constant(off)));
  const double bd = static_cast<double>(bs);
  // positives averaged over B; each negative direction is a B-weighted mean
  // over its B(B-1) pairs, and both directions enumerate the same pair set
  return add(scalar_mul(pos, 1.0 / bd), scalar_mul(neg_terms, 2.0 / (bd - 1.0)));
}

/// Ranking loss on mean coordination uncertainty: matched (x_r, x_t) pairs
/// should sit below in-batch mismatched (x_r, x_t') pairs. The printed-sign
/// variant flips the argument order inside the sigmoid.
inline Var coordination_loss(Tape& tape, const ModelVars& m, const BatchInputs& in,
                             const BatchVars& batch, bool printed_sign = false) {
  using namespace ops;
  const std::size_t bs = in.size();
  if (bs < 2) throw std::invalid_argument("coordination_loss: batch size must be >= 2");
  const std::size_t k = m.composer.x_lq.val().rows();
  const std::size_t p = bs - 1;
  std::vector<Var> terms;
  for (std::size_t i = 0; i < bs; ++i) {
    // all B-1 mismatched (x_r[i], x_t[j]) composes for this anchor at once
    Tensor txt({p, in.x_t[0].size()}), img({p, in.x_r[i].size()});
    std::size_t row = 0;
    for (std::size_t j = 0; j < bs; ++j) {
      if (j == i) continue;
      for (std::size_t d = 0; d < txt.cols(); ++d) txt.at(row, d) = in.x_t[j].data[d];
      for (std::size_t d = 0; d < img.cols(); ++d) img.at(row, d) = in.x_r[i].data[d];
      ++row;
    }
    Var mu_mis = detail::batched_compose(tape, m.composer, &txt, &img);
    Var var_mis = detail::batched_uncertainty(tape, m.head_m, mu_mis, p, k);
    Var mismatched = detail::pair_means(tape, var_mis, p, k);  // (B-1) x 1
    Var matched = broadcast(batch.queries[i].bundle.sbar_m, {p, 1});
    Var u = printed_sign ? sub(matched, mismatched) : sub(mismatched, matched);
    terms.push_back(sum(softplus(ops::neg(u))));  // sum of -log S(u)
  }
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scalar_mul(acc, 1.0 / static_cast<double>(bs * p));
}

enum class NegStrategy { ComponentWise, InstanceWise, ModalityWise };

struct AnchorRef {
  bool query_side;       // true: query variance field, false: target
  std::size_t instance;  // n in [0, B)
  std::size_t component; // k in [0, K)
};

struct SamplerConfig {
  bool component = true;
  bool instance = true;
  bool modality = true;
  std::size_t n_component = 0;  // 0 means pool-size default (K-1)
  std::size_t n_instance = 0;   // default 2(B-1)
  std::size_t n_modality = 0;   // default 2B
};

/// Uniform without-replacement draw from one strategy's pool; returns the
/// whole pool if count exceeds it. Never contains the anchor.
inline std::vector<AnchorRef> sample_fine_grained_negatives(
    std::size_t batch, std::size_t k_components, const AnchorRef& anchor,
    NegStrategy strategy, std::size_t count, std::mt19937_64& rng) {
  std::vector<AnchorRef> pool;
  switch (strategy) {
    case NegStrategy::ComponentWise:
      for (std::size_t kk = 0; kk < k_components; ++kk)
        if (kk != anchor.component)
          pool.push_back({anchor.query_side, anchor.instance, kk});
      break;
    case NegStrategy::InstanceWise:
      for (std::size_t n = 0; n < batch; ++n) {
        if (n == anchor.instance) continue;
        for (std::size_t kk = 0; kk < k_components; ++kk)
          pool.push_back({anchor.query_side, n, kk});
      }
      break;
    case NegStrategy::ModalityWise:
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t kk = 0; kk < k_components; ++kk)
          pool.push_back({!anchor.query_side, n, kk});
      break;
  }
  if (count >= pool.size()) return pool;
  // partial Fisher-Yates for the first `count` positions
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

/// Fine-grained variance contrast (union of the per-strategy pools). Operates
/// on the K x D variance row vectors of both sides; anchors are every
/// (side, instance, component). Assembled as one masked pairwise-distance
/// matrix over all stacked rows.
inline Var fine_grained_contrast_loss(Tape& tape, const BatchVars& batch, Var ap,
                                      Var bp, const SamplerConfig& cfg,
                                      std::mt19937_64& rng) {
  using namespace ops;
  const std::size_t b = batch.size();
  if (b < 1) throw std::invalid_argument("fine_grained_contrast_loss: empty batch");
  const std::size_t k = batch.queries[0].bundle.var_q.val().rows();
  auto row_of = [&](const AnchorRef& r) {
    return (r.query_side ? r.instance : b + r.instance) * k + r.component;
  };

  const std::size_t rows = 2 * b * k;
  Tensor mask({rows, rows});
  std::size_t anchors = 0;
  for (int side = 0; side < 2; ++side) {
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        AnchorRef anchor{side == 0, n, kk};
        std::vector<AnchorRef> negs;
        if (cfg.component && k > 1) {
          auto s = sample_fine_grained_negatives(
              b, k, anchor, NegStrategy::ComponentWise,
              cfg.n_component ? cfg.n_component : k - 1, rng);
          negs.insert(negs.end(), s.begin(), s.end());
        }
        if (cfg.instance && b > 1) {
          auto s = sample_fine_grained_negatives(
              b, k, anchor, NegStrategy::InstanceWise,
              cfg.n_instance ? cfg.n_instance : 2 * (b - 1), rng);
          negs.insert(negs.end(), s.begin(), s.end());
        }
        if (cfg.modality) {
          auto s = sample_fine_grained_negatives(
              b, k, anchor, NegStrategy::ModalityWise,
              cfg.n_modality ? cfg.n_modality : 2 * b, rng);
          negs.insert(negs.end(), s.begin(), s.end());
        }
        if (negs.empty()) continue;
        ++anchors;
        const double w = 1.0 / static_cast<double>(negs.size());
        for (const auto& neg : negs) mask.at(row_of(anchor), row_of(neg)) += w;
      }
    }
  }
  if (anchors == 0)
    throw std::invalid_argument("fine_grained_contrast_loss: all negative pools empty");
  for (auto& v : mask.data) v /= static_cast<double>(anchors);

  std::vector<Var> parts;
  for (std::size_t n = 0; n < b; ++n) parts.push_back(batch.queries[n].bundle.var_q);
  for (std::size_t n = 0; n < b; ++n) parts.push_back(batch.targets[n].var_c);
  Var v = concat(parts, 0);  // (2BK) x D
  Var ones_d = tape.constant(Tensor::full({v.val().cols(), 1}, 1.0));
  Var ones_col = tape.constant(Tensor::full({rows, 1}, 1.0));
  Var nrm = matmul(mul(v, v), ones_d);
  Var dist = sub(add(matmul(nrm, transpose(ones_col)),
                     matmul(ones_col, transpose(nrm))),
                 scalar_mul(matmul(v, transpose(v)), 2.0));
  Var z = add(scale(dist, ap), broadcast(bp, {rows, rows}));
  // -log S(a' d + b') = softplus(-(a' d + b'))
  return sum(mul(softplus(ops::neg(z)), tape.constant(mask)));
}

/// Temperature-softmax contrastive baseline over squared mean distances
/// (point-matching mode): symmetric cross-entropy with the diagonal as truth.
inline Var infonce_loss(Tape& tape, const BatchVars& batch, double temperature) {
  using namespace ops;
  const std::size_t b = batch.size();
  if (b < 2) throw std::invalid_argument("infonce_loss: batch size must be >= 2");
  Var dist = detail::pairwise_holistic_distance(tape, batch);
  Var logits = scalar_mul(dist, -1.0 / temperature);
  Tensor eye({b, b});
  for (std::size_t i = 0; i < b; ++i) eye.at(i, i) = 1.0;
  Var eye_c = tape.constant(eye);
  Var row_ce = sum(mul(log(row_softmax(logits)), eye_c));
  Var col_ce = sum(mul(log(row_softmax(transpose(logits))), eye_c));
  return scalar_mul(add(row_ce, col_ce), -0.5 / static_cast<double>(b));
}

struct LossConfig {
  double lambda_fc = 0.5;
  double lambda_cord = 0.1;
  bool use_fc = true;
  bool use_cord = true;
  bool cord_printed_sign = false;
  SamplerConfig sampler;
};

struct LossBreakdown {
  Var total;
  double hc = 0.0, fc = 0.0, cord = 0.0;
};

/// L = L_HC + lambda_FC * L_FC + lambda_Cord * L_Cord, with the raw terms
/// reported for logging.
inline LossBreakdown total_loss(Tape& tape, const ModelVars& m, const BatchInputs& in,
                                const BatchVars& batch, const LossConfig& cfg,
                                std::mt19937_64& rng) {
  using namespace ops;
  LossBreakdown out;
  Var hc = holistic_contrast_loss(tape, batch, m.a, m.b);
  out.hc = hc.val().item();
  out.total = hc;
  if (cfg.use_fc && cfg.lambda_fc != 0.0) {
    Var fc = fine_grained_contrast_loss(tape, batch, m.ap, m.bp, cfg.sampler, rng);
    out.fc = fc.val().item();
    out.total = add(out.total, scalar_mul(fc, cfg.lambda_fc));
  }
  if (cfg.use_cord && cfg.lambda_cord != 0.0) {
    Var cord = coordination_loss(tape, m, in, batch, cfg.cord_printed_sign);
    out.cord = cord.val().item();
    out.total = add(out.total, scalar_mul(cord, cfg.lambda_cord));
  }
  return out;
}

}  // namespace hug
