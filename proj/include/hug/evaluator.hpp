#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "hug/encoder.hpp"
#include "hug/gaussian.hpp"
#include "hug/synthdata.hpp"
#include "hug/tape.hpp"

namespace hug {

struct RecallResult {
  double fraction = 0.0;
  std::size_t rejected = 0;  // queries whose truth was absent from the ranking
};

inline RecallResult recall_at_k(const std::vector<std::vector<std::string>>& rankings,
                                const std::vector<std::string>& truths, std::size_t k) {
  if (rankings.size() != truths.size())
    throw std::invalid_argument("recall_at_k: rankings/truths size mismatch");
  std::size_t hits = 0, valid = 0, rejected = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const auto& r = rankings[q];
    const auto it = std::find(r.begin(), r.end(), truths[q]);
    if (it == r.end()) {
      ++rejected;
      continue;
    }
    ++valid;
    if (static_cast<std::size_t>(it - r.begin()) < k) ++hits;
  }
  RecallResult out;
  out.rejected = rejected;
  out.fraction = valid ? static_cast<double>(hits) / valid : 0.0;
  return out;
}

/// Recall within curated 6-candidate subsets that contain the target.
inline double subset_recall_at_k(const std::vector<std::vector<std::string>>& subset_rankings,
                                 const std::vector<std::string>& truths, std::size_t k) {
  if (subset_rankings.size() != truths.size())
    throw std::invalid_argument("subset_recall_at_k: rankings/truths size mismatch");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < subset_rankings.size(); ++q) {
    const auto& r = subset_rankings[q];
    if (r.size() != 6)
      throw std::invalid_argument("subset_recall_at_k: subset must have 6 candidates, got " +
                                  std::to_string(r.size()));
    const auto it = std::find(r.begin(), r.end(), truths[q]);
    if (it == r.end())
      throw std::invalid_argument("subset_recall_at_k: subset missing its target");
    if (static_cast<std::size_t>(it - r.begin()) < k) ++hits;
  }
  return static_cast<double>(hits) / subset_rankings.size();
}

/// Mean over components of the per-component variance mass.
inline double overall_uncertainty(const FineGrainedGaussian& g) {
  double s = 0.0;
  for (double v : g.var.data) s += v;
  return s / static_cast<double>(g.k());
}

inline double overall_variance_field(const Tensor& var) {
  double s = 0.0;
  for (double v : var.data) s += v;
  return s / static_cast<double>(var.rows());
}

// ---------------------------------------------------------------------------
// retrieval harness
// ---------------------------------------------------------------------------

inline std::vector<GalleryEntry> encode_gallery(const ModelParams& m,
                                                const SynthDataset& ds,
                                                const EncodeOptions& opt) {
  std::vector<GalleryEntry> out;
  const std::size_t g = ds.gallery.rows();
  for (std::size_t i = 0; i < g; ++i) {
    Tensor feat({ds.world.cfg.d_img},
                std::vector<double>(ds.gallery.data.begin() + i * ds.world.cfg.d_img,
                                    ds.gallery.data.begin() + (i + 1) * ds.world.cfg.d_img));
    out.push_back({ds.gallery_ids[i], encode_target_value(m, feat, opt)});
  }
  return out;
}

struct RetrievalReport {
  std::vector<std::vector<std::string>> rankings;
  std::vector<std::string> truths;
  std::vector<double> recall;         // one entry per requested k
  std::vector<double> subset_recall;  // one entry per requested subset k
};

/// 6-candidate subsets per example: the target plus its 5 nearest gallery
/// neighbors under clean-feature squared distance.
inline std::vector<std::vector<std::size_t>> build_subsets(const SynthDataset& ds) {
  const std::size_t g = ds.gallery.rows();
  const std::size_t d = ds.world.cfg.d_img;
  std::vector<std::vector<std::size_t>> out;
  for (const auto& ex : ds.examples) {
    const double* t = ds.gallery.data.data() + ex.target_combo * d;
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < g; ++i) {
      if (i == ex.target_combo) continue;
      const double* c = ds.gallery.data.data() + i * d;
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) dist += (t[j] - c[j]) * (t[j] - c[j]);
      scored.emplace_back(dist, i);
    }
    std::partial_sort(scored.begin(), scored.begin() + 5, scored.end());
    std::vector<std::size_t> subset{ex.target_combo};
    for (std::size_t i = 0; i < 5; ++i) subset.push_back(scored[i].second);
    out.push_back(std::move(subset));
  }
  return out;
}

inline RetrievalReport evaluate_retrieval(const ModelParams& m, const SynthDataset& ds,
                                          const EncodeOptions& opt,
                                          const std::vector<std::size_t>& ks = {1, 5, 10, 50},
                                          const std::vector<std::size_t>& subset_ks = {1, 2, 3}) {
  RetrievalReport rep;
  auto gallery = encode_gallery(m, ds, opt);
  std::vector<FineGrainedGaussian> queries;
  for (const auto& ex : ds.examples) {
    auto [gq, bundle] = encode_query_value(m, ex.x_r, ex.x_t, opt);
    queries.push_back(std::move(gq));
    rep.rankings.push_back(rank_gallery(queries.back(), gallery));
    rep.truths.push_back(ds.gallery_ids[ex.target_combo]);
  }
  for (auto k : ks) rep.recall.push_back(recall_at_k(rep.rankings, rep.truths, k).fraction);

  auto subsets = build_subsets(ds);
  std::vector<std::vector<std::string>> subset_rankings;
  for (std::size_t q = 0; q < ds.examples.size(); ++q) {
    std::vector<GalleryEntry> sub;
    for (auto gi : subsets[q]) sub.push_back(gallery[gi]);
    subset_rankings.push_back(rank_gallery(queries[q], sub));
  }
  for (auto k : subset_ks)
    rep.subset_recall.push_back(subset_recall_at_k(subset_rankings, rep.truths, k));
  return rep;
}

// ---------------------------------------------------------------------------
// generalization-bound mechanics
// ---------------------------------------------------------------------------

struct BoundReport {
  // indices 0,1,2 = reference-image, text, multi-modal
  double e_weight[3] = {};
  double e_loss[3] = {};
  double cov[3] = {};
  double pearson[3] = {};
  double identity_residual = 0.0;  // max over modalities
  double rhs_dynamic = 0.0;
  double rhs_static = 0.0;  // matched static weights w = E[w_dynamic], Cov = 0
  bool convexity_ok = false;
  bool cov_sum_negative = false;
  double cov_sum = 0.0;
  std::size_t n_samples = 0;
};

/// Empirical check of the dynamic-vs-static fusion comparison. The loss probe
/// is the convex positive-pair surrogate l(s) = softplus(a*s + b) with the
/// model's scalars; samples are every (instance, component, dimension)
/// element of the query-side uncertainty fields.
inline BoundReport check_bound(const ModelParams& m,
                               const std::vector<const TripletExample*>& sample,
                               const EncodeOptions& opt = {}) {
  if (sample.size() < 100)
    throw std::invalid_argument("check_bound: need at least 100 samples, got " +
                                std::to_string(sample.size()));
  const double a = m.a.item(), b = m.b.item();
  const auto probe = [&](double s) { return ops::softplus_scalar(a * s + b); };

  std::vector<double> w[3], l[3];
  double var_min = std::numeric_limits<double>::max(), var_max = 0.0;
  for (const auto* ex : sample) {
    auto [gq, bundle] = encode_query_value(m, ex->x_r, ex->x_t, opt);
    const Tensor* weights[3] = {&bundle.w_r, &bundle.w_t, &bundle.w_m};
    const Tensor* vars[3] = {&bundle.var_r, &bundle.var_t, &bundle.var_m};
    for (int x = 0; x < 3; ++x)
      for (std::size_t i = 0; i < vars[x]->data.size(); ++i) {
        w[x].push_back(weights[x]->data[i]);
        l[x].push_back(probe(vars[x]->data[i]));
        var_min = std::min(var_min, vars[x]->data[i]);
        var_max = std::max(var_max, vars[x]->data[i]);
      }
  }

  BoundReport rep;
  rep.n_samples = w[0].size();
  const double n = static_cast<double>(rep.n_samples);
  for (int x = 0; x < 3; ++x) {
    double ew = 0.0, el = 0.0, ewl = 0.0;
    for (std::size_t i = 0; i < w[x].size(); ++i) {
      ew += w[x][i];
      el += l[x][i];
      ewl += w[x][i] * l[x][i];
    }
    ew /= n;
    el /= n;
    ewl /= n;
    double cov = 0.0, vw = 0.0, vl = 0.0;
    for (std::size_t i = 0; i < w[x].size(); ++i) {
      cov += (w[x][i] - ew) * (l[x][i] - el);
      vw += (w[x][i] - ew) * (w[x][i] - ew);
      vl += (l[x][i] - el) * (l[x][i] - el);
    }
    cov /= n;
    vw /= n;
    vl /= n;
    rep.e_weight[x] = ew;
    rep.e_loss[x] = el;
    rep.cov[x] = cov;
    rep.pearson[x] = (vw > 0.0 && vl > 0.0) ? cov / std::sqrt(vw * vl) : 0.0;
    rep.identity_residual =
        std::max(rep.identity_residual, std::abs(ewl - ew * el - cov));
    rep.rhs_dynamic += ew * el + cov;
    rep.rhs_static += ew * el;  // matched E[w], zero covariance
    rep.cov_sum += cov;
  }
  rep.cov_sum_negative = rep.cov_sum < 0.0;

  // midpoint convexity probe of l over the observed variance range
  std::mt19937_64 rng(12345);
  std::uniform_real_distribution<double> dist(var_min, std::max(var_max, var_min + 1.0));
  rep.convexity_ok = true;
  for (int t = 0; t < 1000; ++t) {
    const double x1 = dist(rng), x2 = dist(rng);
    if (probe(0.5 * (x1 + x2)) > 0.5 * (probe(x1) + probe(x2)) + 1e-12)
      rep.convexity_ok = false;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// interpretability probes
// ---------------------------------------------------------------------------

inline std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * (i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman rank correlation; empty when either input is constant.
inline std::optional<double> spearman(const std::vector<double>& a,
                                      const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman: need two equal-length series");
  auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return std::nullopt;
  return cov / std::sqrt(va * vb);
}

/// Ranking AUC of scores separating a boolean label (ties count half).
inline std::optional<double> ranking_auc(const std::vector<double>& scores,
                                         const std::vector<bool>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("ranking_auc: size mismatch");
  std::size_t pos = 0, neg = 0;
  for (bool l : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0) return std::nullopt;
  auto ranks = average_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (labels[i]) rank_sum += ranks[i];
  const double u = rank_sum - pos * (pos + 1.0) / 2.0;
  return u / (static_cast<double>(pos) * neg);
}

struct CorrelationReport {
  std::optional<double> rho_img;    // noise_img vs overall reference-image variance
  std::optional<double> rho_txt;    // noise_txt vs overall text variance
  std::optional<double> auc_coord;  // mean coordination variance vs mismatch label
};

inline CorrelationReport uncertainty_noise_correlation(const ModelParams& m,
                                                       const SynthDataset& ds,
                                                       const EncodeOptions& opt = {}) {
  std::vector<double> noise_img, noise_txt, var_r, var_t, sbar;
  std::vector<bool> mismatch;
  for (const auto& ex : ds.examples) {
    auto [gq, bundle] = encode_query_value(m, ex.x_r, ex.x_t, opt);
    noise_img.push_back(ex.noise_img);
    noise_txt.push_back(ex.noise_txt);
    var_r.push_back(overall_variance_field(bundle.var_r));
    var_t.push_back(overall_variance_field(bundle.var_t));
    sbar.push_back(bundle.mean_coord_uncertainty);
    mismatch.push_back(ex.coord_mismatch);
  }
  CorrelationReport rep;
  rep.rho_img = spearman(noise_img, var_r);
  rep.rho_txt = spearman(noise_txt, var_t);
  rep.auc_coord = ranking_auc(sbar, mismatch);
  return rep;
}

struct ExemplarList {
  std::vector<std::size_t> top;     // dataset indices, highest variance first
  std::vector<std::size_t> bottom;  // lowest variance first
  bool truncated = false;
};

/// Top/bottom `count` instances by fused query variance at one component,
/// excluding the top decile by overall uncertainty.
inline ExemplarList component_exemplars(const ModelParams& m, const SynthDataset& ds,
                                        std::size_t component, std::size_t count,
                                        const EncodeOptions& opt = {}) {
  std::vector<double> comp_var(ds.examples.size()), overall(ds.examples.size());
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    auto [gq, bundle] = encode_query_value(m, ds.examples[i].x_r, ds.examples[i].x_t, opt);
    if (component >= gq.k())
      throw std::invalid_argument("component_exemplars: component " +
                                  std::to_string(component) + " out of range");
    double s = 0.0;
    for (std::size_t j = 0; j < gq.d(); ++j) s += gq.var.at(component, j);
    comp_var[i] = s;
    overall[i] = overall_uncertainty(gq);
  }
  // filter out the top overall-uncertainty decile
  std::vector<double> sorted_overall = overall;
  std::sort(sorted_overall.begin(), sorted_overall.end());
  const double cutoff = sorted_overall[(sorted_overall.size() * 9) / 10];
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < overall.size(); ++i)
    if (overall[i] < cutoff) pool.push_back(i);

  std::stable_sort(pool.begin(), pool.end(),
                   [&](std::size_t a, std::size_t b) { return comp_var[a] > comp_var[b]; });
  ExemplarList out;
  const std::size_t take = std::min(count, pool.size());
  out.truncated = take < count;
  out.top.assign(pool.begin(), pool.begin() + take);
  out.bottom.assign(pool.rbegin(), pool.rbegin() + take);
  return out;
}

}  // namespace hug
