#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "hug/tensor.hpp"

namespace hug {

/// K fine-grained diagonal-Gaussian components: mu and var are K x D, one row
/// per component. Variances must be strictly positive for trained models;
/// zero is permitted in fixtures (degenerate point embedding).
struct FineGrainedGaussian {
  Tensor mu;   // K x D
  Tensor var;  // K x D, >= 0

  FineGrainedGaussian() = default;
  FineGrainedGaussian(Tensor m, Tensor v) : mu(std::move(m)), var(std::move(v)) {
    if (mu.rank() != 2 || !mu.same_shape(var))
      throw std::invalid_argument("FineGrainedGaussian: mu/var must be matching K x D, got " +
                                  Tensor::shape_str(mu.shape) + " and " +
                                  Tensor::shape_str(var.shape));
    for (double v2 : var.data)
      if (v2 < 0.0)
        throw std::invalid_argument("FineGrainedGaussian: negative variance " +
                                    std::to_string(v2));
  }

  std::size_t k() const { return mu.rows(); }
  std::size_t d() const { return mu.cols(); }
};

struct GalleryEntry {
  std::string id;
  FineGrainedGaussian gaussian;
};

/// Expected squared Euclidean distance between two diagonal Gaussians of one
/// component: ||mu1 - mu2||^2 + sum(var1) + sum(var2).
inline double expected_sq_distance(const Tensor& mu1, const Tensor& var1,
                                   const Tensor& mu2, const Tensor& var2) {
  check_same_shape(mu1, mu2, "expected_sq_distance");
  check_same_shape(var1, var2, "expected_sq_distance");
  check_same_shape(mu1, var1, "expected_sq_distance");
  double d = 0.0;
  for (std::size_t i = 0; i < mu1.data.size(); ++i) {
    const double diff = mu1.data[i] - mu2.data[i];
    d += diff * diff + var1.data[i] + var2.data[i];
  }
  return d;
}

/// Monte-Carlo estimate of the expected squared distance, with standard error.
/// Deterministic given the seed.
inline std::pair<double, double> mc_expected_sq_distance(const Tensor& mu1,
                                                         const Tensor& var1,
                                                         const Tensor& mu2,
                                                         const Tensor& var2,
                                                         std::size_t n_samples,
                                                         std::uint64_t seed) {
  check_same_shape(mu1, mu2, "mc_expected_sq_distance");
  if (n_samples < 2)
    throw std::invalid_argument("mc_expected_sq_distance: need at least 2 samples");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm(0.0, 1.0);
  const std::size_t d = mu1.data.size();
  std::vector<double> sd1(d), sd2(d);
  for (std::size_t i = 0; i < d; ++i) {
    sd1[i] = std::sqrt(var1.data[i]);
    sd2[i] = std::sqrt(var2.data[i]);
  }
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double z1 = mu1.data[i] + sd1[i] * norm(rng);
      const double z2 = mu2.data[i] + sd2[i] * norm(rng);
      const double diff = z1 - z2;
      dist += diff * diff;
    }
    sum += dist;
    sumsq += dist * dist;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  const double var_est = std::max(0.0, (sumsq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var_est / n)};
}

/// Uncertainty-aware holistic distance: squared Frobenius distance of the
/// mean matrices plus the total variance mass on both sides. Equals the sum
/// of expected_sq_distance over the K aligned components.
inline double holistic_distance(const FineGrainedGaussian& q,
                                const FineGrainedGaussian& c) {
  check_same_shape(q.mu, c.mu, "holistic_distance");
  double d = 0.0;
  for (std::size_t i = 0; i < q.mu.data.size(); ++i) {
    const double diff = q.mu.data[i] - c.mu.data[i];
    d += diff * diff + q.var.data[i] + c.var.data[i];
  }
  return d;
}

/// Ranks gallery entries by ascending holistic distance to the query. Stable:
/// ties keep gallery insertion order.
inline std::vector<std::string> rank_gallery(const FineGrainedGaussian& q,
                                             const std::vector<GalleryEntry>& gallery) {
  if (gallery.empty()) throw std::invalid_argument("rank_gallery: empty gallery");
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i)
    scored.emplace_back(holistic_distance(q, gallery[i].gaussian), i);
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::string> out;
  out.reserve(gallery.size());
  for (const auto& [dist, idx] : scored) out.push_back(gallery[idx].id);
  return out;
}

}  // namespace hug
