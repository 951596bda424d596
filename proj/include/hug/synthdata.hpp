#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "hug/tensor.hpp"

namespace hug {

struct WorldConfig {
  std::size_t attributes = 4;      // A
  std::size_t values = 4;          // V per attribute
  std::size_t d_img = 32;
  std::size_t d_txt = 32;
};

/// Fixed random codebooks defining the attribute world. Image code rows and
/// text code rows are unit-norm; a text row is [attribute half | value half]
/// so "vague" text can drop the value-identifying part.
struct AttributeWorld {
  WorldConfig cfg;
  std::uint64_t seed = 0;
  Tensor img_codes;  // A x V x d_img (flattened rank-2: A*V x d_img)
  Tensor txt_codes;  // A*V x d_txt

  const double* img_code(std::size_t a, std::size_t v) const {
    return img_codes.data.data() + (a * cfg.values + v) * cfg.d_img;
  }
  const double* txt_code(std::size_t a, std::size_t v) const {
    return txt_codes.data.data() + (a * cfg.values + v) * cfg.d_txt;
  }
};

namespace detail {

inline void normalize_row(double* p, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += p[i] * p[i];
  s = std::sqrt(s);
  for (std::size_t i = 0; i < n; ++i) p[i] /= s;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t idx) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (idx + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

inline AttributeWorld gen_world(const WorldConfig& cfg, std::uint64_t seed) {
  if (cfg.attributes < 2 || cfg.values < 2)
    throw std::invalid_argument("gen_world: need at least 2 attributes and 2 values");
  if (cfg.d_txt % 2 != 0)
    throw std::invalid_argument("gen_world: d_txt must be even (attribute/value halves)");
  AttributeWorld w;
  w.cfg = cfg;
  w.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm(0.0, 1.0);
  const std::size_t av = cfg.attributes * cfg.values;
  w.img_codes = Tensor({av, cfg.d_img});
  for (auto& v : w.img_codes.data) v = norm(rng);
  for (std::size_t r = 0; r < av; ++r)
    detail::normalize_row(w.img_codes.data.data() + r * cfg.d_img, cfg.d_img);

  // attribute halves are shared across the values of one attribute
  const std::size_t half = cfg.d_txt / 2;
  Tensor attr_half({cfg.attributes, half});
  for (auto& v : attr_half.data) v = norm(rng);
  w.txt_codes = Tensor({av, cfg.d_txt});
  for (std::size_t a = 0; a < cfg.attributes; ++a)
    for (std::size_t v = 0; v < cfg.values; ++v) {
      double* row = w.txt_codes.data.data() + (a * cfg.values + v) * cfg.d_txt;
      for (std::size_t i = 0; i < half; ++i) row[i] = attr_half.data[a * half + i];
      for (std::size_t i = 0; i < half; ++i) row[half + i] = norm(rng);
      detail::normalize_row(row, cfg.d_txt);
    }
  return w;
}

struct Modification {
  std::size_t attribute;
  std::size_t new_value;
  bool operator==(const Modification&) const = default;
};

struct TripletExample {
  Tensor x_r, x_t, x_c;
  std::vector<std::size_t> ref_values;      // one value per attribute
  std::vector<Modification> modifications;  // the true applied edits
  double noise_img = 0.0;                   // realized image-noise scale, 0 if clean
  double noise_txt = 0.0;                   // 1 if the value half was dropped
  bool coord_mismatch = false;
  std::size_t target_combo = 0;             // gallery index of the true target
};

struct NoiseConfig {
  double p_img = 0.0;
  double sigma_img = 0.5;
  double p_txt = 0.0;
  double p_mismatch = 0.0;
};

struct SynthDataset {
  AttributeWorld world;
  std::vector<TripletExample> examples;
  Tensor gallery;                        // V^A x d_img clean renderings
  std::vector<std::string> gallery_ids;  // "g<combo>"
};

namespace detail {

inline std::size_t combo_index(const AttributeWorld& w,
                               const std::vector<std::size_t>& vals) {
  std::size_t idx = 0;
  for (std::size_t a = 0; a < vals.size(); ++a) idx = idx * w.cfg.values + vals[a];
  return idx;
}

inline Tensor render_image(const AttributeWorld& w,
                           const std::vector<std::size_t>& vals) {
  Tensor x({w.cfg.d_img});
  for (std::size_t a = 0; a < vals.size(); ++a) {
    const double* code = w.img_code(a, vals[a]);
    for (std::size_t i = 0; i < w.cfg.d_img; ++i) x.data[i] += code[i];
  }
  for (auto& v : x.data) v /= static_cast<double>(vals.size());
  return x;
}

inline Tensor render_text(const AttributeWorld& w, const std::vector<Modification>& mods,
                          bool vague) {
  Tensor x({w.cfg.d_txt});
  const std::size_t half = w.cfg.d_txt / 2;
  for (const auto& m : mods) {
    const double* code = w.txt_code(m.attribute, m.new_value);
    const std::size_t upto = vague ? half : w.cfg.d_txt;
    for (std::size_t i = 0; i < upto; ++i) x.data[i] += code[i];
  }
  for (auto& v : x.data) v /= static_cast<double>(mods.size());
  return x;
}

inline std::vector<Modification> sample_mods(const AttributeWorld& w,
                                             const std::vector<std::size_t>& ref_vals,
                                             std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> n_mods_dist(1, 2);
  std::uniform_int_distribution<std::size_t> attr_dist(0, w.cfg.attributes - 1);
  std::uniform_int_distribution<std::size_t> val_dist(0, w.cfg.values - 2);
  const std::size_t n_mods = n_mods_dist(rng);
  std::vector<Modification> mods;
  while (mods.size() < n_mods) {
    const std::size_t a = attr_dist(rng);
    bool seen = false;
    for (const auto& m : mods) seen |= m.attribute == a;
    if (seen) continue;
    std::size_t v = val_dist(rng);
    if (v >= ref_vals[a]) ++v;  // new value differs from the current one
    mods.push_back({a, v});
  }
  return mods;
}

}  // namespace detail

/// Generates n labeled triplets plus the shared gallery of all V^A clean
/// renderings. Fully determined by (world, config, seed); each example uses a
/// derived per-example stream.
inline SynthDataset gen_triplets(const AttributeWorld& world, std::size_t n,
                                 const NoiseConfig& noise, std::uint64_t seed) {
  for (double p : {noise.p_img, noise.p_txt, noise.p_mismatch})
    if (p < 0.0 || p > 1.0)
      throw std::invalid_argument("gen_triplets: probability out of [0,1]");
  if (n < 1) throw std::invalid_argument("gen_triplets: need at least one example");

  SynthDataset ds;
  ds.world = world;
  const std::size_t a_count = world.cfg.attributes;
  std::size_t combos = 1;
  for (std::size_t a = 0; a < a_count; ++a) combos *= world.cfg.values;
  ds.gallery = Tensor({combos, world.cfg.d_img});
  std::vector<std::size_t> vals(a_count, 0);
  for (std::size_t c = 0; c < combos; ++c) {
    std::size_t rem = c;
    for (std::size_t a = a_count; a-- > 0;) {
      vals[a] = rem % world.cfg.values;
      rem /= world.cfg.values;
    }
    Tensor img = detail::render_image(world, vals);
    std::copy(img.data.begin(), img.data.end(),
              ds.gallery.data.begin() + c * world.cfg.d_img);
    ds.gallery_ids.push_back("g" + std::to_string(c));
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t idx = 0; idx < n; ++idx) {
    std::mt19937_64 rng(detail::mix_seed(seed, idx));
    TripletExample ex;
    std::uniform_int_distribution<std::size_t> val_dist(0, world.cfg.values - 1);
    ex.ref_values.resize(a_count);
    for (auto& v : ex.ref_values) v = val_dist(rng);
    ex.modifications = detail::sample_mods(world, ex.ref_values, rng);

    std::vector<std::size_t> target_vals = ex.ref_values;
    for (const auto& m : ex.modifications) target_vals[m.attribute] = m.new_value;
    ex.target_combo = detail::combo_index(world, target_vals);
    ex.x_c = detail::render_image(world, target_vals);

    ex.x_r = detail::render_image(world, ex.ref_values);
    if (unit(rng) < noise.p_img) {
      std::uniform_real_distribution<double> scale_dist(0.5, 1.5);
      ex.noise_img = noise.sigma_img * scale_dist(rng);
      std::normal_distribution<double> g(0.0, ex.noise_img /
                                                  std::sqrt(double(world.cfg.d_img)));
      for (auto& v : ex.x_r.data) v += g(rng);
    }

    ex.noise_txt = unit(rng) < noise.p_txt ? 1.0 : 0.0;
    std::vector<Modification> text_mods = ex.modifications;
    if (unit(rng) < noise.p_mismatch) {
      // swap in an unrelated modification; the target stays put, so the
      // triplet is internally inconsistent
      ex.coord_mismatch = true;
      do {
        text_mods = detail::sample_mods(world, ex.ref_values, rng);
      } while (text_mods == ex.modifications);
    }
    ex.x_t = detail::render_text(world, text_mods, ex.noise_txt > 0.0);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace hug
