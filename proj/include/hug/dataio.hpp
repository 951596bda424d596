#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "hug/checkpoint.hpp"
#include "hug/synthdata.hpp"

namespace hug {

/// Dataset persistence: features and codebooks go through the binary tensor
/// container; per-example labels live in a JSON-lines sidecar (<path>.meta).
inline void save_dataset(const SynthDataset& ds, const std::string& path,
                         const std::string& config_text) {
  Checkpoint ck;
  ck.config_text = config_text;
  ck.tensors.emplace_back("world.dims",
                          Tensor({5}, {double(ds.world.cfg.attributes),
                                       double(ds.world.cfg.values),
                                       double(ds.world.cfg.d_img),
                                       double(ds.world.cfg.d_txt),
                                       double(ds.world.seed)}));
  ck.tensors.emplace_back("world.img_codes", ds.world.img_codes);
  ck.tensors.emplace_back("world.txt_codes", ds.world.txt_codes);
  ck.tensors.emplace_back("gallery", ds.gallery);
  const std::size_t n = ds.examples.size();
  Tensor xr({n, ds.world.cfg.d_img}), xt({n, ds.world.cfg.d_txt}),
      xc({n, ds.world.cfg.d_img});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = ds.examples[i];
    std::copy(ex.x_r.data.begin(), ex.x_r.data.end(),
              xr.data.begin() + i * ds.world.cfg.d_img);
    std::copy(ex.x_t.data.begin(), ex.x_t.data.end(),
              xt.data.begin() + i * ds.world.cfg.d_txt);
    std::copy(ex.x_c.data.begin(), ex.x_c.data.end(),
              xc.data.begin() + i * ds.world.cfg.d_img);
  }
  ck.tensors.emplace_back("x_r", std::move(xr));
  ck.tensors.emplace_back("x_t", std::move(xt));
  ck.tensors.emplace_back("x_c", std::move(xc));
  ck.save(path);

  std::ofstream meta(path + ".meta");
  if (!meta) throw std::runtime_error("save_dataset: cannot write " + path + ".meta");
  for (const auto& ex : ds.examples) {
    nlohmann::json j;
    j["ref_values"] = ex.ref_values;
    nlohmann::json mods = nlohmann::json::array();
    for (const auto& m : ex.modifications)
      mods.push_back({{"attribute", m.attribute}, {"new_value", m.new_value}});
    j["modifications"] = mods;
    j["noise_img"] = ex.noise_img;
    j["noise_txt"] = ex.noise_txt;
    j["coord_mismatch"] = ex.coord_mismatch;
    j["target_combo"] = ex.target_combo;
    meta << j.dump() << "\n";
  }
}

inline SynthDataset load_dataset(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  SynthDataset ds;
  const Tensor& dims = ck.tensor("world.dims");
  ds.world.cfg.attributes = static_cast<std::size_t>(dims.data[0]);
  ds.world.cfg.values = static_cast<std::size_t>(dims.data[1]);
  ds.world.cfg.d_img = static_cast<std::size_t>(dims.data[2]);
  ds.world.cfg.d_txt = static_cast<std::size_t>(dims.data[3]);
  ds.world.seed = static_cast<std::uint64_t>(dims.data[4]);
  ds.world.img_codes = ck.tensor("world.img_codes");
  ds.world.txt_codes = ck.tensor("world.txt_codes");
  ds.gallery = ck.tensor("gallery");
  for (std::size_t i = 0; i < ds.gallery.rows(); ++i)
    ds.gallery_ids.push_back("g" + std::to_string(i));

  const Tensor& xr = ck.tensor("x_r");
  const Tensor& xt = ck.tensor("x_t");
  const Tensor& xc = ck.tensor("x_c");
  std::ifstream meta(path + ".meta");
  if (!meta) throw std::runtime_error("load_dataset: missing sidecar " + path + ".meta");
  std::string line;
  std::size_t i = 0;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    if (i >= xr.rows())
      throw std::runtime_error("load_dataset: sidecar has more records than tensors");
    nlohmann::json j = nlohmann::json::parse(line);
    TripletExample ex;
    const std::size_t di = ds.world.cfg.d_img, dt = ds.world.cfg.d_txt;
    ex.x_r = Tensor({di}, std::vector<double>(xr.data.begin() + i * di,
                                              xr.data.begin() + (i + 1) * di));
    ex.x_t = Tensor({dt}, std::vector<double>(xt.data.begin() + i * dt,
                                              xt.data.begin() + (i + 1) * dt));
    ex.x_c = Tensor({di}, std::vector<double>(xc.data.begin() + i * di,
                                              xc.data.begin() + (i + 1) * di));
    ex.ref_values = j.at("ref_values").get<std::vector<std::size_t>>();
    for (const auto& m : j.at("modifications"))
      ex.modifications.push_back(
          {m.at("attribute").get<std::size_t>(), m.at("new_value").get<std::size_t>()});
    ex.noise_img = j.at("noise_img").get<double>();
    ex.noise_txt = j.at("noise_txt").get<double>();
    ex.coord_mismatch = j.at("coord_mismatch").get<bool>();
    ex.target_combo = j.at("target_combo").get<std::size_t>();
    ds.examples.push_back(std::move(ex));
    ++i;
  }
  if (i != xr.rows())
    throw std::runtime_error("load_dataset: sidecar record count " + std::to_string(i) +
                             " does not match tensor rows " + std::to_string(xr.rows()));
  return ds;
}

}  // namespace hug
