#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hug/encoder.hpp"
#include "hug/tensor.hpp"

namespace hug {

/// Binary tensor container: magic "HUGC", u32 format version, length-prefixed
/// config text, then a tensor directory (name, rank, dims, row-major f64
/// little-endian values). Round-trips byte-identically.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> tensors;  // insertion order preserved

  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write("HUGC", 4);
    write_u32(out, kVersion);
    write_u64(out, config_text.size());
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    write_u64(out, tensors.size());
    for (const auto& [name, t] : tensors) {
      write_u64(out, name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u64(out, t.rank());
      for (auto d : t.shape) write_u64(out, d);
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failure on " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "HUGC", 4) != 0)
      throw std::runtime_error("checkpoint: bad magic at offset 0 in " + path);
    const std::uint32_t version = read_u32(in, path);
    if (version != kVersion)
      throw std::runtime_error("checkpoint: unsupported version " +
                               std::to_string(version) + " in " + path);
    Checkpoint ck;
    const std::uint64_t cfg_len = read_u64(in, path);
    ck.config_text.resize(cfg_len);
    in.read(ck.config_text.data(), static_cast<std::streamsize>(cfg_len));
    const std::uint64_t count = read_u64(in, path);
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint64_t name_len = read_u64(in, path);
      std::string name(name_len, '\0');
      in.read(name.data(), static_cast<std::streamsize>(name_len));
      const std::uint64_t rank = read_u64(in, path);
      std::vector<std::size_t> shape(rank);
      for (auto& d : shape) d = read_u64(in, path);
      Tensor t(shape);
      in.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
      if (!in)
        throw std::runtime_error("checkpoint: truncated tensor '" + name + "' at offset " +
                                 std::to_string(in.tellg()) + " in " + path);
      ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ck;
  }

 private:
  static void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
    return v;
  }
  static std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in)
      throw std::runtime_error("checkpoint: truncated field at offset " +
                               std::to_string(in.tellg()) + " in " + path);
    return v;
  }
};

inline Checkpoint model_to_checkpoint(const ModelParams& m, std::string config_text) {
  Checkpoint ck;
  ck.config_text = std::move(config_text);
  Tensor dims({5}, {double(m.cfg.k), double(m.cfg.d), double(m.cfg.d_hidden),
                    double(m.cfg.d_txt), double(m.cfg.d_img)});
  ck.tensors.emplace_back("model.dims", std::move(dims));
  m.visit([&](const std::string& name, const Tensor& t) {
    ck.tensors.emplace_back(name, t);
  });
  return ck;
}

inline ModelParams model_from_checkpoint(const Checkpoint& ck) {
  const Tensor& dims = ck.tensor("model.dims");
  ModelParams m;
  m.cfg.k = static_cast<std::size_t>(dims.data[0]);
  m.cfg.d = static_cast<std::size_t>(dims.data[1]);
  m.cfg.d_hidden = static_cast<std::size_t>(dims.data[2]);
  m.cfg.d_txt = static_cast<std::size_t>(dims.data[3]);
  m.cfg.d_img = static_cast<std::size_t>(dims.data[4]);
  m.visit([&](const std::string& name, Tensor& t) { t = ck.tensor(name); });
  return m;
}

}  // namespace hug
