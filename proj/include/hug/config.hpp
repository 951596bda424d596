#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hug {

/// Flat key=value run configuration. Every knob has a documented default;
/// unknown keys are rejected on parse. `to_text` emits the fully resolved
/// configuration (defaults applied) for echoing alongside outputs.
struct RunConfig {
  // attribute world
  std::size_t world_attributes = 4;
  std::size_t world_values = 4;
  std::size_t world_d_img = 32;
  std::size_t world_d_txt = 32;
  // synthetic data
  std::size_t data_n_train = 4096;
  std::size_t data_n_val = 512;
  double data_p_img = 0.3;
  double data_sigma_img = 0.5;
  double data_p_txt = 0.2;
  double data_p_mismatch = 0.2;
  // model
  std::size_t model_k = 8;
  std::size_t model_d = 16;
  std::size_t model_d_hidden = 32;
  // training
  std::size_t train_mode = 7;  // ablation ladder 0..7
  std::size_t train_batch = 32;
  std::size_t train_epochs = 14;
  double train_lr = 3e-3;
  double train_weight_decay = 0.0;
  double train_beta1 = 0.9;
  double train_beta2 = 0.999;
  double train_eps = 1e-7;
  double train_clip_norm = 5.0;
  double train_temperature = 1.0;  // point-matching baseline softmax
  double lambda_fc = 0.5;
  double lambda_cord = 0.1;
  std::string cord_sign = "intent";  // or "printed"
  // fine-grained negative pools; 0 selects the pool-size default
  std::size_t sampler_component = 0;
  std::size_t sampler_instance = 0;
  std::size_t sampler_modality = 0;
  // seeds
  std::size_t seed_world = 1;
  std::size_t seed_data = 2;
  std::size_t seed_train = 11;
  std::size_t seed_sampler = 4;

  template <typename F>
  void visit_fields(F&& f) {
    f("world.attributes", world_attributes);
    f("world.values", world_values);
    f("world.d_img", world_d_img);
    f("world.d_txt", world_d_txt);
    f("data.n_train", data_n_train);
    f("data.n_val", data_n_val);
    f("data.p_img", data_p_img);
    f("data.sigma_img", data_sigma_img);
    f("data.p_txt", data_p_txt);
    f("data.p_mismatch", data_p_mismatch);
    f("model.k", model_k);
    f("model.d", model_d);
    f("model.d_hidden", model_d_hidden);
    f("train.mode", train_mode);
    f("train.batch", train_batch);
    f("train.epochs", train_epochs);
    f("train.lr", train_lr);
    f("train.weight_decay", train_weight_decay);
    f("train.beta1", train_beta1);
    f("train.beta2", train_beta2);
    f("train.eps", train_eps);
    f("train.clip_norm", train_clip_norm);
    f("train.temperature", train_temperature);
    f("loss.lambda_fc", lambda_fc);
    f("loss.lambda_cord", lambda_cord);
    f("loss.cord_sign", cord_sign);
    f("sampler.component", sampler_component);
    f("sampler.instance", sampler_instance);
    f("sampler.modality", sampler_modality);
    f("seed.world", seed_world);
    f("seed.data", seed_data);
    f("seed.train", seed_train);
    f("seed.sampler", seed_sampler);
  }

  static RunConfig parse_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      const auto strip = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
      };
      line = strip(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": expected key=value, got '" + line + "'");
      const std::string key = strip(line.substr(0, eq));
      const std::string value = strip(line.substr(eq + 1));
      if (!cfg.set(key, value))
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": unknown key '" + key + "'");
    }
    if (cfg.cord_sign != "intent" && cfg.cord_sign != "printed")
      throw std::invalid_argument("config: loss.cord_sign must be 'intent' or 'printed'");
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
  }

  bool set(const std::string& key, const std::string& value) {
    bool found = false;
    visit_fields([&](const char* name, auto& field) {
      if (found || key != name) return;
      found = true;
      parse_into(field, key, value);
    });
    return found;
  }

  std::string to_text() {
    std::ostringstream os;
    os.precision(17);
    visit_fields([&](const char* name, auto& field) { os << name << " = " << field << "\n"; });
    return os.str();
  }

 private:
  static void parse_into(double& f, const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    f = std::stod(v, &pos);
    if (pos != v.size())
      throw std::invalid_argument("config: key '" + key + "': bad number '" + v + "'");
  }
  static void parse_into(std::size_t& f, const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size() || x < 0)
      throw std::invalid_argument("config: key '" + key + "': bad count '" + v + "'");
    f = static_cast<std::size_t>(x);
  }
  static void parse_into(std::string& f, const std::string&, const std::string& v) { f = v; }
};

}  // namespace hug
