#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hug/checkpoint.hpp"
#include "hug/config.hpp"
#include "hug/dataio.hpp"
#include "hug/evaluator.hpp"
#include "hug/trainer.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidationFailure = 1;
constexpr int kNumericalFailure = 2;

void write_config_echo(const hug::RunConfig& cfg, const std::string& out_base) {
  hug::RunConfig copy = cfg;
  std::ofstream echo(out_base + ".config");
  if (!echo) throw std::runtime_error("cannot write " + out_base + ".config");
  echo << copy.to_text();
}

hug::SynthDataset generate(const hug::RunConfig& cfg, std::size_t n,
                           std::uint64_t data_seed) {
  hug::WorldConfig wc{cfg.world_attributes, cfg.world_values, cfg.world_d_img,
                      cfg.world_d_txt};
  hug::AttributeWorld world = hug::gen_world(wc, cfg.seed_world);
  hug::NoiseConfig noise{cfg.data_p_img, cfg.data_sigma_img, cfg.data_p_txt,
                         cfg.data_p_mismatch};
  return hug::gen_triplets(world, n, noise, data_seed);
}

int cmd_gen_data(const std::string& config_path, const std::string& out_path) {
  hug::RunConfig cfg = hug::RunConfig::load(config_path);
  hug::SynthDataset train = generate(cfg, cfg.data_n_train, cfg.seed_data);
  // validation draws from a derived stream so it never overlaps training
  hug::SynthDataset val = generate(cfg, cfg.data_n_val, cfg.seed_data ^ 0x9e3779b9ULL);
  hug::RunConfig echo = cfg;
  hug::save_dataset(train, out_path, echo.to_text());
  hug::save_dataset(val, out_path + ".val", echo.to_text());
  write_config_echo(cfg, out_path);
  std::cout << "wrote " << train.examples.size() << " train and " << val.examples.size()
            << " val examples; gallery size " << train.gallery.rows() << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_path) {
  hug::RunConfig cfg = hug::RunConfig::load(config_path);
  hug::SynthDataset data = hug::load_dataset(data_path);
  hug::SynthDataset val;
  const hug::SynthDataset* val_ptr = nullptr;
  if (std::ifstream(data_path + ".val").good()) {
    val = hug::load_dataset(data_path + ".val");
    val_ptr = &val;
  }
  hug::TrainResult res = hug::train(cfg, data, val_ptr);

  std::ofstream metrics(out_path + ".metrics.jsonl");
  if (!metrics) throw std::runtime_error("cannot write " + out_path + ".metrics.jsonl");
  for (const auto& rec : res.log) {
    nlohmann::json j{{"step", rec.step},       {"epoch", rec.epoch},
                     {"l_hc", rec.l_hc},       {"l_fc", rec.l_fc},
                     {"l_cord", rec.l_cord},   {"total", rec.total},
                     {"mean_w_r", rec.mean_w_r}, {"mean_w_t", rec.mean_w_t},
                     {"mean_w_m", rec.mean_w_m}};
    metrics << j.dump() << "\n";
  }
  for (std::size_t e = 0; e < res.val_recall1.size(); ++e)
    metrics << nlohmann::json{{"epoch", e}, {"val_recall1", res.val_recall1[e]}}.dump()
            << "\n";

  hug::RunConfig echo = cfg;
  hug::model_to_checkpoint(res.model, echo.to_text()).save(out_path);
  write_config_echo(cfg, out_path);
  if (res.diverged) {
    std::cerr << "training diverged: " << res.divergence_note << "\n";
    return kNumericalFailure;
  }
  std::cout << "trained mode " << cfg.train_mode << " for " << res.log.size()
            << " steps; final loss " << (res.log.empty() ? 0.0 : res.log.back().total);
  if (!res.val_recall1.empty()) std::cout << "; val Recall@1 " << res.val_recall1.back();
  std::cout << "\n";
  return kOk;
}

void print_report(const hug::RetrievalReport& rep, const std::vector<std::size_t>& ks,
                  const std::vector<std::size_t>& subset_ks) {
  for (std::size_t i = 0; i < ks.size(); ++i)
    std::cout << "Recall@" << ks[i] << " = " << rep.recall[i] << "\n";
  for (std::size_t i = 0; i < subset_ks.size(); ++i)
    std::cout << "Recall_subset@" << subset_ks[i] << " = " << rep.subset_recall[i] << "\n";
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::vector<double>& sweep_cord, const std::vector<double>& sweep_fc,
             const std::string& train_data_path) {
  hug::Checkpoint ck = hug::Checkpoint::load(ckpt_path);
  hug::RunConfig cfg = hug::RunConfig::parse_text(ck.config_text);
  hug::ModelParams model = hug::model_from_checkpoint(ck);
  hug::SynthDataset data = hug::load_dataset(data_path);
  const hug::EncodeOptions opt =
      hug::encode_options_for(static_cast<hug::TrainMode>(cfg.train_mode));
  const std::vector<std::size_t> ks{1, 5, 10, 50};
  const std::vector<std::size_t> subset_ks{1, 2, 3};
  auto rep = hug::evaluate_retrieval(model, data, opt, ks, subset_ks);
  print_report(rep, ks, subset_ks);

  if (!sweep_cord.empty() || !sweep_fc.empty()) {
    if (train_data_path.empty())
      throw std::invalid_argument("sweeps retrain per value: --train-data is required");
    hug::SynthDataset train_data = hug::load_dataset(train_data_path);
    auto run_with = [&](hug::RunConfig swept, const char* knob, double value) {
      hug::TrainResult res = hug::train(swept, train_data);
      auto r = hug::evaluate_retrieval(
          res.model, data,
          hug::encode_options_for(static_cast<hug::TrainMode>(swept.train_mode)), {1}, {});
      std::cout << "sweep " << knob << " = " << value << " Recall@1 = " << r.recall[0]
                << "\n";
    };
    for (double v : sweep_cord) {
      hug::RunConfig swept = cfg;
      swept.lambda_cord = v;
      run_with(swept, "lambda_cord", v);
    }
    for (double v : sweep_fc) {
      hug::RunConfig swept = cfg;
      swept.lambda_fc = v;
      run_with(swept, "lambda_fc", v);
    }
  }
  return kOk;
}

int cmd_check_grad(const std::string& config_path) {
  hug::RunConfig cfg = hug::RunConfig::load(config_path);
  // small random model and a B=2 batch keep the finite-difference sweep fast
  hug::ModelConfig mc{2, 6, 8, cfg.world_d_txt, cfg.world_d_img};
  hug::ModelParams model = hug::init_model(mc, cfg.seed_train);
  std::mt19937_64 rng(cfg.seed_data);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  hug::BatchInputs in;
  for (int i = 0; i < 2; ++i) {
    hug::Tensor xr({1, mc.d_img}), xt({1, mc.d_txt}), xc({1, mc.d_img});
    for (auto* t : {&xr, &xc})
      for (auto& v : t->data) v = u(rng);
    for (auto& v : xt.data) v = u(rng);
    in.x_r.push_back(xr);
    in.x_t.push_back(xt);
    in.x_c.push_back(xc);
  }

  std::vector<hug::Tensor> params;
  model.visit([&](const std::string&, hug::Tensor& t) { params.push_back(t); });
  auto bind_from = [](const std::vector<hug::Var>& vs) {
    hug::ModelVars mv;
    std::size_t j = 0;
    auto next = [&]() { return vs[j++]; };
    mv.composer = hug::ComposerVars{next(), next(), next(), next(), next(),
                                    next(), next(), next(), next(), next()};
    auto head = [&]() {
      return hug::HeadVars{next(), next(), next(), next(), next(), next(), next()};
    };
    mv.head_v = head();
    mv.head_t = head();
    mv.head_m = head();
    mv.a = next();
    mv.b = next();
    mv.ap = next();
    mv.bp = next();
    return mv;
  };

  struct Term {
    const char* name;
    std::function<hug::Var(hug::Tape&, const hug::ModelVars&, const hug::BatchVars&)> f;
  };
  hug::SamplerConfig full_pools;
  full_pools.n_component = full_pools.n_instance = full_pools.n_modality = 1 << 20;
  const std::vector<Term> terms{
      {"holistic_contrast",
       [](hug::Tape& t, const hug::ModelVars& mv, const hug::BatchVars& b) {
         return hug::holistic_contrast_loss(t, b, mv.a, mv.b);
       }},
      {"fine_grained_contrast",
       [&](hug::Tape& t, const hug::ModelVars& mv, const hug::BatchVars& b) {
         std::mt19937_64 r(1);
         return hug::fine_grained_contrast_loss(t, b, mv.ap, mv.bp, full_pools, r);
       }},
      {"coordination",
       [&](hug::Tape& t, const hug::ModelVars& mv, const hug::BatchVars& b) {
         return hug::coordination_loss(t, mv, in, b, cfg.cord_sign == "printed");
       }},
      {"total",
       [&](hug::Tape& t, const hug::ModelVars& mv, const hug::BatchVars& b) {
         hug::LossConfig lc;
         lc.sampler = full_pools;
         std::mt19937_64 r(1);
         return hug::total_loss(t, mv, in, b, lc, r).total;
       }},
  };

  bool ok = true;
  for (const auto& term : terms) {
    auto build = [&](hug::Tape& tape, const std::vector<hug::Var>& vs) {
      hug::ModelVars mv = bind_from(vs);
      hug::BatchVars batch = hug::encode_batch(tape, mv, in);
      return term.f(tape, mv, batch);
    };
    const double err = hug::grad_check(build, params, 1e-5, 1e-4);
    std::cout << "max_rel_error " << term.name << " = " << err << "\n";
    ok = ok && err < 1e-4;
  }
  // distance kernel alone, against a tighter budget
  {
    std::vector<hug::Tensor> dp{params[0], params[0]};  // two K x D mean fields
    auto build = [](hug::Tape& tape, const std::vector<hug::Var>& vs) {
      using namespace hug::ops;
      return sq_norm(sub(vs[0], vs[1]));
    };
    std::vector<hug::Tensor> kernel_params{hug::Tensor({2, 6}), hug::Tensor({2, 6})};
    std::mt19937_64 r2(7);
    for (auto& t : kernel_params)
      for (auto& v : t.data) v = u(r2);
    const double err = hug::grad_check(build, kernel_params, 1e-6);
    std::cout << "max_rel_error distance_kernel = " << err << "\n";
    ok = ok && err < 1e-6;
  }
  if (!ok) {
    std::cerr << "gradient check failed\n";
    return kNumericalFailure;
  }
  return kOk;
}

int cmd_check_bound(const std::string& ckpt_path, const std::string& data_path) {
  hug::Checkpoint ck = hug::Checkpoint::load(ckpt_path);
  hug::RunConfig cfg = hug::RunConfig::parse_text(ck.config_text);
  hug::ModelParams model = hug::model_from_checkpoint(ck);
  hug::SynthDataset data = hug::load_dataset(data_path);
  std::vector<const hug::TripletExample*> sample;
  for (const auto& ex : data.examples) sample.push_back(&ex);
  const hug::EncodeOptions opt =
      hug::encode_options_for(static_cast<hug::TrainMode>(cfg.train_mode));
  hug::BoundReport rep = hug::check_bound(model, sample, opt);
  const char* names[3] = {"reference_image", "text", "coordination"};
  for (int x = 0; x < 3; ++x)
    std::cout << "source " << names[x] << " E[w] = " << rep.e_weight[x]
              << " E[loss] = " << rep.e_loss[x] << " Cov = " << rep.cov[x]
              << " pearson = " << rep.pearson[x] << "\n";
  std::cout << "identity_residual = " << rep.identity_residual << "\n"
            << "rhs_dynamic = " << rep.rhs_dynamic << "\n"
            << "rhs_static = " << rep.rhs_static << "\n"
            << "cov_sum = " << rep.cov_sum << "\n"
            << "cov_sum_negative = " << (rep.cov_sum_negative ? "true" : "false") << "\n"
            << "convexity_ok = " << (rep.convexity_ok ? "true" : "false") << "\n"
            << "n_samples = " << rep.n_samples << "\n";
  if (rep.identity_residual > 1e-9 || !rep.convexity_ok) {
    std::cerr << "bound mechanics check failed\n";
    return kNumericalFailure;
  }
  return kOk;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& data_path,
                std::size_t component, std::size_t count) {
  hug::Checkpoint ck = hug::Checkpoint::load(ckpt_path);
  hug::ModelParams model = hug::model_from_checkpoint(ck);
  hug::RunConfig cfg = hug::RunConfig::parse_text(ck.config_text);
  hug::SynthDataset data = hug::load_dataset(data_path);
  const hug::EncodeOptions opt =
      hug::encode_options_for(static_cast<hug::TrainMode>(cfg.train_mode));
  auto ex = hug::component_exemplars(model, data, component, count, opt);
  if (ex.truncated) std::cout << "note: pool smaller than requested count, truncated\n";

  auto describe = [&](std::size_t idx) {
    const auto& e = data.examples[idx];
    std::cout << "  example " << idx << " target g" << e.target_combo << " mods:";
    for (const auto& m : e.modifications)
      std::cout << " a" << m.attribute << "->v" << m.new_value;
    std::cout << " noise_img " << e.noise_img << " noise_txt " << e.noise_txt
              << (e.coord_mismatch ? " mismatch" : "") << "\n";
  };
  std::cout << "component " << component << " highest variance:\n";
  for (auto i : ex.top) describe(i);
  std::cout << "component " << component << " lowest variance:\n";
  for (auto i : ex.bottom) describe(i);

  // overall-uncertainty histogram over the dataset
  std::vector<double> overall;
  for (const auto& e : data.examples) {
    auto [g, bundle] = hug::encode_query_value(model, e.x_r, e.x_t, opt);
    overall.push_back(hug::overall_uncertainty(g));
  }
  const auto [mn, mx] = std::minmax_element(overall.begin(), overall.end());
  const int bins = 10;
  const double width = (*mx - *mn) > 0 ? (*mx - *mn) / bins : 1.0;
  std::vector<std::size_t> hist(bins, 0);
  for (double v : overall) {
    int b = static_cast<int>((v - *mn) / width);
    hist[std::min(b, bins - 1)]++;
  }
  std::cout << "overall_uncertainty histogram (" << overall.size() << " queries):\n";
  for (int b = 0; b < bins; ++b)
    std::cout << "  [" << (*mn + b * width) << ", " << (*mn + (b + 1) * width)
              << ") = " << hist[b] << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertainty-guided composed retrieval toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, ckpt_path, train_data_path;
  std::size_t component = 0, count = 5;
  std::vector<double> sweep_cord, sweep_fc;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic benchmark");
  gen->add_option("--config", config_path, "config file")->required();
  gen->add_option("--out", out_path, "output dataset path")->required();

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config_path, "config file")->required();
  tr->add_option("--data", data_path, "training dataset")->required();
  tr->add_option("--out", out_path, "output checkpoint")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  ev->add_option("--data", data_path, "evaluation dataset")->required();
  ev->add_option("--sweep-cord", sweep_cord, "coordination-weight sweep values");
  ev->add_option("--sweep-fc", sweep_fc, "fine-grained-weight sweep values");
  ev->add_option("--train-data", train_data_path, "training set for sweep retraining");

  auto* cg = app.add_subcommand("check-grad", "finite-difference gradient audit");
  cg->add_option("--config", config_path, "config file")->required();

  auto* cb = app.add_subcommand("check-bound", "fusion bound mechanics report");
  cb->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  cb->add_option("--data", data_path, "dataset")->required();

  auto* ins = app.add_subcommand("inspect", "component exemplars and histogram");
  ins->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  ins->add_option("--data", data_path, "dataset")->required();
  ins->add_option("--component", component, "component index");
  ins->add_option("--count", count, "exemplars per direction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidationFailure;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_path);
    if (tr->parsed()) return cmd_train(config_path, data_path, out_path);
    if (ev->parsed())
      return cmd_eval(ckpt_path, data_path, sweep_cord, sweep_fc, train_data_path);
    if (cg->parsed()) return cmd_check_grad(config_path);
    if (cb->parsed()) return cmd_check_bound(ckpt_path, data_path);
    if (ins->parsed()) return cmd_inspect(ckpt_path, data_path, component, count);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationFailure;
  }
  return kValidationFailure;
}
