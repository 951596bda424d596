// Acceptance gate: one pass/fail line per criterion, covering the
// distance/gradient oracles, fusion and bound invariants, the ablation
// ladder, interpretability probes, sensitivity sweeps, determinism, and
// ranking invariance. Exit code is the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hug/checkpoint.hpp"
#include "hug/evaluator.hpp"
#include "hug/trainer.hpp"

using namespace hug;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("criterion %2d: %s  %s  [%s]\n", id, pass ? "PASS" : "FAIL", what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double elapsed_s(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Tensor rand_tensor(const std::vector<std::size_t>& shape, std::mt19937_64& rng,
                   double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// ---------------------------------------------------------------------------
// 1. closed-form vs Monte-Carlo holistic distance

void criterion_distance_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(42);
  int within = 0;
  for (int trial = 0; trial < 100; ++trial) {
    FineGrainedGaussian q{rand_tensor({8, 16}, rng),
                          rand_tensor({8, 16}, rng, 0.05, 2.0)};
    FineGrainedGaussian c{rand_tensor({8, 16}, rng),
                          rand_tensor({8, 16}, rng, 0.05, 2.0)};
    const double closed = holistic_distance(q, c);
    auto [mc, se] = mc_expected_sq_distance(q.mu, q.var, c.mu, c.var, 100000,
                                            1000 + static_cast<std::uint64_t>(trial));
    if (std::abs(mc - closed) <= 3.0 * se) ++within;
  }
  const double secs = elapsed_s(t0);
  report(1, within >= 99 && secs < 60.0, "Monte-Carlo distance oracle",
         "within_3se=" + std::to_string(within) + "/100 time=" + fmt(secs) + "s");
}

// ---------------------------------------------------------------------------
// 2. analytic vs central-difference gradients

ModelVars bind_from(const std::vector<Var>& vs) {
  ModelVars mv;
  std::size_t j = 0;
  auto next = [&]() { return vs[j++]; };
  mv.composer = ComposerVars{next(), next(), next(), next(), next(),
                             next(), next(), next(), next(), next()};
  auto head = [&]() {
    return HeadVars{next(), next(), next(), next(), next(), next(), next()};
  };
  mv.head_v = head();
  mv.head_t = head();
  mv.head_m = head();
  mv.a = next();
  mv.b = next();
  mv.ap = next();
  mv.bp = next();
  return mv;
}

void criterion_gradient_fidelity() {
  const auto t0 = Clock::now();
  const ModelConfig mc{2, 6, 8, 12, 10};
  ModelParams model = init_model(mc, 7);
  std::mt19937_64 rng(11);
  BatchInputs in;
  for (int i = 0; i < 2; ++i) {
    in.x_r.push_back(rand_tensor({1, mc.d_img}, rng));
    in.x_t.push_back(rand_tensor({1, mc.d_txt}, rng));
    in.x_c.push_back(rand_tensor({1, mc.d_img}, rng));
  }
  std::vector<Tensor> params;
  model.visit([&](const std::string&, Tensor& t) { params.push_back(t); });

  SamplerConfig full_pools;
  full_pools.n_component = full_pools.n_instance = full_pools.n_modality = 1 << 20;
  using LossFn = std::function<Var(Tape&, const ModelVars&, const BatchVars&)>;
  const std::vector<std::pair<const char*, LossFn>> terms{
      {"hc", [](Tape& t, const ModelVars& mv, const BatchVars& b) {
         return holistic_contrast_loss(t, b, mv.a, mv.b);
       }},
      {"fc", [&](Tape& t, const ModelVars& mv, const BatchVars& b) {
         std::mt19937_64 r(1);
         return fine_grained_contrast_loss(t, b, mv.ap, mv.bp, full_pools, r);
       }},
      {"cord", [&](Tape& t, const ModelVars& mv, const BatchVars& b) {
         return coordination_loss(t, mv, in, b, false);
       }},
      {"total", [&](Tape& t, const ModelVars& mv, const BatchVars& b) {
         LossConfig lc;
         lc.sampler = full_pools;
         std::mt19937_64 r(1);
         return total_loss(t, mv, in, b, lc, r).total;
       }},
  };
  bool ok = true;
  std::string detail;
  for (const auto& [name, fn] : terms) {
    auto build = [&](Tape& tape, const std::vector<Var>& vs) {
      ModelVars mv = bind_from(vs);
      BatchVars batch = encode_batch(tape, mv, in);
      return fn(tape, mv, batch);
    };
    const double err = grad_check(build, params, 1e-5, 1e-4);
    ok = ok && err < 1e-4;
    detail += std::string(name) + "=" + fmt(err) + " ";
  }
  {
    std::vector<Tensor> kp{rand_tensor({4, 6}, rng), rand_tensor({4, 6}, rng)};
    auto build = [](Tape&, const std::vector<Var>& vs) {
      using namespace ops;
      return sq_norm(sub(vs[0], vs[1]));
    };
    const double err = grad_check(build, kp, 1e-6);
    ok = ok && err < 1e-6;
    detail += "kernel=" + fmt(err);
  }
  const double secs = elapsed_s(t0);
  report(2, ok && secs < 60.0, "gradient fidelity vs central differences",
         detail + " time=" + fmt(secs) + "s");
}

// ---------------------------------------------------------------------------
// 3. fusion simplex, bracketing, exact symmetry

void criterion_fusion_invariants() {
  std::mt19937_64 rng(29);
  bool ok = true;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    Tape tape;
    Var vr = tape.constant(rand_tensor({4, 5}, rng, 1e-3, 5.0));
    Var vt = tape.constant(rand_tensor({4, 5}, rng, 1e-3, 5.0));
    Var vm = tape.constant(rand_tensor({4, 5}, rng, 1e-3, 5.0));
    FusionVars f = fuse_query_uncertainty(vr, vt, vm);
    for (std::size_t i = 0; i < 20; ++i) {
      const double sum =
          f.w_r.val().data[i] + f.w_t.val().data[i] + f.w_m.val().data[i];
      ok = ok && std::abs(sum - 1.0) <= 1e-12;
      const double lo = std::min({vr.val().data[i], vt.val().data[i], vm.val().data[i]});
      const double hi = std::max({vr.val().data[i], vt.val().data[i], vm.val().data[i]});
      ok = ok && f.var_q.val().data[i] >= lo && f.var_q.val().data[i] <= hi;
    }
  }
  bool symmetric_exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    Var v = tape.constant(rand_tensor({3, 4}, rng, 1e-3, 8.0));
    FusionVars f = fuse_query_uncertainty(v, v, v);
    for (double w : f.w_r.val().data) symmetric_exact = symmetric_exact && w == 1.0 / 3.0;
    for (double w : f.w_t.val().data) symmetric_exact = symmetric_exact && w == 1.0 / 3.0;
    for (double w : f.w_m.val().data) symmetric_exact = symmetric_exact && w == 1.0 / 3.0;
  }
  report(3, ok && symmetric_exact, "fusion simplex/bracketing/symmetry",
         std::string("fields_ok=") + (ok ? "yes" : "no") +
             " symmetric_exact=" + (symmetric_exact ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// shared training infrastructure for criteria 4-8

RunConfig base_config() { return RunConfig{}; }  // stock defaults

struct Corpus {
  SynthDataset train, val, heldout;
};

Corpus make_corpus(const RunConfig& cfg) {
  AttributeWorld w = gen_world(
      {cfg.world_attributes, cfg.world_values, cfg.world_d_img, cfg.world_d_txt},
      cfg.seed_world);
  NoiseConfig noise{cfg.data_p_img, cfg.data_sigma_img, cfg.data_p_txt,
                    cfg.data_p_mismatch};
  Corpus c;
  c.train = gen_triplets(w, cfg.data_n_train, noise, cfg.seed_data);
  c.val = gen_triplets(w, cfg.data_n_val, noise, cfg.seed_data ^ 0x9e3779b9ULL);
  c.heldout = gen_triplets(w, cfg.data_n_val, noise, cfg.seed_data ^ 0xc2b2ae3dULL);
  return c;
}

double recall1(const ModelParams& m, const SynthDataset& ds, const EncodeOptions& opt) {
  return evaluate_retrieval(m, ds, opt, {1}, {}).recall[0];
}

double recall_avg(const ModelParams& m, const SynthDataset& ds, const EncodeOptions& opt) {
  auto rep = evaluate_retrieval(m, ds, opt, {1, 5, 10}, {});
  return (rep.recall[0] + rep.recall[1] + rep.recall[2]) / 3.0;
}

void criterion_bound_mechanics(const Corpus& corpus) {
  const auto t0 = Clock::now();
  // identity residual on an arbitrary (untrained) sample first
  RunConfig small = base_config();
  small.train_mode = 7;
  small.data_n_train = 1024;
  small.train_epochs = 8;
  SynthDataset sub = corpus.train;
  sub.examples.resize(small.data_n_train);
  TrainResult res = train(small, sub);
  std::vector<const TripletExample*> sample;
  for (const auto& ex : corpus.val.examples) sample.push_back(&ex);
  BoundReport rep = check_bound(res.model, sample, encode_options_for(TrainMode::Full));
  const double secs = elapsed_s(t0);
  const bool ok = rep.identity_residual <= 1e-9 && rep.cov_sum < 0.0 &&
                  rep.rhs_dynamic <= rep.rhs_static && rep.convexity_ok &&
                  !res.diverged && secs < 300.0;
  report(4, ok, "fusion bound mechanics on trained full mode",
         "residual=" + fmt(rep.identity_residual) + " cov_sum=" + fmt(rep.cov_sum) +
             " rhs_dyn=" + fmt(rep.rhs_dynamic) + " rhs_stat=" + fmt(rep.rhs_static) +
             " time=" + fmt(secs) + "s");
}

void criterion_ablation_ladder(const Corpus& corpus,
                               std::map<std::size_t, ModelParams>& trained) {
  const auto t0 = Clock::now();
  std::map<std::size_t, double> r1;
  bool diverged = false;
  std::string detail;
  for (std::size_t mode : {0, 1, 4, 5, 6, 7}) {
    RunConfig cfg = base_config();
    cfg.train_mode = mode;
    TrainResult res = train(cfg, corpus.train);
    diverged = diverged || res.diverged;
    trained.emplace(mode, res.model);
    r1[mode] = recall1(res.model, corpus.val,
                       encode_options_for(static_cast<TrainMode>(mode)));
    detail += "m" + std::to_string(mode) + "=" + fmt(r1[mode]) + " ";
  }
  const double secs = elapsed_s(t0);
  const bool ok = !diverged && r1[1] >= r1[0] + 0.02 && r1[4] >= r1[1] + 0.02 &&
                  r1[7] >= r1[6] && r1[6] >= r1[5] && r1[7] >= r1[0] + 0.05 &&
                  secs < 1200.0;
  report(5, ok, "ablation ladder direction (validation Recall@1)",
         detail + "time=" + fmt(secs) + "s");
}

void criterion_coordination_auc(const Corpus& corpus, const ModelParams& full) {
  CorrelationReport rep = uncertainty_noise_correlation(
      full, corpus.heldout, encode_options_for(TrainMode::Full));
  const bool ok = rep.auc_coord.has_value() && *rep.auc_coord > 0.8;
  report(6, ok, "coordination-variance AUC for mismatched queries",
         "auc=" + (rep.auc_coord ? fmt(*rep.auc_coord) : std::string("n/a")));
}

void criterion_interpretability(const Corpus& corpus, const ModelParams& full) {
  const EncodeOptions opt = encode_options_for(TrainMode::Full);
  CorrelationReport rep = uncertainty_noise_correlation(full, corpus.heldout, opt);
  // null check: shuffled mismatch labels should carry no signal
  std::vector<double> sbar;
  std::vector<bool> labels;
  for (const auto& ex : corpus.heldout.examples) {
    auto [gq, bundle] = encode_query_value(full, ex.x_r, ex.x_t, opt);
    double s = 0.0;
    for (double v : bundle.var_m.data) s += v;
    sbar.push_back(s / static_cast<double>(bundle.var_m.size()));
    labels.push_back(ex.coord_mismatch);
  }
  std::mt19937_64 rng(4242);
  std::vector<bool> shuffled = labels;
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(shuffled[i - 1], shuffled[pick(rng)]);
  }
  auto null_auc = ranking_auc(sbar, shuffled);
  const bool ok = rep.rho_img.has_value() && *rep.rho_img > 0.5 &&
                  null_auc.has_value() && std::abs(*null_auc - 0.5) <= 0.05;
  report(7, ok, "noise-uncertainty correlation and shuffled null",
         "rho_img=" + (rep.rho_img ? fmt(*rep.rho_img) : std::string("n/a")) +
             " null_auc=" + (null_auc ? fmt(*null_auc) : std::string("n/a")));
}

void criterion_sensitivity(const Corpus& corpus) {
  const EncodeOptions opt = encode_options_for(TrainMode::Full);
  // all four sweep points share one training configuration so the comparison
  // is between loss weights only
  auto run_with = [&](double lam_cord, double lam_fc) {
    RunConfig cfg = base_config();
    cfg.train_mode = 7;
    cfg.seed_train = 41;
    cfg.train_epochs = 12;
    cfg.lambda_cord = lam_cord;
    cfg.lambda_fc = lam_fc;
    TrainResult res = train(cfg, corpus.train);
    return recall_avg(res.model, corpus.val, opt);
  };
  const double at_default = run_with(0.1, 0.5);
  const double cord0 = run_with(0.0, 0.5);
  const double cord1 = run_with(1.0, 0.5);
  const double fc0 = run_with(0.1, 0.0);
  const bool cord_shape = at_default >= cord0 && at_default >= cord1 &&
                          at_default - cord1 >= 0.01;
  const bool fc_shape = at_default - fc0 >= 0.02;
  report(8, cord_shape && fc_shape, "sensitivity shape over lambda sweeps",
         "avg@cord0.1=" + fmt(at_default) + " cord0=" + fmt(cord0) +
             " cord1=" + fmt(cord1) + " fc0=" + fmt(fc0));
}

// ---------------------------------------------------------------------------
// 9. determinism & persistence

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_determinism(const Corpus& corpus) {
  RunConfig cfg = base_config();
  cfg.train_mode = 7;
  cfg.data_n_train = 256;
  cfg.train_epochs = 2;
  SynthDataset sub = corpus.train;
  sub.examples.resize(cfg.data_n_train);
  const auto dir = std::filesystem::temp_directory_path();
  const std::string p1 = (dir / "hug_accept_run1.ckpt").string();
  const std::string p2 = (dir / "hug_accept_run2.ckpt").string();
  const std::string p3 = (dir / "hug_accept_roundtrip.ckpt").string();
  for (const auto& p : {p1, p2}) {
    TrainResult res = train(cfg, sub);
    model_to_checkpoint(res.model, cfg.to_text()).save(p);
  }
  const bool identical_runs = slurp(p1) == slurp(p2);
  Checkpoint ck = Checkpoint::load(p1);
  ck.save(p3);
  const bool roundtrip = slurp(p1) == slurp(p3);
  report(9, identical_runs && roundtrip, "bit-identical reruns and round-trip",
         std::string("reruns=") + (identical_runs ? "identical" : "DIFFER") +
             " roundtrip=" + (roundtrip ? "identical" : "DIFFER"));
}

// ---------------------------------------------------------------------------
// 10. uniform variance shifts never change the ranking

void criterion_ranking_invariance() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> shift_u(0.0, 10.0);
  bool ok = true;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    FineGrainedGaussian q{rand_tensor({4, 6}, rng), rand_tensor({4, 6}, rng, 0.01, 2.0)};
    std::vector<GalleryEntry> gallery;
    for (int g = 0; g < 12; ++g)
      gallery.push_back({"g" + std::to_string(g),
                         {rand_tensor({4, 6}, rng), rand_tensor({4, 6}, rng, 0.01, 2.0)}});
    const auto base = rank_gallery(q, gallery);
    FineGrainedGaussian shifted = q;
    const double s = shift_u(rng);
    for (auto& v : shifted.var.data) v += s;
    ok = rank_gallery(shifted, gallery) == base;
  }
  report(10, ok, "ranking invariant to uniform query-variance shifts",
         ok ? "1000/1000 trials stable" : "ranking changed");
}

}  // namespace

int main(int argc, char** argv) {
  // optional argv: criterion numbers to run (default: all ten)
  std::vector<bool> want(11, argc <= 1);
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    if (id >= 1 && id <= 10) want[id] = true;
  }
  int selected = 0;
  for (int id = 1; id <= 10; ++id) selected += want[id];

  if (want[1]) criterion_distance_oracle();
  if (want[2]) criterion_gradient_fidelity();
  if (want[3]) criterion_fusion_invariants();

  Corpus corpus;
  bool have_corpus = false;
  auto need_corpus = [&]() -> Corpus& {
    if (!have_corpus) {
      corpus = make_corpus(base_config());
      have_corpus = true;
    }
    return corpus;
  };
  std::map<std::size_t, ModelParams> trained;
  auto need_full_model = [&]() -> const ModelParams& {
    if (!trained.count(7)) {
      RunConfig cfg = base_config();
      cfg.train_mode = 7;
      trained.emplace(7, train(cfg, need_corpus().train).model);
    }
    return trained.at(7);
  };

  if (want[4]) criterion_bound_mechanics(need_corpus());
  if (want[5]) criterion_ablation_ladder(need_corpus(), trained);
  if (want[6]) criterion_coordination_auc(need_corpus(), need_full_model());
  if (want[7]) criterion_interpretability(need_corpus(), need_full_model());
  if (want[8]) criterion_sensitivity(need_corpus());
  if (want[9]) criterion_determinism(need_corpus());
  if (want[10]) criterion_ranking_invariance();

  std::printf("%d of %d selected criteria passed\n", selected - g_failures, selected);
  return g_failures == 0 ? 0 : 1;
}
