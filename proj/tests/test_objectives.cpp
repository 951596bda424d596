#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "hug/objectives.hpp"

using namespace hug;

namespace {

double softplus_ref(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

Tensor rand_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                   double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data) v = d(rng);
  return t;
}

// assemble a BatchVars directly from raw mean/variance tensors
BatchVars make_batch(Tape& tape, const std::vector<Tensor>& mu_q,
                     const std::vector<Tensor>& var_q,
                     const std::vector<Tensor>& mu_c,
                     const std::vector<Tensor>& var_c) {
  BatchVars b;
  for (std::size_t i = 0; i < mu_q.size(); ++i) {
    QueryEncodingVars q;
    q.mu_q = tape.constant(mu_q[i]);
    q.bundle.var_q = tape.constant(var_q[i]);
    q.bundle.sbar_m = tape.constant(Tensor::scalar(0.0));
    b.queries.push_back(q);
    TargetEncodingVars t;
    t.mu_c = tape.constant(mu_c[i]);
    t.var_c = tape.constant(var_c[i]);
    b.targets.push_back(t);
  }
  return b;
}

double holistic_ref(const Tensor& mu_q, const Tensor& var_q, const Tensor& mu_c,
                    const Tensor& var_c) {
  double d = 0.0;
  for (std::size_t i = 0; i < mu_q.data.size(); ++i) {
    const double diff = mu_q.data[i] - mu_c.data[i];
    d += diff * diff + var_q.data[i] + var_c.data[i];
  }
  return d;
}

}  // namespace

TEST(HolisticContrast, AllZeroDistanceClosedForm) {
  // identical point embeddings everywhere: every pair term is softplus(0)=ln2,
  // so L = ln2 * (1 + 2B)
  for (std::size_t B : {2u, 3u, 5u}) {
    Tape tape;
    std::vector<Tensor> mu(B, Tensor::full({2, 3}, 0.7));
    std::vector<Tensor> var(B, Tensor::zeros({2, 3}));
    BatchVars batch = make_batch(tape, mu, var, mu, var);
    Var a = tape.constant(Tensor::scalar(1.0));
    Var b = tape.constant(Tensor::scalar(0.0));
    double got = holistic_contrast_loss(tape, batch, a, b).val().item();
    EXPECT_NEAR(got, std::log(2.0) * (1.0 + 2.0 * B), 1e-12) << "B=" << B;
  }
}

TEST(HolisticContrast, MatchesPairEnumeration) {
  std::mt19937_64 rng(100);
  for (std::size_t B : {2u, 3u, 4u}) {
    std::vector<Tensor> mu_q, var_q, mu_c, var_c;
    for (std::size_t i = 0; i < B; ++i) {
      mu_q.push_back(rand_tensor({2, 3}, rng));
      mu_c.push_back(rand_tensor({2, 3}, rng));
      var_q.push_back(rand_tensor({2, 3}, rng, 0.01, 0.5));
      var_c.push_back(rand_tensor({2, 3}, rng, 0.01, 0.5));
    }
    const double a = 0.8, b = -0.3;
    double want = 0.0;
    for (std::size_t i = 0; i < B; ++i)
      want += softplus_ref(a * holistic_ref(mu_q[i], var_q[i], mu_c[i], var_c[i]) + b) / B;
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < B; ++j)
        if (i != j)
          want += 2.0 / (B - 1.0) *
                  softplus_ref(-(a * holistic_ref(mu_q[i], var_q[i], mu_c[j], var_c[j]) + b));
    Tape tape;
    BatchVars batch = make_batch(tape, mu_q, var_q, mu_c, var_c);
    double got = holistic_contrast_loss(tape, batch, tape.constant(Tensor::scalar(a)),
                                        tape.constant(Tensor::scalar(b)))
                     .val()
                     .item();
    EXPECT_NEAR(got, want, 1e-10) << "B=" << B;
  }
}

TEST(HolisticContrast, GradientCheck) {
  std::mt19937_64 rng(7);
  std::vector<Tensor> params{rand_tensor({2, 3}, rng), rand_tensor({2, 3}, rng),
                             rand_tensor({2, 3}, rng, 0.05, 0.5),
                             Tensor::scalar(0.9), Tensor::scalar(-0.2)};
  Tensor mu_c1 = rand_tensor({2, 3}, rng), var_c1 = rand_tensor({2, 3}, rng, 0.05, 0.5);
  Tensor var_q1 = rand_tensor({2, 3}, rng, 0.05, 0.5);
  auto build = [&](Tape& tape, const std::vector<Var>& vs) {
    BatchVars batch;
    QueryEncodingVars q0, q1;
    q0.mu_q = vs[0];
    q0.bundle.var_q = vs[2];
    q1.mu_q = tape.constant(mu_c1);
    q1.bundle.var_q = tape.constant(var_q1);
    TargetEncodingVars t0, t1;
    t0.mu_c = vs[1];
    t0.var_c = tape.constant(var_c1);
    t1.mu_c = tape.constant(mu_c1);
    t1.var_c = tape.constant(var_c1);
    batch.queries = {q0, q1};
    batch.targets = {t0, t1};
    return holistic_contrast_loss(tape, batch, vs[3], vs[4]);
  };
  EXPECT_LT(grad_check(build, params, 1e-5, 1e-6), 1e-5);
}

TEST(HolisticContrast, RejectsTinyBatch) {
  Tape tape;
  BatchVars batch = make_batch(tape, {Tensor::zeros({1, 2})}, {Tensor::zeros({1, 2})},
                               {Tensor::zeros({1, 2})}, {Tensor::zeros({1, 2})});
  EXPECT_THROW(holistic_contrast_loss(tape, batch, tape.constant(Tensor::scalar(1.0)),
                                      tape.constant(Tensor::scalar(0.0))),
               std::invalid_argument);
}

TEST(Sampler, PoolsExcludeAnchorAndAreExact) {
  std::mt19937_64 rng(5);
  const std::size_t B = 3, K = 4;
  AnchorRef anchor{true, 1, 2};
  auto comp = sample_fine_grained_negatives(B, K, anchor, NegStrategy::ComponentWise,
                                            1000, rng);
  EXPECT_EQ(comp.size(), K - 1);
  for (const auto& r : comp) {
    EXPECT_TRUE(r.query_side);
    EXPECT_EQ(r.instance, 1u);
    EXPECT_NE(r.component, 2u);
  }
  auto inst = sample_fine_grained_negatives(B, K, anchor, NegStrategy::InstanceWise,
                                            1000, rng);
  EXPECT_EQ(inst.size(), (B - 1) * K);
  for (const auto& r : inst) EXPECT_NE(r.instance, 1u);
  auto modal = sample_fine_grained_negatives(B, K, anchor, NegStrategy::ModalityWise,
                                             1000, rng);
  EXPECT_EQ(modal.size(), B * K);
  for (const auto& r : modal) EXPECT_FALSE(r.query_side);
}

TEST(Sampler, DrawsWithoutReplacementAndDeterministically) {
  const std::size_t B = 4, K = 5;
  AnchorRef anchor{false, 0, 0};
  std::mt19937_64 r1(42), r2(42);
  auto a = sample_fine_grained_negatives(B, K, anchor, NegStrategy::InstanceWise, 6, r1);
  auto b = sample_fine_grained_negatives(B, K, anchor, NegStrategy::InstanceWise, 6, r2);
  ASSERT_EQ(a.size(), 6u);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].instance, b[i].instance);
    EXPECT_EQ(a[i].component, b[i].component);
    seen.insert({a[i].instance, a[i].component});
  }
  EXPECT_EQ(seen.size(), a.size());  // no duplicates
}

TEST(FineGrainedContrast, MatchesFullPoolEnumeration) {
  std::mt19937_64 rng(200);
  const std::size_t B = 2, K = 2, D = 3;
  std::vector<Tensor> var_q, var_c, mu;
  for (std::size_t i = 0; i < B; ++i) {
    var_q.push_back(rand_tensor({K, D}, rng, 0.05, 1.0));
    var_c.push_back(rand_tensor({K, D}, rng, 0.05, 1.0));
    mu.push_back(rand_tensor({K, D}, rng));
  }
  const double ap = 1.2, bp = 0.1;

  // reference: every anchor against the union of its three full pools
  auto row = [&](bool qs, std::size_t n, std::size_t k, std::size_t j) {
    return (qs ? var_q[n] : var_c[n]).at(k, j);
  };
  auto sqdist = [&](bool qs1, std::size_t n1, std::size_t k1, bool qs2, std::size_t n2,
                    std::size_t k2) {
    double d = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      const double diff = row(qs1, n1, k1, j) - row(qs2, n2, k2, j);
      d += diff * diff;
    }
    return d;
  };
  double want = 0.0;
  std::size_t anchors = 0;
  for (int side = 0; side < 2; ++side)
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t k = 0; k < K; ++k) {
        const bool qs = side == 0;
        std::vector<double> dists;
        for (std::size_t kk = 0; kk < K; ++kk)  // component-wise
          if (kk != k) dists.push_back(sqdist(qs, n, k, qs, n, kk));
        for (std::size_t nn = 0; nn < B; ++nn)  // instance-wise
          if (nn != n)
            for (std::size_t kk = 0; kk < K; ++kk)
              dists.push_back(sqdist(qs, n, k, qs, nn, kk));
        for (std::size_t nn = 0; nn < B; ++nn)  // modality-wise
          for (std::size_t kk = 0; kk < K; ++kk)
            dists.push_back(sqdist(qs, n, k, !qs, nn, kk));
        double term = 0.0;
        for (double d : dists) term += softplus_ref(-(ap * d + bp));
        want += term / static_cast<double>(dists.size());
        ++anchors;
      }
  want /= static_cast<double>(anchors);

  Tape tape;
  BatchVars batch = make_batch(tape, mu, var_q, mu, var_c);
  SamplerConfig cfg;
  cfg.n_component = cfg.n_instance = cfg.n_modality = 1000;  // full pools
  std::mt19937_64 loss_rng(1);
  double got = fine_grained_contrast_loss(tape, batch, tape.constant(Tensor::scalar(ap)),
                                          tape.constant(Tensor::scalar(bp)), cfg,
                                          loss_rng)
                   .val()
                   .item();
  EXPECT_NEAR(got, want, 1e-10);
}

TEST(FineGrainedContrast, GradientCheck) {
  std::mt19937_64 rng(11);
  const std::size_t K = 2, D = 3;
  std::vector<Tensor> params{rand_tensor({K, D}, rng, 0.05, 1.0),
                             rand_tensor({K, D}, rng, 0.05, 1.0),
                             Tensor::scalar(1.1), Tensor::scalar(-0.1)};
  Tensor fixed_q = rand_tensor({K, D}, rng, 0.05, 1.0);
  Tensor fixed_c = rand_tensor({K, D}, rng, 0.05, 1.0);
  Tensor mu = rand_tensor({K, D}, rng);
  auto build = [&](Tape& tape, const std::vector<Var>& vs) {
    BatchVars batch;
    QueryEncodingVars q0, q1;
    q0.mu_q = tape.constant(mu);
    q0.bundle.var_q = vs[0];
    q1.mu_q = tape.constant(mu);
    q1.bundle.var_q = tape.constant(fixed_q);
    TargetEncodingVars t0, t1;
    t0.mu_c = tape.constant(mu);
    t0.var_c = vs[1];
    t1.mu_c = tape.constant(mu);
    t1.var_c = tape.constant(fixed_c);
    batch.queries = {q0, q1};
    batch.targets = {t0, t1};
    SamplerConfig cfg;
    cfg.n_component = cfg.n_instance = cfg.n_modality = 1000;
    std::mt19937_64 loss_rng(3);  // full pools make the draw irrelevant
    return fine_grained_contrast_loss(tape, batch, vs[2], vs[3], cfg, loss_rng);
  };
  EXPECT_LT(grad_check(build, params, 1e-5, 1e-6), 1e-5);
}

TEST(Coordination, MatchesCrossPairEnumeration) {
  const ModelConfig cfg{2, 3, 4, 4, 4};
  ModelParams p = init_model(cfg, 303);
  std::mt19937_64 rng(9);
  BatchInputs in;
  const std::size_t B = 3;
  for (std::size_t i = 0; i < B; ++i) {
    in.x_r.push_back(rand_tensor({1, cfg.d_img}, rng));
    in.x_t.push_back(rand_tensor({1, cfg.d_txt}, rng));
    in.x_c.push_back(rand_tensor({1, cfg.d_img}, rng));
  }
  // reference: value-level matched/mismatched mean coordination uncertainty
  auto sbar = [&](const Tensor& xr, const Tensor& xt) {
    Tape t;
    ModelVars mv = bind_model(t, p);
    Var mu = compose(t, mv.composer, &xt, &xr);
    Var var_m = estimate_uncertainty(t, mv.head_m, mu);
    double s = 0.0;
    for (double v : var_m.val().data) s += v;
    return s / static_cast<double>(var_m.val().size());
  };
  double want = 0.0, want_printed = 0.0;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) {
      if (i == j) continue;
      const double u = sbar(in.x_r[i], in.x_t[j]) - sbar(in.x_r[i], in.x_t[i]);
      want += softplus_ref(-u);
      want_printed += softplus_ref(u);
    }
  want /= static_cast<double>(B * (B - 1));
  want_printed /= static_cast<double>(B * (B - 1));

  for (bool printed : {false, true}) {
    Tape tape;
    ModelVars mv = bind_model(tape, p);
    BatchVars batch = encode_batch(tape, mv, in);
    double got = coordination_loss(tape, mv, in, batch, printed).val().item();
    EXPECT_NEAR(got, printed ? want_printed : want, 1e-10) << "printed=" << printed;
  }
}

TEST(InfoNCE, MatchesDirectComputation) {
  std::mt19937_64 rng(55);
  const std::size_t B = 3;
  std::vector<Tensor> mu_q, mu_c, zero;
  for (std::size_t i = 0; i < B; ++i) {
    mu_q.push_back(rand_tensor({2, 2}, rng));
    mu_c.push_back(rand_tensor({2, 2}, rng));
    zero.push_back(Tensor::zeros({2, 2}));
  }
  const double tau = 0.7;
  std::vector<std::vector<double>> d(B, std::vector<double>(B));
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j)
      d[i][j] = holistic_ref(mu_q[i], zero[i], mu_c[j], zero[j]);
  double want = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    double zr = 0.0, zc = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
      zr += std::exp(-d[i][j] / tau);
      zc += std::exp(-d[j][i] / tau);
    }
    want += -std::log(std::exp(-d[i][i] / tau) / zr);
    want += -std::log(std::exp(-d[i][i] / tau) / zc);
  }
  want *= 0.5 / static_cast<double>(B);

  Tape tape;
  BatchVars batch = make_batch(tape, mu_q, zero, mu_c, zero);
  EXPECT_NEAR(infonce_loss(tape, batch, tau).val().item(), want, 1e-10);
}

TEST(TotalLoss, CombinesWeightedTerms) {
  const ModelConfig cfg{2, 3, 4, 4, 4};
  ModelParams p = init_model(cfg, 7);
  std::mt19937_64 rng(13);
  BatchInputs in;
  for (std::size_t i = 0; i < 2; ++i) {
    in.x_r.push_back(rand_tensor({1, cfg.d_img}, rng));
    in.x_t.push_back(rand_tensor({1, cfg.d_txt}, rng));
    in.x_c.push_back(rand_tensor({1, cfg.d_img}, rng));
  }
  LossConfig lc;
  lc.sampler.n_component = lc.sampler.n_instance = lc.sampler.n_modality = 1000;
  Tape tape;
  ModelVars mv = bind_model(tape, p);
  BatchVars batch = encode_batch(tape, mv, in);
  std::mt19937_64 loss_rng(1);
  LossBreakdown bd = total_loss(tape, mv, in, batch, lc, loss_rng);
  EXPECT_NEAR(bd.total.val().item(), bd.hc + 0.5 * bd.fc + 0.1 * bd.cord, 1e-10);
  EXPECT_GT(bd.fc, 0.0);
  EXPECT_GT(bd.cord, 0.0);

  LossConfig hc_only;
  hc_only.use_fc = hc_only.use_cord = false;
  Tape t2;
  ModelVars mv2 = bind_model(t2, p);
  BatchVars b2 = encode_batch(t2, mv2, in);
  LossBreakdown only = total_loss(t2, mv2, in, b2, hc_only, loss_rng);
  EXPECT_EQ(only.fc, 0.0);
  EXPECT_EQ(only.cord, 0.0);
  EXPECT_NEAR(only.total.val().item(), only.hc, 1e-12);
}

// The stacked batch encoder must reproduce the per-example encoders. The
// The block-masked attention yields exact zeros off-block, so batched and
// per-example encodings compute the same scalar operations; they agree bit
// for bit under strict IEEE evaluation and only within rounding noise when
// the compiler fuses multiply-adds differently between the two inlined
// paths (-ffp-contract). Pooled/scalar reductions may additionally differ
// by summation association.
TEST(BatchEncode, MatchesPerExampleEncoders) {
  const ModelConfig cfg{3, 4, 5, 6, 4};
  ModelParams p = init_model(cfg, 808);
  std::mt19937_64 rng(17);
  BatchInputs in;
  for (std::size_t i = 0; i < 4; ++i) {
    in.x_r.push_back(rand_tensor({1, cfg.d_img}, rng));
    in.x_t.push_back(rand_tensor({1, cfg.d_txt}, rng));
    in.x_c.push_back(rand_tensor({1, cfg.d_img}, rng));
  }
  auto expect_close = [](const Tensor& a, const Tensor& b, const char* what) {
    ASSERT_EQ(a.shape, b.shape) << what;
    for (std::size_t i = 0; i < a.size(); ++i)
      EXPECT_NEAR(a.data[i], b.data[i], 1e-12) << what << " element " << i;
  };
  for (EncodeOptions opt : {EncodeOptions{},                          // full dynamic
                            EncodeOptions{false, true, false, false}, // static 1/3
                            EncodeOptions{false, false, false, false},// no coord var
                            EncodeOptions{false, true, true, true},   // pooled
                            EncodeOptions{true, true, true, false}}) {// point
    Tape tb;
    ModelVars mb = bind_model(tb, p);
    BatchVars batch = encode_batch(tb, mb, in, opt);
    ASSERT_EQ(batch.size(), in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
      Tape ts;
      ModelVars ms = bind_model(ts, p);
      QueryEncodingVars q = encode_query(ts, ms, in.x_r[i], in.x_t[i], opt);
      TargetEncodingVars c = encode_target(ts, ms, in.x_c[i], opt);
      expect_close(batch.queries[i].mu_q.val(), q.mu_q.val(), "mu_q");
      expect_close(batch.targets[i].mu_c.val(), c.mu_c.val(), "mu_c");
      expect_close(batch.queries[i].bundle.var_r.val(), q.bundle.var_r.val(), "var_r");
      expect_close(batch.queries[i].bundle.var_m.val(), q.bundle.var_m.val(), "var_m");
      expect_close(batch.queries[i].bundle.w_r.val(), q.bundle.w_r.val(), "w_r");
      expect_close(batch.queries[i].bundle.var_q.val(), q.bundle.var_q.val(), "var_q");
      expect_close(batch.targets[i].var_c.val(), c.var_c.val(), "var_c");
      expect_close(batch.queries[i].bundle.sbar_m.val(), q.bundle.sbar_m.val(), "sbar_m");
    }
  }
}
