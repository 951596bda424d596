#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "hug/config.hpp"
#include "hug/encoder.hpp"
#include "hug/evaluator.hpp"
#include "hug/objectives.hpp"
#include "hug/synthdata.hpp"
#include "hug/tape.hpp"

namespace hug {

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
  double weight_decay = 0.0;
};

/// Decoupled-weight-decay adaptive optimizer with bias correction.
class AdamW {
 public:
  explicit AdamW(AdamWHyper hyper) : hyper_(hyper) {}

  std::size_t step_count() const { return step_; }

  /// One update over named (parameter, gradient) pairs. A non-finite gradient
  /// rejects the whole step and reports the offending parameter.
  void step(std::vector<std::pair<std::string, Tensor*>>& params,
            const std::vector<Tensor>& grads) {
    if (params.size() != grads.size())
      throw std::invalid_argument("adamw: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].second->same_shape(grads[i]))
        throw std::invalid_argument("adamw: shape mismatch for parameter '" +
                                    params[i].first + "'");
      if (!grads[i].all_finite())
        throw std::runtime_error("adamw: non-finite gradient for parameter '" +
                                 params[i].first + "', step rejected");
    }
    if (m_.empty()) {
      for (const auto& [name, p] : params) {
        m_.push_back(Tensor(p->shape));
        v_.push_back(Tensor(p->shape));
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i].second;
      for (std::size_t j = 0; j < p.data.size(); ++j) {
        const double g = grads[i].data[j];
        m_[i].data[j] = hyper_.beta1 * m_[i].data[j] + (1.0 - hyper_.beta1) * g;
        v_[i].data[j] = hyper_.beta2 * v_[i].data[j] + (1.0 - hyper_.beta2) * g * g;
        const double mhat = m_[i].data[j] / bc1;
        const double vhat = v_[i].data[j] / bc2;
        p.data[j] -= hyper_.lr * (mhat / (std::sqrt(vhat) + hyper_.eps) +
                                  hyper_.weight_decay * p.data[j]);
      }
    }
  }

 private:
  AdamWHyper hyper_;
  std::size_t step_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Ablation ladder, cumulative from the point-matching baseline to the full
/// dynamically weighted model.
enum class TrainMode : std::size_t {
  Point = 0,          // deterministic embeddings, temperature-softmax contrast
  Probabilistic = 1,  // sigmoid contrast, globally pooled variance
  CompFC = 2,         // + component-wise fine-grained contrast
  InstFC = 3,         // + instance-wise pool
  ModFC = 4,          // + modality-wise pool
  CrossModal = 5,     // + coordination variance in fusion (static weights)
  CordLoss = 6,       // + coordination ranking loss
  Full = 7            // + dynamic weighting
};

inline EncodeOptions encode_options_for(TrainMode mode) {
  EncodeOptions opt;
  const auto m = static_cast<std::size_t>(mode);
  opt.point = m == 0;
  opt.pooled = m == 1;
  opt.use_m = m >= 5;
  opt.dynamic_w = m >= 7;
  return opt;
}

inline LossConfig loss_config_for(TrainMode mode, const RunConfig& cfg) {
  LossConfig lc;
  const auto m = static_cast<std::size_t>(mode);
  lc.lambda_fc = cfg.lambda_fc;
  lc.lambda_cord = cfg.lambda_cord;
  lc.use_fc = m >= 2;
  lc.use_cord = m >= 6;
  lc.cord_printed_sign = cfg.cord_sign == "printed";
  lc.sampler.component = m >= 2;
  lc.sampler.instance = m >= 3;
  lc.sampler.modality = m >= 4;
  lc.sampler.n_component = cfg.sampler_component;
  lc.sampler.n_instance = cfg.sampler_instance;
  lc.sampler.n_modality = cfg.sampler_modality;
  return lc;
}

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double l_hc = 0.0, l_fc = 0.0, l_cord = 0.0, total = 0.0;
  double mean_w_r = 0.0, mean_w_t = 0.0, mean_w_m = 0.0;
};

struct TrainResult {
  ModelParams model;
  std::vector<StepRecord> log;
  std::vector<double> val_recall1;  // one entry per epoch, if a val set was given
  std::vector<std::array<double, 3>> val_recall;  // per-epoch Recall@{1,5,10}
  bool diverged = false;
  std::string divergence_note;
};

inline std::vector<std::pair<std::string, Tensor*>> named_params(ModelParams& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  m.visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
  return out;
}

inline void clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double total = 0.0;
  for (const auto& g : grads)
    for (double v : g.data) total += v * v;
  total = std::sqrt(total);
  if (total <= max_norm) return;
  const double s = max_norm / total;
  for (auto& g : grads)
    for (auto& v : g.data) v *= s;
}

inline double mean_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data) s += v;
  return s / static_cast<double>(t.size());
}

/// Deterministic mini-batch training. `val` may be null; when present,
/// validation Recall@1 is recorded per epoch.
inline TrainResult train(const RunConfig& cfg, const SynthDataset& data,
                         const SynthDataset* val = nullptr) {
  if (data.examples.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.train_batch < 2) throw std::invalid_argument("train: batch size must be >= 2");
  const TrainMode mode = static_cast<TrainMode>(cfg.train_mode);
  const EncodeOptions opt = encode_options_for(mode);
  const LossConfig lc = loss_config_for(mode, cfg);

  ModelConfig mc;
  mc.k = cfg.model_k;
  mc.d = cfg.model_d;
  mc.d_hidden = cfg.model_d_hidden;
  mc.d_txt = data.world.cfg.d_txt;
  mc.d_img = data.world.cfg.d_img;

  TrainResult res;
  res.model = init_model(mc, cfg.seed_train);
  AdamW optimizer(AdamWHyper{cfg.train_lr, cfg.train_beta1, cfg.train_beta2,
                             cfg.train_eps, cfg.train_weight_decay});
  std::mt19937_64 sampler_rng(cfg.seed_sampler);
  // The batch-order stream is keyed by the full experiment identity (seed,
  // ablation mode, loss weights) so each configuration is an independent but
  // exactly reproducible draw.
  std::uint64_t stream = cfg.seed_train ^ 0x5851f42d4c957f2dULL;
  auto mix = [&stream](std::uint64_t v) {
    stream ^= v + 0x9e3779b97f4a7c15ULL + (stream << 6) + (stream >> 2);
  };
  mix(cfg.train_mode);
  std::uint64_t bits;
  std::memcpy(&bits, &lc.lambda_fc, sizeof bits);
  mix(lc.use_fc ? bits : 0);
  std::memcpy(&bits, &lc.lambda_cord, sizeof bits);
  mix(lc.use_cord ? bits : 0);
  std::mt19937_64 shuffle_rng(stream);

  ModelParams last_good = res.model;
  std::vector<std::size_t> order(data.examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.train_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const std::size_t n_batches = data.examples.size() / cfg.train_batch;
    for (std::size_t bi = 0; bi < n_batches; ++bi) {
      BatchInputs in;
      for (std::size_t j = 0; j < cfg.train_batch; ++j) {
        const auto& ex = data.examples[order[bi * cfg.train_batch + j]];
        in.x_r.push_back(ex.x_r);
        in.x_t.push_back(ex.x_t);
        in.x_c.push_back(ex.x_c);
      }
      Tape tape;
      ModelVars mv = bind_model(tape, res.model);
      BatchVars batch = encode_batch(tape, mv, in, opt);

      StepRecord rec;
      rec.step = ++global_step;
      rec.epoch = epoch;
      Var total;
      if (mode == TrainMode::Point) {
        total = infonce_loss(tape, batch, cfg.train_temperature);
        rec.l_hc = rec.total = total.val().item();
      } else {
        LossBreakdown lb = total_loss(tape, mv, in, batch, lc, sampler_rng);
        total = lb.total;
        rec.l_hc = lb.hc;
        rec.l_fc = lb.fc;
        rec.l_cord = lb.cord;
        rec.total = total.val().item();
      }
      if (!std::isfinite(rec.total)) {
        res.model = last_good;
        res.diverged = true;
        res.divergence_note = "non-finite loss at step " + std::to_string(rec.step);
        res.log.push_back(rec);
        return res;
      }
      for (const auto& q : batch.queries) {
        rec.mean_w_r += mean_of(q.bundle.w_r.val());
        rec.mean_w_t += mean_of(q.bundle.w_t.val());
        rec.mean_w_m += mean_of(q.bundle.w_m.val());
      }
      rec.mean_w_r /= batch.size();
      rec.mean_w_t /= batch.size();
      rec.mean_w_m /= batch.size();
      res.log.push_back(rec);

      auto node_grads = tape.backward(total);
      std::vector<Tensor> grads;
      grads.reserve(tape.param_ids().size());
      for (int pid : tape.param_ids()) grads.push_back(std::move(node_grads[pid]));
      clip_gradients(grads, cfg.train_clip_norm);
      auto params = named_params(res.model);
      try {
        last_good = res.model;
        optimizer.step(params, grads);
      } catch (const std::exception& e) {
        res.model = last_good;
        res.diverged = true;
        res.divergence_note = e.what();
        return res;
      }
    }
    if (val) {
      auto rep = evaluate_retrieval(res.model, *val, opt, {1, 5, 10}, {});
      res.val_recall1.push_back(rep.recall[0]);
      res.val_recall.push_back({rep.recall[0], rep.recall[1], rep.recall[2]});
    }
  }
  return res;
}

}  // namespace hug
