#pragma once

#include <limits>
#include <ostream>

#include "ibts/nn/adam.hpp"
#include "ibts/predictor/dataset.hpp"
#include "ibts/predictor/model.hpp"

namespace ibts::predictor {

struct PredictorTrainConfig {
  int batch_size = 256;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int patience = 25;
  int max_epochs = 500;
  std::uint64_t seed = 1;
  NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(PredictorTrainConfig, batch_size, lr, weight_decay, patience, max_epochs,
                                              seed)
  void validate() const {
    if (batch_size < 1 || lr <= 0.0 || weight_decay < 0.0 || patience < 1 || max_epochs < 1) {
      throw Error("config.invalid", "bad predictor training config");
    }
  }
};

struct SplitMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct PredictorTrainResult {
  TrajectoryPredictor predictor;  // best-validation parameters
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  SplitMetrics train;
  SplitMetrics val;
  SplitMetrics test;
  std::vector<double> train_loss_history;
  std::vector<double> val_loss_history;
};

inline void gather(std::span<const Sample* const> samples, std::size_t begin, std::size_t end, nn::Matrix& x,
                   std::vector<std::uint8_t>& mask, std::vector<int>& labels) {
  std::vector<const TrajectoryWindow*> w;
  labels.clear();
  for (std::size_t k = begin; k < end; ++k) {
    w.push_back(&samples[k]->window);
    labels.push_back(samples[k]->label);
  }
  stack_windows(w, x, mask);
}

// Inference-mode cross-entropy and argmax accuracy.
inline SplitMetrics evaluate_predictor(const TrajectoryPredictor& model, std::span<const Sample* const> samples,
                                       int batch_size = 256) {
  SplitMetrics m;
  m.count = samples.size();
  if (samples.empty()) return m;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < samples.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(samples.size(), b + static_cast<std::size_t>(batch_size));
    std::vector<const TrajectoryWindow*> windows;
    std::vector<int> labels;
    for (std::size_t k = b; k < e; ++k) {
      windows.push_back(&samples[k]->window);
      labels.push_back(samples[k]->label);
    }
    const nn::Matrix probs = model.classify(model.encode_batch(windows));
    for (std::size_t r = 0; r < labels.size(); ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      loss -= std::log(std::max(probs(row, labels[r]), 1e-300));
      Eigen::Index best;
      probs.row(row).maxCoeff(&best);
      if (best == labels[r]) ++correct;
    }
  }
  m.loss = loss / static_cast<double>(samples.size());
  m.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return m;
}

// Minibatch AdamW on cross-entropy with early stopping on validation loss.
// Metrics lines (JSON) go to `log` when given.
inline PredictorTrainResult train_predictor(const PredictorDataset& ds, const nn::EncoderConfig& enc_cfg,
                                            const PredictorTrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  enc_cfg.validate();
  const auto train = ds.split(Split::Train);
  const auto val = ds.split(Split::Val);
  const auto test = ds.split(Split::Test);
  std::vector<int> seen(static_cast<std::size_t>(ds.teams), 0);
  for (const auto* s : train) seen[static_cast<std::size_t>(s->label)] = 1;
  for (int m = 0; m < ds.teams; ++m) {
    if (!seen[static_cast<std::size_t>(m)]) {
      throw Error("predictor.labels", "team " + std::to_string(m) + " has no windows in the training split");
    }
  }
  if (val.empty()) throw Error("predictor.dataset", "validation split is empty");

  Rng rng(cfg.seed);
  PredictorTrainResult res;
  TrajectoryPredictor model(ds.n, ds.teams, enc_cfg, rng);
  nn::ParamRefs params = model.parameters();
  nn::Adam opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  std::vector<nn::Matrix> best;
  for (auto* p : params) best.push_back(p->value);

  std::vector<const Sample*> order(train.begin(), train.end());
  nn::Matrix x;
  std::vector<std::uint8_t> mask;
  std::vector<int> labels;
  TrajectoryPredictor::Cache cache;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      gather(order, b, e, x, mask, labels);
      const int B = static_cast<int>(e - b);
      nn::zero_grad(params);
      const nn::Matrix logits = model.forward(x, mask, B, cache, &rng);
      const nn::LossGrad lg = nn::cross_entropy(logits, labels);
      model.backward(cache, mask, B, lg.grad);
      if (!nn::all_finite(params)) throw Error("train.nonfinite", "non-finite predictor gradient");
      opt.step(params);
      epoch_loss += lg.loss * B;
    }
    res.train_loss_history.push_back(epoch_loss / static_cast<double>(order.size()));
    const SplitMetrics v = evaluate_predictor(model, val, cfg.batch_size);
    res.val_loss_history.push_back(v.loss);
    res.epochs_run = epoch;
    if (log) {
      *log << nlohmann::json{{"epoch", epoch}, {"train_loss", res.train_loss_history.back()}, {"val_loss", v.loss},
                             {"val_accuracy", v.accuracy}}
                  .dump()
           << "\n";
    }
    if (v.loss < res.best_val_loss) {
      res.best_val_loss = v.loss;
      res.best_epoch = epoch;
      since_best = 0;
      for (std::size_t k = 0; k < params.size(); ++k) best[k] = params[k]->value;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
  res.train = evaluate_predictor(model, train, cfg.batch_size);
  res.val = evaluate_predictor(model, val, cfg.batch_size);
  res.test = evaluate_predictor(model, test, cfg.batch_size);
  res.predictor = std::move(model);
  return res;
}

}  // namespace ibts::predictor
