#pragma once

#include <filesystem>
#include <span>

#include <json.hpp>

#include "ibts/nn/checkpoint.hpp"
#include "ibts/nn/losses.hpp"
#include "ibts/nn/transformer.hpp"
#include "ibts/predictor/window.hpp"

namespace ibts::nn {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, d_model, heads, layers, feedforward, dropout, window)

}  // namespace ibts::nn

namespace ibts::predictor {

struct Prediction {
  nn::Matrix c;  // 1 x d_model
  nn::Matrix p;  // 1 x M
};

// Stacks windows into the encoder's (B*L x F) input and the flat mask.
inline void stack_windows(std::span<const TrajectoryWindow* const> windows, nn::Matrix& x, std::vector<std::uint8_t>& mask) {
  if (windows.empty()) throw Error("predictor.shape", "no windows to stack");
  const Eigen::Index F = windows.front()->features.cols();
  x.resize(static_cast<Eigen::Index>(windows.size()) * kWindow, F);
  mask.resize(windows.size() * kWindow);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const TrajectoryWindow& w = *windows[b];
    if (w.features.cols() != F || w.features.rows() != kWindow) throw Error("predictor.shape", "window width mismatch");
    x.block(static_cast<Eigen::Index>(b) * kWindow, 0, kWindow, F) = w.features;
    std::copy(w.mask.begin(), w.mask.end(), mask.begin() + static_cast<std::ptrdiff_t>(b * kWindow));
  }
}

// Transformer encoder g(h) -> c followed by a linear softmax head over M teams.
class TrajectoryPredictor {
 public:
  struct Cache {
    nn::TransformerEncoder::Cache encoder;
    nn::Matrix c;
  };

  TrajectoryPredictor() = default;
  TrajectoryPredictor(int n_agents, int teams, nn::EncoderConfig cfg, Rng& rng)
      : n_(n_agents), teams_(teams), encoder_(kAgentFeatures * n_agents, with_window(cfg), rng, "encoder") {
    if (n_agents < 1 || teams < 1) throw Error("predictor.config", "need at least one agent and one team");
    // Zero head: the untrained predictor reports a uniform distribution.
    head_ = nn::Linear(cfg.d_model, teams, "head", rng, 0.0);
  }

  int num_agents() const { return n_; }
  int num_teams() const { return teams_; }
  int embedding_dim() const { return encoder_.config().d_model; }
  const nn::EncoderConfig& config() const { return encoder_.config(); }
  nn::Linear& head() { return head_; }

  // Inference mode (no dropout): B windows -> B x d_model embeddings.
  nn::Matrix encode_batch(std::span<const TrajectoryWindow* const> windows) const {
    check(windows);
    nn::Matrix x;
    std::vector<std::uint8_t> mask;
    stack_windows(windows, x, mask);
    return encoder_.forward(x, mask, static_cast<int>(windows.size()));
  }

  nn::Matrix classify(const nn::Matrix& c) const { return nn::softmax_rows(head_.forward(c)); }

  nn::Matrix encode(const TrajectoryWindow& w) const {
    const TrajectoryWindow* p = &w;
    return encode_batch(std::span<const TrajectoryWindow* const>(&p, 1));
  }

  Prediction predict(const TrajectoryWindow& w) const {
    nn::Matrix c = encode(w);
    nn::Matrix p = classify(c);
    return {std::move(c), std::move(p)};
  }

  // Cold start before any history exists: zero embedding, uniform distribution.
  Prediction cold_start() const {
    return {nn::Matrix::Zero(1, embedding_dim()), nn::Matrix::Constant(1, teams_, 1.0 / teams_)};
  }

  // Training-mode forward; rng != nullptr enables dropout. Returns logits.
  nn::Matrix forward(const nn::Matrix& x, const std::vector<std::uint8_t>& mask, int B, Cache& cache, Rng* rng) const {
    cache.c = encoder_.forward(x, mask, B, &cache.encoder, rng);
    return head_.forward(cache.c);
  }

  void backward(const Cache& cache, const std::vector<std::uint8_t>& mask, int B, const nn::Matrix& dlogits) {
    const nn::Matrix dc = head_.backward(cache.c, dlogits);
    encoder_.backward(cache.encoder, mask, B, dc);
  }

  nn::ParamRefs parameters() {
    nn::ParamRefs out = encoder_.parameters();
    head_.append(out);
    return out;
  }
  nn::ConstParamRefs parameters() const { return nn::to_const(const_cast<TrajectoryPredictor*>(this)->parameters()); }
  std::uint64_t hash() const { return nn::parameter_hash(parameters()); }

  nlohmann::json meta() const {
    const auto& c = config();
    return {{"kind", "trajectory_predictor"},
            {"n", n_},
            {"teams", teams_},
            {"d_model", c.d_model},
            {"heads", c.heads},
            {"layers", c.layers},
            {"feedforward", c.feedforward},
            {"dropout", c.dropout},
            {"window", c.window}};
  }

  void save(const std::filesystem::path& path, nlohmann::json extra = nlohmann::json::object()) const {
    nlohmann::json m = meta();
    m.update(extra);
    nn::save_checkpoint(path, m, parameters());
  }

  static TrajectoryPredictor load(const std::filesystem::path& path) {
    const nn::Checkpoint ck = nn::load_checkpoint(path);
    if (ck.meta.value("kind", "") != "trajectory_predictor") {
      throw Error("checkpoint.mismatch", "not a trajectory predictor checkpoint: " + path.string());
    }
    nn::EncoderConfig cfg;
    cfg.d_model = ck.meta.at("d_model");
    cfg.heads = ck.meta.at("heads");
    cfg.layers = ck.meta.at("layers");
    cfg.feedforward = ck.meta.at("feedforward");
    cfg.dropout = ck.meta.at("dropout");
    Rng rng(0);
    TrajectoryPredictor p(ck.meta.at("n"), ck.meta.at("teams"), cfg, rng);
    nn::assign_checkpoint(ck, p.parameters());
    return p;
  }

 private:
  static nn::EncoderConfig with_window(nn::EncoderConfig cfg) {
    cfg.window = kWindow;
    return cfg;
  }

  void check(std::span<const TrajectoryWindow* const> windows) const {
    for (const auto* w : windows) {
      if (w->n != n_ || w->features.cols() != kAgentFeatures * n_) {
        throw Error("predictor.shape", "window built for " + std::to_string(w->n) + " agents, predictor expects " +
                                           std::to_string(n_));
      }
    }
  }

  int n_ = 0;
  int teams_ = 0;
  nn::TransformerEncoder encoder_;
  nn::Linear head_;
};

}  // namespace ibts::predictor
