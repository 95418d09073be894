#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "ibts/controller.hpp"
#include "ibts/marl/pool.hpp"
#include "ibts/nn/checkpoint.hpp"
#include "ibts/predictor/window.hpp"
#include "ibts/util/hash.hpp"

namespace ibts::predictor {

enum class Split : std::uint8_t { Train, Val, Test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

struct Sample {
  int label = 0;
  int episode = 0;  // unique across the dataset
  int t = 0;        // last step covered by the window
  Split split = Split::Train;
  TrajectoryWindow window;
};

struct DatasetConfig {
  int episodes_per_team = 10;
  int stride = 5;
  std::uint64_t seed = 1;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(DatasetConfig, episodes_per_team, stride, seed, train_fraction,
                                              val_fraction)
  void validate() const {
    if (episodes_per_team < 1 || stride < 1 || train_fraction <= 0.0 || val_fraction < 0.0 ||
        train_fraction + val_fraction > 1.0) {
      throw Error("config.invalid", "bad predictor dataset config");
    }
  }
};

struct PredictorDataset {
  std::string layout;
  int n = 0;
  int teams = 0;
  DatasetConfig config;
  std::vector<Sample> samples;

  std::vector<const Sample*> split(Split s) const {
    std::vector<const Sample*> out;
    for (const auto& x : samples) {
      if (x.split == s) out.push_back(&x);
    }
    return out;
  }

  std::vector<int> counts_per_label() const {
    std::vector<int> c(static_cast<std::size_t>(teams), 0);
    for (const auto& x : samples) ++c[static_cast<std::size_t>(x.label)];
    return c;
  }

  std::uint64_t hash() const {
    Fnv1a h;
    h.update(layout);
    h.update_value(n);
    h.update_value(teams);
    for (const auto& x : samples) {
      h.update_value(x.label);
      h.update_value(x.episode);
      h.update_value(x.t);
      h.update_value(x.split);
      h.update(x.window.mask.data(), x.window.mask.size());
      h.update(x.window.features.data(), static_cast<std::size_t>(x.window.features.size()) * sizeof(double));
    }
    return h.digest();
  }

  nlohmann::json manifest() const {
    nlohmann::json splits = nlohmann::json::object();
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
      std::vector<int> episodes;
      for (const auto& x : samples) {
        if (x.split == s && (episodes.empty() || episodes.back() != x.episode)) episodes.push_back(x.episode);
      }
      splits[std::string(to_string(s))] = {{"windows", split(s).size()}, {"episodes", episodes}};
    }
    return {{"kind", "predictor_dataset"},
            {"layout", layout},
            {"n", n},
            {"teams", teams},
            {"window", kWindow},
            {"config", config},
            {"counts_per_label", counts_per_label()},
            {"splits", splits},
            {"samples", samples.size()},
            {"hash", hex64(hash())}};
  }
};

// Episode-level split per label: each team's episodes are shuffled and cut
// into train/val/test so every split sees every team.
inline std::vector<Split> assign_episode_splits(int episodes, const DatasetConfig& cfg, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) order[static_cast<std::size_t>(e)] = e;
  rng.shuffle(order);
  int n_val = static_cast<int>(std::lround(cfg.val_fraction * episodes));
  int n_test = episodes - static_cast<int>(std::lround(cfg.train_fraction * episodes)) - n_val;
  if (episodes >= 3) {
    n_val = std::max(n_val, 1);
    n_test = std::max(n_test, 1);
  }
  n_test = std::max(n_test, 0);
  std::vector<Split> out(static_cast<std::size_t>(episodes), Split::Train);
  for (int k = 0; k < n_val && k < episodes; ++k) out[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = Split::Val;
  for (int k = n_val; k < n_val + n_test && k < episodes; ++k) {
    out[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = Split::Test;
  }
  return out;
}

// Self-play rollouts of each team; a window is cut every `stride` steps and
// labeled with the generating team.
inline PredictorDataset generate_predictor_dataset(std::shared_ptr<const Layout> layout, int n,
                                                   std::span<Controller* const> teams, const DatasetConfig& cfg) {
  cfg.validate();
  if (teams.empty()) throw Error("predictor.dataset", "empty team pool");
  PredictorDataset ds{layout->name(), n, static_cast<int>(teams.size()), cfg, {}};
  std::vector<int> agents(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) agents[static_cast<std::size_t>(i)] = i;
  for (int m = 0; m < ds.teams; ++m) {
    Rng split_rng(derive_seed(cfg.seed, 0x5a17ULL + static_cast<std::uint64_t>(m)));
    const std::vector<Split> splits = assign_episode_splits(cfg.episodes_per_team, cfg, split_rng);
    for (int e = 0; e < cfg.episodes_per_team; ++e) {
      const std::uint64_t ep_seed = derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(m)), static_cast<std::uint64_t>(e));
      Rng rng(derive_seed(ep_seed, 1));
      WorldState s = reset(layout, n, ep_seed);
      teams[static_cast<std::size_t>(m)]->reset(s);
      std::vector<StepRecord> history;
      history.reserve(kHorizon);
      JointAction joint(static_cast<std::size_t>(n), Action::Stay);
      for (int t = 0; t < kHorizon; ++t) {
        teams[static_cast<std::size_t>(m)]->act(s, agents, joint, rng);
        history.push_back(record_step(s, joint));
        s = step(s, joint).state;
        if ((t + 1) % cfg.stride == 0) {
          ds.samples.push_back({m, m * cfg.episodes_per_team + e, t, splits[static_cast<std::size_t>(e)],
                                build_window(history, *layout)});
        }
      }
    }
  }
  return ds;
}

inline PredictorDataset generate_predictor_dataset(const marl::TeamPool& pool, const DatasetConfig& cfg) {
  if (pool.teams.empty()) throw Error("predictor.dataset", "empty team pool");
  auto layout = load_layout(pool.layout);
  std::vector<std::unique_ptr<Controller>> owned;
  std::vector<Controller*> teams;
  for (const auto& t : pool.teams) {
    owned.push_back(std::make_unique<PolicyController>(t, layout, pool.n));
    teams.push_back(owned.back().get());
  }
  return generate_predictor_dataset(layout, pool.n, teams, cfg);
}

// dataset.bin: "IBTSDSET" | u32 version | u32 meta_len | meta JSON | u64 count |
// per sample: i32 label, i32 episode, i32 t, u8 split, u8 mask[20], f64 features |
// u64 FNV-1a of everything before it. manifest.json mirrors the meta.
inline constexpr char kDatasetMagic[8] = {'I', 'B', 'T', 'S', 'D', 'S', 'E', 'T'};

inline void save_dataset(const PredictorDataset& ds, const std::filesystem::path& dir) {
  using nn::detail::put;
  std::filesystem::create_directories(dir);
  const nlohmann::json meta = ds.manifest();
  const std::string meta_text = meta.dump();
  std::string out(kDatasetMagic, 8);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta_text.size()));
  out += meta_text;
  put<std::uint64_t>(out, ds.samples.size());
  for (const auto& x : ds.samples) {
    put<std::int32_t>(out, x.label);
    put<std::int32_t>(out, x.episode);
    put<std::int32_t>(out, x.t);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(x.split));
    out.append(reinterpret_cast<const char*>(x.window.mask.data()), x.window.mask.size());
    out.append(reinterpret_cast<const char*>(x.window.features.data()),
               static_cast<std::size_t>(x.window.features.size()) * sizeof(double));
  }
  put<std::uint64_t>(out, fnv1a(out));
  const auto tmp = dir / "dataset.bin.tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("dataset.io", "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, dir / "dataset.bin");
  std::ofstream(dir / "manifest.json") << meta.dump(2) << "\n";
}

inline PredictorDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream f(dir / "dataset.bin", std::ios::binary);
  if (!f) throw Error("dataset.io", "cannot read " + (dir / "dataset.bin").string());
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string data = ss.str();
  try {
    if (data.size() < 8 + 8 || data.compare(0, 8, std::string(kDatasetMagic, 8)) != 0) {
      throw Error("dataset.corrupt", "bad dataset magic");
    }
    std::uint64_t stored;
    std::memcpy(&stored, data.data() + data.size() - 8, 8);
    if (stored != fnv1a(std::string_view(data).substr(0, data.size() - 8))) {
      throw Error("dataset.corrupt", "dataset checksum mismatch");
    }
    nn::detail::Reader r(data);
    r.bytes(8);
    if (r.get<std::uint32_t>() != 1) throw Error("dataset.version", "unsupported dataset version");
    const auto meta = nlohmann::json::parse(r.bytes(r.get<std::uint32_t>()));
    PredictorDataset ds{meta.at("layout"), meta.at("n"), meta.at("teams"), meta.at("config").get<DatasetConfig>(), {}};
    const auto count = r.get<std::uint64_t>();
    const Eigen::Index F = static_cast<Eigen::Index>(kAgentFeatures) * ds.n;
    for (std::uint64_t k = 0; k < count; ++k) {
      Sample x;
      x.label = r.get<std::int32_t>();
      x.episode = r.get<std::int32_t>();
      x.t = r.get<std::int32_t>();
      x.split = static_cast<Split>(r.get<std::uint8_t>());
      const std::string mask = r.bytes(kWindow);
      x.window.n = ds.n;
      x.window.mask.assign(mask.begin(), mask.end());
      x.window.features.resize(kWindow, F);
      const std::string feats = r.bytes(static_cast<std::size_t>(kWindow * F) * sizeof(double));
      std::memcpy(x.window.features.data(), feats.data(), feats.size());
      if (x.label < 0 || x.label >= ds.teams) throw Error("dataset.corrupt", "label out of range");
      ds.samples.push_back(std::move(x));
    }
    if (r.remaining() != 8) throw Error("dataset.corrupt", "trailing bytes in dataset");
    return ds;
  } catch (const Error& e) {
    if (e.code().rfind("dataset.", 0) == 0) throw;
    throw Error("dataset.corrupt", e.what());
  } catch (const nlohmann::json::exception& e) {
    throw Error("dataset.corrupt", e.what());
  }
}

}  // namespace ibts::predictor
