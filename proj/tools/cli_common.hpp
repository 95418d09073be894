#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <json.hpp>

#include "ibts/marl/pool.hpp"
#include "ibts/util/error.hpp"
#include "ibts/util/hash.hpp"
#include "ibts/util/version.hpp"

namespace ibts::cli {

// Flags shared by every subcommand; unset flags leave the config untouched.
struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> layout;
  std::optional<int> n;
  std::string out = "runs/out";
  std::optional<long> steps;
  std::optional<int> episodes;
};

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config.missing", "cannot open config file " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("config.malformed", "malformed config " + path + ": " + e.what());
  }
}

// Config from --config (or defaults), as type T.
template <class T>
T load_config(const CommonFlags& f) {
  if (f.config.empty()) return T{};
  const auto j = read_json_file(f.config);
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("config.malformed", "config " + f.config + " does not match the expected schema: " + e.what());
  }
}

inline std::filesystem::path require_path(const std::string& path, const std::string& what) {
  if (path.empty()) throw Error("cli.missing_checkpoint", what + " path not given");
  if (!std::filesystem::exists(path)) throw Error("cli.missing_checkpoint", what + " not found: " + path);
  return path;
}

inline std::filesystem::path prepare_out(const CommonFlags& f) {
  std::filesystem::path out(f.out);
  std::filesystem::create_directories(out);
  return out;
}

// Run manifest: tool version, command, resolved config and its hash, seeds
// and input paths.
inline void write_manifest(const std::filesystem::path& out, const std::string& command, const nlohmann::json& config,
                           const nlohmann::json& seeds, const nlohmann::json& inputs = nlohmann::json::object(),
                           const nlohmann::json& results = nlohmann::json::object()) {
  nlohmann::ordered_json m;
  m["command"] = command;
  m["version"] = version();
  m["config_hash"] = hex64(fnv1a(config.dump()));
  m["seeds"] = seeds;
  m["inputs"] = inputs;
  m["config"] = config;
  m["results"] = results;
  std::ofstream(out / "manifest.json") << m.dump(2) << "\n";
}

inline void apply_pool_overrides(marl::PoolConfig& c, const CommonFlags& f) {
  if (f.seed) c.seed = *f.seed;
  if (f.layout) c.layout = *f.layout;
  if (f.n) c.n = *f.n;
  if (f.steps) c.chunk_steps = *f.steps;
  if (f.episodes) c.eval_episodes = *f.episodes;
}

}  // namespace ibts::cli
