#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ibts/util/error.hpp"

namespace ibts::eval {

// One (layout, method) entry: one value per seed, summarized.
struct ScoreRow {
  std::string layout;
  std::string method;
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // population std over seeds
  double max = 0.0;
  int episodes = 0;
  nlohmann::json meta = nlohmann::json::object();

  bool operator==(const ScoreRow&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScoreRow, layout, method, values, mean, std, max, episodes, meta)

inline ScoreRow make_row(std::string layout, std::string method, std::vector<double> values, int episodes = 0) {
  if (values.empty()) throw Error("eval.table", "score row needs at least one seed value");
  ScoreRow r{std::move(layout), std::move(method), std::move(values)};
  r.episodes = episodes;
  double sum = 0.0;
  r.max = r.values.front();
  for (double v : r.values) {
    sum += v;
    r.max = std::max(r.max, v);
  }
  r.mean = sum / static_cast<double>(r.values.size());
  double var = 0.0;
  for (double v : r.values) var += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(var / static_cast<double>(r.values.size()));
  return r;
}

inline std::string format_cell(double mean, double std, double max, int precision = 1) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << mean << " ± " << std << " (" << max << ")";
  return os.str();
}

struct ScoreTable {
  std::vector<ScoreRow> rows;

  // Per-layout normalizer: the best row mean on that layout (0 if none > 0).
  std::map<std::string, double> normalizers() const {
    std::map<std::string, double> z;
    for (const auto& r : rows) z[r.layout] = std::max(z[r.layout], r.mean);
    return z;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    const auto z = normalizers();
    for (const auto& r : rows) {
      nlohmann::json row = r;
      const double zl = z.at(r.layout);
      row["normalizer"] = zl;
      row["normalized_mean"] = zl > 0.0 ? nlohmann::json(r.mean / zl) : nlohmann::json(nullptr);
      j.push_back(std::move(row));
    }
    return j;
  }

  // Markdown table: raw and per-layout max-normalized mean ± std (max).
  std::string to_text() const {
    const auto z = normalizers();
    std::ostringstream os;
    os << "| layout | method | seeds | raw score | normalized |\n|---|---|---|---|---|\n";
    for (const auto& r : rows) {
      const double zl = z.at(r.layout);
      os << "| " << r.layout << " | " << r.method << " | " << r.values.size() << " | " << format_cell(r.mean, r.std, r.max) << " | "
         << (zl > 0.0 ? format_cell(r.mean / zl, r.std / zl, r.max / zl, 3) : std::string("n/a")) << " |\n";
    }
    return os.str();
  }
};

// Score rows are stored one JSON object per line in scores.jsonl.
inline void append_row(const std::filesystem::path& file, const ScoreRow& row) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::app);
  if (!out) throw Error("eval.io", "cannot write " + file.string());
  out << nlohmann::json(row).dump() << "\n";
}

inline std::vector<ScoreRow> read_rows(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("eval.io", "cannot read " + file.string());
  std::vector<ScoreRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line).get<ScoreRow>());
    } catch (const nlohmann::json::exception& e) {
      throw Error("eval.io", "bad score row in " + file.string() + ": " + e.what());
    }
  }
  return rows;
}

// Gathers every scores.jsonl below dir (sorted by path) into one table.
inline ScoreTable collect_table(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("eval.io", "not a run directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "scores.jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  ScoreTable t;
  for (const auto& f : files) {
    auto rows = read_rows(f);
    t.rows.insert(t.rows.end(), rows.begin(), rows.end());
  }
  return t;
}

}  // namespace ibts::eval
