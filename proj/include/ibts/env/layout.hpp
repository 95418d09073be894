#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ibts/env/types.hpp"
#include "ibts/util/error.hpp"

namespace ibts {

inline constexpr int kDefaultCookTime = 20;

class LayoutError : public Error {
 public:
  LayoutError(const std::string& message, int row = -1, int column = -1)
      : Error("layout.parse", format(message, row, column)), row_(row), column_(column) {}

  // 1-based grid position of the offending cell, or -1 when not cell-specific.
  int row() const noexcept { return row_; }
  int column() const noexcept { return column_; }

 private:
  static std::string format(const std::string& message, int row, int column) {
    if (row < 0) return message;
    return message + " at row " + std::to_string(row) + ", column " + std::to_string(column);
  }
  int row_;
  int column_;
};

// Immutable kitchen geometry. Built only through parse_layout, so every
// instance satisfies the enclosure, spawn and required-station invariants.
class Layout {
 public:
  const std::string& name() const { return name_; }
  int width() const { return width_; }
  int height() const { return height_; }
  int cook_time() const { return cook_time_; }
  int max_agents() const { return static_cast<int>(spawns_.size()); }
  const std::vector<Cell>& spawn_points() const { return spawns_; }
  const std::map<std::string, std::string>& header() const { return header_; }

  bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }
  int index(Cell c) const { return c.y * width_ + c.x; }
  Cell cell(int index) const { return {index % width_, index / width_}; }
  Tile at(Cell c) const { return in_bounds(c) ? tiles_[static_cast<std::size_t>(index(c))] : Tile::Counter; }
  bool is_floor(Cell c) const { return at(c) == Tile::Floor; }

  // Stations in row-major order.
  const std::vector<Cell>& pots() const { return pots_; }
  const std::vector<Cell>& counters() const { return counters_; }
  const std::vector<Cell>& cells_of(Tile t) const { return by_kind_[static_cast<std::size_t>(t)]; }

  // Index into pots(), or -1.
  int pot_index(Cell c) const {
    return in_bounds(c) ? pot_slot_[static_cast<std::size_t>(index(c))] : -1;
  }

  // ASCII rendering using the parser's alphabet ('_' for floor).
  std::string render() const {
    std::string out;
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        const Cell c{x, y};
        const auto spawn = std::find(spawns_.begin(), spawns_.end(), c);
        if (spawn != spawns_.end()) {
          out += static_cast<char>('1' + (spawn - spawns_.begin()));
          continue;
        }
        switch (at(c)) {
          case Tile::Floor: out += '_'; break;
          case Tile::Counter: out += 'X'; break;
          case Tile::OnionSource: out += 'O'; break;
          case Tile::DishSource: out += 'D'; break;
          case Tile::Pot: out += 'P'; break;
          case Tile::ServeWindow: out += 'S'; break;
        }
      }
      out += '\n';
    }
    return out;
  }

 private:
  friend Layout parse_layout(std::string_view text, std::string name);
  Layout() = default;

  std::string name_;
  int width_ = 0;
  int height_ = 0;
  int cook_time_ = kDefaultCookTime;
  std::vector<Tile> tiles_;
  std::vector<Cell> spawns_;
  std::vector<Cell> pots_;
  std::vector<Cell> counters_;
  std::vector<int> pot_slot_;
  std::array<std::vector<Cell>, 6> by_kind_;
  std::map<std::string, std::string> header_;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline bool is_header_line(std::string_view line) {
  std::size_t i = 0;
  if (line.empty() || !(std::isalpha(static_cast<unsigned char>(line[0])) || line[0] == '_')) return false;
  while (i < line.size() && (std::isalnum(static_cast<unsigned char>(line[i])) || line[i] == '_')) ++i;
  while (i < line.size() && line[i] == ' ') ++i;
  return i < line.size() && line[i] == ':';
}

}  // namespace detail

// Parses the ASCII kitchen format:
//   optional header lines `key: value` and `#` comments, then the grid.
//   'X' counter, 'O' onion source, 'D' dish source, 'P' pot, 'S' serve window,
//   ' ' or '_' floor, '1'..'4' spawn points (on floor).
inline Layout parse_layout(std::string_view text, std::string name = "") {
  std::vector<std::string> lines;
  {
    std::string current;
    for (char ch : text) {
      if (ch == '\n') {
        if (!current.empty() && current.back() == '\r') current.pop_back();
        lines.push_back(std::move(current));
        current.clear();
      } else {
        current += ch;
      }
    }
    if (!current.empty()) lines.push_back(std::move(current));
  }

  Layout layout;
  std::vector<std::string> grid;
  bool in_grid = false;
  for (const auto& line : lines) {
    if (!in_grid) {
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      if (detail::is_header_line(t)) {
        const auto colon = t.find(':');
        layout.header_[detail::trim(t.substr(0, colon))] = detail::trim(t.substr(colon + 1));
        continue;
      }
      in_grid = true;
    }
    grid.push_back(line);
  }
  while (!grid.empty() && detail::trim(grid.back()).empty()) grid.pop_back();
  if (grid.empty()) throw LayoutError("empty grid");

  if (name.empty()) {
    auto it = layout.header_.find("name");
    if (it != layout.header_.end()) name = it->second;
  }
  layout.name_ = std::move(name);
  if (auto it = layout.header_.find("cook_time"); it != layout.header_.end()) {
    char* end = nullptr;
    const long v = std::strtol(it->second.c_str(), &end, 10);
    if (it->second.empty() || *end != '\0' || v < 1 || v > 10000) {
      throw LayoutError("invalid cook_time '" + it->second + "'");
    }
    layout.cook_time_ = static_cast<int>(v);
  }

  layout.height_ = static_cast<int>(grid.size());
  layout.width_ = static_cast<int>(grid[0].size());
  for (int y = 0; y < layout.height_; ++y) {
    if (static_cast<int>(grid[static_cast<std::size_t>(y)].size()) != layout.width_) {
      throw LayoutError("non-rectangular grid: expected width " + std::to_string(layout.width_) +
                            ", got " + std::to_string(grid[static_cast<std::size_t>(y)].size()),
                        y + 1, std::min<int>(layout.width_, static_cast<int>(grid[static_cast<std::size_t>(y)].size())) + 1);
    }
  }
  if (layout.width_ < 3 || layout.height_ < 3) throw LayoutError("grid smaller than 3x3");

  const auto area = static_cast<std::size_t>(layout.width_ * layout.height_);
  layout.tiles_.assign(area, Tile::Floor);
  std::array<std::optional<Cell>, 4> spawn_slots{};
  for (int y = 0; y < layout.height_; ++y) {
    for (int x = 0; x < layout.width_; ++x) {
      const char ch = grid[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)];
      Tile tile = Tile::Floor;
      switch (ch) {
        case 'X': tile = Tile::Counter; break;
        case 'O': tile = Tile::OnionSource; break;
        case 'D': tile = Tile::DishSource; break;
        case 'P': tile = Tile::Pot; break;
        case 'S': tile = Tile::ServeWindow; break;
        case ' ':
        case '_': break;
        case '1':
        case '2':
        case '3':
        case '4': {
          auto& slot = spawn_slots[static_cast<std::size_t>(ch - '1')];
          if (slot) throw LayoutError(std::string("duplicate spawn point '") + ch + "'", y + 1, x + 1);
          slot = Cell{x, y};
          break;
        }
        default:
          throw LayoutError(std::string("unknown character '") + ch + "'", y + 1, x + 1);
      }
      const bool boundary = x == 0 || y == 0 || x == layout.width_ - 1 || y == layout.height_ - 1;
      if (boundary && tile == Tile::Floor) {
        throw LayoutError("kitchen not enclosed: floor on boundary", y + 1, x + 1);
      }
      layout.tiles_[static_cast<std::size_t>(y * layout.width_ + x)] = tile;
    }
  }

  for (std::size_t i = 0; i < spawn_slots.size(); ++i) {
    if (spawn_slots[i]) {
      if (i > 0 && !spawn_slots[i - 1]) {
        throw LayoutError("spawn point '" + std::to_string(i + 1) + "' without '" + std::to_string(i) + "'",
                          spawn_slots[i]->y + 1, spawn_slots[i]->x + 1);
      }
      layout.spawns_.push_back(*spawn_slots[i]);
    }
  }
  if (layout.spawns_.size() < 2) {
    throw LayoutError("spawn count " + std::to_string(layout.spawns_.size()) + " outside 2..4");
  }

  layout.pot_slot_.assign(area, -1);
  for (int i = 0; i < static_cast<int>(area); ++i) {
    const Cell c = layout.cell(i);
    const Tile t = layout.tiles_[static_cast<std::size_t>(i)];
    layout.by_kind_[static_cast<std::size_t>(t)].push_back(c);
    if (t == Tile::Pot) {
      layout.pot_slot_[static_cast<std::size_t>(i)] = static_cast<int>(layout.pots_.size());
      layout.pots_.push_back(c);
    }
    if (t == Tile::Counter) layout.counters_.push_back(c);
  }
  const std::pair<Tile, const char*> required[] = {{Tile::OnionSource, "missing OnionSource"},
                                                   {Tile::DishSource, "missing DishSource"},
                                                   {Tile::Pot, "missing Pot"},
                                                   {Tile::ServeWindow, "missing ServeWindow"}};
  for (const auto& [tile, message] : required) {
    if (layout.cells_of(tile).empty()) throw LayoutError(message);
  }
  return layout;
}

inline std::filesystem::path default_layout_dir() {
  if (const char* env = std::getenv("IBTS_LAYOUT_DIR"); env && *env) return env;
#ifdef IBTS_LAYOUT_DIR
  return IBTS_LAYOUT_DIR;
#else
  return "layouts";
#endif
}

inline std::shared_ptr<const Layout> load_layout_file(const std::filesystem::path& path, std::string name = "") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("layout.not_found", "cannot open layout file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  if (name.empty()) name = path.stem().string();
  return std::make_shared<const Layout>(parse_layout(ss.str(), std::move(name)));
}

// Shipped layouts are `<dir>/<name>.layout`; lookups are case-insensitive.
inline std::vector<std::string> shipped_layout_names(const std::filesystem::path& dir = default_layout_dir()) {
  std::vector<std::string> names;
  if (!std::filesystem::is_directory(dir)) return names;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".layout") names.push_back(entry.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

inline std::shared_ptr<const Layout> load_layout(std::string_view name,
                                                 const std::filesystem::path& dir = default_layout_dir()) {
  auto lower = [](std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
  };
  for (const auto& candidate : shipped_layout_names(dir)) {
    if (lower(candidate) == lower(name)) return load_layout_file(dir / (candidate + ".layout"), candidate);
  }
  throw Error("layout.unknown", "unknown layout '" + std::string(name) + "' in " + dir.string());
}

}  // namespace ibts
