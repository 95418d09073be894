#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ibts/nn/tensor.hpp"
#include "ibts/util/error.hpp"

namespace ibts::nn {

// Binary layout (little endian):
//   "IBTSCKPT" | u32 version | u32 meta_len | meta JSON | u32 tensor_count |
//   per tensor: u32 name_len | name | u32 rows | u32 cols | f64[rows*cols] |
//   u64 FNV-1a of everything before it.
inline constexpr char kCheckpointMagic[8] = {'I', 'B', 'T', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix* find(const std::string& name) const {
    for (const auto& [n, m] : tensors) {
      if (n == name) return &m;
    }
    return nullptr;
  }
};

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}
  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw Error("checkpoint.corrupt", "checkpoint is truncated");
  }
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const nlohmann::json& meta, const ConstParamRefs& params) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  const std::string m = meta.dump();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.size()));
  out += m;
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rows()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.cols()));
    out.append(reinterpret_cast<const char*>(p->value.data()), static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  Fnv1a h;
  h.update(out.data(), out.size());
  detail::put<std::uint64_t>(out, h.digest());
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& data) {
  if (data.size() < sizeof(kCheckpointMagic) + 8 ||
      std::memcmp(data.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw Error("checkpoint.corrupt", "not a checkpoint file (bad magic)");
  }
  Fnv1a h;
  h.update(data.data(), data.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + data.size() - 8, 8);
  if (stored != h.digest()) throw Error("checkpoint.corrupt", "checkpoint checksum mismatch");

  const std::string body = data.substr(0, data.size() - 8);
  detail::Reader r(body);
  r.bytes(sizeof(kCheckpointMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error("checkpoint.version", "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto meta_len = r.get<std::uint32_t>();
  try {
    ck.meta = nlohmann::json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint.corrupt", std::string("bad checkpoint metadata: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    if (n * sizeof(double) > r.remaining()) throw Error("checkpoint.corrupt", "tensor '" + name + "' is truncated");
    Matrix m(rows, cols);
    const std::string raw = r.bytes(n * sizeof(double));
    std::memcpy(m.data(), raw.data(), raw.size());
    ck.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (r.remaining() != 0) throw Error("checkpoint.corrupt", "trailing bytes in checkpoint");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta, const ConstParamRefs& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("checkpoint.io", "cannot write " + tmp.string());
    const std::string data = encode_checkpoint(meta, params);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("checkpoint.io", "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint.io", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

// Copies tensors into params by name; every parameter must be present with
// a matching shape.
inline void assign_checkpoint(const Checkpoint& ck, const ParamRefs& params) {
  if (ck.tensors.size() != params.size()) {
    throw Error("checkpoint.mismatch", "checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, model has " +
                                           std::to_string(params.size()));
  }
  for (auto* p : params) {
    const Matrix* m = ck.find(p->name);
    if (!m) throw Error("checkpoint.mismatch", "checkpoint is missing tensor '" + p->name + "'");
    if (m->rows() != p->value.rows() || m->cols() != p->value.cols()) {
      throw Error("checkpoint.mismatch", "shape mismatch for tensor '" + p->name + "'");
    }
    p->value = *m;
    p->grad.setZero();
  }
}

}  // namespace ibts::nn
