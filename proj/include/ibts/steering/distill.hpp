#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ibts/nn/adam.hpp"
#include "ibts/steering/teacher.hpp"

namespace ibts::steering {

struct DistillExportConfig {
  int episodes_per_teacher = 20;
  std::uint64_t seed = 1;
  bool greedy_teachers = false;  // teachers act by argmax instead of sampling
  double heldout_fraction = 0.1;
  NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(DistillExportConfig, episodes_per_teacher, seed, greedy_teachers,
                                              heldout_fraction)
  void validate() const {
    if (episodes_per_teacher < 1 || heldout_fraction < 0.0 || heldout_fraction >= 1.0) {
      throw Error("config.distill", "bad distill export config");
    }
  }
};

// Ego-centric (o_i, c, a_i) records pooled over teacher positions. The
// teacher index, episode and step are metadata and never reach the student.
struct DistillDataset {
  int obs_dim = 0;
  int embedding_dim = 0;
  nn::Matrix inputs;  // rows: [o_i | c]
  std::vector<int> actions;
  std::vector<int> teacher;
  std::vector<int> episode;
  std::vector<int> step;
  std::vector<std::uint8_t> heldout;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t size() const { return actions.size(); }
  int input_dim() const { return obs_dim + embedding_dim; }

  std::uint64_t hash() const {
    Fnv1a h;
    h.update_value(obs_dim);
    h.update_value(embedding_dim);
    h.update(inputs.data(), static_cast<std::size_t>(inputs.size()) * sizeof(double));
    for (auto* v : {&actions, &teacher, &episode, &step}) h.update(v->data(), v->size() * sizeof(int));
    h.update(heldout.data(), heldout.size());
    return h.digest();
  }

  std::vector<long> counts_per_teacher() const {
    std::vector<long> c;
    for (int i : teacher) {
      if (static_cast<std::size_t>(i) >= c.size()) c.resize(static_cast<std::size_t>(i) + 1, 0);
      ++c[static_cast<std::size_t>(i)];
    }
    return c;
  }

  nlohmann::json manifest() const {
    long held = 0;
    for (auto h : heldout) held += h;
    nlohmann::json m = meta;
    m["kind"] = "distill_dataset";
    m["records"] = size();
    m["obs_dim"] = obs_dim;
    m["embedding_dim"] = embedding_dim;
    m["counts_per_teacher"] = counts_per_teacher();
    m["heldout_records"] = held;
    m["hash"] = hex64(hash());
    return m;
  }
};

inline void append_record(DistillDataset& ds, std::span<const double> obs, const nn::Matrix& c, int action, int teacher,
                          int episode, int t) {
  const Eigen::Index r = static_cast<Eigen::Index>(ds.size());
  if (ds.inputs.rows() <= r) ds.inputs.conservativeResize(std::max<Eigen::Index>(64, 2 * (r + 1)), ds.input_dim());
  std::copy(obs.begin(), obs.end(), ds.inputs.row(r).data());
  ds.inputs.row(r).tail(ds.embedding_dim) = c.row(0);
  ds.actions.push_back(action);
  ds.teacher.push_back(teacher);
  ds.episode.push_back(episode);
  ds.step.push_back(t);
}

// Rolls out teacher i as agent i next to a uniformly sampled pool team and
// records only the teacher's samples; pooled over all i. Episodes of each
// teacher are split into train / held-out at the episode level. When
// `windows` is given it receives the predictor input behind every record
// (empty window at t = 0, the cold start).
inline DistillDataset export_distill_dataset(std::span<const TeacherPolicy* const> teachers, const marl::TeamPool& pool,
                                             const TrajectoryPredictor& pred, const DistillExportConfig& cfg,
                                             std::vector<predictor::TrajectoryWindow>* windows = nullptr) {
  cfg.validate();
  if (pool.teams.empty()) throw Error("steering.pool", "empty team pool");
  if (static_cast<int>(teachers.size()) != pool.n) throw Error("distill.teachers", "need one teacher per agent index");
  for (int i = 0; i < pool.n; ++i) {
    if (!teachers[static_cast<std::size_t>(i)] || teachers[static_cast<std::size_t>(i)]->agent() != i) {
      throw Error("distill.teachers", "missing teacher for agent index " + std::to_string(i));
    }
  }
  const auto layout = load_layout(pool.layout);
  const int n = pool.n;
  const ObservationEncoder enc(layout, n);
  DistillDataset ds;
  ds.obs_dim = enc.width();
  ds.embedding_dim = pred.embedding_dim();
  ds.inputs.resize(0, ds.input_dim());
  ds.meta = {{"layout", pool.layout}, {"n", n}, {"config", cfg}, {"predictor_hash", hex64(pred.hash())}};
  ds.meta["teacher_hashes"] = nlohmann::json::array();
  for (const auto* t : teachers) ds.meta["teacher_hashes"].push_back(hex64(t->hash()));

  std::vector<double> obs(static_cast<std::size_t>(enc.width()));
  nn::Matrix x(1, ds.input_dim());
  nn::Matrix pobs(1, enc.width());
  for (int i = 0; i < n; ++i) {
    const TeacherPolicy& teacher = *teachers[static_cast<std::size_t>(i)];
    PartnerSampler sampler(static_cast<int>(pool.teams.size()), derive_seed(cfg.seed, 0xd157ULL + static_cast<std::uint64_t>(i)));
    Rng split_rng(derive_seed(cfg.seed, 0x5b1fULL + static_cast<std::uint64_t>(i)));
    std::vector<int> order(static_cast<std::size_t>(cfg.episodes_per_teacher));
    std::iota(order.begin(), order.end(), 0);
    split_rng.shuffle(order);
    int n_held = static_cast<int>(std::lround(cfg.heldout_fraction * cfg.episodes_per_teacher));
    if (cfg.heldout_fraction > 0.0 && cfg.episodes_per_teacher >= 2) n_held = std::max(n_held, 1);
    std::vector<std::uint8_t> held(static_cast<std::size_t>(cfg.episodes_per_teacher), 0);
    for (int k = 0; k < n_held; ++k) held[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = 1;

    for (int e = 0; e < cfg.episodes_per_teacher; ++e) {
      const int partner = sampler.sample();
      const auto& team = pool.teams[static_cast<std::size_t>(partner)];
      const std::uint64_t ep_seed = derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(e));
      Rng rng(derive_seed(ep_seed, 1));
      WorldState s = reset(layout, n, ep_seed);
      predictor::History history;
      JointAction joint(static_cast<std::size_t>(n));
      const int episode_id = i * cfg.episodes_per_teacher + e;
      for (int t = 0; t < kHorizon; ++t) {
        const auto pc = history.empty() ? pred.cold_start() : pred.predict(history.window(*layout));
        if (windows) windows->push_back(history.empty() ? predictor::TrajectoryWindow{} : history.window(*layout));
        enc.encode(s, i, obs);
        std::copy(obs.begin(), obs.end(), x.data());
        x.rightCols(ds.embedding_dim) = pc.c;
        const nn::Matrix p = teacher.actor().probs(x);
        int a = 0;
        if (cfg.greedy_teachers) {
          p.row(0).maxCoeff(&a);
        } else {
          a = sample_from(std::span<const double>(p.data(), kNumActions), rng);
        }
        joint[static_cast<std::size_t>(i)] = kAllActions[static_cast<std::size_t>(a)];
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          enc.encode(s, j, std::span<double>(pobs.data(), static_cast<std::size_t>(enc.width())));
          const nn::Matrix pj = team.action_probs(j, pobs);
          joint[static_cast<std::size_t>(j)] = kAllActions[static_cast<std::size_t>(sample_from(std::span<const double>(pj.data(), kNumActions), rng))];
        }
        append_record(ds, obs, pc.c, a, i, episode_id, t);
        ds.heldout.push_back(held[static_cast<std::size_t>(e)]);
        history.push(predictor::record_step(s, joint));
        s = step(s, joint).state;
      }
    }
  }
  ds.inputs.conservativeResize(static_cast<Eigen::Index>(ds.size()), ds.input_dim());
  return ds;
}

// distill.bin: "IBTSDIST" | u32 version | u32 meta_len | meta JSON | u64 count |
// u32 input_dim | per record: i32 action, i32 teacher, i32 episode, i32 step,
// u8 heldout, f64 input[input_dim] | u64 FNV-1a. manifest.json mirrors meta.
inline constexpr char kDistillMagic[8] = {'I', 'B', 'T', 'S', 'D', 'I', 'S', 'T'};

inline void save_distill_dataset(const DistillDataset& ds, const std::filesystem::path& dir) {
  using nn::detail::put;
  std::filesystem::create_directories(dir);
  nlohmann::json meta = ds.manifest();
  const std::string meta_text = meta.dump();
  std::string out(kDistillMagic, 8);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta_text.size()));
  out += meta_text;
  put<std::uint64_t>(out, ds.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.input_dim()));
  for (std::size_t k = 0; k < ds.size(); ++k) {
    put<std::int32_t>(out, ds.actions[k]);
    put<std::int32_t>(out, ds.teacher[k]);
    put<std::int32_t>(out, ds.episode[k]);
    put<std::int32_t>(out, ds.step[k]);
    put<std::uint8_t>(out, ds.heldout[k]);
    for (int c = 0; c < ds.input_dim(); ++c) put<double>(out, ds.inputs(static_cast<Eigen::Index>(k), c));
  }
  put<std::uint64_t>(out, fnv1a(out));
  const auto tmp = dir / "distill.bin.tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("dataset.io", "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, dir / "distill.bin");
  std::ofstream(dir / "manifest.json") << meta.dump(2) << "\n";
}

inline DistillDataset load_distill_dataset(const std::filesystem::path& dir) {
  std::ifstream f(dir / "distill.bin", std::ios::binary);
  if (!f) throw Error("dataset.io", "cannot read " + (dir / "distill.bin").string());
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string data = ss.str();
  try {
    if (data.size() < 16 || data.compare(0, 8, std::string(kDistillMagic, 8)) != 0) {
      throw Error("dataset.corrupt", "bad distill dataset magic");
    }
    std::uint64_t stored;
    std::memcpy(&stored, data.data() + data.size() - 8, 8);
    if (stored != fnv1a(std::string_view(data).substr(0, data.size() - 8))) {
      throw Error("dataset.corrupt", "distill dataset checksum mismatch");
    }
    nn::detail::Reader r(data);
    r.bytes(8);
    if (r.get<std::uint32_t>() != 1) throw Error("dataset.version", "unsupported distill dataset version");
    DistillDataset ds;
    ds.meta = nlohmann::json::parse(r.bytes(r.get<std::uint32_t>()));
    ds.obs_dim = ds.meta.at("obs_dim");
    ds.embedding_dim = ds.meta.at("embedding_dim");
    for (const char* k : {"kind", "records", "obs_dim", "embedding_dim", "counts_per_teacher", "heldout_records", "hash"}) ds.meta.erase(k);
    const auto count = r.get<std::uint64_t>();
    if (static_cast<int>(r.get<std::uint32_t>()) != ds.input_dim()) throw Error("dataset.corrupt", "input width mismatch");
    ds.inputs.resize(static_cast<Eigen::Index>(count), ds.input_dim());
    for (std::uint64_t k = 0; k < count; ++k) {
      ds.actions.push_back(r.get<std::int32_t>());
      ds.teacher.push_back(r.get<std::int32_t>());
      ds.episode.push_back(r.get<std::int32_t>());
      ds.step.push_back(r.get<std::int32_t>());
      ds.heldout.push_back(r.get<std::uint8_t>());
      for (int c = 0; c < ds.input_dim(); ++c) ds.inputs(static_cast<Eigen::Index>(k), c) = r.get<double>();
      if (ds.actions.back() < 0 || ds.actions.back() >= kNumActions) throw Error("dataset.corrupt", "action out of range");
    }
    if (r.remaining() != 8) throw Error("dataset.corrupt", "trailing bytes in distill dataset");
    return ds;
  } catch (const Error& e) {
    if (e.code().rfind("dataset.", 0) == 0) throw;
    throw Error("dataset.corrupt", e.what());
  } catch (const nlohmann::json::exception& e) {
    throw Error("dataset.corrupt", e.what());
  }
}

struct DistillConfig {
  int epochs = 20;
  double lr = 1e-3;
  int batch_size = 256;  // <= 0 means full batch
  std::string optimizer = "adam";  // or "sgd"
  std::vector<int> hidden{64, 64};
  std::uint64_t seed = 1;
  NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(DistillConfig, epochs, lr, batch_size, optimizer, hidden, seed)
  void validate() const {
    if (epochs < 1 || lr <= 0.0 || hidden.empty() || (optimizer != "adam" && optimizer != "sgd")) {
      throw Error("config.distill", "bad distillation config");
    }
  }
};

// One shared (o, c) -> action policy for every agent index.
class StudentPolicy {
 public:
  StudentPolicy() = default;
  StudentPolicy(int obs_dim, int embedding_dim, const std::vector<int>& hidden, Rng& rng)
      : obs_dim_(obs_dim), embedding_dim_(embedding_dim), hidden_(hidden), actor_(obs_dim + embedding_dim, hidden, rng, "student") {}

  int obs_dim() const { return obs_dim_; }
  int embedding_dim() const { return embedding_dim_; }
  const PolicyNet& actor() const { return actor_; }
  PolicyNet& actor() { return actor_; }
  std::uint64_t hash() const { return nn::parameter_hash(actor_.parameters()); }

  void save(const std::filesystem::path& path, nlohmann::json extra = nlohmann::json::object()) const {
    nlohmann::json m{{"kind", "student"}, {"obs_dim", obs_dim_}, {"embedding_dim", embedding_dim_}, {"hidden", hidden_}};
    m["extra"] = std::move(extra);
    nn::save_checkpoint(path, m, actor_.parameters());
  }
  static StudentPolicy load(const std::filesystem::path& path) {
    const auto ck = nn::load_checkpoint(path);
    if (ck.meta.value("kind", "") != "student") throw Error("checkpoint.kind", path.string() + " is not a student checkpoint");
    Rng rng(0);
    StudentPolicy s(ck.meta.at("obs_dim"), ck.meta.at("embedding_dim"), ck.meta.at("hidden").get<std::vector<int>>(), rng);
    nn::assign_checkpoint(ck, s.actor_.parameters());
    return s;
  }

 private:
  int obs_dim_ = 0;
  int embedding_dim_ = 0;
  std::vector<int> hidden_;
  PolicyNet actor_;
};

struct DistillResult {
  StudentPolicy student;
  std::vector<double> train_loss;  // mean cross-entropy per epoch, before that epoch's steps
  double final_train_loss = 0.0;
  double train_agreement = 0.0;
  double heldout_agreement = std::numeric_limits<double>::quiet_NaN();
  std::size_t train_records = 0;
  std::size_t heldout_records = 0;
};

inline double argmax_agreement(const PolicyNet& actor, const nn::Matrix& x, const std::vector<int>& actions) {
  if (actions.empty()) return std::numeric_limits<double>::quiet_NaN();
  const nn::Matrix logits = actor.logits(x);
  std::size_t hit = 0;
  for (std::size_t r = 0; r < actions.size(); ++r) {
    Eigen::Index a;
    logits.row(static_cast<Eigen::Index>(r)).maxCoeff(&a);
    hit += a == actions[r] ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(actions.size());
}

// Behavior cloning on -log pi(a | o, c) over the training records.
inline DistillResult distill_student(const DistillDataset& ds, const DistillConfig& cfg) {
  cfg.validate();
  if (ds.size() == 0) throw Error("distill.empty", "distillation dataset is empty");
  std::vector<Eigen::Index> train_rows, held_rows;
  for (std::size_t k = 0; k < ds.size(); ++k) (ds.heldout[k] ? held_rows : train_rows).push_back(static_cast<Eigen::Index>(k));
  if (train_rows.empty()) throw Error("distill.empty", "no training records after the held-out split");

  auto gather = [&](const std::vector<Eigen::Index>& rows, std::size_t b, std::size_t e, nn::Matrix& x, std::vector<int>& y) {
    x.resize(static_cast<Eigen::Index>(e - b), ds.input_dim());
    y.resize(e - b);
    for (std::size_t k = b; k < e; ++k) {
      x.row(static_cast<Eigen::Index>(k - b)) = ds.inputs.row(rows[k]);
      y[k - b] = ds.actions[static_cast<std::size_t>(rows[k])];
    }
  };

  Rng rng(cfg.seed);
  DistillResult res;
  res.student = StudentPolicy(ds.obs_dim, ds.embedding_dim, cfg.hidden, rng);
  nn::Mlp& net = res.student.actor().net();
  const nn::ParamRefs params = net.parameters();
  nn::Adam adam({.lr = cfg.lr});
  nn::Matrix x_all, x;
  std::vector<int> y_all, y;
  gather(train_rows, 0, train_rows.size(), x_all, y_all);
  const std::size_t batch = cfg.batch_size > 0 ? static_cast<std::size_t>(cfg.batch_size) : train_rows.size();
  std::vector<Eigen::Index> order = train_rows;
  nn::Mlp::Cache cache;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    res.train_loss.push_back(nn::cross_entropy(net.forward(x_all), y_all).loss);
    if (batch < order.size()) rng.shuffle(order);
    for (std::size_t b = 0; b < order.size(); b += batch) {
      gather(order, b, std::min(order.size(), b + batch), x, y);
      nn::zero_grad(params);
      const auto lg = nn::cross_entropy(net.forward(x, cache), y);
      net.backward(cache, lg.grad);
      if (!nn::all_finite(params)) throw Error("train.nonfinite", "non-finite student gradient");
      if (cfg.optimizer == "sgd") {
        for (auto* p : params) p->value -= cfg.lr * p->grad;
      } else {
        adam.step(params);
      }
    }
  }
  res.final_train_loss = nn::cross_entropy(net.forward(x_all), y_all).loss;
  res.train_records = train_rows.size();
  res.heldout_records = held_rows.size();
  res.train_agreement = argmax_agreement(res.student.actor(), x_all, y_all);
  if (!held_rows.empty()) {
    gather(held_rows, 0, held_rows.size(), x, y);
    res.heldout_agreement = argmax_agreement(res.student.actor(), x, y);
  }
  return res;
}

}  // namespace ibts::steering
