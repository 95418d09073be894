// Command-line entry point: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <iostream>

#include "cli_common.hpp"
#include "ibts/env/replay.hpp"
#include "ibts/eval/harness.hpp"
#include "ibts/predictor/dataset.hpp"
#include "ibts/predictor/train.hpp"
#include "ibts/steering/distill.hpp"
#include "ibts/steering/teacher.hpp"

#ifdef IBTS_WITH_SERVER
#include "serve_command.hpp"
#endif

using namespace ibts;
using namespace ibts::cli;
using nlohmann::json;

namespace {

void print_result(const json& j) { std::cout << j.dump() << std::endl; }

int train_pool(const CommonFlags& f) {
  auto cfg = load_config<marl::PoolConfig>(f);
  apply_pool_overrides(cfg, f);
  cfg.validate();
  const auto out = prepare_out(f);
  std::ofstream metrics(out / "metrics.jsonl");
  marl::PoolTrainer trainer(cfg, &metrics, out / "chunks");
  while (!trainer.done()) {
    const auto rep = trainer.run_chunk();
    std::cerr << json{{"team", rep.team}, {"chunk", rep.chunk}, {"env_steps", rep.env_steps}, {"mean_r_inf", rep.mean_r_inf}}.dump() << "\n";
  }
  auto& pool = trainer.pool();
  marl::score_team_pool(pool, cfg.eval_episodes, derive_seed(cfg.seed, 0x5c0e));
  pool.save(out / "pool");
  write_manifest(out, "train-pool", cfg, {cfg.seed}, json::object(), {{"raw_scores", pool.raw_scores}, {"scores", pool.scores}});
  print_result({{"pool", (out / "pool").string()}, {"raw_scores", pool.raw_scores}, {"scores", pool.scores}});
  return 0;
}

int score_pool(const CommonFlags& f, const std::string& pool_dir) {
  require_path((std::filesystem::path(pool_dir) / "pool.json").string(), "team pool");
  auto pool = marl::TeamPool::load(pool_dir);
  const int episodes = f.episodes.value_or(8);
  const std::uint64_t seed = f.seed.value_or(1);
  marl::score_team_pool(pool, episodes, seed);
  const auto out = prepare_out(f);
  pool.save(out / "pool");
  const json cfg{{"episodes", episodes}, {"seed", seed}};
  write_manifest(out, "score-pool", cfg, {seed}, {{"pool", pool_dir}}, {{"raw_scores", pool.raw_scores}, {"scores", pool.scores}});
  print_result({{"pool", (out / "pool").string()}, {"raw_scores", pool.raw_scores}, {"scores", pool.scores}});
  return 0;
}

int gen_predictor_data(const CommonFlags& f, const std::string& pool_dir) {
  auto cfg = load_config<predictor::DatasetConfig>(f);
  if (f.seed) cfg.seed = *f.seed;
  if (f.episodes) cfg.episodes_per_team = *f.episodes;
  require_path((std::filesystem::path(pool_dir) / "pool.json").string(), "team pool");
  const auto pool = marl::TeamPool::load(pool_dir);
  const auto ds = predictor::generate_predictor_dataset(pool, cfg);
  const auto out = prepare_out(f);
  predictor::save_dataset(ds, out / "dataset");
  write_manifest(out, "gen-predictor-data", cfg, {cfg.seed}, {{"pool", pool_dir}}, ds.manifest());
  print_result({{"dataset", (out / "dataset").string()}, {"samples", ds.samples.size()}, {"hash", hex64(ds.hash())}});
  return 0;
}

struct PredictorRunConfig {
  nn::EncoderConfig encoder;
  predictor::PredictorTrainConfig train;
  NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(PredictorRunConfig, encoder, train)
};

int train_predictor(const CommonFlags& f, const std::string& dataset_dir) {
  auto cfg = load_config<PredictorRunConfig>(f);
  if (f.seed) cfg.train.seed = *f.seed;
  if (f.steps) cfg.train.max_epochs = static_cast<int>(*f.steps);
  require_path((std::filesystem::path(dataset_dir) / "dataset.bin").string(), "predictor dataset");
  const auto ds = predictor::load_dataset(dataset_dir);
  const auto out = prepare_out(f);
  std::ofstream metrics(out / "metrics.jsonl");
  const auto res = predictor::train_predictor(ds, cfg.encoder, cfg.train, &metrics);
  res.predictor.save(out / "predictor.ckpt", {{"dataset_hash", hex64(ds.hash())}});
  const json results{{"epochs_run", res.epochs_run},
                     {"best_epoch", res.best_epoch},
                     {"best_val_loss", res.best_val_loss},
                     {"train_accuracy", res.train.accuracy},
                     {"val_accuracy", res.val.accuracy},
                     {"test_accuracy", res.test.accuracy},
                     {"test_loss", res.test.loss}};
  write_manifest(out, "train-predictor", cfg, {cfg.train.seed}, {{"dataset", dataset_dir}}, results);
  print_result(results);
  return 0;
}

int train_teacher(const CommonFlags& f, const std::string& pool_dir, const std::string& predictor_path, std::optional<int> agent) {
  auto cfg = load_config<steering::TeacherConfig>(f);
  if (f.seed) cfg.seed = *f.seed;
  if (f.steps) cfg.total_steps = *f.steps;
  if (agent) cfg.agent = *agent;
  require_path((std::filesystem::path(pool_dir) / "pool.json").string(), "team pool");
  const auto pool = marl::TeamPool::load(pool_dir);
  const auto pred = predictor::TrajectoryPredictor::load(require_path(predictor_path, "predictor checkpoint"));
  const auto out = prepare_out(f);
  std::ofstream metrics(out / "metrics.jsonl");
  const auto teacher = steering::train_teacher(pool, pred, cfg, &metrics, out);
  const auto ckpt = out / ("teacher_" + std::to_string(cfg.agent) + ".ckpt");
  write_manifest(out, "train-teacher", cfg, {cfg.seed}, {{"pool", pool_dir}, {"predictor", predictor_path}},
                 {{"checkpoint", ckpt.string()}, {"hash", hex64(teacher.hash())}});
  print_result({{"teacher", ckpt.string()}, {"hash", hex64(teacher.hash())}});
  return 0;
}

struct DistillRunConfig {
  steering::DistillExportConfig dataset;
  steering::DistillConfig distill;
  NLOHMANN_DEFINE_TYPE_INTRUSIVE_WITH_DEFAULT(DistillRunConfig, dataset, distill)
};

int distill(const CommonFlags& f, const std::vector<std::string>& teacher_paths, const std::string& pool_dir,
            const std::string& predictor_path) {
  auto cfg = load_config<DistillRunConfig>(f);
  if (f.seed) cfg.dataset.seed = cfg.distill.seed = *f.seed;
  if (f.episodes) cfg.dataset.episodes_per_teacher = *f.episodes;
  if (f.steps) cfg.distill.epochs = static_cast<int>(*f.steps);
  if (teacher_paths.empty()) throw Error("distill.teachers", "at least one --teacher checkpoint is required");
  std::vector<steering::TeacherPolicy> teachers;
  for (const auto& p : teacher_paths) teachers.push_back(steering::TeacherPolicy::load(require_path(p, "teacher checkpoint")));
  std::vector<const steering::TeacherPolicy*> ptrs;
  for (const auto& t : teachers) ptrs.push_back(&t);
  require_path((std::filesystem::path(pool_dir) / "pool.json").string(), "team pool");
  const auto pool = marl::TeamPool::load(pool_dir);
  const auto pred = predictor::TrajectoryPredictor::load(require_path(predictor_path, "predictor checkpoint"));
  const auto ds = steering::export_distill_dataset(ptrs, pool, pred, cfg.dataset);
  const auto out = prepare_out(f);
  steering::save_distill_dataset(ds, out / "distill_data");
  const auto res = steering::distill_student(ds, cfg.distill);
  res.student.save(out / "student.ckpt", {{"dataset_hash", hex64(ds.hash())}});
  const json results{{"records", ds.size()},
                     {"final_train_loss", res.final_train_loss},
                     {"train_agreement", res.train_agreement},
                     {"heldout_agreement", res.heldout_agreement}};
  write_manifest(out, "distill", cfg, {cfg.dataset.seed, cfg.distill.seed},
                 {{"teachers", teacher_paths}, {"pool", pool_dir}, {"predictor", predictor_path}}, results);
  print_result(results);
  return 0;
}

int eval_cmd(const CommonFlags& f) {
  auto spec = load_config<eval::EvalSpec>(f);
  if (f.layout) spec.layout = *f.layout;
  if (f.n) spec.n = *f.n;
  if (f.episodes) spec.episodes = *f.episodes;
  if (f.seed) spec.seeds = {*f.seed};
  if (f.steps) spec.steps = static_cast<int>(*f.steps);
  const auto out = prepare_out(f);
  const auto res = eval::run_eval(spec, out);
  write_manifest(out, "eval", spec, spec.seeds, json::object(), res.row);
  print_result(res.row);
  return 0;
}

int sweep_k(const CommonFlags& f, const std::vector<int>& ks) {
  auto cfg = load_config<eval::KSweepConfig>(f);
  apply_pool_overrides(cfg.base, f);
  if (f.seed) cfg.seeds = {*f.seed};
  if (f.episodes) cfg.eval_episodes = *f.episodes;
  if (!ks.empty()) cfg.K_values = ks;
  const auto out = prepare_out(f);
  std::ofstream log(out / "metrics.jsonl");
  const auto table = eval::k_sensitivity_sweep(cfg, out, &log);
  write_manifest(out, "sweep-k", cfg, cfg.seeds, json::object(), table.to_json());
  print_result(table.to_json());
  return 0;
}

int baseline_hack(const CommonFlags& f, std::optional<double> bonus, std::optional<int> window) {
  auto cfg = load_config<eval::HandoffBaselineConfig>(f);
  apply_pool_overrides(cfg.base, f);
  if (f.seed) cfg.seeds = {*f.seed};
  if (f.episodes) cfg.eval_episodes = *f.episodes;
  if (bonus) cfg.bonus = *bonus;
  if (window) cfg.window = *window;
  const auto out = prepare_out(f);
  std::ofstream metrics(out / "metrics.jsonl");
  const auto res = eval::reward_hacking_baseline(cfg, out, &metrics);
  write_manifest(out, "baseline-hack", cfg, cfg.seeds, json::object(), res.row);
  print_result(res.row);
  return 0;
}

int replay_cmd(const std::string& log_path) {
  const auto log = load_replay(require_path(log_path, "replay log"));
  const auto check = verify_replay(log, load_layout(log.layout));
  print_result({{"score", check.simulated_score},
                {"stored_score", log.final_score},
                {"steps", log.actions.size()},
                {"truncated", log.truncated},
                {"matches", check.matches},
                {"first_mismatch_step", check.first_mismatch_step}});
  if (!check.matches) throw Error("replay.mismatch", "re-simulation diverges from " + log_path);
  return 0;
}

int export_table(const std::string& dir, const std::string& out_file) {
  const auto table = eval::collect_table(dir);
  if (table.rows.empty()) throw Error("eval.io", "no scores.jsonl found under " + dir);
  const std::filesystem::path path = out_file.empty() ? std::filesystem::path(dir) / "table.md" : std::filesystem::path(out_file);
  std::ofstream(path) << table.to_text();
  std::ofstream(path.string() + ".json") << table.to_json().dump(2) << "\n";
  print_result({{"table", path.string()}, {"rows", table.rows.size()}});
  return 0;
}

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "Run configuration (JSON)");
  sub->add_option("--seed", f.seed, "Seed override");
  sub->add_option("--layout", f.layout, "Layout name override");
  sub->add_option("--n", f.n, "Agent count override");
  sub->add_option("--out", f.out, "Run output directory");
  sub->add_option("--steps", f.steps, "Step / epoch budget override");
  sub->add_option("--episodes", f.episodes, "Episode count override");
}

int fail(const std::string& code, const std::string& message, int status) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << std::endl;
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Influence-shaped team training, steering and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version()));
  CommonFlags f;
  std::string pool_dir, predictor_path, dataset_dir, log_path, table_dir, table_out, checkpoint_dir, host = "127.0.0.1";
  std::vector<std::string> teachers;
  std::vector<int> ks;
  std::optional<int> agent, window;
  std::optional<double> bonus;
  int port = 8765;
  double step_timeout = 0.0;

  auto* tp = app.add_subcommand("train-pool", "Stage 1: train a diverse team pool");
  auto* sp = app.add_subcommand("score-pool", "Score and normalize a trained pool");
  auto* gd = app.add_subcommand("gen-predictor-data", "Roll out pool teams into labelled trajectory windows");
  auto* tr = app.add_subcommand("train-predictor", "Stage 2: train the trajectory predictor");
  auto* tt = app.add_subcommand("train-teacher", "Stage 3: train one steered teacher position");
  auto* ds = app.add_subcommand("distill", "Stage 4: distill teachers into one student");
  auto* ev = app.add_subcommand("eval", "Evaluate a roster and write a score row plus replays");
  auto* sk = app.add_subcommand("sweep-k", "Event-horizon sensitivity sweep");
  auto* bh = app.add_subcommand("baseline-hack", "MAPPO with a dense handoff bonus");
  auto* sv = app.add_subcommand("serve", "Run the live-play session server");
  auto* rp = app.add_subcommand("replay", "Re-simulate a stored replay log");
  auto* et = app.add_subcommand("export-table", "Collect score rows into one table file");
  for (auto* s : {tp, sp, gd, tr, tt, ds, ev, sk, bh, sv, rp, et}) add_common(s, f);
  for (auto* s : {sp, gd, tt, ds}) s->add_option("--pool", pool_dir, "Team pool directory")->required();
  for (auto* s : {tt, ds}) s->add_option("--predictor", predictor_path, "Predictor checkpoint")->required();
  tr->add_option("--dataset", dataset_dir, "Predictor dataset directory")->required();
  tt->add_option("--agent", agent, "Teacher agent position");
  ds->add_option("--teacher", teachers, "Teacher checkpoint (repeatable)")->required();
  sk->add_option("--k", ks, "Event horizons to sweep");
  bh->add_option("--bonus", bonus, "Reward per handoff");
  bh->add_option("--window", window, "Handoff window in steps");
  sv->add_option("--port", port, "TCP port");
  sv->add_option("--host", host, "Bind address");
  sv->add_option("--checkpoint-dir", checkpoint_dir, "Directory with pool/teacher/student checkpoints");
  sv->add_option("--step-timeout", step_timeout, "Seconds before absent humans stay (0 = wait forever)");
  rp->add_option("--log", log_path, "Replay log (JSON lines)")->required();
  et->add_option("--dir", table_dir, "Run directory to collect")->required();
  et->add_option("--table", table_out, "Output table path (default <dir>/table.md)");

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* s : app.get_subcommands({})) known = known || s->get_name() == argv[1];
    if (!known) return fail("cli.unknown_subcommand", std::string("unknown subcommand '") + argv[1] + "'", 2);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("cli.usage", e.what(), 2);
  }

  try {
    if (*tp) return train_pool(f);
    if (*sp) return score_pool(f, pool_dir);
    if (*gd) return gen_predictor_data(f, pool_dir);
    if (*tr) return train_predictor(f, dataset_dir);
    if (*tt) return train_teacher(f, pool_dir, predictor_path, agent);
    if (*ds) return distill(f, teachers, pool_dir, predictor_path);
    if (*ev) return eval_cmd(f);
    if (*sk) return sweep_k(f, ks);
    if (*bh) return baseline_hack(f, bonus, window);
    if (*rp) return replay_cmd(log_path);
    if (*et) return export_table(table_dir, table_out);
    if (*sv) {
#ifdef IBTS_WITH_SERVER
      return serve_command(f, host, port, checkpoint_dir, step_timeout);
#else
      throw Error("cli.unavailable", "built without the session server (IBTS_BUILD_SERVER=OFF)");
#endif
    }
  } catch (const Error& e) {
    return fail(e.code(), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return fail("cli.usage", "no subcommand", 2);
}
