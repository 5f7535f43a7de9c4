// nash: structured-pruning laboratory for encoder-decoder transformers.
//
// Subcommands: train, prune, grid, profile, eval, report.
// Exit codes: 0 ok, 1 usage, 2 numerical failure, 3 IO.

#include <CLI11.hpp>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "nash/checkpoint.hpp"
#include "nash/config.hpp"
#include "nash/metrics.hpp"
#include "nash/pipeline.hpp"
#include "nash/profiler.hpp"
#include "nash/report.hpp"
#include "nash/strategies.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nash;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

io::ExperimentConfig load_config(const std::string& path,
                                 const std::vector<std::string>& sets) {
  io::ExperimentConfig cfg;
  if (!path.empty()) {
    if (!fs::exists(path)) throw IoError("config file not found: " + path);
    cfg = io::ExperimentConfig::load(path);
  }
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--set expects key=value, got: " + kv);
    cfg.set_override(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (const char* env = std::getenv("NASH_SEED")) cfg.seed = std::stoull(env);
  return cfg;
}

json config_echo(const io::ExperimentConfig& cfg) { return cfg.to_json(); }

double final_metric_of(const model::Seq2SeqModel& m, const io::ExperimentConfig& cfg) {
  return pipeline::evaluate_em(m, cfg.task, cfg.train.eval_examples,
                               static_cast<int>(taskgen::max_target_len(cfg.task)) + 8);
}

model::Seq2SeqModel require_checkpoint(const fs::path& dir, const char* what) {
  if (!io::checkpoint_exists(dir))
    throw IoError(std::string(what) + " checkpoint not found under " + dir.string());
  return io::load_checkpoint(dir);
}

// ---------------------------------------------------------------- train ----

int cmd_train(const io::ExperimentConfig& cfg) {
  cfg.model.validate();
  fs::path out = cfg.out_dir;
  fs::create_directories(out);
  num::Rng rng(cfg.seed);
  model::Seq2SeqModel m = model::Seq2SeqModel::init(cfg.model, rng);

  pipeline::TeacherOptions opts;
  opts.loop.lr = cfg.train.lr;
  opts.loop.weight_decay = cfg.train.weight_decay;
  opts.loop.batch_size = cfg.train.batch_size;
  opts.loop.eval_examples = cfg.train.eval_examples;
  opts.max_steps = cfg.train.max_steps;
  opts.eval_every = cfg.train.eval_every;
  opts.target_metric = cfg.train.target_metric;
  opts.patience = cfg.train.patience;

  io::MetricsCsv csv(out / "metrics.csv");
  pipeline::TrainResult res = pipeline::train_teacher(m, cfg.task, opts, &csv, cfg.seed);
  csv.flush();
  io::save_checkpoint(out / "checkpoint", m);
  io::write_json(out / "run.json", json{{"schema_version", 1},
                                        {"command", "train"},
                                        {"seed", cfg.seed},
                                        {"task", taskgen::task_name(cfg.task.kind)},
                                        {"final_eval", res.final_eval},
                                        {"steps_run", res.steps_run},
                                        {"config", config_echo(cfg)}});
  std::cout << "teacher trained: eval=" << res.final_eval << " steps=" << res.steps_run
            << " -> " << (out / "checkpoint").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- prune ----

pipeline::PipelineOptions build_pipeline_options(const io::ExperimentConfig& cfg,
                                                 const model::Seq2SeqModel& teacher) {
  pipeline::PipelineOptions opts;
  auto kind = cfg.selection_strategy();
  int64_t L = teacher.config.l_dec;
  int64_t d_s = cfg.prune.d_s;
  if (kind == strategies::StrategyKind::automatic_l0 ||
      kind == strategies::StrategyKind::uniform_width) {
    opts.plan = strategies::select_layers(strategies::StrategyKind::none, L, L);
  } else {
    opts.plan = strategies::select_layers(kind, L, d_s);
  }
  opts.schedule.warmup_steps = cfg.prune.warmup_steps;
  opts.schedule.total_prune_steps = cfg.prune.total_prune_steps;
  opts.schedule.finetune_steps = cfg.prune.finetune_steps;
  opts.schedule.t_final = cfg.prune.t_final;
  opts.schedule.eval_every = cfg.prune.eval_every;
  opts.weights.lambda_enc = cfg.prune.lambda_enc;
  opts.weights.lambda_dec = cfg.prune.lambda_dec;
  opts.weights.temperature = cfg.prune.temperature;
  opts.weights.kld_direction = cfg.prune.kld_direction == "teacher_first"
                                   ? pipeline::LossWeights::KldDirection::teacher_first
                                   : pipeline::LossWeights::KldDirection::student_first;
  opts.reg_lr = cfg.prune.reg_lr;
  opts.train.lr = cfg.train.lr;
  opts.train.gate_lr = cfg.train.gate_lr;
  opts.train.weight_decay = cfg.train.weight_decay;
  opts.train.batch_size = cfg.train.batch_size;
  opts.train.eval_examples = cfg.train.eval_examples;

  if (cfg.prune.encoder == "uniform_width" &&
      kind != strategies::StrategyKind::automatic_l0) {
    opts.frozen_gates =
        strategies::encoder_uniform_width(teacher.config, cfg.prune.width_fraction);
  } else if (cfg.gates_enabled()) {
    gates::GateConfig gc = cfg.resolved_gate_config();
    gc.alpha_init = cfg.prune.alpha_init;
    opts.gate_cfg = gc;
  }
  return opts;
}

int cmd_prune(const io::ExperimentConfig& cfg) {
  fs::path out = cfg.out_dir;
  fs::create_directories(out);
  model::Seq2SeqModel teacher = require_checkpoint(cfg.teacher_dir, "teacher");
  pipeline::PipelineOptions opts = build_pipeline_options(cfg, teacher);

  io::MetricsCsv csv(out / "metrics.csv");
  pipeline::PipelineResult res =
      pipeline::nash_prune_pipeline(teacher, cfg.task, opts, &csv, cfg.seed);
  csv.flush();
  io::save_checkpoint(out / "checkpoint", res.pruned,
                      res.gate_set ? &*res.gate_set : nullptr);

  json plan = json::array();
  for (int64_t i : opts.plan.selected) plan.push_back(i);
  io::write_json(out / "run.json",
                 json{{"schema_version", 1},
                      {"command", "prune"},
                      {"seed", cfg.seed},
                      {"task", taskgen::task_name(cfg.task.kind)},
                      {"strategy", cfg.prune.select},
                      {"encoder_strategy", cfg.prune.encoder},
                      {"d_s", opts.plan.student_depth()},
                      {"plan", plan},
                      {"t_final", cfg.prune.t_final},
                      {"terminal_s_hat", res.terminal_s_hat},
                      {"achieved_sparsity", res.achieved_sparsity},
                      {"final_eval", res.final_eval},
                      {"teacher_eval", res.teacher_eval},
                      {"steps_run", res.steps_run},
                      {"config", config_echo(cfg)}});
  std::cout << "pruned: eval=" << res.final_eval << " s_hat=" << res.terminal_s_hat
            << " achieved=" << res.achieved_sparsity << " -> "
            << (out / "checkpoint").string() << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- eval ----

int cmd_eval(const io::ExperimentConfig& cfg, const std::string& model_dir) {
  fs::path dir = model_dir.empty() ? fs::path(cfg.teacher_dir) : fs::path(model_dir);
  model::Seq2SeqModel m = require_checkpoint(dir, "model");

  std::vector<int64_t> idx;
  for (int64_t i = 0; i < cfg.task.eval_samples; ++i)
    idx.push_back(cfg.task.train_samples + i);
  taskgen::Batch batch = taskgen::make_batch(cfg.task, idx);
  infer::DecodeConfig dc = cfg.decode_config();
  dc.max_new_tokens = static_cast<int>(taskgen::max_target_len(cfg.task)) + 8;
  auto out_ids = infer::decode(m, batch.src, dc);
  std::vector<std::string> pred;
  for (const auto& ids : out_ids) pred.push_back(taskgen::decode_bytes(ids));
  double em = taskgen::exact_match(pred, batch.tgt_text);
  double acc = taskgen::token_accuracy(pred, batch.tgt_text);
  double rouge = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    rouge += taskgen::rouge_l(pred[i], batch.tgt_text[i]).f1;
  rouge /= static_cast<double>(pred.size());

  fs::path out = cfg.out_dir;
  fs::create_directories(out);
  io::write_json(out / "eval.json", json{{"schema_version", 1},
                                         {"command", "eval"},
                                         {"model_dir", dir.string()},
                                         {"examples", idx.size()},
                                         {"exact_match", em},
                                         {"token_accuracy", acc},
                                         {"rouge_l_f1", rouge}});
  std::cout << "eval: em=" << em << " token_acc=" << acc << " rougeL=" << rouge << "\n";
  return kExitOk;
}

// -------------------------------------------------------------- profile ----

class Lockfile {
 public:
  explicit Lockfile(const fs::path& p) : path_(p) {
    fd_ = ::open(p.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw CLI::ValidationError("another profile run owns " + p.string() +
                                 " (remove the lockfile if stale)");
  }
  ~Lockfile() {
    if (fd_ >= 0) {
      ::close(fd_);
      fs::remove(path_);
    }
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

int cmd_profile(const io::ExperimentConfig& cfg, const std::string& pruned_dir) {
  fs::path out = cfg.out_dir;
  fs::create_directories(out);
  Lockfile lock(out / "profile.lock");

  model::Seq2SeqModel m = require_checkpoint(cfg.teacher_dir, "model");

  auto report = infer::profile_components(m, cfg.profile.src_len, cfg.profile.gen_len,
                                          cfg.profile.repeats, cfg.profile.batch_size,
                                          cfg.seed);
  infer::write_profile_csv(out / "profile.csv", report);

  // width-varied configurations for the per-layer timing sweep
  std::vector<std::pair<std::string, model::ModelConfig>> configs;
  model::ModelConfig base = m.config;
  configs.emplace_back("ref", base);
  model::ModelConfig half_ff = base;
  half_ff.d_ff = std::max<int64_t>(1, base.d_ff / 2);
  configs.emplace_back("half_dff", half_ff);
  model::ModelConfig half_heads = base;
  half_heads.n_heads = std::max<int64_t>(1, base.n_heads / 2);
  half_heads.d_model = half_heads.n_heads * base.d_head;
  configs.emplace_back("half_heads", half_heads);
  auto sweep = infer::seq_len_sweep(configs, cfg.profile.seq_lens, cfg.profile.repeats,
                                    cfg.seed);
  infer::write_sweep_csv(out / "sweep.csv", sweep);

  model::Seq2SeqModel pruned =
      pruned_dir.empty() ? m.clone() : require_checkpoint(pruned_dir, "pruned");
  infer::DecodeConfig dc = cfg.decode_config();
  dc.max_new_tokens = static_cast<int>(taskgen::max_target_len(cfg.task)) + 8;
  auto speed = infer::measure_speedup(m, pruned, cfg.task,
                                      std::min<int64_t>(cfg.task.eval_samples, 32), dc,
                                      std::max(5, cfg.profile.repeats));
  infer::write_speedup_json(out / "speedup.json", speed);

  std::cout << "profile: wall_ns_per_token=" << report.wall_ns_per_token
            << " speedup=" << speed.speedup << " -> " << out.string() << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- grid ----

struct GridCell {
  std::string id;
  std::string component;
  bool depth = false;
  double sparsity = 0.0;
  fs::path dir;
};

pid_t launch_prune(const fs::path& config_path) {
  std::string self = fs::read_symlink("/proc/self/exe").string();
  pid_t pid = ::fork();
  if (pid < 0) throw IoError("fork failed");
  if (pid == 0) {
    std::string cfg_str = config_path.string();
    const char* argv[] = {self.c_str(), "prune", "--config", cfg_str.c_str(), nullptr};
    ::execv(self.c_str(), const_cast<char* const*>(argv));
    _exit(127);
  }
  return pid;
}

// runs one `prune` process per config, at most `jobs` concurrently
std::vector<int> run_cell_processes(const std::vector<fs::path>& configs, int jobs) {
  jobs = std::max(1, jobs);
  std::vector<int> codes(configs.size(), -1);
  std::map<pid_t, size_t> running;
  size_t next = 0;
  auto reap = [&]() {
    int status = 0;
    pid_t pid = ::waitpid(-1, &status, 0);
    auto it = running.find(pid);
    if (it == running.end()) return;
    codes[it->second] = WIFEXITED(status) ? WEXITSTATUS(status) : 128;
    running.erase(it);
  };
  while (next < configs.size() || !running.empty()) {
    while (next < configs.size() && running.size() < static_cast<size_t>(jobs)) {
      running[launch_prune(configs[next])] = next;
      ++next;
    }
    if (!running.empty()) reap();
  }
  return codes;
}

int cmd_grid(const io::ExperimentConfig& cfg) {
  fs::path out = cfg.out_dir;
  fs::create_directories(out / "cells");
  model::Seq2SeqModel teacher = require_checkpoint(cfg.teacher_dir, "teacher");

  std::vector<GridCell> cells;
  for (const auto& comp : cfg.grid.components)
    for (bool depth : cfg.grid.depth_pruning)
      for (double s : cfg.grid.sparsities) {
        GridCell c;
        c.component = comp;
        c.depth = depth;
        c.sparsity = s;
        c.id = comp + (depth ? "_depth" : "_nodepth") + "_s" + io::format_double(s);
        c.dir = out / "cells" / c.id;
        cells.push_back(std::move(c));
      }

  // each cell: CoFi-style width gates on one component, sublayer gates when
  // depth pruning is on; run as separate OS processes, at most --jobs at once
  std::vector<fs::path> cell_configs;
  for (const auto& cell : cells) {
    io::ExperimentConfig cc = cfg;
    cc.out_dir = cell.dir.string();
    cc.prune.select = "none";
    cc.prune.encoder = "";
    cc.prune.gate_scope = cell.component == "encoder" ? "encoder" : "decoder";
    cc.prune.gate_width = true;
    cc.prune.gate_layers = cell.depth;
    cc.prune.t_final = cell.sparsity;
    fs::create_directories(cell.dir);
    io::write_json(cell.dir / "config.json", cc.to_json());
    cell_configs.push_back(cell.dir / "config.json");
  }
  std::vector<int> codes = run_cell_processes(cell_configs, cfg.grid.jobs);
  std::vector<std::pair<GridCell, int>> results;
  for (size_t i = 0; i < cells.size(); ++i) {
    results.emplace_back(cells[i], codes[i]);
    if (codes[i] != 0)
      std::cerr << "grid cell " << cells[i].id << " failed with exit code " << codes[i]
                << "\n";
  }

  // aggregate (sparsity, speedup, quality); speed measured against the teacher
  std::ofstream gridcsv(out / "grid_report.csv");
  gridcsv << "cell,component,depth_pruning,target_sparsity,achieved_sparsity,s_hat,"
             "eval_metric,speedup,status\n";
  std::vector<io::ScatterPoint> points;
  infer::DecodeConfig dc = cfg.decode_config();
  dc.max_new_tokens = static_cast<int>(taskgen::max_target_len(cfg.task)) + 8;
  for (const auto& [cell, rc] : results) {
    if (rc != 0) {
      gridcsv << cell.id << ',' << cell.component << ',' << cell.depth << ','
              << io::format_double(cell.sparsity) << ",,,,,failed\n";
      continue;
    }
    json run = io::read_json(cell.dir / "run.json");
    model::Seq2SeqModel pruned = io::load_checkpoint(cell.dir / "checkpoint");
    auto speed = infer::measure_speedup(teacher, pruned, cfg.task,
                                        std::min<int64_t>(cfg.task.eval_samples, 32), dc, 5);
    gridcsv << cell.id << ',' << cell.component << ',' << cell.depth << ','
            << io::format_double(cell.sparsity) << ','
            << io::format_double(run["achieved_sparsity"].get<double>()) << ','
            << io::format_double(run["terminal_s_hat"].get<double>()) << ','
            << io::format_double(run["final_eval"].get<double>()) << ','
            << io::format_double(speed.speedup) << ",ok\n";
    points.push_back(
        {speed.speedup, run["final_eval"].get<double>(), cell.id});
  }
  gridcsv.close();
  std::ofstream svg(out / "grid_scatter.svg");
  svg << io::render_svg_scatter(points, "speedup", "eval_metric", "pruning grid");
  std::cout << "grid: " << cells.size() << " cells -> " << (out / "grid_report.csv").string()
            << "\n";
  return kExitOk;
}

// --------------------------------------------------------------- report ----

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_csv,
               const std::string& out_svg) {
  std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
  auto rows = io::merge_runs(dirs, out_csv.empty() ? fs::path() : fs::path(out_csv));
  if (!out_svg.empty()) {
    std::vector<io::ScatterPoint> points;
    for (const auto& row : rows) {
      auto sp = row.find("speedup");
      auto ev = row.find("final_eval");
      if (sp == row.end() || ev == row.end()) continue;
      io::ScatterPoint p;
      p.x = std::stod(sp->second);
      p.y = std::stod(ev->second);
      auto label = row.find("strategy");
      p.label = label != row.end() ? label->second : row.at("run_dir");
      points.push_back(std::move(p));
    }
    std::ofstream f(out_svg);
    if (!f) throw IoError("cannot write " + out_svg);
    f << io::render_svg_scatter(points, "speedup", "quality", "runs");
  }
  std::cout << "report: " << rows.size() << " runs merged\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structured pruning laboratory for encoder-decoder transformers"};
  app.require_subcommand(1);

  std::string config_path, model_dir, pruned_dir, out_csv, out_svg;
  std::vector<std::string> sets, run_dirs;

  auto add_common = [&](CLI::App* sub, bool config_required = true) {
    auto* opt = sub->add_option("--config", config_path, "experiment config (JSON)");
    if (config_required) opt->required();
    sub->add_option("--set", sets, "override config values as dotted key=value")
        ->take_all();
  };

  CLI::App* train = app.add_subcommand("train", "fine-tune a dense teacher on a task");
  add_common(train);
  CLI::App* prune = app.add_subcommand("prune", "run the pruning pipeline on a teacher");
  add_common(prune);
  CLI::App* grid = app.add_subcommand(
      "grid", "four-case component/depth/sparsity grid, one process per cell");
  add_common(grid);
  CLI::App* profile =
      app.add_subcommand("profile", "component timings, seq-len sweep, speedup");
  add_common(profile);
  profile->add_option("--pruned", pruned_dir, "pruned checkpoint for the speedup ratio");
  CLI::App* eval = app.add_subcommand("eval", "decode the eval split and score it");
  add_common(eval);
  eval->add_option("--model-dir", model_dir, "checkpoint to evaluate (default teacher_dir)");
  CLI::App* report = app.add_subcommand("report", "merge run dirs into one table");
  report->add_option("dirs", run_dirs, "run directories")->required();
  report->add_option("--csv", out_csv, "merged CSV path");
  report->add_option("--svg", out_svg, "quality-vs-speedup scatter SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (report->parsed()) return cmd_report(run_dirs, out_csv, out_svg);
    io::ExperimentConfig cfg = load_config(config_path, sets);
    if (train->parsed()) return cmd_train(cfg);
    if (prune->parsed()) return cmd_prune(cfg);
    if (grid->parsed()) return cmd_grid(cfg);
    if (profile->parsed()) return cmd_profile(cfg, pruned_dir);
    if (eval->parsed()) return cmd_eval(cfg, model_dir);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const num::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
