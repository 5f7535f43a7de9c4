#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nash/decode.hpp"
#include "nash/gates.hpp"
#include "nash/model.hpp"
#include "nash/selection.hpp"
#include "nash/taskgen.hpp"

namespace nash::io {

struct TrainConfig {
  double lr = 1e-3;
  double gate_lr = 0.1;
  double weight_decay = 0.0;
  int64_t batch_size = 8;
  int64_t max_steps = 3000;
  int64_t eval_every = 200;
  double target_metric = 0.995;  // stop early once eval EM reaches this
  int64_t patience = 3;          // consecutive evals without improvement
  int64_t eval_examples = 64;
};

struct PruneConfig {
  std::string select = "uniform";  // uniform | low | high | none | auto
  int64_t d_s = 2;
  std::string encoder = "l0";  // l0 | uniform_width | none
  double width_fraction = 0.25;
  double t_final = 0.30;
  int64_t warmup_steps = 1000;
  int64_t total_prune_steps = 3000;
  int64_t finetune_steps = 1000;
  int64_t eval_every = 200;
  double lambda_enc = 0.001;
  double lambda_dec = 0.001;
  std::string kld_direction = "student_first";
  double temperature = 1.0;
  double reg_lr = 0.01;
  double alpha_init = 2.0;
  // advanced gate placement; empty scope means "derive from select/encoder"
  std::string gate_scope;  // "" | encoder | decoder
  bool gate_width = true;
  bool gate_layers = false;
};

struct DecodeConfigJson {
  std::string strategy = "beam";
  int beam_size = 4;
  int max_new_tokens = 64;
  double length_norm = 0.0;
};

struct ProfileConfig {
  int64_t src_len = 64;
  int64_t gen_len = 64;
  int repeats = 5;
  int64_t batch_size = 8;
  std::vector<int64_t> seq_lens = {1, 8, 64, 256};
};

struct GridConfig {
  std::vector<std::string> components = {"encoder", "decoder"};
  std::vector<bool> depth_pruning = {false, true};
  std::vector<double> sparsities = {0.3};
  int jobs = 1;
};

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir = "runs/out";
  std::string teacher_dir;  // for prune/eval/profile commands
  taskgen::TaskSpec task;
  model::ModelConfig model;
  TrainConfig train;
  PruneConfig prune;
  DecodeConfigJson decode;
  ProfileConfig profile;
  GridConfig grid;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  // dotted-path override, value parsed as JSON when possible, else string
  void set_override(const std::string& key, const std::string& value);

  infer::DecodeConfig decode_config() const;
  strategies::StrategyKind selection_strategy() const;
  gates::GateConfig resolved_gate_config() const;  // scope/width/layers resolved
  bool gates_enabled() const;                      // any learnable gates in stage B
};

}  // namespace nash::io
