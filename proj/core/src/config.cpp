#include "nash/config.hpp"

#include <fstream>
#include <set>

namespace nash::io {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (auto& [k, v] : j.items())
    if (!allowed.count(k))
      throw std::runtime_error("config: unknown key \"" + k + "\" in " + where);
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  reject_unknown(j, {"schema_version", "seed", "out_dir", "teacher_dir", "task", "model",
                     "train", "prune", "decode", "profile", "grid"},
                 "top level");
  get_if(j, "seed", c.seed);
  get_if(j, "out_dir", c.out_dir);
  get_if(j, "teacher_dir", c.teacher_dir);

  if (j.contains("task")) {
    const json& t = j["task"];
    reject_unknown(t,
                   {"kind", "alphabet", "min_len", "max_len", "num_fields", "value_len",
                    "train_samples", "eval_samples", "seed"},
                   "task");
    std::string kind = taskgen::task_name(c.task.kind);
    get_if(t, "kind", kind);
    c.task.kind = taskgen::parse_task(kind);
    get_if(t, "alphabet", c.task.alphabet);
    get_if(t, "min_len", c.task.min_len);
    get_if(t, "max_len", c.task.max_len);
    get_if(t, "num_fields", c.task.num_fields);
    get_if(t, "value_len", c.task.value_len);
    get_if(t, "train_samples", c.task.train_samples);
    get_if(t, "eval_samples", c.task.eval_samples);
    get_if(t, "seed", c.task.seed);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m,
                   {"l_enc", "l_dec", "n_heads", "d_model", "d_head", "d_ff", "vocab_size",
                    "max_len", "dropout_p", "tie_embeddings"},
                   "model");
    get_if(m, "l_enc", c.model.l_enc);
    get_if(m, "l_dec", c.model.l_dec);
    get_if(m, "n_heads", c.model.n_heads);
    get_if(m, "d_model", c.model.d_model);
    get_if(m, "d_head", c.model.d_head);
    get_if(m, "d_ff", c.model.d_ff);
    get_if(m, "vocab_size", c.model.vocab_size);
    get_if(m, "max_len", c.model.max_len);
    get_if(m, "dropout_p", c.model.dropout_p);
    get_if(m, "tie_embeddings", c.model.tie_embeddings);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t,
                   {"lr", "gate_lr", "weight_decay", "batch_size", "max_steps", "eval_every",
                    "target_metric", "patience", "eval_examples"},
                   "train");
    get_if(t, "lr", c.train.lr);
    get_if(t, "gate_lr", c.train.gate_lr);
    get_if(t, "weight_decay", c.train.weight_decay);
    get_if(t, "batch_size", c.train.batch_size);
    get_if(t, "max_steps", c.train.max_steps);
    get_if(t, "eval_every", c.train.eval_every);
    get_if(t, "target_metric", c.train.target_metric);
    get_if(t, "patience", c.train.patience);
    get_if(t, "eval_examples", c.train.eval_examples);
  }
  if (j.contains("prune")) {
    const json& p = j["prune"];
    reject_unknown(p,
                   {"select", "d_s", "encoder", "width_fraction", "t_final", "warmup_steps",
                    "total_prune_steps", "finetune_steps", "eval_every", "lambda_enc",
                    "lambda_dec", "kld_direction", "temperature", "reg_lr", "alpha_init",
                    "gate_scope", "gate_width", "gate_layers"},
                   "prune");
    get_if(p, "select", c.prune.select);
    get_if(p, "d_s", c.prune.d_s);
    get_if(p, "encoder", c.prune.encoder);
    get_if(p, "width_fraction", c.prune.width_fraction);
    get_if(p, "t_final", c.prune.t_final);
    get_if(p, "warmup_steps", c.prune.warmup_steps);
    get_if(p, "total_prune_steps", c.prune.total_prune_steps);
    get_if(p, "finetune_steps", c.prune.finetune_steps);
    get_if(p, "eval_every", c.prune.eval_every);
    get_if(p, "lambda_enc", c.prune.lambda_enc);
    get_if(p, "lambda_dec", c.prune.lambda_dec);
    get_if(p, "kld_direction", c.prune.kld_direction);
    get_if(p, "temperature", c.prune.temperature);
    get_if(p, "reg_lr", c.prune.reg_lr);
    get_if(p, "alpha_init", c.prune.alpha_init);
    get_if(p, "gate_scope", c.prune.gate_scope);
    get_if(p, "gate_width", c.prune.gate_width);
    get_if(p, "gate_layers", c.prune.gate_layers);
  }
  if (j.contains("decode")) {
    const json& d = j["decode"];
    reject_unknown(d, {"strategy", "beam_size", "max_new_tokens", "length_norm"}, "decode");
    get_if(d, "strategy", c.decode.strategy);
    get_if(d, "beam_size", c.decode.beam_size);
    get_if(d, "max_new_tokens", c.decode.max_new_tokens);
    get_if(d, "length_norm", c.decode.length_norm);
  }
  if (j.contains("profile")) {
    const json& p = j["profile"];
    reject_unknown(p, {"src_len", "gen_len", "repeats", "batch_size", "seq_lens"}, "profile");
    get_if(p, "src_len", c.profile.src_len);
    get_if(p, "gen_len", c.profile.gen_len);
    get_if(p, "repeats", c.profile.repeats);
    get_if(p, "batch_size", c.profile.batch_size);
    get_if(p, "seq_lens", c.profile.seq_lens);
  }
  if (j.contains("grid")) {
    const json& g = j["grid"];
    reject_unknown(g, {"components", "depth_pruning", "sparsities", "jobs"}, "grid");
    get_if(g, "components", c.grid.components);
    if (g.contains("depth_pruning"))
      c.grid.depth_pruning = g["depth_pruning"].get<std::vector<bool>>();
    get_if(g, "sparsities", c.grid.sparsities);
    get_if(g, "jobs", c.grid.jobs);
  }
  // semantic model validation happens at model construction, so a sequence
  // of --set overrides may pass through inconsistent intermediate states
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path.string());
  json j;
  f >> j;
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  return json{
      {"schema_version", 1},
      {"seed", seed},
      {"out_dir", out_dir},
      {"teacher_dir", teacher_dir},
      {"task",
       {{"kind", taskgen::task_name(task.kind)},
        {"alphabet", task.alphabet},
        {"min_len", task.min_len},
        {"max_len", task.max_len},
        {"num_fields", task.num_fields},
        {"value_len", task.value_len},
        {"train_samples", task.train_samples},
        {"eval_samples", task.eval_samples},
        {"seed", task.seed}}},
      {"model",
       {{"l_enc", model.l_enc},
        {"l_dec", model.l_dec},
        {"n_heads", model.n_heads},
        {"d_model", model.d_model},
        {"d_head", model.d_head},
        {"d_ff", model.d_ff},
        {"vocab_size", model.vocab_size},
        {"max_len", model.max_len},
        {"dropout_p", model.dropout_p},
        {"tie_embeddings", model.tie_embeddings}}},
      {"train",
       {{"lr", train.lr},
        {"gate_lr", train.gate_lr},
        {"weight_decay", train.weight_decay},
        {"batch_size", train.batch_size},
        {"max_steps", train.max_steps},
        {"eval_every", train.eval_every},
        {"target_metric", train.target_metric},
        {"patience", train.patience},
        {"eval_examples", train.eval_examples}}},
      {"prune",
       {{"select", prune.select},
        {"d_s", prune.d_s},
        {"encoder", prune.encoder},
        {"width_fraction", prune.width_fraction},
        {"t_final", prune.t_final},
        {"warmup_steps", prune.warmup_steps},
        {"total_prune_steps", prune.total_prune_steps},
        {"finetune_steps", prune.finetune_steps},
        {"eval_every", prune.eval_every},
        {"lambda_enc", prune.lambda_enc},
        {"lambda_dec", prune.lambda_dec},
        {"kld_direction", prune.kld_direction},
        {"temperature", prune.temperature},
        {"reg_lr", prune.reg_lr},
        {"alpha_init", prune.alpha_init},
        {"gate_scope", prune.gate_scope},
        {"gate_width", prune.gate_width},
        {"gate_layers", prune.gate_layers}}},
      {"decode",
       {{"strategy", decode.strategy},
        {"beam_size", decode.beam_size},
        {"max_new_tokens", decode.max_new_tokens},
        {"length_norm", decode.length_norm}}},
      {"profile",
       {{"src_len", profile.src_len},
        {"gen_len", profile.gen_len},
        {"repeats", profile.repeats},
        {"batch_size", profile.batch_size},
        {"seq_lens", profile.seq_lens}}},
      {"grid",
       {{"components", grid.components},
        {"depth_pruning", grid.depth_pruning},
        {"sparsities", grid.sparsities},
        {"jobs", grid.jobs}}}};
}

void ExperimentConfig::set_override(const std::string& key, const std::string& value) {
  json j = to_json();
  json* cur = &j;
  size_t start = 0;
  while (true) {
    size_t dot = key.find('.', start);
    std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (dot == std::string::npos) {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::parse_error&) {
        parsed = value;  // bare strings allowed
      }
      (*cur)[part] = parsed;
      break;
    }
    cur = &(*cur)[part];
    start = dot + 1;
  }
  *this = from_json(j);
}

infer::DecodeConfig ExperimentConfig::decode_config() const {
  infer::DecodeConfig d;
  if (decode.strategy == "greedy")
    d.strategy = infer::DecodeConfig::Strategy::greedy;
  else if (decode.strategy == "beam")
    d.strategy = infer::DecodeConfig::Strategy::beam;
  else
    throw std::runtime_error("config: decode.strategy must be greedy or beam");
  d.beam_size = decode.beam_size;
  d.max_new_tokens = decode.max_new_tokens;
  d.length_norm = decode.length_norm;
  return d;
}

strategies::StrategyKind ExperimentConfig::selection_strategy() const {
  return strategies::parse_strategy(prune.select);
}

gates::GateConfig ExperimentConfig::resolved_gate_config() const {
  gates::GateConfig g;
  g.alpha_init = prune.alpha_init;
  if (!prune.gate_scope.empty()) {
    g.scope = prune.gate_scope == "encoder" ? gates::GateConfig::Scope::encoder
                                            : gates::GateConfig::Scope::decoder;
    g.width_gates = prune.gate_width;
    g.layer_gates = prune.gate_layers;
    return g;
  }
  if (selection_strategy() == strategies::StrategyKind::automatic_l0) {
    // sublayer-granular decoder gates; width gates stay frozen to isolate the
    // depth-selection comparison
    g.scope = gates::GateConfig::Scope::decoder;
    g.width_gates = false;
    g.layer_gates = true;
    return g;
  }
  g.scope = gates::GateConfig::Scope::encoder;
  g.width_gates = true;
  g.layer_gates = false;
  return g;
}

bool ExperimentConfig::gates_enabled() const {
  if (!prune.gate_scope.empty()) return prune.gate_width || prune.gate_layers;
  if (selection_strategy() == strategies::StrategyKind::automatic_l0) return true;
  return prune.encoder == "l0";
}

}  // namespace nash::io
