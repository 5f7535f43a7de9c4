#include "nash/strategies.hpp"

namespace nash::strategies {

gates::GateSet encoder_uniform_width(const model::ModelConfig& cfg, double fraction) {
  if (fraction < 0.0 || fraction > 1.0)
    throw num::ContractError("encoder_uniform_width: fraction must lie in [0,1]");
  auto stride_zeros = [&](int64_t count) {
    std::vector<int64_t> zeros;
    double acc = 0.0;
    for (int64_t j = 0; j < count; ++j) {
      acc += fraction;
      if (acc >= 1.0 - 1e-12) {
        zeros.push_back(j);
        acc -= 1.0;
      }
    }
    return zeros;
  };
  std::vector<std::vector<int64_t>> zero_heads, zero_units;
  for (int64_t i = 0; i < cfg.l_enc; ++i) {
    zero_heads.push_back(stride_zeros(cfg.n_heads));
    zero_units.push_back(stride_zeros(cfg.d_ff));
  }
  gates::GateDims dims;
  dims.layers = cfg.l_enc;
  dims.n_heads = cfg.n_heads;
  dims.d_ff = cfg.d_ff;
  dims.d_model = cfg.d_model;
  dims.d_head = cfg.d_head;
  dims.has_cross = false;
  return gates::GateSet::frozen_pattern(dims, zero_heads, zero_units);
}

AutoPruneResult automatic_l0_depth_prune(const model::Seq2SeqModel& teacher,
                                         const taskgen::TaskSpec& task,
                                         double target_sparsity,
                                         const pipeline::PruneSchedule& schedule,
                                         const pipeline::TrainLoopOptions& train,
                                         const pipeline::LossWeights& weights,
                                         double reg_lr, double alpha_init,
                                         io::MetricsCsv* csv, uint64_t seed) {
  pipeline::PipelineOptions opts;
  opts.plan = select_layers(StrategyKind::none, teacher.config.l_dec, teacher.config.l_dec);
  opts.schedule = schedule;
  opts.schedule.t_final = target_sparsity;
  opts.weights = weights;
  gates::GateConfig gc;
  gc.scope = gates::GateConfig::Scope::decoder;
  gc.width_gates = false;  // isolate the depth comparison
  gc.layer_gates = true;
  gc.alpha_init = alpha_init;
  opts.gate_cfg = gc;
  opts.reg_lr = reg_lr;
  opts.train = train;

  pipeline::PipelineResult res = pipeline::nash_prune_pipeline(teacher, task, opts, csv, seed);

  AutoPruneResult out;
  out.target_sparsity = target_sparsity;
  out.terminal_s_hat = res.terminal_s_hat;
  out.achieved_sparsity = res.achieved_sparsity;
  out.eval_metric = res.final_eval;
  for (const auto& layer : res.pruned.decoder) {
    if (layer.self_attn.enabled && !layer.self_attn.heads.empty()) ++out.remaining_self;
    if (layer.cross_attn.enabled && !layer.cross_attn.heads.empty()) ++out.remaining_cross;
    if (layer.ffn.enabled) ++out.remaining_ffn;
  }
  return out;
}

}  // namespace nash::strategies
