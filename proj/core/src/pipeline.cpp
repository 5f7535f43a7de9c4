#include "nash/pipeline.hpp"

#include <cmath>

#include "nash/metrics.hpp"

namespace nash::pipeline {

using num::Tensor;

taskgen::Batch sample_batch(const taskgen::TaskSpec& task, int64_t batch_size,
                            num::Rng& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(batch_size));
  for (auto& i : idx) i = static_cast<int64_t>(rng.below(static_cast<uint64_t>(task.train_samples)));
  return taskgen::make_batch(task, idx);
}

double evaluate_em(const model::Seq2SeqModel& m, const taskgen::TaskSpec& task, int64_t n,
                   int max_new_tokens) {
  n = std::min(n, task.eval_samples);
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = task.train_samples + i;
  taskgen::Batch batch = taskgen::make_batch(task, idx);
  infer::DecodeConfig cfg;
  cfg.strategy = infer::DecodeConfig::Strategy::greedy;
  cfg.max_new_tokens = max_new_tokens;
  auto out = infer::greedy_decode(m, batch.src, cfg);
  std::vector<std::string> pred;
  pred.reserve(out.size());
  for (const auto& ids : out) pred.push_back(taskgen::decode_bytes(ids));
  return taskgen::exact_match(pred, batch.tgt_text);
}

namespace {

double check_finite_loss(const Tensor& loss, int64_t step, const char* stage) {
  double v = loss.item();
  if (!std::isfinite(v))
    throw num::NumericalError(std::string("loss diverged (NaN/Inf) at ") + stage +
                              " step " + std::to_string(step));
  return v;
}

int eval_budget(const taskgen::TaskSpec& task) {
  return static_cast<int>(taskgen::max_target_len(task)) + 8;
}

}  // namespace

TrainResult train_teacher(model::Seq2SeqModel& m, const taskgen::TaskSpec& task,
                          const TeacherOptions& opts, io::MetricsCsv* csv, uint64_t seed) {
  num::Rng run_rng(seed);
  num::Rng data_rng = run_rng.fork(1);
  num::Rng dropout_rng = run_rng.fork(2);

  m.set_requires_grad(true);
  num::AdamW optim;
  optim.add_group(m.parameters(), {.lr = opts.loop.lr, .weight_decay = opts.loop.weight_decay});

  TrainResult res;
  double best_eval = -1.0;
  int64_t bad_evals = 0;
  for (int64_t step = 1; step <= opts.max_steps; ++step) {
    taskgen::Batch batch = sample_batch(task, opts.loop.batch_size, data_rng);
    num::Graph graph;
    num::GraphScope scope(&graph);
    model::ForwardOpts fw;
    fw.train = true;
    fw.rng = &dropout_rng;
    model::ForwardTrace trace = model::forward(m, batch.src, batch.tgt_in, nullptr, fw);
    Tensor loss =
        num::cross_entropy(trace.logits, batch.tgt_out.ids, batch.tgt_out.mask);
    double loss_v = check_finite_loss(loss, step, "teacher");
    num::backward(loss);
    optim.step();
    optim.zero_grad();

    std::optional<double> eval;
    if (opts.eval_every > 0 && (step % opts.eval_every == 0 || step == opts.max_steps)) {
      eval = evaluate_em(m, task, opts.loop.eval_examples, eval_budget(task));
      res.final_eval = *eval;
      if (*eval > best_eval + 1e-12) {
        best_eval = *eval;
        bad_evals = 0;
      } else {
        ++bad_evals;
      }
    }
    if (csv) csv->row(step, "teacher", loss_v, loss_v, 0.0, 0.0, 0.0, 0.0, 0.0, eval);
    res.steps_run = step;
    if (eval && *eval >= opts.target_metric) break;
    // patience only engages once the metric has left zero; an early plateau
    // at 0 just means learning has not started yet
    if (eval && best_eval > 0.0 && bad_evals >= opts.patience) break;
  }
  if (res.final_eval == 0.0 && opts.eval_every <= 0)
    res.final_eval = evaluate_em(m, task, opts.loop.eval_examples, eval_budget(task));
  return res;
}

model::Seq2SeqModel build_student(const model::Seq2SeqModel& teacher,
                                  const SelectionPlan& plan) {
  plan.validate();
  if (plan.teacher_depth != static_cast<int64_t>(teacher.decoder.size()))
    throw num::ContractError("build_student: plan depth != teacher decoder depth");
  model::Seq2SeqModel s = teacher.clone();
  std::vector<model::DecoderLayer> picked;
  for (int64_t idx : plan.selected)
    picked.push_back(std::move(s.decoder[static_cast<size_t>(idx - 1)]));
  s.decoder = std::move(picked);
  s.config.l_dec = plan.student_depth();
  return s;
}

namespace {

struct FinetuneResult {
  double final_eval = 0.0;
  int64_t last_step = 0;
};

FinetuneResult finetune(model::Seq2SeqModel& m, const taskgen::TaskSpec& task,
                        const TrainLoopOptions& loop, int64_t steps, int64_t eval_every,
                        int64_t step_base, io::MetricsCsv* csv, num::Rng& data_rng,
                        num::Rng& dropout_rng) {
  FinetuneResult res;
  res.last_step = step_base;
  if (steps <= 0) {
    res.final_eval = evaluate_em(m, task, loop.eval_examples, eval_budget(task));
    return res;
  }
  m.set_requires_grad(true);
  num::AdamW optim;
  optim.add_group(m.parameters(), {.lr = loop.lr, .weight_decay = loop.weight_decay});
  double best_eval = -1.0;
  int64_t bad_evals = 0;
  for (int64_t step = 1; step <= steps; ++step) {
    taskgen::Batch batch = sample_batch(task, loop.batch_size, data_rng);
    num::Graph graph;
    num::GraphScope scope(&graph);
    model::ForwardOpts fw;
    fw.train = true;
    fw.rng = &dropout_rng;
    model::ForwardTrace trace = model::forward(m, batch.src, batch.tgt_in, nullptr, fw);
    Tensor loss = num::cross_entropy(trace.logits, batch.tgt_out.ids, batch.tgt_out.mask);
    double loss_v = check_finite_loss(loss, step, "finetune");
    num::backward(loss);
    optim.step();
    optim.zero_grad();

    std::optional<double> eval;
    if (eval_every > 0 && (step % eval_every == 0 || step == steps)) {
      eval = evaluate_em(m, task, loop.eval_examples, eval_budget(task));
      res.final_eval = *eval;
      if (*eval > best_eval + 1e-12) {
        best_eval = *eval;
        bad_evals = 0;
      } else {
        ++bad_evals;
      }
    }
    res.last_step = step_base + step;
    if (csv)
      csv->row(res.last_step, "finetune", loss_v, loss_v, 0.0, 0.0, 0.0, 0.0, 0.0, eval);
    // convergence proxy: no eval improvement for 3 consecutive evals
    if (eval && best_eval > 0.0 && bad_evals >= 3) break;
  }
  return res;
}

}  // namespace

PipelineResult nash_prune_pipeline(const model::Seq2SeqModel& teacher,
                                   const taskgen::TaskSpec& task,
                                   const PipelineOptions& opts, io::MetricsCsv* csv,
                                   uint64_t seed) {
  opts.schedule.validate();
  num::Rng run_rng(seed);
  num::Rng data_rng = run_rng.fork(11);
  num::Rng dropout_rng = run_rng.fork(12);
  num::Rng gate_rng = run_rng.fork(13);

  // stage A: uniform layer selection builds the student
  model::Seq2SeqModel student = build_student(teacher, opts.plan);
  student.set_requires_grad(true);

  std::optional<gates::GateSet> gate_set;
  if (opts.gate_cfg) {
    gates::GateDims dims;
    const auto& mc = student.config;
    dims.n_heads = mc.n_heads;
    dims.d_ff = mc.d_ff;
    dims.d_model = mc.d_model;
    dims.d_head = mc.d_head;
    if (opts.gate_cfg->scope == gates::GateConfig::Scope::encoder) {
      dims.layers = mc.l_enc;
      dims.has_cross = false;
    } else {
      dims.layers = mc.l_dec;
      dims.has_cross = true;
    }
    gate_set = gates::GateSet::make(*opts.gate_cfg, dims);
  } else if (opts.frozen_gates) {
    gate_set = *opts.frozen_gates;
  }

  gates::LagrangianState lagr = gates::LagrangianState::make(opts.schedule.t_final, opts.reg_lr);
  const bool learn_gates = gate_set && !gate_set->frozen();

  num::AdamW optim;
  optim.add_group(student.parameters(),
                  {.lr = opts.train.lr, .weight_decay = opts.train.weight_decay});
  if (learn_gates) optim.add_group(gate_set->parameters(), {.lr = opts.train.gate_lr});

  PipelineResult result;
  result.teacher_eval = evaluate_em(teacher, task, opts.train.eval_examples, eval_budget(task));

  // stage B: distillation + Lagrangian gate training with sparsity warm-up
  int64_t step = 0;
  for (step = 1; step <= opts.schedule.total_prune_steps; ++step) {
    lagr.t_current =
        gates::sparsity_warmup(step, opts.schedule.warmup_steps, opts.schedule.t_final);
    taskgen::Batch batch = sample_batch(task, opts.train.batch_size, data_rng);

    num::Graph graph;
    num::GraphScope scope(&graph);

    model::ForwardTrace teacher_trace;
    {
      num::NoGradGuard ng;
      model::ForwardOpts fw;  // teacher runs ungated in eval mode
      teacher_trace = model::forward(teacher, batch.src, batch.tgt_in, nullptr, fw);
    }

    model::ForwardOpts fw;
    fw.train = true;
    fw.rng = &dropout_rng;
    std::optional<gates::RealizedGates> realized;
    if (gate_set)
      realized = gate_set->realize(gates::GateMode::train_stochastic, &gate_rng);
    model::ForwardTrace student_trace =
        model::forward(student, batch.src, batch.tgt_in, realized ? &*realized : nullptr, fw);

    // sparsity is accounted on the deterministic realization, so R is a
    // noise-free function of the alphas while the forward stays stochastic
    std::optional<gates::RealizedGates> det_gates;
    if (learn_gates) det_gates = gate_set->realize(gates::GateMode::eval_deterministic);

    LossBreakdown losses = total_loss(
        student_trace, teacher_trace, opts.plan, batch.tgt_out.mask, opts.weights,
        det_gates ? &*det_gates : nullptr, learn_gates ? &*gate_set : nullptr,
        learn_gates ? &lagr : nullptr);
    double loss_v = check_finite_loss(losses.total, step, "prune");
    num::backward(losses.total);
    optim.step();
    optim.zero_grad();
    if (learn_gates) {
      gates::update_lagrange(lagr);
      gates::project_alphas(*gate_set);
    }

    std::optional<double> eval;
    if (opts.schedule.eval_every > 0 &&
        (step % opts.schedule.eval_every == 0 || step == opts.schedule.total_prune_steps)) {
      if (gate_set) {
        model::Seq2SeqModel tmp = compact(student, *gate_set);
        eval = evaluate_em(tmp, task, opts.train.eval_examples, eval_budget(task));
      } else {
        eval = evaluate_em(student, task, opts.train.eval_examples, eval_budget(task));
      }
    }
    if (csv)
      csv->row(step, "prune", loss_v, losses.pred.item(), losses.henc.item(),
               losses.hdec.item(), losses.reg.item(), losses.s_hat_value, lagr.t_current,
               eval);
  }

  // terminal sparsity under deterministic gates
  if (gate_set) {
    num::NoGradGuard ng;
    auto det = gate_set->realize(gates::GateMode::eval_deterministic);
    result.terminal_s_hat = gates::current_sparsity(det, *gate_set).item();
  }

  // stage C: physical compaction, then task-loss fine-tuning
  model::Seq2SeqModel pruned = gate_set ? compact(student, *gate_set) : std::move(student);
  if (gate_set) result.achieved_sparsity = achieved_sparsity(student, pruned, *gate_set);

  FinetuneResult ft =
      finetune(pruned, task, opts.train, opts.schedule.finetune_steps,
               opts.schedule.eval_every, opts.schedule.total_prune_steps, csv, data_rng,
               dropout_rng);
  result.final_eval = ft.final_eval;
  result.steps_run = ft.last_step;
  result.pruned = std::move(pruned);
  result.gate_set = std::move(gate_set);
  return result;
}

}  // namespace nash::pipeline
