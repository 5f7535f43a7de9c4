#pragma once

#include <optional>

#include "nash/compact.hpp"
#include "nash/decode.hpp"
#include "nash/distill.hpp"
#include "nash/gates.hpp"
#include "nash/model.hpp"
#include "nash/optim.hpp"
#include "nash/report.hpp"
#include "nash/selection.hpp"
#include "nash/taskgen.hpp"

namespace nash::pipeline {

struct PruneSchedule {
  int64_t warmup_steps = 1000;
  int64_t total_prune_steps = 3000;
  int64_t finetune_steps = 1000;
  double t_final = 0.30;
  int64_t eval_every = 200;

  void validate() const {
    if (warmup_steps < 0 || total_prune_steps < 0 || finetune_steps < 0 || eval_every < 0)
      throw num::ContractError("prune schedule: all step counts must be non-negative");
  }
};

struct TrainLoopOptions {
  double lr = 1e-3;
  double gate_lr = 0.1;
  double weight_decay = 0.0;
  int64_t batch_size = 8;
  int64_t eval_examples = 64;
};

struct TeacherOptions {
  TrainLoopOptions loop;
  int64_t max_steps = 3000;
  int64_t eval_every = 200;
  double target_metric = 0.995;
  int64_t patience = 3;
};

struct TrainResult {
  double final_eval = 0.0;
  int64_t steps_run = 0;
};

// Dense fine-tuning with cross entropy until the eval metric converges
// (target reached, patience exhausted, or max_steps).
TrainResult train_teacher(model::Seq2SeqModel& m, const taskgen::TaskSpec& task,
                          const TeacherOptions& opts, io::MetricsCsv* csv, uint64_t seed);

// Student decoder holds copies of exactly the selected teacher layers, in
// order; encoder copied in full. Weights are copies, never shared storage.
model::Seq2SeqModel build_student(const model::Seq2SeqModel& teacher,
                                  const SelectionPlan& plan);

struct PipelineOptions {
  SelectionPlan plan;
  PruneSchedule schedule;
  LossWeights weights;
  // learnable gates attached to the student for stage B; nullopt disables
  // the Lagrangian terms entirely
  std::optional<gates::GateConfig> gate_cfg;
  // alternative: a frozen deterministic pattern (uniform width baseline)
  std::optional<gates::GateSet> frozen_gates;
  double reg_lr = 0.01;
  TrainLoopOptions train;
};

struct PipelineResult {
  model::Seq2SeqModel pruned;  // compacted and fine-tuned
  std::optional<gates::GateSet> gate_set;
  double terminal_s_hat = 0.0;      // deterministic gates, end of stage B
  double achieved_sparsity = 0.0;   // physically removed fraction
  double final_eval = 0.0;
  double teacher_eval = 0.0;
  int64_t steps_run = 0;
};

// Stage A: build_student; stage B: distillation + Lagrangian training with
// sparsity warm-up; stage C: compact, then task-loss fine-tuning until
// convergence. The teacher is never modified.
PipelineResult nash_prune_pipeline(const model::Seq2SeqModel& teacher,
                                   const taskgen::TaskSpec& task,
                                   const PipelineOptions& opts, io::MetricsCsv* csv,
                                   uint64_t seed);

// Greedy exact-match on `n` held-out examples (the eval index range).
double evaluate_em(const model::Seq2SeqModel& m, const taskgen::TaskSpec& task, int64_t n,
                   int max_new_tokens);

taskgen::Batch sample_batch(const taskgen::TaskSpec& task, int64_t batch_size,
                            num::Rng& rng);

}  // namespace nash::pipeline
