#pragma once

#include "nash/pipeline.hpp"
#include "nash/selection.hpp"

namespace nash::strategies {

// Table-style uniform width baseline: deterministically zeroes every k-th
// head and FFN unit to hit `fraction` (round-down), uniformly across layers.
gates::GateSet encoder_uniform_width(const model::ModelConfig& cfg, double fraction);

// Whole-sublayer L0 gates (SA, CA, FF) on the decoder, trained with the same
// Lagrangian machinery; under/over-shoot is a reported outcome, not an error.
struct AutoPruneResult {
  double target_sparsity = 0.0;
  double terminal_s_hat = 0.0;      // deterministic gate expectation
  double achieved_sparsity = 0.0;   // physically removed fraction
  double eval_metric = 0.0;
  int64_t remaining_self = 0;       // surviving sublayer counts (SA, CA, FF)
  int64_t remaining_cross = 0;
  int64_t remaining_ffn = 0;
};

AutoPruneResult automatic_l0_depth_prune(const model::Seq2SeqModel& teacher,
                                         const taskgen::TaskSpec& task,
                                         double target_sparsity,
                                         const pipeline::PruneSchedule& schedule,
                                         const pipeline::TrainLoopOptions& train,
                                         const pipeline::LossWeights& weights,
                                         double reg_lr, double alpha_init,
                                         io::MetricsCsv* csv, uint64_t seed);

}  // namespace nash::strategies
