#pragma once

#include <span>

#include "nash/gates.hpp"
#include "nash/model.hpp"
#include "nash/selection.hpp"

namespace nash::pipeline {

struct LossWeights {
  double lambda_enc = 0.001;
  double lambda_dec = 0.001;
  enum class KldDirection { student_first, teacher_first };
  KldDirection kld_direction = KldDirection::student_first;
  double temperature = 1.0;
};

// Sum over student decoder layers l of MSE(H_dec,s^l, H_dec,t^{selected[l]}),
// each term mean-reduced over batch, positions and hidden dim.
num::Tensor decoder_hidden_distill(const model::ForwardTrace& student,
                                   const model::ForwardTrace& teacher,
                                   const SelectionPlan& plan);

// Identity layer mapping; encoder depths must agree.
num::Tensor encoder_hidden_distill(const model::ForwardTrace& student,
                                   const model::ForwardTrace& teacher);

// Token-mean KLD between softmax distributions at the configured temperature.
num::Tensor prediction_distill(const num::Tensor& student_logits,
                               const num::Tensor& teacher_logits,
                               std::span<const double> target_mask,
                               const LossWeights& weights);

struct LossBreakdown {
  num::Tensor total;
  num::Tensor pred;
  num::Tensor henc;
  num::Tensor hdec;
  num::Tensor reg;
  double s_hat_value = 0.0;
  double t_current = 0.0;
};

// L = L_pred + lambda_enc * L_h_enc + lambda_dec * L_h_dec + R. Teacher trace
// must come from a no-grad forward. `sparsity_gates` is the realization the
// Lagrangian accounts (the pipeline feeds the deterministic one so R is a
// noise-free function of the alphas; the forward itself uses sampled gates).
LossBreakdown total_loss(const model::ForwardTrace& student,
                         const model::ForwardTrace& teacher, const SelectionPlan& plan,
                         std::span<const double> target_mask, const LossWeights& weights,
                         const gates::RealizedGates* sparsity_gates,
                         const gates::GateSet* gate_set, gates::LagrangianState* lagr);

}  // namespace nash::pipeline
