#include "nash/distill.hpp"

namespace nash::pipeline {

using num::Tensor;

Tensor decoder_hidden_distill(const model::ForwardTrace& student,
                              const model::ForwardTrace& teacher,
                              const SelectionPlan& plan) {
  if (static_cast<int64_t>(student.dec_hidden.size()) != plan.student_depth())
    throw num::ContractError("decoder distill: student trace depth != plan depth");
  if (static_cast<int64_t>(teacher.dec_hidden.size()) != plan.teacher_depth)
    throw num::ContractError("decoder distill: teacher trace depth != plan teacher depth");
  Tensor loss = Tensor::scalar(0.0);
  for (int64_t l = 1; l <= plan.student_depth(); ++l) {
    const Tensor& hs = student.dec_hidden[static_cast<size_t>(l - 1)];
    const Tensor& ht = teacher.dec_hidden[static_cast<size_t>(plan.teacher_layer_for(l) - 1)];
    loss = num::add(loss, num::mse(hs, ht));
  }
  return loss;
}

Tensor encoder_hidden_distill(const model::ForwardTrace& student,
                              const model::ForwardTrace& teacher) {
  if (student.enc_hidden.size() != teacher.enc_hidden.size())
    throw num::ContractError("encoder distill: trace length mismatch");
  Tensor loss = Tensor::scalar(0.0);
  for (size_t l = 0; l < student.enc_hidden.size(); ++l)
    loss = num::add(loss, num::mse(student.enc_hidden[l], teacher.enc_hidden[l]));
  return loss;
}

Tensor prediction_distill(const Tensor& student_logits, const Tensor& teacher_logits,
                          std::span<const double> target_mask, const LossWeights& w) {
  if (w.kld_direction == LossWeights::KldDirection::student_first)
    return num::kl_divergence(student_logits, teacher_logits, target_mask, w.temperature);
  // teacher-first direction: gradient still flows through the student side
  // via the reversed argument order of the KL definition
  return num::kl_divergence_reverse(student_logits, teacher_logits, target_mask,
                                    w.temperature);
}

LossBreakdown total_loss(const model::ForwardTrace& student,
                         const model::ForwardTrace& teacher, const SelectionPlan& plan,
                         std::span<const double> target_mask, const LossWeights& weights,
                         const gates::RealizedGates* sparsity_gates,
                         const gates::GateSet* gate_set, gates::LagrangianState* lagr) {
  LossBreakdown out;
  out.pred = prediction_distill(student.logits, teacher.logits, target_mask, weights);
  out.henc = encoder_hidden_distill(student, teacher);
  out.hdec = decoder_hidden_distill(student, teacher, plan);
  out.total = num::add(out.pred, num::add(num::scale(out.henc, weights.lambda_enc),
                                          num::scale(out.hdec, weights.lambda_dec)));
  if (sparsity_gates && gate_set && lagr) {
    Tensor s_hat = gates::current_sparsity(*sparsity_gates, *gate_set);
    out.s_hat_value = s_hat.item();
    out.t_current = lagr->t_current;
    out.reg = gates::lagrangian_penalty(s_hat, *lagr);
    out.total = num::add(out.total, out.reg);
  } else {
    out.reg = Tensor::scalar(0.0);
  }
  return out;
}

}  // namespace nash::pipeline
