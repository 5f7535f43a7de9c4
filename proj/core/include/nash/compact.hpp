#pragma once

#include "nash/gates.hpp"
#include "nash/model.hpp"

namespace nash::pipeline {

// Physical realisation of the pruning decisions under eval-mode deterministic
// gates: zero-gated heads lose their four matrices, zero-gated FFN units lose
// their W1 column / W2 row, surviving fractional gate values fold into W_O
// rows (per head) and W2 rows (per unit). A sublayer that loses every head
// (or a zero layer gate) stays as the identity branch. The result is an
// ungated model whose logits match the gated forward within 1e-8.
model::Seq2SeqModel compact(const model::Seq2SeqModel& m, const gates::GateSet& gates);

// Achieved physical sparsity: fraction of the gate set's prunable parameters
// actually removed by compaction.
double achieved_sparsity(const model::Seq2SeqModel& original,
                         const model::Seq2SeqModel& compacted,
                         const gates::GateSet& gates);

}  // namespace nash::pipeline
