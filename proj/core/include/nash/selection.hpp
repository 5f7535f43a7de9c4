#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nash/tensor.hpp"

namespace nash::pipeline {

// Chosen decoder sub-layer index set and its teacher mapping (1-indexed).
struct SelectionPlan {
  int64_t teacher_depth = 0;       // L
  std::vector<int64_t> selected;   // strictly increasing, subset of 1..L

  int64_t student_depth() const { return static_cast<int64_t>(selected.size()); }
  // teacher layer index for student position l in 1..d_s
  int64_t teacher_layer_for(int64_t student_pos) const {
    return selected.at(static_cast<size_t>(student_pos - 1));
  }
  bool is_identity() const {
    return teacher_depth == student_depth();
  }
  void validate() const;
};

// L_s = { floor((L-1)/(d_s-1)) * l + 1 | l in 0..d_s-1 }; d_s = 1 gives {1}.
SelectionPlan uniform_selection(int64_t L, int64_t d_s);

}  // namespace nash::pipeline

namespace nash::strategies {

enum class StrategyKind { uniform, low, high, automatic_l0, none, uniform_width };

StrategyKind parse_strategy(const std::string& name);
std::string strategy_name(StrategyKind k);

// low -> {1..d_s}; high -> {L-d_s+1..L}; uniform -> uniform_selection;
// none -> identity (all layers). automatic_l0/uniform_width are not layer
// selections and are rejected here.
pipeline::SelectionPlan select_layers(StrategyKind kind, int64_t L, int64_t d_s);

}  // namespace nash::strategies
