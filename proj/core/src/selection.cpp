#include "nash/selection.hpp"

#include <numeric>

namespace nash::pipeline {

void SelectionPlan::validate() const {
  if (selected.empty() || teacher_depth < 1)
    throw num::ContractError("selection plan: empty selection");
  int64_t prev = 0;
  for (int64_t v : selected) {
    if (v <= prev || v > teacher_depth)
      throw num::ContractError("selection plan: indices must be strictly increasing in 1..L");
    prev = v;
  }
}

SelectionPlan uniform_selection(int64_t L, int64_t d_s) {
  if (d_s < 1 || d_s > L)
    throw num::ContractError("uniform_selection: need 1 <= d_s <= L");
  SelectionPlan plan;
  plan.teacher_depth = L;
  if (d_s == 1) {
    plan.selected = {1};  // the l = 0 limit of the formula family
    return plan;
  }
  const int64_t stride = (L - 1) / (d_s - 1);
  for (int64_t l = 0; l < d_s; ++l) plan.selected.push_back(stride * l + 1);
  plan.validate();
  return plan;
}

}  // namespace nash::pipeline

namespace nash::strategies {

StrategyKind parse_strategy(const std::string& name) {
  if (name == "uniform") return StrategyKind::uniform;
  if (name == "low") return StrategyKind::low;
  if (name == "high") return StrategyKind::high;
  if (name == "auto" || name == "automatic_l0") return StrategyKind::automatic_l0;
  if (name == "none") return StrategyKind::none;
  if (name == "uniform_width") return StrategyKind::uniform_width;
  throw num::ContractError("unknown strategy: " + name);
}

std::string strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::uniform: return "uniform";
    case StrategyKind::low: return "low";
    case StrategyKind::high: return "high";
    case StrategyKind::automatic_l0: return "auto";
    case StrategyKind::none: return "none";
    case StrategyKind::uniform_width: return "uniform_width";
  }
  return "?";
}

pipeline::SelectionPlan select_layers(StrategyKind kind, int64_t L, int64_t d_s) {
  if (d_s < 1 || d_s > L)
    throw num::ContractError("select_layers: need 1 <= d_s <= L");
  pipeline::SelectionPlan plan;
  plan.teacher_depth = L;
  switch (kind) {
    case StrategyKind::uniform:
      return pipeline::uniform_selection(L, d_s);
    case StrategyKind::low:
      for (int64_t i = 1; i <= d_s; ++i) plan.selected.push_back(i);
      break;
    case StrategyKind::high:
      for (int64_t i = L - d_s + 1; i <= L; ++i) plan.selected.push_back(i);
      break;
    case StrategyKind::none:
      for (int64_t i = 1; i <= L; ++i) plan.selected.push_back(i);
      break;
    case StrategyKind::automatic_l0:
    case StrategyKind::uniform_width:
      throw num::ContractError("select_layers: " + strategy_name(kind) +
                               " is not a manual layer selection");
  }
  plan.validate();
  return plan;
}

}  // namespace nash::strategies
