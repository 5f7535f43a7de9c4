#include <doctest.h>

#include "nash/selection.hpp"

using namespace nash;

namespace {
// direct set-builder evaluation of { floor((L-1)/(d_s-1)) * l + 1 }
std::vector<int64_t> set_builder(int64_t L, int64_t d_s) {
  std::vector<int64_t> out;
  int64_t stride = (L - 1) / (d_s - 1);
  for (int64_t l = 0; l <= d_s - 1; ++l) out.push_back(stride * l + 1);
  return out;
}
}  // namespace

TEST_CASE("uniform selection hand cases for L=12") {
  CHECK(pipeline::uniform_selection(12, 2).selected == std::vector<int64_t>{1, 12});
  CHECK(pipeline::uniform_selection(12, 3).selected == std::vector<int64_t>{1, 6, 11});
  CHECK(pipeline::uniform_selection(12, 4).selected == std::vector<int64_t>{1, 4, 7, 10});
  std::vector<int64_t> all;
  for (int64_t i = 1; i <= 12; ++i) all.push_back(i);
  CHECK(pipeline::uniform_selection(12, 12).selected == all);
}

TEST_CASE("uniform selection matches set-builder for every (L, d_s) up to 24") {
  for (int64_t L = 2; L <= 24; ++L)
    for (int64_t d_s = 2; d_s <= L; ++d_s) {
      auto plan = pipeline::uniform_selection(L, d_s);
      CHECK(plan.selected == set_builder(L, d_s));
      CHECK(plan.student_depth() == d_s);
      plan.validate();  // strictly increasing, within 1..L
    }
}

TEST_CASE("uniform selection edge cases and errors") {
  CHECK(pipeline::uniform_selection(5, 1).selected == std::vector<int64_t>{1});
  CHECK_THROWS_AS((void)pipeline::uniform_selection(4, 5), num::ContractError);
  CHECK_THROWS_AS((void)pipeline::uniform_selection(4, 0), num::ContractError);
}

TEST_CASE("teacher mapping follows the selected set") {
  auto plan = pipeline::uniform_selection(12, 3);
  CHECK(plan.teacher_layer_for(1) == 1);
  CHECK(plan.teacher_layer_for(2) == 6);
  CHECK(plan.teacher_layer_for(3) == 11);
}

TEST_CASE("manual selection strategies") {
  using strategies::StrategyKind;
  CHECK(strategies::select_layers(StrategyKind::low, 12, 2).selected ==
        std::vector<int64_t>{1, 2});
  CHECK(strategies::select_layers(StrategyKind::high, 12, 2).selected ==
        std::vector<int64_t>{11, 12});
  CHECK(strategies::select_layers(StrategyKind::uniform, 12, 2).selected ==
        std::vector<int64_t>{1, 12});
  auto none = strategies::select_layers(StrategyKind::none, 4, 4);
  CHECK(none.selected == std::vector<int64_t>{1, 2, 3, 4});
}

TEST_CASE("strategies coincide when d_s = L") {
  using strategies::StrategyKind;
  for (int64_t L = 2; L <= 8; ++L) {
    auto u = strategies::select_layers(StrategyKind::uniform, L, L).selected;
    auto lo = strategies::select_layers(StrategyKind::low, L, L).selected;
    auto hi = strategies::select_layers(StrategyKind::high, L, L).selected;
    CHECK(u == lo);
    CHECK(lo == hi);
  }
}

TEST_CASE("non-selection strategies are rejected by select_layers") {
  using strategies::StrategyKind;
  CHECK_THROWS_AS((void)strategies::select_layers(StrategyKind::automatic_l0, 4, 2),
                  num::ContractError);
  CHECK_THROWS_AS((void)strategies::select_layers(StrategyKind::uniform_width, 4, 2),
                  num::ContractError);
}

TEST_CASE("strategy names round-trip") {
  using strategies::StrategyKind;
  for (auto k : {StrategyKind::uniform, StrategyKind::low, StrategyKind::high,
                 StrategyKind::automatic_l0, StrategyKind::none, StrategyKind::uniform_width})
    CHECK(strategies::parse_strategy(strategies::strategy_name(k)) == k);
}
