#include <doctest.h>

#include <cmath>

#include "nash/gates.hpp"
#include "nash/optim.hpp"
#include "oracles.hpp"

using namespace nash;
using num::Tensor;

namespace {
constexpr double kL = -0.1, kR = 1.1;
}

TEST_CASE("hard-concrete sampling hand cases") {
  SUBCASE("u=0.5, alpha=0 gives z=0.5") {
    Tensor alpha = Tensor::scalar(0.0);
    std::vector<double> u{0.5};
    Tensor z = num::hard_concrete(alpha, u, kL, kR);
    // s = sigmoid(0) = 0.5; sbar = 0.5*1.2 - 0.1 = 0.5
    CHECK(z.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("alpha = +20 saturates to 1 for u in (0.01, 0.99)") {
    Tensor alpha = Tensor::scalar(20.0);
    for (double u : {0.011, 0.2, 0.5, 0.8, 0.989}) {
      std::vector<double> uv{u};
      CHECK(num::hard_concrete(alpha, uv, kL, kR).values()[0] == 1.0);
    }
  }
  SUBCASE("u outside (0,1) rejected") {
    Tensor alpha = Tensor::scalar(0.0);
    std::vector<double> bad{1.0};
    CHECK_THROWS_AS((void)num::hard_concrete(alpha, bad, kL, kR), num::ContractError);
  }
}

TEST_CASE("hard-concrete deterministic plug-in") {
  SUBCASE("alpha=0 gives 0.5") {
    CHECK(num::hard_concrete_deterministic(Tensor::scalar(0.0), kL, kR).values()[0] ==
          doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("lower saturation is exactly 0") {
    for (double a : {-6.0, -8.0, -20.0})
      CHECK(num::hard_concrete_deterministic(Tensor::scalar(a), kL, kR).values()[0] == 0.0);
  }
  SUBCASE("upper saturation is exactly 1") {
    for (double a : {6.0, 8.0, 20.0})
      CHECK(num::hard_concrete_deterministic(Tensor::scalar(a), kL, kR).values()[0] == 1.0);
  }
}

TEST_CASE("sampled gate mean matches quadrature oracle") {
  num::Rng rng(314);
  for (double alpha : {-2.0, 0.0, 2.0}) {
    const int n = 100000;
    Tensor a = Tensor::scalar(alpha);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
      std::vector<double> u{rng.uniform_open()};
      mean += num::hard_concrete(a, u, kL, kR).values()[0];
    }
    mean /= n;
    double expect = oracles::hard_concrete_mean(alpha, kL, kR);
    CHECK(std::abs(mean - expect) < 1e-2);
  }
}

TEST_CASE("sampled mean converges at a 1/sqrt(N) consistent rate") {
  // z lies in [0,1] so var <= 0.25 and sigma_mean <= 0.5/sqrt(N); stay
  // within 5 sigma of the quadrature value at two sample sizes
  num::Rng rng(271);
  Tensor a = Tensor::scalar(0.5);
  double expect = oracles::hard_concrete_mean(0.5, kL, kR);
  auto mean_of = [&](int n) {
    double m = 0.0;
    for (int i = 0; i < n; ++i) {
      std::vector<double> u{rng.uniform_open()};
      m += num::hard_concrete(a, u, kL, kR).values()[0];
    }
    return m / n;
  };
  CHECK(std::abs(mean_of(1024) - expect) < 5 * 0.5 / std::sqrt(1024.0));
  CHECK(std::abs(mean_of(16384) - expect) < 5 * 0.5 / std::sqrt(16384.0));
}

TEST_CASE("gate gradient flows only through the unclamped region") {
  num::Rng rng(11);
  num::Graph g;
  num::GraphScope scope(&g);
  Tensor alpha = Tensor::from_values({3}, {0.3, 20.0, -20.0}, true);
  std::vector<double> u{0.41, 0.5, 0.5};
  Tensor z = num::hard_concrete(alpha, u, kL, kR);
  num::backward(num::sum(z));
  CHECK(alpha.grad_view()[0] != 0.0);
  CHECK(alpha.grad_view()[1] == 0.0);  // saturated at 1
  CHECK(alpha.grad_view()[2] == 0.0);  // saturated at 0

  // finite differences on the live coordinate with pinned u
  auto loss_fn = [&]() {
    num::NoGradGuard ng;
    return num::sum(num::hard_concrete(alpha, u, kL, kR)).item();
  };
  auto res = oracles::fd_check(loss_fn, {alpha}, 20, rng);
  CHECK(res.max_rel_err < 1e-4);
}

namespace {

gates::GateSet encoder_gates(int64_t layers = 2, int64_t heads = 2, int64_t d_ff = 4,
                             int64_t d = 16, int64_t d_h = 8, double alpha_init = 2.5) {
  gates::GateConfig cfg;
  cfg.scope = gates::GateConfig::Scope::encoder;
  cfg.alpha_init = alpha_init;
  gates::GateDims dims{layers, heads, d_ff, d, d_h, false};
  return gates::GateSet::make(cfg, dims);
}

void set_all_alphas(gates::GateSet& gs, double v) {
  for (auto& t : gs.parameters())
    std::fill(t.values().begin(), t.values().end(), v);
}

}  // namespace

TEST_CASE("current_sparsity endpoints and parameter accounting") {
  auto gs = encoder_gates();
  num::NoGradGuard ng;

  set_all_alphas(gs, 20.0);  // all gates exactly 1
  auto all_on = gs.realize(gates::GateMode::eval_deterministic);
  CHECK(gates::current_sparsity(all_on, gs).item() == doctest::Approx(0.0).epsilon(1e-12));

  set_all_alphas(gs, -20.0);  // all gates exactly 0
  auto all_off = gs.realize(gates::GateMode::eval_deterministic);
  CHECK(gates::current_sparsity(all_off, gs).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("current_sparsity half-heads case against parameter enumeration") {
  // config where total head params == total ffn params:
  // heads: N_h * 4*d*d_h = 2*4*16*8 = 1024; ffn: d_ff * 2*d = 32*2*16 = 1024
  auto gs = encoder_gates(2, 2, 32, 16, 8);
  CHECK(gs.prunable_params() == 2 * (1024 + 1024));
  num::NoGradGuard ng;
  set_all_alphas(gs, 20.0);
  // zero exactly one of the two heads in every layer -> 25% of prunable params
  for (auto& [name, t] : gs.named_alphas())
    if (name.find("self_head") != std::string::npos) t.values()[0] = -20.0;
  auto z = gs.realize(gates::GateMode::eval_deterministic);
  CHECK(gates::current_sparsity(z, gs).item() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("current_sparsity is monotone non-increasing in every gate") {
  auto gs = encoder_gates();
  num::NoGradGuard ng;
  num::Rng rng(5);
  auto params = gs.parameters();
  for (auto& t : params)
    for (double& v : t.values()) v = rng.uniform(-1.5, 1.5);
  auto base = gs.realize(gates::GateMode::eval_deterministic);
  double s0 = gates::current_sparsity(base, gs).item();
  for (auto& t : params) {
    for (int64_t i = 0; i < t.numel(); ++i) {
      double save = t.values()[static_cast<size_t>(i)];
      t.values()[static_cast<size_t>(i)] = save + 0.8;  // larger gate
      auto z = gs.realize(gates::GateMode::eval_deterministic);
      CHECK(gates::current_sparsity(z, gs).item() <= s0 + 1e-12);
      t.values()[static_cast<size_t>(i)] = save;
    }
  }
}

TEST_CASE("lagrangian penalty values and gradients") {
  SUBCASE("R = 0 at s = t regardless of lambda") {
    auto lagr = gates::LagrangianState::make(0.3);
    lagr.t_current = 0.3;
    lagr.lambda1.values()[0] = 3.0;
    lagr.lambda2.values()[0] = -1.5;
    Tensor s = Tensor::scalar(0.3);
    CHECK(gates::lagrangian_penalty(s, lagr).item() == doctest::Approx(0.0));
  }
  SUBCASE("hand arithmetic: l1=1, l2=2, diff=0.1 -> 0.12") {
    auto lagr = gates::LagrangianState::make(0.3);
    lagr.t_current = 0.2;
    lagr.lambda1.values()[0] = 1.0;
    lagr.lambda2.values()[0] = 2.0;
    Tensor s = Tensor::scalar(0.3);
    CHECK(gates::lagrangian_penalty(s, lagr).item() == doctest::Approx(0.12));
  }
  SUBCASE("dR/ds = l1 + 2*l2*(s-t) matches finite differences") {
    num::Rng rng(3);
    auto lagr = gates::LagrangianState::make(0.3);
    lagr.t_current = 0.25;
    lagr.lambda1.values()[0] = 0.7;
    lagr.lambda2.values()[0] = 1.3;
    Tensor s = Tensor::scalar(0.4, true);
    {
      num::Graph g;
      num::GraphScope scope(&g);
      num::backward(gates::lagrangian_penalty(s, lagr));
    }
    CHECK(s.grad_view()[0] ==
          doctest::Approx(0.7 + 2 * 1.3 * (0.4 - 0.25)).epsilon(1e-10));
    auto loss_fn = [&]() {
      num::NoGradGuard ng;
      return gates::lagrangian_penalty(s, lagr).item();
    };
    auto res = oracles::fd_check(loss_fn, {s}, 5, rng);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("lagrange multiplier ascent") {
  SUBCASE("s = t leaves multipliers unchanged") {
    auto lagr = gates::LagrangianState::make(0.3);
    lagr.t_current = 0.3;
    num::Graph g;
    num::GraphScope scope(&g);
    Tensor s = Tensor::scalar(0.3);
    num::backward(gates::lagrangian_penalty(s, lagr));
    gates::update_lagrange(lagr);
    CHECK(lagr.lambda1.values()[0] == 0.0);
    CHECK(lagr.lambda2.values()[0] == 0.0);
  }
  SUBCASE("persistent overshoot grows lambda1 monotonically") {
    auto lagr = gates::LagrangianState::make(0.3);
    lagr.t_current = 0.3;
    double prev = 0.0;
    for (int i = 0; i < 5; ++i) {
      num::Graph g;
      num::GraphScope scope(&g);
      Tensor s = Tensor::scalar(0.5);  // s > t persistently
      num::backward(gates::lagrangian_penalty(s, lagr));
      gates::update_lagrange(lagr);
      CHECK(lagr.lambda1.values()[0] > prev);
      prev = lagr.lambda1.values()[0];
    }
  }
}

TEST_CASE("sparsity warm-up schedule") {
  CHECK(gates::sparsity_warmup(0, 100, 0.3) == 0.0);
  CHECK(gates::sparsity_warmup(100, 100, 0.3) == doctest::Approx(0.3));
  CHECK(gates::sparsity_warmup(250, 100, 0.3) == doctest::Approx(0.3));
  CHECK(gates::sparsity_warmup(50, 100, 0.30) == doctest::Approx(0.15));
  CHECK(gates::sparsity_warmup(17, 0, 0.3) == doctest::Approx(0.3));  // no warm-up
  CHECK_THROWS_AS((void)gates::sparsity_warmup(-1, 100, 0.3), num::ContractError);
}

TEST_CASE("closed-loop controller drives sparsity to target") {
  // standalone gate-only objective, the same machinery the pipeline runs:
  // R on the deterministic realization, multipliers ascend, alphas projected
  // below the clamp knee; |s_hat - t| <= 0.02 within 2000 steps
  auto run = [](double target, int64_t layers, int64_t heads, int64_t d_ff) {
    auto gs = encoder_gates(layers, heads, d_ff, 16, 8, 2.0);
    auto lagr = gates::LagrangianState::make(target);
    num::AdamW opt;
    opt.add_group(gs.parameters(), {.lr = 0.05});
    for (int step = 0; step < 2000; ++step) {
      lagr.t_current = gates::sparsity_warmup(step, 500, target);
      num::Graph g;
      num::GraphScope scope(&g);
      auto z = gs.realize(gates::GateMode::eval_deterministic);
      Tensor s_hat = gates::current_sparsity(z, gs);
      Tensor r = gates::lagrangian_penalty(s_hat, lagr);
      num::backward(r);
      opt.step();
      opt.zero_grad();
      gates::update_lagrange(lagr);
      gates::project_alphas(gs);
    }
    num::NoGradGuard ng;
    auto det = gs.realize(gates::GateMode::eval_deterministic);
    return gates::current_sparsity(det, gs).item();
  };
  for (double target : {0.1, 0.3, 0.6}) {
    CHECK(std::abs(run(target, 2, 2, 4) - target) <= 0.02);
    // two-gate toy problem
    CHECK(std::abs(run(target, 1, 2, 1) - target) <= 0.02);
  }
}

TEST_CASE("every realized gate lies in [0,1]; frozen structures are exactly 1") {
  auto gs = encoder_gates();
  num::Rng rng(9);
  for (auto& t : gs.parameters())
    for (double& v : t.values()) v = rng.uniform(-8.0, 8.0);
  auto z = gs.realize(gates::GateMode::train_stochastic, &rng);
  for (const auto& layer : z.layers) {
    for (const Tensor* t : {&layer.z_self_head, &layer.z_int}) {
      REQUIRE(t->defined());
      for (double v : t->values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
    // width-only encoder gates: layer gates are frozen (absent -> exactly 1)
    CHECK(!layer.z_self_mha.defined());
    CHECK(!layer.z_ffn.defined());
  }
}

TEST_CASE("frozen pattern realizes exact endpoints without parameters") {
  gates::GateDims dims{2, 4, 8, 64, 16, false};
  auto gs = gates::GateSet::frozen_pattern(dims, {{1, 3}, {}}, {{0}, {7}});
  CHECK(gs.parameters().empty());
  auto z = gs.realize(gates::GateMode::train_stochastic, nullptr);  // mode ignored
  CHECK(z.layers[0].z_self_head.values() == std::vector<double>{1, 0, 1, 0});
  CHECK(z.layers[0].z_int.values()[0] == 0.0);
  CHECK(z.layers[1].z_int.values()[7] == 0.0);
  CHECK(z.layers[1].z_self_head.values() == std::vector<double>{1, 1, 1, 1});
}
