#include "nash/gates.hpp"

#include <cmath>

namespace nash::gates {

namespace {

num::Tensor realize_one(const num::Tensor& alpha, const HardConcreteParams& hc,
                        GateMode mode, num::Rng* rng) {
  if (!alpha.defined()) return {};
  if (mode == GateMode::eval_deterministic)
    return num::hard_concrete_deterministic(alpha, hc.l, hc.r);
  if (!rng) throw num::ContractError("stochastic gate realisation needs an rng");
  std::vector<double> u(static_cast<size_t>(alpha.numel()));
  for (double& ui : u) ui = rng->uniform_open();
  return num::hard_concrete(alpha, u, hc.l, hc.r);
}

}  // namespace

GateSet GateSet::make(const GateConfig& cfg, const GateDims& dims) {
  GateSet gs;
  gs.cfg_ = cfg;
  gs.dims_ = dims;
  gs.layers_.resize(static_cast<size_t>(dims.layers));
  for (auto& la : gs.layers_) {
    if (cfg.width_gates) {
      la.self_head = num::Tensor::full({dims.n_heads}, cfg.alpha_init, true);
      la.intu = num::Tensor::full({dims.d_ff}, cfg.alpha_init, true);
      if (dims.has_cross)
        la.cross_head = num::Tensor::full({dims.n_heads}, cfg.alpha_init, true);
    }
    if (cfg.layer_gates) {
      la.self_mha = num::Tensor::full({1}, cfg.alpha_init, true);
      la.ffn = num::Tensor::full({1}, cfg.alpha_init, true);
      if (dims.has_cross) la.cross_mha = num::Tensor::full({1}, cfg.alpha_init, true);
    }
  }
  return gs;
}

GateSet GateSet::frozen_pattern(const GateDims& dims,
                                const std::vector<std::vector<int64_t>>& zero_heads,
                                const std::vector<std::vector<int64_t>>& zero_units) {
  // alpha = +-20 saturates the deterministic gate to exactly 1 / 0
  constexpr double kOn = 20.0, kOff = -20.0;
  GateSet gs;
  gs.cfg_ = GateConfig{};
  gs.dims_ = dims;
  gs.frozen_ = true;
  gs.layers_.resize(static_cast<size_t>(dims.layers));
  for (int64_t i = 0; i < dims.layers; ++i) {
    auto& la = gs.layers_[static_cast<size_t>(i)];
    la.self_head = num::Tensor::full({dims.n_heads}, kOn);
    la.intu = num::Tensor::full({dims.d_ff}, kOn);
    if (i < static_cast<int64_t>(zero_heads.size()))
      for (int64_t j : zero_heads[static_cast<size_t>(i)])
        la.self_head.values()[static_cast<size_t>(j)] = kOff;
    if (i < static_cast<int64_t>(zero_units.size()))
      for (int64_t u : zero_units[static_cast<size_t>(i)])
        la.intu.values()[static_cast<size_t>(u)] = kOff;
  }
  return gs;
}

std::vector<num::Tensor> GateSet::parameters() {
  std::vector<num::Tensor> out;
  if (frozen_) return out;
  for (auto& la : layers_)
    for (num::Tensor* t :
         {&la.self_head, &la.cross_head, &la.intu, &la.self_mha, &la.cross_mha, &la.ffn})
      if (t->defined()) out.push_back(*t);
  return out;
}

std::vector<std::pair<std::string, num::Tensor>> GateSet::named_alphas() const {
  std::vector<std::pair<std::string, num::Tensor>> out;
  const char* comp = cfg_.scope == GateConfig::Scope::encoder ? "enc" : "dec";
  for (size_t i = 0; i < layers_.size(); ++i) {
    const auto& la = layers_[i];
    auto base = std::string(comp) + "." + std::to_string(i);
    if (la.self_head.defined()) out.emplace_back(base + ".self_head", la.self_head);
    if (la.cross_head.defined()) out.emplace_back(base + ".cross_head", la.cross_head);
    if (la.intu.defined()) out.emplace_back(base + ".int", la.intu);
    if (la.self_mha.defined()) out.emplace_back(base + ".self_mha", la.self_mha);
    if (la.cross_mha.defined()) out.emplace_back(base + ".cross_mha", la.cross_mha);
    if (la.ffn.defined()) out.emplace_back(base + ".ffn", la.ffn);
  }
  return out;
}

RealizedGates GateSet::realize(GateMode mode, num::Rng* rng) const {
  RealizedGates rg;
  rg.scope = cfg_.scope;
  rg.layers.resize(layers_.size());
  GateMode m = frozen_ ? GateMode::eval_deterministic : mode;
  for (size_t i = 0; i < layers_.size(); ++i) {
    const auto& la = layers_[i];
    auto& rl = rg.layers[i];
    rl.z_self_head = realize_one(la.self_head, cfg_.hc, m, rng);
    rl.z_cross_head = realize_one(la.cross_head, cfg_.hc, m, rng);
    rl.z_int = realize_one(la.intu, cfg_.hc, m, rng);
    rl.z_self_mha = realize_one(la.self_mha, cfg_.hc, m, rng);
    rl.z_cross_mha = realize_one(la.cross_mha, cfg_.hc, m, rng);
    rl.z_ffn = realize_one(la.ffn, cfg_.hc, m, rng);
  }
  return rg;
}

int64_t GateSet::prunable_params() const {
  const int64_t head_params = 4 * dims_.d_model * dims_.d_head;
  const int64_t unit_params = 2 * dims_.d_model;
  int64_t per_layer = dims_.n_heads * head_params + dims_.d_ff * unit_params;
  if (dims_.has_cross) per_layer += dims_.n_heads * head_params;
  return dims_.layers * per_layer;
}

num::Tensor current_sparsity(const RealizedGates& gates, const GateSet& set) {
  const auto& dims = set.dims();
  const double head_params = static_cast<double>(4 * dims.d_model * dims.d_head);
  const double unit_params = static_cast<double>(2 * dims.d_model);
  const double M = static_cast<double>(set.prunable_params());

  auto gated_sum = [&](const num::Tensor& z_vec, const num::Tensor& z_layer,
                       int64_t count, double per) -> num::Tensor {
    num::Tensor kept = z_vec.defined()
                           ? num::sum(z_vec)
                           : num::Tensor::scalar(static_cast<double>(count));
    if (z_layer.defined()) kept = num::mul(kept, z_layer);
    return num::scale(kept, per);
  };

  num::Tensor kept_total = num::Tensor::scalar(0.0);
  for (const auto& rl : gates.layers) {
    kept_total = num::add(kept_total, gated_sum(rl.z_self_head, rl.z_self_mha,
                                                dims.n_heads, head_params));
    if (dims.has_cross)
      kept_total = num::add(kept_total, gated_sum(rl.z_cross_head, rl.z_cross_mha,
                                                  dims.n_heads, head_params));
    kept_total = num::add(kept_total, gated_sum(rl.z_int, rl.z_ffn, dims.d_ff, unit_params));
  }
  return num::add_const(num::scale(kept_total, -1.0 / M), 1.0);
}

LagrangianState LagrangianState::make(double t_final, double reg_lr) {
  LagrangianState s;
  s.lambda1 = num::Tensor::scalar(0.0, true);
  s.lambda2 = num::Tensor::scalar(0.0, true);
  s.t_final = t_final;
  s.reg_lr = reg_lr;
  return s;
}

num::Tensor lagrangian_penalty(const num::Tensor& s_hat, LagrangianState& state) {
  num::Tensor diff = num::add_const(s_hat, -state.t_current);
  num::Tensor linear = num::mul(state.lambda1, diff);
  num::Tensor quad = num::mul(state.lambda2, num::mul(diff, diff));
  return num::add(linear, quad);
}

void update_lagrange(LagrangianState& state) {
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  ++state.steps;
  const double bc = 1.0 - std::pow(kBeta2, static_cast<double>(state.steps));
  double* moments[2] = {&state.v1, &state.v2};
  num::Tensor* lams[2] = {&state.lambda1, &state.lambda2};
  for (int i = 0; i < 2; ++i) {
    const auto& g = lams[i]->grad_view();
    const double grad = g.empty() ? 0.0 : g[0];
    double& v = *moments[i];
    v = kBeta2 * v + (1.0 - kBeta2) * grad * grad;
    const double vhat = v / bc;
    lams[i]->values()[0] += state.reg_lr * grad / (std::sqrt(vhat) + kEps);
    lams[i]->zero_grad();
  }
}

double sparsity_warmup(int64_t step, int64_t total_warmup_steps, double t_final) {
  if (step < 0) throw num::ContractError("sparsity_warmup: negative step");
  if (total_warmup_steps <= 0) return t_final;
  double frac = static_cast<double>(step) / static_cast<double>(total_warmup_steps);
  return t_final * std::min(1.0, frac);
}

void project_alphas(GateSet& gates) {
  for (auto& t : gates.parameters())
    for (double& v : t.values()) v = std::min(v, kAlphaMax);
}

}  // namespace nash::gates
