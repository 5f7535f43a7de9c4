#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nash/ops.hpp"
#include "nash/rng.hpp"
#include "nash/tensor.hpp"

namespace nash::gates {

// Stretch constants. l < 0 and r > 1 make exact {0,1} endpoints reachable
// after clamping, which compaction relies on.
struct HardConcreteParams {
  double l = -0.1;
  double r = 1.1;
};

enum class GateMode { train_stochastic, eval_deterministic };

// Which structures carry learnable gates.
struct GateConfig {
  enum class Scope { encoder, decoder };
  Scope scope = Scope::encoder;
  bool width_gates = true;   // z_head per attention head, z_int per FFN unit
  bool layer_gates = false;  // z_MHA / z_FFN whole-sublayer gates
  // Start near the dense model (deterministic z ~ 0.96) while keeping the
  // clamp unsaturated so sparsity pressure can reach every alpha.
  double alpha_init = 2.0;
  HardConcreteParams hc;
};

// Upper projection bound for trained alphas. sigmoid(2.398)*(r-l)+l hits the
// clamp at 1, where the gradient dies; keeping alphas below the knee leaves
// an escape path for over-kept gates. Exact-zero saturation on the removal
// side stays reachable.
constexpr double kAlphaMax = 2.35;

struct GateDims {
  int64_t layers = 0;
  int64_t n_heads = 0;
  int64_t d_ff = 0;
  int64_t d_model = 0;
  int64_t d_head = 0;
  bool has_cross = false;  // decoder layers carry a second attention sublayer
};

// One training step's realised gate values. Undefined tensors mean the
// structure is frozen at exactly 1 and the model skips the gate op.
struct RealizedLayerGates {
  num::Tensor z_self_head;   // [N_h]
  num::Tensor z_cross_head;  // [N_h]
  num::Tensor z_int;         // [d_ff]
  num::Tensor z_self_mha;    // [1]
  num::Tensor z_cross_mha;   // [1]
  num::Tensor z_ffn;         // [1]
};

struct RealizedGates {
  std::vector<RealizedLayerGates> layers;
  GateConfig::Scope scope = GateConfig::Scope::encoder;
};

// Learnable hard-concrete location parameters for every gated structure of
// one component. Frozen structures have no alpha tensor at all.
class GateSet {
 public:
  GateSet() = default;
  static GateSet make(const GateConfig& cfg, const GateDims& dims);

  // Frozen deterministic pattern (no learnable parameters); zeros the listed
  // structures, everything else pinned to 1.
  static GateSet frozen_pattern(const GateDims& dims,
                                const std::vector<std::vector<int64_t>>& zero_heads,
                                const std::vector<std::vector<int64_t>>& zero_units);

  const GateConfig& config() const { return cfg_; }
  const GateDims& dims() const { return dims_; }
  bool frozen() const { return frozen_; }

  // Learnable alphas in canonical order (empty when frozen).
  std::vector<num::Tensor> parameters();
  std::vector<std::pair<std::string, num::Tensor>> named_alphas() const;

  // Realise every gate for one step. Stochastic mode draws u from `rng`.
  RealizedGates realize(GateMode mode, num::Rng* rng = nullptr) const;

  // Total parameter count the gates range over (the M of the sparsity formula).
  int64_t prunable_params() const;

 private:
  struct LayerAlphas {
    num::Tensor self_head, cross_head, intu, self_mha, cross_mha, ffn;
  };
  GateConfig cfg_;
  GateDims dims_;
  std::vector<LayerAlphas> layers_;
  bool frozen_ = false;
};

// Expected pruned fraction of the prunable parameters, as a graph scalar so
// gradients reach every alpha:
//   s_hat = 1 - kept / M,  kept = sum_i [ z_mha_i * sum_j z_head_ij * 4*d*d_h
//                                        + z_ffn_i * sum_u z_int_iu * 2*d ]
// (cross-attention terms included for decoder scope).
num::Tensor current_sparsity(const RealizedGates& gates, const GateSet& set);

struct LagrangianState {
  num::Tensor lambda1;  // learnable multipliers, updated by gradient ascent
  num::Tensor lambda2;
  double t_final = 0.30;
  double t_current = 0.0;  // warm-up scheduled target
  double reg_lr = 0.01;
  // second-moment accumulators for the normalized ascent
  double v1 = 0.0, v2 = 0.0;
  int64_t steps = 0;

  static LagrangianState make(double t_final, double reg_lr = 0.01);
};

// R = lambda1*(s_hat - t) + lambda2*(s_hat - t)^2 against t_current.
num::Tensor lagrangian_penalty(const num::Tensor& s_hat, LagrangianState& state);

// Momentum-free normalized gradient ascent on the multipliers (adversarial
// min-max: the model descends, the multipliers ascend), then clears their
// gradients. Magnitude normalization (second moment only, no first-moment
// momentum) makes the equality constraint binding within desk-scale step
// budgets; raw-gradient steps at the same reg_lr leave lambda far too small
// to outweigh the distillation pull on the gates.
void update_lagrange(LagrangianState& state);

// t_current = t_final * min(1, step / total_warmup_steps).
double sparsity_warmup(int64_t step, int64_t total_warmup_steps, double t_final);

// Projects every alpha to (-inf, kAlphaMax]; call after each optimizer step.
void project_alphas(GateSet& gates);

}  // namespace nash::gates
