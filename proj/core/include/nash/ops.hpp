#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nash/rng.hpp"
#include "nash/tensor.hpp"

namespace nash::num {

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// y = c * x  (c is a plain constant, not a graph node)
Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, double c);

// y = x * s[index], s is a tensor so gradient flows into s[index].
Tensor mul_index(const Tensor& x, const Tensor& s, int64_t index);

// y[..., u] = x[..., u] * v[u]; v has length = last extent of x.
Tensor mul_lastdim(const Tensor& x, const Tensor& v);

// Matrix product over the last dimension: x[..., k] · w[k, n] -> [..., n].
Tensor matmul(const Tensor& x, const Tensor& w);

// x[..., d] · wᵀ where w is [n, d] -> [..., n]  (tied output projections).
Tensor matmul_nt(const Tensor& x, const Tensor& w);

// Batched: a[B, m, k] · b[B, k, n] -> [B, m, n].
Tensor bmm(const Tensor& a, const Tensor& b);
// Batched with transposed rhs: a[B, m, k] · b[B, n, k]ᵀ -> [B, m, n].
Tensor bmm_nt(const Tensor& a, const Tensor& b);

// Max-subtracted softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis = -1);

// Normalisation over the last axis: ((x - mean) / sqrt(var + eps)) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-8);

// Exact Gaussian-CDF GELU: x * Phi(x).
Tensor gelu(const Tensor& x);

// Inverted dropout. train=false is the identity (but still a call site);
// rng may be null unless train && p > 0.
Tensor dropout(const Tensor& x, double p, bool train, Rng* rng);

// Row gather: table[V, d], ids flattened shape -> ids.shape + [d].
Tensor embedding(const Tensor& table, const Shape& ids_shape,
                 std::span<const int> ids);

Tensor sum(const Tensor& x);         // -> scalar
Tensor mean_all(const Tensor& x);    // -> scalar

// Mean squared error over all elements -> scalar.
Tensor mse(const Tensor& a, const Tensor& b);

// Masked token-mean cross entropy. logits [M, V] (leading dims flattened),
// targets/mask length M; mask 0 drops a position.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     std::span<const double> mask);

// Masked token-mean KL( softmax(student/T) || softmax(teacher/T) ).
// Gradient flows into `student` only; `teacher` is read as constants.
Tensor kl_divergence(const Tensor& student, const Tensor& teacher,
                     std::span<const double> mask, double temperature = 1.0);

// KL( softmax(teacher/T) || softmax(student/T) ), gradient into `student`.
Tensor kl_divergence_reverse(const Tensor& student, const Tensor& teacher,
                             std::span<const double> mask, double temperature = 1.0);

// Hard-concrete gates, elementwise over alpha:
//   s = sigmoid(log u - log(1-u) + alpha); z = clamp(s*(r-l)+l, 0, 1).
// `u` must contain one draw in (0,1) per alpha entry (tests may pin it).
Tensor hard_concrete(const Tensor& alpha, std::span<const double> u, double l,
                     double r);
// Deterministic realisation: the u = 0.5 plug-in.
Tensor hard_concrete_deterministic(const Tensor& alpha, double l, double r);

// Plain-value helpers (no graph participation).
double l2_norm(const Tensor& x);
bool all_finite(const Tensor& x);

}  // namespace nash::num
