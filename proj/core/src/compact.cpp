#include "nash/compact.hpp"

namespace nash::pipeline {

namespace {

using model::AttentionBlock;
using model::FfnBlock;
using num::Tensor;

std::vector<double> gate_values(const Tensor& z, int64_t count, double fallback = 1.0) {
  if (!z.defined()) return std::vector<double>(static_cast<size_t>(count), fallback);
  return z.values();
}

double scalar_gate(const Tensor& z) { return z.defined() ? z.values()[0] : 1.0; }

// heads with z == 0 dropped; surviving fractional z folded into W_O rows
void compact_attention(AttentionBlock& blk, const std::vector<double>& z_head,
                       double z_layer) {
  if (z_layer == 0.0) {
    blk.heads.clear();
    blk.enabled = false;
    return;
  }
  std::vector<model::HeadWeights> kept;
  for (size_t j = 0; j < blk.heads.size(); ++j) {
    const double z = z_head[j] * z_layer;
    if (z == 0.0) continue;
    model::HeadWeights h = std::move(blk.heads[j]);
    if (z != 1.0)
      for (double& v : h.wo.values()) v *= z;
    kept.push_back(std::move(h));
  }
  blk.heads = std::move(kept);
  if (blk.heads.empty()) blk.enabled = false;
}

// units with z == 0 sliced out of W1 columns / W2 rows; fractional z folded
// into the surviving W2 rows
void compact_ffn(FfnBlock& blk, const std::vector<double>& z_int, double z_layer) {
  if (z_layer == 0.0) {
    blk.enabled = false;
    return;
  }
  const int64_t d = blk.w1.dim(0);
  const int64_t d_ff = blk.w1.dim(1);
  std::vector<int64_t> keep;
  for (int64_t u = 0; u < d_ff; ++u)
    if (z_int[static_cast<size_t>(u)] != 0.0) keep.push_back(u);
  if (keep.empty()) {
    blk.enabled = false;
    return;
  }
  const int64_t k = static_cast<int64_t>(keep.size());
  Tensor w1 = Tensor::zeros({d, k}, blk.w1.requires_grad());
  Tensor w2 = Tensor::zeros({k, d}, blk.w2.requires_grad());
  for (int64_t row = 0; row < d; ++row)
    for (int64_t c = 0; c < k; ++c)
      w1.values()[static_cast<size_t>(row * k + c)] =
          blk.w1.values()[static_cast<size_t>(row * d_ff + keep[static_cast<size_t>(c)])];
  for (int64_t c = 0; c < k; ++c) {
    const double z = z_int[static_cast<size_t>(keep[static_cast<size_t>(c)])] * z_layer;
    for (int64_t col = 0; col < d; ++col)
      w2.values()[static_cast<size_t>(c * d + col)] =
          z * blk.w2.values()[static_cast<size_t>(keep[static_cast<size_t>(c)] * d + col)];
  }
  blk.w1 = std::move(w1);
  blk.w2 = std::move(w2);
}

}  // namespace

model::Seq2SeqModel compact(const model::Seq2SeqModel& m, const gates::GateSet& gates) {
  model::Seq2SeqModel out = m.clone();
  num::NoGradGuard ng;
  auto realized = gates.realize(gates::GateMode::eval_deterministic);
  const auto scope = gates.config().scope;
  const auto& layers = realized.layers;

  if (scope == gates::GateConfig::Scope::encoder) {
    if (layers.size() != out.encoder.size())
      throw num::ContractError("compact: gate layer count != encoder depth");
    for (size_t i = 0; i < out.encoder.size(); ++i) {
      auto& layer = out.encoder[i];
      const auto& g = layers[i];
      compact_attention(layer.self_attn,
                        gate_values(g.z_self_head, static_cast<int64_t>(layer.self_attn.heads.size())),
                        scalar_gate(g.z_self_mha));
      compact_ffn(layer.ffn, gate_values(g.z_int, layer.ffn.w1.dim(1)), scalar_gate(g.z_ffn));
    }
  } else {
    if (layers.size() != out.decoder.size())
      throw num::ContractError("compact: gate layer count != decoder depth");
    for (size_t i = 0; i < out.decoder.size(); ++i) {
      auto& layer = out.decoder[i];
      const auto& g = layers[i];
      compact_attention(layer.self_attn,
                        gate_values(g.z_self_head, static_cast<int64_t>(layer.self_attn.heads.size())),
                        scalar_gate(g.z_self_mha));
      compact_attention(layer.cross_attn,
                        gate_values(g.z_cross_head, static_cast<int64_t>(layer.cross_attn.heads.size())),
                        scalar_gate(g.z_cross_mha));
      compact_ffn(layer.ffn, gate_values(g.z_int, layer.ffn.w1.dim(1)), scalar_gate(g.z_ffn));
    }
  }
  return out;
}

double achieved_sparsity(const model::Seq2SeqModel& original,
                         const model::Seq2SeqModel& compacted,
                         const gates::GateSet& gates) {
  auto prunable = [&](const model::Seq2SeqModel& m) {
    int64_t total = 0;
    auto attn = [&](const AttentionBlock& b) {
      for (const auto& h : b.heads)
        total += h.wq.numel() + h.wk.numel() + h.wv.numel() + h.wo.numel();
    };
    auto ffn = [&](const FfnBlock& b) {
      if (b.enabled) total += b.w1.numel() + b.w2.numel();
    };
    if (gates.config().scope == gates::GateConfig::Scope::encoder) {
      for (const auto& l : m.encoder) {
        attn(l.self_attn);
        ffn(l.ffn);
      }
    } else {
      for (const auto& l : m.decoder) {
        attn(l.self_attn);
        attn(l.cross_attn);
        ffn(l.ffn);
      }
    }
    return total;
  };
  const double before = static_cast<double>(prunable(original));
  const double after = static_cast<double>(prunable(compacted));
  return before == 0.0 ? 0.0 : 1.0 - after / before;
}

}  // namespace nash::pipeline
