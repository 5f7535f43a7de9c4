#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nash/gates.hpp"
#include "nash/ops.hpp"
#include "nash/rng.hpp"
#include "nash/tensor.hpp"
#include "nash/timing.hpp"

namespace nash::model {

struct ModelConfig {
  int64_t l_enc = 4;
  int64_t l_dec = 4;
  int64_t n_heads = 4;
  int64_t d_model = 64;
  int64_t d_head = 16;
  int64_t d_ff = 128;
  int64_t vocab_size = 259;
  int64_t max_len = 320;
  double dropout_p = 0.1;
  bool tie_embeddings = true;

  void validate() const;  // d_model == n_heads * d_head, extents >= 1
};

// wq/wk/wv: [d, d_head], wo: [d_head, d]
struct HeadWeights {
  num::Tensor wq, wk, wv, wo;
};

struct AttentionBlock {
  std::vector<HeadWeights> heads;
  num::Tensor ln_gain, ln_bias;
  bool enabled = true;  // compaction may remove the whole sublayer
};

struct FfnBlock {
  num::Tensor w1, w2;  // [d, d_ff_i], [d_ff_i, d]; d_ff_i may shrink per layer
  num::Tensor ln_gain, ln_bias;
  bool enabled = true;
};

struct EncoderLayer {
  AttentionBlock self_attn;
  FfnBlock ffn;
};

struct DecoderLayer {
  AttentionBlock self_attn;
  AttentionBlock cross_attn;
  FfnBlock ffn;
};

// Pre-LN residual blocks: x + dropout(gate * sublayer(LN(x))). Gates scale
// only the sublayer branch, so z = 0 reduces a block to the identity.
struct Seq2SeqModel {
  ModelConfig config;
  num::Tensor tok_embed;  // [V, d]
  num::Tensor pos_embed;  // [max_len, d], learned absolute positions
  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  num::Tensor enc_final_ln_gain, enc_final_ln_bias;
  num::Tensor dec_final_ln_gain, dec_final_ln_bias;
  num::Tensor out_proj;  // [V, d]; undefined when tie_embeddings

  static Seq2SeqModel init(const ModelConfig& cfg, num::Rng& rng);
  Seq2SeqModel clone() const;  // deep copy of all weights

  // Canonical (name, tensor) enumeration; checkpoint and optimizer order.
  std::vector<std::pair<std::string, num::Tensor>> named_parameters();
  std::vector<std::pair<std::string, num::Tensor>> named_parameters() const;
  std::vector<num::Tensor> parameters();
  void set_requires_grad(bool b);
};

// Padded id matrix. mask is 1.0 for real tokens, 0.0 for padding.
struct TokenMatrix {
  int64_t batch = 0;
  int64_t len = 0;
  std::vector<int> ids;
  std::vector<double> mask;

  int id(int64_t b, int64_t t) const { return ids[static_cast<size_t>(b * len + t)]; }
  double m(int64_t b, int64_t t) const { return mask[static_cast<size_t>(b * len + t)]; }
};

struct ForwardOpts {
  bool train = false;
  num::Rng* rng = nullptr;           // dropout stream; required when train
  infer::ProfileSink* sink = nullptr;
};

// Per-layer post-block hidden states, for distillation and equivalence tests.
struct ForwardTrace {
  std::vector<num::Tensor> enc_hidden;  // [B, T_src, d] per live encoder layer
  std::vector<num::Tensor> dec_hidden;  // [B, T_tgt, d] per live decoder layer
  num::Tensor enc_out;                  // encoder output after final LN
  num::Tensor logits;                   // [B, T_tgt, V]
  TokenMatrix src;                      // kept for cross-attention masking
};

// Single pre-LN blocks, public for gating tests and per-layer timing.
// x: [B, T, d]; kv: encoder output for cross attention, null for self;
// add_mask: additive attention mask [B, Tq, Tk]; z_* null means frozen at 1.
num::Tensor attention_block_forward(const AttentionBlock& blk, const num::Tensor& x,
                                    const num::Tensor* kv, const num::Tensor& add_mask,
                                    const num::Tensor* z_heads, const num::Tensor* z_layer,
                                    double dropout_p, const ForwardOpts& opts,
                                    bool is_cross);
num::Tensor ffn_block_forward(const FfnBlock& blk, const num::Tensor& x,
                              const num::Tensor* z_int, const num::Tensor* z_ffn,
                              double dropout_p, const ForwardOpts& opts);

// Additive attention masks (constants): 0 attendable, -1e30 forbidden.
num::Tensor key_padding_mask(const TokenMatrix& keys, int64_t t_q);
num::Tensor causal_padding_mask(const TokenMatrix& keys);

// Encoder stack. `gates` may be null (all structures at 1).
ForwardTrace encode(const Seq2SeqModel& m, const TokenMatrix& src,
                    const gates::RealizedGates* gates, const ForwardOpts& opts);

// Teacher-forced decoder over the full target prefix matrix (causal mask).
// Fills dec_hidden and logits on the trace.
void decode_forward(const Seq2SeqModel& m, const TokenMatrix& tgt_in,
                    ForwardTrace& trace, const gates::RealizedGates* gates,
                    const ForwardOpts& opts);

// Convenience: encode + decode_forward.
ForwardTrace forward(const Seq2SeqModel& m, const TokenMatrix& src,
                     const TokenMatrix& tgt_in, const gates::RealizedGates* gates,
                     const ForwardOpts& opts);

enum class ParamScope { encoder, decoder, full, prunable_heads, prunable_ffn };

// Exact parameter counts. `full` excludes the embeddings (and the tied output
// projection); prunable scopes count the encoder's gate-able structures.
int64_t count_params(const Seq2SeqModel& m, ParamScope scope);

}  // namespace nash::model
