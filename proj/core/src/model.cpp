#include "nash/model.hpp"

#include <cmath>
#include <functional>

namespace nash::model {

using num::Tensor;

void ModelConfig::validate() const {
  if (d_model != n_heads * d_head)
    throw num::ContractError("model config: d_model must equal n_heads * d_head");
  for (int64_t v : {l_enc, l_dec, n_heads, d_model, d_head, d_ff, vocab_size, max_len})
    if (v < 1) throw num::ContractError("model config: all extents must be >= 1");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw num::ContractError("model config: dropout_p must lie in [0, 1)");
}

namespace {

Tensor init_weight(num::Rng& rng, const num::Shape& shape, double std) {
  Tensor t = Tensor::zeros(shape, true);
  for (double& v : t.values()) v = rng.normal(0.0, std);
  return t;
}

AttentionBlock init_attention(const ModelConfig& cfg, num::Rng& rng) {
  AttentionBlock blk;
  const double std = 0.02;
  for (int64_t j = 0; j < cfg.n_heads; ++j) {
    HeadWeights h;
    h.wq = init_weight(rng, {cfg.d_model, cfg.d_head}, std);
    h.wk = init_weight(rng, {cfg.d_model, cfg.d_head}, std);
    h.wv = init_weight(rng, {cfg.d_model, cfg.d_head}, std);
    h.wo = init_weight(rng, {cfg.d_head, cfg.d_model}, std);
    blk.heads.push_back(std::move(h));
  }
  blk.ln_gain = Tensor::full({cfg.d_model}, 1.0, true);
  blk.ln_bias = Tensor::zeros({cfg.d_model}, true);
  return blk;
}

FfnBlock init_ffn(const ModelConfig& cfg, num::Rng& rng) {
  FfnBlock blk;
  const double std = 0.02;
  blk.w1 = init_weight(rng, {cfg.d_model, cfg.d_ff}, std);
  blk.w2 = init_weight(rng, {cfg.d_ff, cfg.d_model}, std);
  blk.ln_gain = Tensor::full({cfg.d_model}, 1.0, true);
  blk.ln_bias = Tensor::zeros({cfg.d_model}, true);
  return blk;
}

}  // namespace

Seq2SeqModel Seq2SeqModel::init(const ModelConfig& cfg, num::Rng& rng) {
  cfg.validate();
  Seq2SeqModel m;
  m.config = cfg;
  m.tok_embed = init_weight(rng, {cfg.vocab_size, cfg.d_model}, 0.02);
  m.pos_embed = init_weight(rng, {cfg.max_len, cfg.d_model}, 0.02);
  for (int64_t i = 0; i < cfg.l_enc; ++i)
    m.encoder.push_back(EncoderLayer{init_attention(cfg, rng), init_ffn(cfg, rng)});
  for (int64_t i = 0; i < cfg.l_dec; ++i)
    m.decoder.push_back(DecoderLayer{init_attention(cfg, rng), init_attention(cfg, rng),
                                     init_ffn(cfg, rng)});
  m.enc_final_ln_gain = Tensor::full({cfg.d_model}, 1.0, true);
  m.enc_final_ln_bias = Tensor::zeros({cfg.d_model}, true);
  m.dec_final_ln_gain = Tensor::full({cfg.d_model}, 1.0, true);
  m.dec_final_ln_bias = Tensor::zeros({cfg.d_model}, true);
  if (!cfg.tie_embeddings) m.out_proj = init_weight(rng, {cfg.vocab_size, cfg.d_model}, 0.02);
  return m;
}

namespace {

void visit_params(Seq2SeqModel& m,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("tok_embed", m.tok_embed);
  fn("pos_embed", m.pos_embed);
  auto attn = [&](const std::string& base, AttentionBlock& b) {
    for (size_t j = 0; j < b.heads.size(); ++j) {
      auto hb = base + ".head." + std::to_string(j);
      fn(hb + ".wq", b.heads[j].wq);
      fn(hb + ".wk", b.heads[j].wk);
      fn(hb + ".wv", b.heads[j].wv);
      fn(hb + ".wo", b.heads[j].wo);
    }
    fn(base + ".ln_gain", b.ln_gain);
    fn(base + ".ln_bias", b.ln_bias);
  };
  auto ffn = [&](const std::string& base, FfnBlock& b) {
    fn(base + ".w1", b.w1);
    fn(base + ".w2", b.w2);
    fn(base + ".ln_gain", b.ln_gain);
    fn(base + ".ln_bias", b.ln_bias);
  };
  for (size_t i = 0; i < m.encoder.size(); ++i) {
    auto base = "enc." + std::to_string(i);
    attn(base + ".self", m.encoder[i].self_attn);
    ffn(base + ".ffn", m.encoder[i].ffn);
  }
  fn("enc_final.ln_gain", m.enc_final_ln_gain);
  fn("enc_final.ln_bias", m.enc_final_ln_bias);
  for (size_t i = 0; i < m.decoder.size(); ++i) {
    auto base = "dec." + std::to_string(i);
    attn(base + ".self", m.decoder[i].self_attn);
    attn(base + ".cross", m.decoder[i].cross_attn);
    ffn(base + ".ffn", m.decoder[i].ffn);
  }
  fn("dec_final.ln_gain", m.dec_final_ln_gain);
  fn("dec_final.ln_bias", m.dec_final_ln_bias);
  if (m.out_proj.defined()) fn("out_proj", m.out_proj);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> Seq2SeqModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  visit_params(*this, [&](const std::string& n, Tensor& t) { out.emplace_back(n, t); });
  return out;
}

std::vector<std::pair<std::string, Tensor>> Seq2SeqModel::named_parameters() const {
  return const_cast<Seq2SeqModel*>(this)->named_parameters();
}

std::vector<Tensor> Seq2SeqModel::parameters() {
  std::vector<Tensor> out;
  for (auto& [n, t] : named_parameters()) out.push_back(t);
  return out;
}

void Seq2SeqModel::set_requires_grad(bool b) {
  for (auto& [n, t] : named_parameters()) t.set_requires_grad(b);
}

Seq2SeqModel Seq2SeqModel::clone() const {
  Seq2SeqModel c;
  c.config = config;
  c.tok_embed = tok_embed.clone();
  c.pos_embed = pos_embed.clone();
  auto clone_attn = [](const AttentionBlock& b) {
    AttentionBlock o;
    for (const auto& h : b.heads)
      o.heads.push_back(HeadWeights{h.wq.clone(), h.wk.clone(), h.wv.clone(), h.wo.clone()});
    o.ln_gain = b.ln_gain.clone();
    o.ln_bias = b.ln_bias.clone();
    o.enabled = b.enabled;
    return o;
  };
  auto clone_ffn = [](const FfnBlock& b) {
    FfnBlock o;
    o.w1 = b.w1.clone();
    o.w2 = b.w2.clone();
    o.ln_gain = b.ln_gain.clone();
    o.ln_bias = b.ln_bias.clone();
    o.enabled = b.enabled;
    return o;
  };
  for (const auto& l : encoder)
    c.encoder.push_back(EncoderLayer{clone_attn(l.self_attn), clone_ffn(l.ffn)});
  for (const auto& l : decoder)
    c.decoder.push_back(DecoderLayer{clone_attn(l.self_attn), clone_attn(l.cross_attn),
                                     clone_ffn(l.ffn)});
  c.enc_final_ln_gain = enc_final_ln_gain.clone();
  c.enc_final_ln_bias = enc_final_ln_bias.clone();
  c.dec_final_ln_gain = dec_final_ln_gain.clone();
  c.dec_final_ln_bias = dec_final_ln_bias.clone();
  if (out_proj.defined()) c.out_proj = out_proj.clone();
  return c;
}

namespace {

constexpr double kMaskOff = -1e30;

using infer::Component;
using infer::ScopedTimer;

bool live(const Tensor* t) { return t && t->defined(); }

}  // namespace

// additive [B, Tq, Tk] mask: 0 where attendable, kMaskOff where forbidden
Tensor key_padding_mask(const TokenMatrix& keys, int64_t t_q) {
  Tensor m = Tensor::zeros({keys.batch, t_q, keys.len});
  auto& v = m.values();
  for (int64_t b = 0; b < keys.batch; ++b)
    for (int64_t q = 0; q < t_q; ++q)
      for (int64_t k = 0; k < keys.len; ++k)
        if (keys.m(b, k) == 0.0)
          v[static_cast<size_t>((b * t_q + q) * keys.len + k)] = kMaskOff;
  return m;
}

Tensor causal_padding_mask(const TokenMatrix& keys) {
  Tensor m = key_padding_mask(keys, keys.len);
  auto& v = m.values();
  for (int64_t b = 0; b < keys.batch; ++b)
    for (int64_t q = 0; q < keys.len; ++q)
      for (int64_t k = q + 1; k < keys.len; ++k)
        v[static_cast<size_t>((b * keys.len + q) * keys.len + k)] = kMaskOff;
  return m;
}

// Pre-LN attention block: x + dropout(z_layer * sum_j z_j * head_j(LN(x))).
// Cross attention reads keys/values from `kv` (the encoder output).
Tensor attention_block_forward(const AttentionBlock& blk, const Tensor& x, const Tensor* kv,
                               const Tensor& add_mask, const Tensor* z_heads,
                               const Tensor* z_layer, double dropout_p,
                               const ForwardOpts& o, bool is_cross) {
  if (!blk.enabled || blk.heads.empty()) return x;
  if (live(z_heads) && z_heads->numel() != static_cast<int64_t>(blk.heads.size()))
    throw num::ContractError("attention block: gate count != head count");
  const Component mm = is_cross ? Component::cross_attn : Component::self_attn_matmul;
  const int64_t d_head = blk.heads.front().wq.dim(1);
  Tensor h;
  {
    ScopedTimer t(o.sink, Component::layer_norm);
    h = num::layer_norm(x, blk.ln_gain, blk.ln_bias);
  }
  const Tensor& kv_src = kv ? *kv : h;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d_head));

  Tensor acc;
  for (size_t j = 0; j < blk.heads.size(); ++j) {
    const HeadWeights& hw = blk.heads[j];
    Tensor scores, v;
    {
      ScopedTimer t(o.sink, mm);
      Tensor q = num::matmul(h, hw.wq);
      Tensor k = num::matmul(kv_src, hw.wk);
      v = num::matmul(kv_src, hw.wv);
      scores = num::add(num::scale(num::bmm_nt(q, k), inv_sqrt_dh), add_mask);
    }
    Tensor attn;
    {
      ScopedTimer t(o.sink, Component::softmax);
      attn = num::softmax(scores, -1);
    }
    {
      ScopedTimer t(o.sink, Component::dropout);
      attn = num::dropout(attn, dropout_p, o.train, o.rng);
    }
    Tensor head_out;
    {
      ScopedTimer t(o.sink, mm);
      head_out = num::matmul(num::bmm(attn, v), hw.wo);
    }
    if (live(z_heads)) head_out = num::mul_index(head_out, *z_heads, static_cast<int64_t>(j));
    acc = acc.defined() ? num::add(acc, head_out) : head_out;
  }
  if (live(z_layer)) acc = num::mul_index(acc, *z_layer, 0);
  {
    ScopedTimer t(o.sink, Component::dropout);
    acc = num::dropout(acc, dropout_p, o.train, o.rng);
  }
  ScopedTimer t(o.sink, Component::residual_add);
  return num::add(x, acc);
}

// Pre-LN FFN block: x + dropout(z_ffn * GELU(LN(x) W1) diag(z_int) W2).
Tensor ffn_block_forward(const FfnBlock& blk, const Tensor& x, const Tensor* z_int,
                         const Tensor* z_ffn, double dropout_p, const ForwardOpts& o) {
  if (!blk.enabled || blk.w1.dim(1) == 0) return x;
  if (live(z_int) && z_int->numel() != blk.w1.dim(1))
    throw num::ShapeError("ffn block: z_int length != intermediate width");
  Tensor h;
  {
    ScopedTimer t(o.sink, Component::layer_norm);
    h = num::layer_norm(x, blk.ln_gain, blk.ln_bias);
  }
  Tensor y;
  {
    ScopedTimer t(o.sink, Component::ffn);
    Tensor u = num::gelu(num::matmul(h, blk.w1));
    if (live(z_int)) u = num::mul_lastdim(u, *z_int);
    y = num::matmul(u, blk.w2);
  }
  if (live(z_ffn)) y = num::mul_index(y, *z_ffn, 0);
  {
    ScopedTimer t(o.sink, Component::dropout);
    y = num::dropout(y, dropout_p, o.train, o.rng);
  }
  ScopedTimer t(o.sink, Component::residual_add);
  return num::add(x, y);
}

namespace {

Tensor embed_tokens(const Seq2SeqModel& m, const TokenMatrix& toks, const ForwardOpts& o) {
  ScopedTimer t(o.sink, Component::embedding);
  if (toks.len > m.config.max_len)
    throw num::ContractError("sequence length exceeds max_len");
  Tensor tok = num::embedding(m.tok_embed, {toks.batch, toks.len}, toks.ids);
  std::vector<int> pos_ids(static_cast<size_t>(toks.batch * toks.len));
  for (int64_t b = 0; b < toks.batch; ++b)
    for (int64_t p = 0; p < toks.len; ++p)
      pos_ids[static_cast<size_t>(b * toks.len + p)] = static_cast<int>(p);
  Tensor pos = num::embedding(m.pos_embed, {toks.batch, toks.len}, pos_ids);
  return num::add(tok, pos);
}

const gates::RealizedLayerGates* layer_gates(const gates::RealizedGates* g,
                                             gates::GateConfig::Scope want, size_t i) {
  if (!g || g->scope != want || i >= g->layers.size()) return nullptr;
  return &g->layers[i];
}

}  // namespace

ForwardTrace encode(const Seq2SeqModel& m, const TokenMatrix& src,
                    const gates::RealizedGates* g, const ForwardOpts& opts) {
  ForwardTrace trace;
  trace.src = src;
  Tensor x = embed_tokens(m, src, opts);
  Tensor mask = key_padding_mask(src, src.len);
  for (size_t i = 0; i < m.encoder.size(); ++i) {
    const EncoderLayer& layer = m.encoder[i];
    const auto* lg = layer_gates(g, gates::GateConfig::Scope::encoder, i);
    x = attention_block_forward(layer.self_attn, x, nullptr, mask,
                                lg ? &lg->z_self_head : nullptr,
                                lg ? &lg->z_self_mha : nullptr, m.config.dropout_p, opts,
                                false);
    x = ffn_block_forward(layer.ffn, x, lg ? &lg->z_int : nullptr,
                          lg ? &lg->z_ffn : nullptr, m.config.dropout_p, opts);
    trace.enc_hidden.push_back(x);
  }
  {
    ScopedTimer t(opts.sink, Component::layer_norm);
    trace.enc_out = num::layer_norm(x, m.enc_final_ln_gain, m.enc_final_ln_bias);
  }
  return trace;
}

void decode_forward(const Seq2SeqModel& m, const TokenMatrix& tgt_in, ForwardTrace& trace,
                    const gates::RealizedGates* g, const ForwardOpts& opts) {
  if (!trace.enc_out.defined())
    throw num::ContractError("decode_forward: encoder trace missing");
  Tensor x = embed_tokens(m, tgt_in, opts);
  Tensor self_mask = causal_padding_mask(tgt_in);
  Tensor cross_mask = key_padding_mask(trace.src, tgt_in.len);
  trace.dec_hidden.clear();
  for (size_t i = 0; i < m.decoder.size(); ++i) {
    const DecoderLayer& layer = m.decoder[i];
    const auto* lg = layer_gates(g, gates::GateConfig::Scope::decoder, i);
    x = attention_block_forward(layer.self_attn, x, nullptr, self_mask,
                                lg ? &lg->z_self_head : nullptr,
                                lg ? &lg->z_self_mha : nullptr, m.config.dropout_p, opts,
                                false);
    x = attention_block_forward(layer.cross_attn, x, &trace.enc_out, cross_mask,
                                lg ? &lg->z_cross_head : nullptr,
                                lg ? &lg->z_cross_mha : nullptr, m.config.dropout_p, opts,
                                true);
    x = ffn_block_forward(layer.ffn, x, lg ? &lg->z_int : nullptr,
                          lg ? &lg->z_ffn : nullptr, m.config.dropout_p, opts);
    trace.dec_hidden.push_back(x);
  }
  Tensor h;
  {
    ScopedTimer t(opts.sink, Component::layer_norm);
    h = num::layer_norm(x, m.dec_final_ln_gain, m.dec_final_ln_bias);
  }
  ScopedTimer t(opts.sink, Component::projection);
  trace.logits = num::matmul_nt(h, m.out_proj.defined() ? m.out_proj : m.tok_embed);
}

ForwardTrace forward(const Seq2SeqModel& m, const TokenMatrix& src, const TokenMatrix& tgt_in,
                     const gates::RealizedGates* g, const ForwardOpts& opts) {
  ForwardTrace t = encode(m, src, g, opts);
  decode_forward(m, tgt_in, t, g, opts);
  return t;
}

int64_t count_params(const Seq2SeqModel& m, ParamScope scope) {
  auto named = m.named_parameters();
  auto is_embedding = [](const std::string& n) {
    return n == "tok_embed" || n == "pos_embed";
  };
  int64_t total = 0;
  for (auto& [n, t] : named) {
    bool counted = false;
    switch (scope) {
      case ParamScope::full:
        counted = !is_embedding(n);
        break;
      case ParamScope::encoder:
        counted = n.rfind("enc", 0) == 0;
        break;
      case ParamScope::decoder:
        counted = n.rfind("dec", 0) == 0;
        break;
      case ParamScope::prunable_heads:
        counted = n.rfind("enc.", 0) == 0 && n.find(".head.") != std::string::npos;
        break;
      case ParamScope::prunable_ffn:
        counted = n.rfind("enc.", 0) == 0 &&
                  (n.find(".ffn.w1") != std::string::npos ||
                   n.find(".ffn.w2") != std::string::npos);
        break;
    }
    if (counted) total += t.numel();
  }
  return total;
}

}  // namespace nash::model
