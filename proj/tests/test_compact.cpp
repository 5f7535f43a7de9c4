#include <doctest.h>

#include <cmath>

#include "nash/compact.hpp"
#include "nash/pipeline.hpp"

using namespace nash;
using num::Tensor;

namespace {

model::ModelConfig small_config() {
  model::ModelConfig cfg;
  cfg.l_enc = 2;
  cfg.l_dec = 2;
  cfg.n_heads = 4;
  cfg.d_model = 32;
  cfg.d_head = 8;
  cfg.d_ff = 24;
  cfg.vocab_size = 24;
  cfg.max_len = 24;
  cfg.dropout_p = 0.0;
  return cfg;
}

model::TokenMatrix tokens(std::vector<std::vector<int>> rows) {
  model::TokenMatrix m;
  m.batch = static_cast<int64_t>(rows.size());
  m.len = static_cast<int64_t>(rows[0].size());
  for (const auto& r : rows) m.len = std::max<int64_t>(m.len, static_cast<int64_t>(r.size()));
  m.ids.assign(static_cast<size_t>(m.batch * m.len), 0);
  m.mask.assign(static_cast<size_t>(m.batch * m.len), 0.0);
  for (int64_t b = 0; b < m.batch; ++b)
    for (size_t t = 0; t < rows[static_cast<size_t>(b)].size(); ++t) {
      m.ids[static_cast<size_t>(b * m.len) + t] = rows[static_cast<size_t>(b)][t];
      m.mask[static_cast<size_t>(b * m.len) + t] = 1.0;
    }
  return m;
}

// gated forward is the oracle: deterministic gate realization fed through the
// full graph path
Tensor gated_logits(const model::Seq2SeqModel& m, const gates::GateSet& gs,
                    const model::TokenMatrix& src, const model::TokenMatrix& tgt) {
  num::NoGradGuard ng;
  auto z = gs.realize(gates::GateMode::eval_deterministic);
  model::ForwardOpts opts;
  return model::forward(m, src, tgt, &z, opts).logits;
}

Tensor plain_logits(const model::Seq2SeqModel& m, const model::TokenMatrix& src,
                    const model::TokenMatrix& tgt) {
  num::NoGradGuard ng;
  model::ForwardOpts opts;
  return model::forward(m, src, tgt, nullptr, opts).logits;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (size_t i = 0; i < a.values().size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

gates::GateDims encoder_dims(const model::ModelConfig& cfg) {
  return {cfg.l_enc, cfg.n_heads, cfg.d_ff, cfg.d_model, cfg.d_head, false};
}

}  // namespace

TEST_CASE("compaction with no zero gates only folds fractional values") {
  num::Rng rng(31);
  auto cfg = small_config();
  auto m = model::Seq2SeqModel::init(cfg, rng);
  gates::GateConfig gc;
  gc.alpha_init = 2.5;  // deterministic z exactly 1 at this init
  auto gs = gates::GateSet::make(gc, encoder_dims(cfg));

  auto src = tokens({{3, 4, 5, 6}});
  auto tgt = tokens({{1, 7, 8}});
  auto compacted = pipeline::compact(m, gs);
  CHECK(max_abs_diff(gated_logits(m, gs, src, tgt), plain_logits(compacted, src, tgt)) <
        1e-10);
  CHECK(pipeline::achieved_sparsity(m, compacted, gs) == doctest::Approx(0.0));
}

TEST_CASE("zeroing all heads of one layer keeps the identity branch") {
  num::Rng rng(32);
  auto cfg = small_config();
  auto m = model::Seq2SeqModel::init(cfg, rng);
  gates::GateConfig gc;
  gc.alpha_init = 20.0;
  auto gs = gates::GateSet::make(gc, encoder_dims(cfg));
  for (auto& [name, t] : gs.named_alphas())
    if (name == "enc.0.self_head")
      for (double& v : t.values()) v = -20.0;

  auto compacted = pipeline::compact(m, gs);
  CHECK(compacted.encoder[0].self_attn.heads.empty());
  CHECK_FALSE(compacted.encoder[0].self_attn.enabled);
  CHECK(compacted.encoder[1].self_attn.heads.size() == static_cast<size_t>(cfg.n_heads));

  auto src = tokens({{3, 4, 5, 6}});
  auto tgt = tokens({{1, 7, 8}});
  CHECK(max_abs_diff(gated_logits(m, gs, src, tgt), plain_logits(compacted, src, tgt)) <
        1e-8);
}

TEST_CASE("compaction equivalence for random gate patterns") {
  auto cfg = small_config();
  num::Rng init_rng(33);
  auto m = model::Seq2SeqModel::init(cfg, init_rng);
  auto src = tokens({{3, 4, 5, 6, 7}, {8, 9, 10, 11, 12}});
  auto tgt = tokens({{1, 13, 14}, {1, 15, 16}});

  for (uint64_t trial = 0; trial < 20; ++trial) {
    num::Rng rng(100 + trial);
    gates::GateConfig gc;
    auto gs = gates::GateSet::make(gc, encoder_dims(cfg));
    // random mixture of saturated-off, saturated-on, and fractional gates
    for (auto& t : gs.parameters())
      for (double& v : t.values()) {
        double u = rng.uniform();
        if (u < 0.3)
          v = -20.0;
        else if (u < 0.6)
          v = 20.0;
        else
          v = rng.uniform(-1.0, 2.0);  // fractional z
      }
    auto compacted = pipeline::compact(m, gs);
    CHECK(max_abs_diff(gated_logits(m, gs, src, tgt), plain_logits(compacted, src, tgt)) <
          1e-8);
  }
}

TEST_CASE("decoder-scope compaction with sublayer gates") {
  auto cfg = small_config();
  num::Rng init_rng(34);
  auto m = model::Seq2SeqModel::init(cfg, init_rng);
  gates::GateConfig gc;
  gc.scope = gates::GateConfig::Scope::decoder;
  gc.width_gates = false;
  gc.layer_gates = true;
  gc.alpha_init = 20.0;
  gates::GateDims dims{cfg.l_dec, cfg.n_heads, cfg.d_ff, cfg.d_model, cfg.d_head, true};
  auto gs = gates::GateSet::make(gc, dims);
  for (auto& [name, t] : gs.named_alphas()) {
    if (name == "dec.0.self_mha") t.values()[0] = -20.0;  // drop one SA sublayer
    if (name == "dec.1.ffn") t.values()[0] = -20.0;       // drop one FF sublayer
  }
  auto compacted = pipeline::compact(m, gs);
  CHECK_FALSE(compacted.decoder[0].self_attn.enabled);
  CHECK(compacted.decoder[0].cross_attn.enabled);
  CHECK_FALSE(compacted.decoder[1].ffn.enabled);

  auto src = tokens({{3, 4, 5}});
  auto tgt = tokens({{1, 6, 7}});
  CHECK(max_abs_diff(gated_logits(m, gs, src, tgt), plain_logits(compacted, src, tgt)) <
        1e-8);
  // removed: one SA sublayer + one FF sublayer, out of 2 layers x (SA+CA+FF)
  const double sa = static_cast<double>(cfg.n_heads * 4 * cfg.d_model * cfg.d_head);
  const double ff = static_cast<double>(cfg.d_ff * 2 * cfg.d_model);
  const double expect = (sa + ff) / (2.0 * (2.0 * sa + ff));
  CHECK(pipeline::achieved_sparsity(m, compacted, gs) ==
        doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("identity plan + frozen gates keep the student equal to the teacher") {
  auto cfg = small_config();
  num::Rng rng(35);
  auto teacher = model::Seq2SeqModel::init(cfg, rng);
  auto plan = pipeline::uniform_selection(cfg.l_dec, cfg.l_dec);
  auto student = pipeline::build_student(teacher, plan);
  auto src = tokens({{3, 4, 5, 6}});
  auto tgt = tokens({{1, 7, 8, 9}});
  CHECK(max_abs_diff(plain_logits(teacher, src, tgt), plain_logits(student, src, tgt)) <
        1e-12);
}

TEST_CASE("build_student copies exactly the selected layers bit for bit") {
  model::ModelConfig cfg = small_config();
  cfg.l_dec = 4;
  num::Rng rng(36);
  auto teacher = model::Seq2SeqModel::init(cfg, rng);
  auto plan = pipeline::uniform_selection(4, 2);  // {1, 4}
  auto student = pipeline::build_student(teacher, plan);

  REQUIRE(student.decoder.size() == 2);
  CHECK(student.config.l_dec == 2);
  CHECK(student.decoder[0].self_attn.heads[0].wq.values() ==
        teacher.decoder[0].self_attn.heads[0].wq.values());
  CHECK(student.decoder[1].self_attn.heads[0].wq.values() ==
        teacher.decoder[3].self_attn.heads[0].wq.values());
  CHECK(student.decoder[1].ffn.w1.values() == teacher.decoder[3].ffn.w1.values());
  // copies, not aliases
  CHECK(student.decoder[0].ffn.w1.impl() != teacher.decoder[0].ffn.w1.impl());

  // parameter arithmetic: teacher count - (L - d_s) * per-layer decoder count
  int64_t per_layer = 0;
  {
    const auto& l = teacher.decoder[0];
    for (const auto& h : l.self_attn.heads)
      per_layer += h.wq.numel() + h.wk.numel() + h.wv.numel() + h.wo.numel();
    for (const auto& h : l.cross_attn.heads)
      per_layer += h.wq.numel() + h.wk.numel() + h.wv.numel() + h.wo.numel();
    per_layer += l.self_attn.ln_gain.numel() + l.self_attn.ln_bias.numel();
    per_layer += l.cross_attn.ln_gain.numel() + l.cross_attn.ln_bias.numel();
    per_layer += l.ffn.w1.numel() + l.ffn.w2.numel() + l.ffn.ln_gain.numel() +
                 l.ffn.ln_bias.numel();
  }
  CHECK(model::count_params(student, model::ParamScope::full) ==
        model::count_params(teacher, model::ParamScope::full) - 2 * per_layer);
}
