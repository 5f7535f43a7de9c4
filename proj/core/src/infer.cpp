#include "nash/infer.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace nash::infer {

namespace {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;
using EVec = Eigen::VectorXd;

constexpr double kMaskOff = -1e30;

void layer_norm_rows(const std::vector<double>& x, int64_t rows, int64_t d,
                     const std::vector<double>& gain, const std::vector<double>& bias,
                     std::vector<double>& out, double eps = 1e-8) {
  out.resize(x.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = x.data() + r * d;
    double* po = out.data() + r * d;
    double mean = 0.0;
    for (int64_t c = 0; c < d; ++c) mean += px[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t c = 0; c < d; ++c) {
      double dd = px[c] - mean;
      var += dd * dd;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t c = 0; c < d; ++c)
      po[c] = (px[c] - mean) * inv * gain[static_cast<size_t>(c)] + bias[static_cast<size_t>(c)];
  }
}

void softmax_inplace(double* row, int64_t n) {
  double mx = row[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  double denom = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - mx);
    denom += row[i];
  }
  for (int64_t i = 0; i < n; ++i) row[i] /= denom;
}

}  // namespace

DecoderCache::DecoderCache(const model::Seq2SeqModel& m, const model::ForwardTrace& enc,
                           ProfileSink* sink)
    : m_(&m) {
  const auto& cfg = m.config;
  rows_ = enc.enc_out.dim(0);
  t_src_ = enc.enc_out.dim(1);
  enc_out_ = enc.enc_out.values();
  src_mask_ = enc.src.mask;
  layers_.resize(m.decoder.size());
  ScopedTimer t(sink, Component::cross_attn);
  MapC E(enc_out_.data(), rows_ * t_src_, cfg.d_model);
  for (size_t li = 0; li < m.decoder.size(); ++li) {
    const auto& blk = m.decoder[li].cross_attn;
    auto& lc = layers_[li];
    lc.self_k.resize(blk.heads.size());
    lc.self_v.resize(blk.heads.size());
    lc.cross_k.resize(blk.heads.size());
    lc.cross_v.resize(blk.heads.size());
    if (!blk.enabled) continue;
    for (size_t j = 0; j < blk.heads.size(); ++j) {
      const auto& hw = blk.heads[j];
      const int64_t dh = hw.wk.dim(1);
      lc.cross_k[j].resize(static_cast<size_t>(rows_ * t_src_ * dh));
      lc.cross_v[j].resize(static_cast<size_t>(rows_ * t_src_ * dh));
      MapM K(lc.cross_k[j].data(), rows_ * t_src_, dh);
      MapM V(lc.cross_v[j].data(), rows_ * t_src_, dh);
      MapC Wk(hw.wk.values().data(), cfg.d_model, dh);
      MapC Wv(hw.wv.values().data(), cfg.d_model, dh);
      K.noalias() = E * Wk;
      V.noalias() = E * Wv;
    }
  }
  // self-attention layout sizes depend on per-layer head widths
  for (size_t li = 0; li < m.decoder.size(); ++li) {
    const auto& blk = m.decoder[li].self_attn;
    layers_[li].self_k.resize(blk.heads.size());
    layers_[li].self_v.resize(blk.heads.size());
  }
}

std::vector<double> DecoderCache::step(std::span<const int> last_tokens, ProfileSink* sink) {
  const auto& m = *m_;
  const auto& cfg = m.config;
  const int64_t d = cfg.d_model;
  if (static_cast<int64_t>(last_tokens.size()) != rows_)
    throw num::ContractError("decode step: one token per row required");
  if (t_ >= cfg.max_len)
    throw num::ContractError("decode step: exceeded max_len positions");

  // embedding + position
  std::vector<double> x(static_cast<size_t>(rows_ * d));
  {
    ScopedTimer t(sink, Component::embedding);
    for (int64_t r = 0; r < rows_; ++r) {
      int id = last_tokens[static_cast<size_t>(r)];
      if (id < 0 || id >= cfg.vocab_size)
        throw num::ContractError("decode step: token id out of vocabulary");
      const double* te = m.tok_embed.values().data() + static_cast<int64_t>(id) * d;
      const double* pe = m.pos_embed.values().data() + t_ * d;
      double* px = x.data() + r * d;
      for (int64_t c = 0; c < d; ++c) px[c] = te[c] + pe[c];
    }
  }

  std::vector<double> h, y(static_cast<size_t>(rows_ * d));
  std::vector<double> scores;
  const int64_t t_new = t_ + 1;

  for (size_t li = 0; li < m.decoder.size(); ++li) {
    const auto& layer = m.decoder[li];
    auto& lc = layers_[li];

    // causal self-attention over the cache
    if (layer.self_attn.enabled && !layer.self_attn.heads.empty()) {
      {
        ScopedTimer t(sink, Component::layer_norm);
        layer_norm_rows(x, rows_, d, layer.self_attn.ln_gain.values(),
                        layer.self_attn.ln_bias.values(), h);
      }
      std::fill(y.begin(), y.end(), 0.0);
      for (size_t j = 0; j < layer.self_attn.heads.size(); ++j) {
        const auto& hw = layer.self_attn.heads[j];
        const int64_t dh = hw.wq.dim(1);
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<double> q(static_cast<size_t>(rows_ * dh));
        std::vector<double> kv_new(static_cast<size_t>(rows_ * dh));
        {
          ScopedTimer t(sink, Component::self_attn_matmul);
          MapC H(h.data(), rows_, d);
          MapM Q(q.data(), rows_, dh);
          Q.noalias() = H * MapC(hw.wq.values().data(), d, dh);
          MapM KN(kv_new.data(), rows_, dh);
          KN.noalias() = H * MapC(hw.wk.values().data(), d, dh);
          lc.self_k[j].insert(lc.self_k[j].end(), kv_new.begin(), kv_new.end());
          MapM VN(kv_new.data(), rows_, dh);
          VN.noalias() = H * MapC(hw.wv.values().data(), d, dh);
          lc.self_v[j].insert(lc.self_v[j].end(), kv_new.begin(), kv_new.end());
        }
        scores.assign(static_cast<size_t>(rows_ * t_new), 0.0);
        {
          ScopedTimer t(sink, Component::self_attn_matmul);
          // K layout: [t][rows][dh]
          for (int64_t step = 0; step < t_new; ++step) {
            const double* kbase = lc.self_k[j].data() + step * rows_ * dh;
            for (int64_t r = 0; r < rows_; ++r) {
              const double* qr = q.data() + r * dh;
              const double* kr = kbase + r * dh;
              double acc = 0.0;
              for (int64_t c = 0; c < dh; ++c) acc += qr[c] * kr[c];
              scores[static_cast<size_t>(r * t_new + step)] = acc * inv_sqrt_dh;
            }
          }
        }
        {
          ScopedTimer t(sink, Component::softmax);
          for (int64_t r = 0; r < rows_; ++r) softmax_inplace(scores.data() + r * t_new, t_new);
        }
        {
          ScopedTimer t(sink, Component::self_attn_matmul);
          std::vector<double> ctx(static_cast<size_t>(rows_ * dh), 0.0);
          for (int64_t step = 0; step < t_new; ++step) {
            const double* vbase = lc.self_v[j].data() + step * rows_ * dh;
            for (int64_t r = 0; r < rows_; ++r) {
              const double a = scores[static_cast<size_t>(r * t_new + step)];
              const double* vr = vbase + r * dh;
              double* cr = ctx.data() + r * dh;
              for (int64_t c = 0; c < dh; ++c) cr[c] += a * vr[c];
            }
          }
          MapM Y(y.data(), rows_, d);
          Y.noalias() += MapC(ctx.data(), rows_, dh) * MapC(hw.wo.values().data(), dh, d);
        }
      }
      {
        ScopedTimer t(sink, Component::dropout);  // identity at eval, still a call site
      }
      {
        ScopedTimer t(sink, Component::residual_add);
        for (size_t i = 0; i < x.size(); ++i) x[i] += y[i];
      }
    }

    // cross-attention over the fixed encoder keys
    if (layer.cross_attn.enabled && !layer.cross_attn.heads.empty()) {
      {
        ScopedTimer t(sink, Component::layer_norm);
        layer_norm_rows(x, rows_, d, layer.cross_attn.ln_gain.values(),
                        layer.cross_attn.ln_bias.values(), h);
      }
      std::fill(y.begin(), y.end(), 0.0);
      for (size_t j = 0; j < layer.cross_attn.heads.size(); ++j) {
        const auto& hw = layer.cross_attn.heads[j];
        const int64_t dh = hw.wq.dim(1);
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<double> q(static_cast<size_t>(rows_ * dh));
        scores.assign(static_cast<size_t>(rows_ * t_src_), 0.0);
        {
          ScopedTimer t(sink, Component::cross_attn);
          MapM Q(q.data(), rows_, dh);
          Q.noalias() = MapC(h.data(), rows_, d) * MapC(hw.wq.values().data(), d, dh);
          for (int64_t r = 0; r < rows_; ++r) {
            MapC K(lc.cross_k[j].data() + r * t_src_ * dh, t_src_, dh);
            Eigen::Map<EVec> s(scores.data() + r * t_src_, t_src_);
            s.noalias() = K * Eigen::Map<const EVec>(q.data() + r * dh, dh) * inv_sqrt_dh;
            for (int64_t k = 0; k < t_src_; ++k)
              if (src_mask_[static_cast<size_t>(r * t_src_ + k)] == 0.0)
                scores[static_cast<size_t>(r * t_src_ + k)] = kMaskOff;
          }
        }
        {
          ScopedTimer t(sink, Component::softmax);
          for (int64_t r = 0; r < rows_; ++r) softmax_inplace(scores.data() + r * t_src_, t_src_);
        }
        {
          ScopedTimer t(sink, Component::cross_attn);
          std::vector<double> ctx(static_cast<size_t>(rows_ * dh));
          for (int64_t r = 0; r < rows_; ++r) {
            MapC V(lc.cross_v[j].data() + r * t_src_ * dh, t_src_, dh);
            Eigen::Map<EVec> c(ctx.data() + r * dh, dh);
            c.noalias() = V.transpose() * Eigen::Map<const EVec>(scores.data() + r * t_src_, t_src_);
          }
          MapM Y(y.data(), rows_, d);
          Y.noalias() += MapC(ctx.data(), rows_, dh) * MapC(hw.wo.values().data(), dh, d);
        }
      }
      {
        ScopedTimer t(sink, Component::dropout);
      }
      {
        ScopedTimer t(sink, Component::residual_add);
        for (size_t i = 0; i < x.size(); ++i) x[i] += y[i];
      }
    }

    // ffn
    if (layer.ffn.enabled && layer.ffn.w1.dim(1) > 0) {
      {
        ScopedTimer t(sink, Component::layer_norm);
        layer_norm_rows(x, rows_, d, layer.ffn.ln_gain.values(), layer.ffn.ln_bias.values(), h);
      }
      {
        ScopedTimer t(sink, Component::ffn);
        const int64_t dff = layer.ffn.w1.dim(1);
        std::vector<double> u(static_cast<size_t>(rows_ * dff));
        MapM U(u.data(), rows_, dff);
        U.noalias() = MapC(h.data(), rows_, d) * MapC(layer.ffn.w1.values().data(), d, dff);
        constexpr double kInvSqrt2 = 0.7071067811865476;
        for (double& uv : u) uv = uv * 0.5 * (1.0 + std::erf(uv * kInvSqrt2));
        MapM Y(y.data(), rows_, d);
        Y.noalias() = U * MapC(layer.ffn.w2.values().data(), dff, d);
      }
      {
        ScopedTimer t(sink, Component::dropout);
      }
      {
        ScopedTimer t(sink, Component::residual_add);
        for (size_t i = 0; i < x.size(); ++i) x[i] += y[i];
      }
    }
  }

  {
    ScopedTimer t(sink, Component::layer_norm);
    layer_norm_rows(x, rows_, d, m.dec_final_ln_gain.values(), m.dec_final_ln_bias.values(), h);
  }
  std::vector<double> logits(static_cast<size_t>(rows_ * cfg.vocab_size));
  {
    ScopedTimer t(sink, Component::projection);
    const auto& proj = m.out_proj.defined() ? m.out_proj : m.tok_embed;
    MapM L(logits.data(), rows_, cfg.vocab_size);
    L.noalias() = MapC(h.data(), rows_, d) *
                  MapC(proj.values().data(), cfg.vocab_size, d).transpose();
  }
  ++t_;
  return logits;
}

void DecoderCache::gather_rows(std::span<const int> parents) {
  const int64_t new_rows = static_cast<int64_t>(parents.size());
  bool identity = new_rows == rows_;
  for (int64_t i = 0; identity && i < new_rows; ++i)
    if (parents[static_cast<size_t>(i)] != i) identity = false;
  if (identity) return;
  for (int p : parents)
    if (p < 0 || p >= rows_) throw num::ContractError("gather_rows: parent out of range");

  const int64_t d = m_->config.d_model;
  auto gather_flat = [&](std::vector<double>& buf, int64_t stride) {
    std::vector<double> out(static_cast<size_t>(new_rows * stride));
    for (int64_t i = 0; i < new_rows; ++i)
      std::copy_n(buf.data() + static_cast<int64_t>(parents[static_cast<size_t>(i)]) * stride,
                  stride, out.data() + i * stride);
    buf = std::move(out);
  };
  auto gather_stepwise = [&](std::vector<double>& buf, int64_t dh) {
    // layout [t][rows][dh]
    std::vector<double> out(static_cast<size_t>(t_ * new_rows * dh));
    for (int64_t step = 0; step < t_; ++step)
      for (int64_t i = 0; i < new_rows; ++i)
        std::copy_n(buf.data() + (step * rows_ + parents[static_cast<size_t>(i)]) * dh, dh,
                    out.data() + (step * new_rows + i) * dh);
    buf = std::move(out);
  };

  for (size_t li = 0; li < layers_.size(); ++li) {
    auto& lc = layers_[li];
    const auto& self_heads = m_->decoder[li].self_attn.heads;
    for (size_t j = 0; j < lc.self_k.size(); ++j) {
      if (lc.self_k[j].empty()) continue;
      const int64_t dh = self_heads[j].wk.dim(1);
      gather_stepwise(lc.self_k[j], dh);
      gather_stepwise(lc.self_v[j], dh);
    }
    const auto& cross_heads = m_->decoder[li].cross_attn.heads;
    for (size_t j = 0; j < lc.cross_k.size(); ++j) {
      if (lc.cross_k[j].empty()) continue;
      const int64_t dh = cross_heads[j].wk.dim(1);
      gather_flat(lc.cross_k[j], t_src_ * dh);
      gather_flat(lc.cross_v[j], t_src_ * dh);
    }
  }
  gather_flat(enc_out_, t_src_ * d);
  gather_flat(src_mask_, t_src_);
  rows_ = new_rows;
}

}  // namespace nash::infer
