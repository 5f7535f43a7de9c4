#include "nash/decode.hpp"

#include <algorithm>
#include <cmath>

namespace nash::infer {

namespace {

struct Hypothesis {
  std::vector<int> tokens;  // generated ids, EOS excluded
  double score = 0.0;       // cumulative log-probability
  bool alive = true;
};

double normalized(double score, size_t len, double exponent) {
  if (exponent == 0.0) return score;
  double denom = std::pow(static_cast<double>(std::max<size_t>(len, 1)), exponent);
  return score / denom;
}

void log_softmax_rows(std::vector<double>& logits, int64_t rows, int64_t vocab) {
  for (int64_t r = 0; r < rows; ++r) {
    double* row = logits.data() + r * vocab;
    double mx = row[0];
    for (int64_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
    double denom = 0.0;
    for (int64_t v = 0; v < vocab; ++v) denom += std::exp(row[v] - mx);
    double ld = std::log(denom) + mx;
    for (int64_t v = 0; v < vocab; ++v) row[v] -= ld;
  }
}

// model-backed stepper over a KV cache
class ModelStepper : public Stepper {
 public:
  ModelStepper(const model::Seq2SeqModel& m, const model::ForwardTrace& enc,
               ProfileSink* sink)
      : cache_(m, enc, sink), vocab_(m.config.vocab_size), sink_(sink) {}

  int64_t vocab() const override { return vocab_; }
  int64_t rows() const override { return cache_.rows(); }
  void step(std::span<const int> last_tokens, std::vector<double>& out) override {
    out = cache_.step(last_tokens, sink_);
    log_softmax_rows(out, cache_.rows(), vocab_);
  }
  void reorder(std::span<const int> parents) override { cache_.gather_rows(parents); }

 private:
  DecoderCache cache_;
  int64_t vocab_;
  ProfileSink* sink_;
};

model::ForwardTrace encode_eval(const model::Seq2SeqModel& m, const model::TokenMatrix& src,
                                ProfileSink* sink) {
  num::NoGradGuard ng;
  model::ForwardOpts opts;
  opts.train = false;
  opts.sink = sink;
  return model::encode(m, src, nullptr, opts);
}

// replicate each example's encoder rows `k` times (beam expansion)
model::ForwardTrace replicate_rows(const model::ForwardTrace& enc, int64_t k) {
  if (k == 1) return enc;
  model::ForwardTrace out;
  const auto& src = enc.src;
  out.src.batch = src.batch * k;
  out.src.len = src.len;
  out.src.ids.resize(static_cast<size_t>(out.src.batch * out.src.len));
  out.src.mask.resize(static_cast<size_t>(out.src.batch * out.src.len));
  const int64_t B = src.batch, T = src.len;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < k; ++i) {
      std::copy_n(src.ids.data() + b * T, T, out.src.ids.data() + (b * k + i) * T);
      std::copy_n(src.mask.data() + b * T, T, out.src.mask.data() + (b * k + i) * T);
    }
  const int64_t d = enc.enc_out.dim(2);
  out.enc_out = num::Tensor::zeros({B * k, T, d});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < k; ++i)
      std::copy_n(enc.enc_out.values().data() + b * T * d, T * d,
                  out.enc_out.values().data() + (b * k + i) * T * d);
  return out;
}

}  // namespace

std::vector<std::vector<int>> greedy_search(Stepper& stepper, int64_t n_examples, int bos,
                                            int eos, int max_new_tokens) {
  if (stepper.rows() != n_examples)
    throw num::ContractError("greedy_search: stepper must start with one row per example");
  std::vector<std::vector<int>> out(static_cast<size_t>(n_examples));
  std::vector<int> last(static_cast<size_t>(n_examples), bos);
  std::vector<char> done(static_cast<size_t>(n_examples), 0);
  std::vector<double> logprobs;
  const int64_t V = stepper.vocab();
  for (int t = 0; t < max_new_tokens; ++t) {
    stepper.step(last, logprobs);
    bool all_done = true;
    for (int64_t r = 0; r < n_examples; ++r) {
      if (done[static_cast<size_t>(r)]) continue;
      const double* row = logprobs.data() + r * V;
      int best = 0;
      for (int64_t v = 1; v < V; ++v)
        if (row[v] > row[best]) best = static_cast<int>(v);
      if (best == eos) {
        done[static_cast<size_t>(r)] = 1;
        last[static_cast<size_t>(r)] = eos;  // finished rows keep stepping on EOS
      } else {
        out[static_cast<size_t>(r)].push_back(best);
        last[static_cast<size_t>(r)] = best;
        all_done = false;
      }
    }
    if (all_done) break;
  }
  return out;
}

std::vector<std::vector<int>> beam_search(Stepper& stepper, int64_t n_examples, int bos,
                                          int eos, const DecodeConfig& cfg) {
  const int beam = std::max(1, cfg.beam_size);
  const int64_t V = stepper.vocab();
  if (stepper.rows() != n_examples * beam)
    throw num::ContractError("beam_search: stepper must start with beam rows per example");

  // live[e] holds up to `beam` hypotheses; global row order is
  // concat over examples of their live hypotheses.
  std::vector<std::vector<Hypothesis>> live(static_cast<size_t>(n_examples));
  std::vector<std::vector<Hypothesis>> finished(static_cast<size_t>(n_examples));
  for (auto& l : live) l.assign(1, Hypothesis{});  // beams start identical; keep one

  // shrink the initial beam-replicated state down to one row per example
  {
    std::vector<int> parents;
    for (int64_t e = 0; e < n_examples; ++e) parents.push_back(static_cast<int>(e * beam));
    stepper.reorder(parents);
  }

  std::vector<double> logprobs;
  for (int t = 0; t < cfg.max_new_tokens; ++t) {
    std::vector<int> last;
    for (int64_t e = 0; e < n_examples; ++e)
      for (const auto& h : live[static_cast<size_t>(e)])
        last.push_back(h.tokens.empty() ? bos : h.tokens.back());
    if (last.empty()) break;
    stepper.step(last, logprobs);

    std::vector<int> parents;
    int64_t row_base = 0;
    bool any_live = false;
    for (int64_t e = 0; e < n_examples; ++e) {
      auto& lv = live[static_cast<size_t>(e)];
      auto& fin = finished[static_cast<size_t>(e)];
      const int64_t width = static_cast<int64_t>(lv.size());
      const int64_t want = beam - static_cast<int64_t>(fin.size());
      std::vector<std::pair<double, std::pair<int, int>>> cands;  // score, (local row, token)
      cands.reserve(static_cast<size_t>(width * V));
      for (int64_t i = 0; i < width; ++i) {
        const double* row = logprobs.data() + (row_base + i) * V;
        for (int64_t v = 0; v < V; ++v)
          cands.push_back({lv[static_cast<size_t>(i)].score + row[v],
                           {static_cast<int>(i), static_cast<int>(v)}});
      }
      const int64_t take = std::min<int64_t>(want, static_cast<int64_t>(cands.size()));
      std::partial_sort(cands.begin(), cands.begin() + take, cands.end(),
                        [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;  // deterministic tie-break
                        });
      std::vector<Hypothesis> next;
      for (int64_t c = 0; c < take; ++c) {
        const auto& [score, rt] = cands[static_cast<size_t>(c)];
        Hypothesis h = lv[static_cast<size_t>(rt.first)];
        h.score = score;
        if (rt.second == eos) {
          fin.push_back(std::move(h));
        } else {
          h.tokens.push_back(rt.second);
          parents.push_back(static_cast<int>(row_base + rt.first));
          next.push_back(std::move(h));
        }
      }
      lv = std::move(next);
      if (!lv.empty()) any_live = true;
      row_base += width;
    }
    stepper.reorder(parents);
    if (!any_live) break;
  }

  std::vector<std::vector<int>> out(static_cast<size_t>(n_examples));
  for (int64_t e = 0; e < n_examples; ++e) {
    const Hypothesis* best = nullptr;
    double best_score = -std::numeric_limits<double>::infinity();
    auto consider = [&](const Hypothesis& h) {
      double s = normalized(h.score, h.tokens.size(), cfg.length_norm);
      if (s > best_score) {
        best_score = s;
        best = &h;
      }
    };
    const auto& fin = finished[static_cast<size_t>(e)];
    if (!fin.empty())
      for (const auto& h : fin) consider(h);
    else
      for (const auto& h : live[static_cast<size_t>(e)]) consider(h);
    if (best) out[static_cast<size_t>(e)] = best->tokens;
  }
  return out;
}

std::vector<std::vector<int>> greedy_decode(const model::Seq2SeqModel& m,
                                            const model::TokenMatrix& src,
                                            const DecodeConfig& cfg, ProfileSink* sink) {
  auto enc = encode_eval(m, src, sink);
  ModelStepper stepper(m, enc, sink);
  return greedy_search(stepper, src.batch, 1, 2, cfg.max_new_tokens);
}

std::vector<std::vector<int>> beam_decode(const model::Seq2SeqModel& m,
                                          const model::TokenMatrix& src,
                                          const DecodeConfig& cfg, ProfileSink* sink) {
  auto enc = encode_eval(m, src, sink);
  auto expanded = replicate_rows(enc, std::max(1, cfg.beam_size));
  ModelStepper stepper(m, expanded, sink);
  return beam_search(stepper, src.batch, 1, 2, cfg);
}

std::vector<std::vector<int>> decode(const model::Seq2SeqModel& m,
                                     const model::TokenMatrix& src, const DecodeConfig& cfg,
                                     ProfileSink* sink) {
  if (cfg.strategy == DecodeConfig::Strategy::greedy) return greedy_decode(m, src, cfg, sink);
  return beam_decode(m, src, cfg, sink);
}

}  // namespace nash::infer
