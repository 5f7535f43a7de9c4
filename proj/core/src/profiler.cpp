#include "nash/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include <json.hpp>

#include "nash/metrics.hpp"
#include "nash/report.hpp"
#include "nash/rng.hpp"

namespace nash::infer {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string_view component_name(Component c) {
  switch (c) {
    case Component::self_attn_matmul: return "self_attn_matmul";
    case Component::cross_attn: return "cross_attn";
    case Component::ffn: return "ffn";
    case Component::layer_norm: return "layer_norm";
    case Component::dropout: return "dropout";
    case Component::residual_add: return "residual_add";
    case Component::softmax: return "softmax";
    case Component::embedding: return "embedding";
    case Component::projection: return "projection";
    case Component::kCount: break;
  }
  return "?";
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

int64_t median_i64(std::vector<int64_t> v) {
  std::vector<double> d(v.begin(), v.end());
  return static_cast<int64_t>(median(std::move(d)));
}

model::TokenMatrix random_src(int64_t batch, int64_t len, uint64_t seed) {
  num::Rng rng(seed);
  model::TokenMatrix m;
  m.batch = batch;
  m.len = len;
  m.ids.resize(static_cast<size_t>(batch * len));
  m.mask.assign(static_cast<size_t>(batch * len), 1.0);
  for (auto& id : m.ids)
    id = taskgen::kByteOffset + static_cast<int>(rng.below(256));
  return m;
}

}  // namespace

ProfileReport profile_components(const model::Seq2SeqModel& m, int64_t src_len,
                                 int64_t gen_len, int repeats, int64_t batch,
                                 uint64_t seed) {
  if (repeats < 1) throw num::ContractError("profile: repeats must be >= 1");
  model::TokenMatrix src = random_src(batch, src_len, seed);

  auto one_run = [&](ProfileSink* sink) -> int64_t {
    num::NoGradGuard ng;
    auto t0 = Clock::now();
    model::ForwardOpts opts;
    opts.sink = sink;
    model::ForwardTrace enc = model::encode(m, src, nullptr, opts);
    DecoderCache cache(m, enc, sink);
    std::vector<int> last(static_cast<size_t>(batch), taskgen::kBos);
    for (int64_t t = 0; t < gen_len; ++t) {
      std::vector<double> logits = cache.step(last, sink);
      const int64_t V = m.config.vocab_size;
      for (int64_t r = 0; r < batch; ++r) {
        const double* row = logits.data() + r * V;
        int best = 0;
        for (int64_t v = 1; v < V; ++v)
          if (row[v] > row[best]) best = static_cast<int>(v);
        // force exactly gen_len steps: EOS is fed back like any other token
        last[static_cast<size_t>(r)] = best;
      }
    }
    return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
  };

  one_run(nullptr);  // warm-up, excluded

  std::vector<ProfileSink> sinks(static_cast<size_t>(repeats));
  std::vector<int64_t> walls;
  for (int r = 0; r < repeats; ++r) walls.push_back(one_run(&sinks[static_cast<size_t>(r)]));

  ProfileReport rep;
  for (int c = 0; c < kComponentCount; ++c) {
    std::vector<int64_t> ns;
    for (const auto& s : sinks) ns.push_back(s.ns[static_cast<size_t>(c)]);
    rep.ns[static_cast<size_t>(c)] = median_i64(std::move(ns));
    rep.calls[static_cast<size_t>(c)] = sinks.front().calls[static_cast<size_t>(c)];
  }
  rep.tokens = batch * gen_len;
  rep.total_wall_ns = median_i64(std::move(walls));
  rep.wall_ns_per_token =
      static_cast<double>(rep.total_wall_ns) / static_cast<double>(rep.tokens);
  rep.fingerprint = "l_enc=" + std::to_string(m.config.l_enc) +
                    ",l_dec=" + std::to_string(m.config.l_dec) +
                    ",n_heads=" + std::to_string(m.config.n_heads) +
                    ",d_model=" + std::to_string(m.config.d_model) +
                    ",d_ff=" + std::to_string(m.config.d_ff) +
                    ",src_len=" + std::to_string(src_len) +
                    ",gen_len=" + std::to_string(gen_len) +
                    ",batch=" + std::to_string(batch) + ",seed=" + std::to_string(seed);
  return rep;
}

void write_profile_csv(const fs::path& path, const ProfileReport& r) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "component,ns_total,calls,share\n";
  const double total = static_cast<double>(std::max<int64_t>(r.total_wall_ns, 1));
  for (int c = 0; c < kComponentCount; ++c) {
    f << component_name(static_cast<Component>(c)) << ','
      << r.ns[static_cast<size_t>(c)] << ',' << r.calls[static_cast<size_t>(c)] << ','
      << io::format_double(static_cast<double>(r.ns[static_cast<size_t>(c)]) / total)
      << "\n";
  }
}

std::vector<SweepRow> seq_len_sweep(
    const std::vector<std::pair<std::string, model::ModelConfig>>& configs,
    const std::vector<int64_t>& seq_lens, int repeats, uint64_t seed) {
  std::vector<SweepRow> rows;
  for (const auto& [id, cfg] : configs) {
    num::Rng rng(seed);
    model::Seq2SeqModel m = model::Seq2SeqModel::init(cfg, rng);
    const auto& layer = m.encoder.front();
    for (int64_t L : seq_lens) {
      model::TokenMatrix toks;
      toks.batch = 1;
      toks.len = L;
      toks.ids.assign(static_cast<size_t>(L), taskgen::kBos);
      toks.mask.assign(static_cast<size_t>(L), 1.0);
      num::Tensor mask = model::key_padding_mask(toks, L);
      num::Tensor x = num::Tensor::zeros({1, L, cfg.d_model});
      num::Rng xr(seed ^ 0x5bd1e995);
      for (double& v : x.values()) v = xr.normal(0.0, 1.0);

      num::NoGradGuard ng;
      model::ForwardOpts opts;
      auto run_layer = [&] {
        num::Tensor y = model::attention_block_forward(layer.self_attn, x, nullptr, mask,
                                                       nullptr, nullptr, 0.0, opts, false);
        y = model::ffn_block_forward(layer.ffn, y, nullptr, nullptr, 0.0, opts);
        return y;
      };
      run_layer();  // warm-up
      std::vector<double> times;
      for (int r = 0; r < repeats; ++r) {
        auto t0 = Clock::now();
        run_layer();
        times.push_back(static_cast<double>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count()));
      }
      rows.push_back(SweepRow{id, L, median(std::move(times))});
    }
  }
  return rows;
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "config_id,seq_len,ns_per_layer\n";
  for (const auto& r : rows)
    f << r.config_id << ',' << r.seq_len << ',' << io::format_double(r.ns_per_layer) << "\n";
}

SpeedupResult measure_speedup(const model::Seq2SeqModel& baseline,
                              const model::Seq2SeqModel& pruned,
                              const taskgen::TaskSpec& task, int64_t eval_count,
                              const DecodeConfig& cfg, int repeats) {
  std::vector<int64_t> indices;
  for (int64_t i = 0; i < eval_count; ++i) indices.push_back(task.train_samples + i);
  taskgen::Batch batch = taskgen::make_batch(task, indices);

  auto run = [&](const model::Seq2SeqModel& m) -> double {
    auto t0 = Clock::now();
    auto out = decode(m, batch.src, cfg);
    (void)out;
    return 1e-6 * static_cast<double>(
                      std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0)
                          .count());
  };
  auto quality = [&](const model::Seq2SeqModel& m, double& em, double& rouge) {
    DecodeConfig greedy = cfg;
    greedy.strategy = DecodeConfig::Strategy::greedy;
    auto out = greedy_decode(m, batch.src, greedy);
    std::vector<std::string> pred;
    for (const auto& ids : out) pred.push_back(taskgen::decode_bytes(ids));
    em = taskgen::exact_match(pred, batch.tgt_text);
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i)
      acc += taskgen::rouge_l(pred[i], batch.tgt_text[i]).f1;
    rouge = pred.empty() ? 0.0 : acc / static_cast<double>(pred.size());
  };

  run(baseline);  // warm-up both paths
  run(pruned);
  std::vector<double> base_ms, pruned_ms;
  for (int r = 0; r < repeats; ++r) {
    base_ms.push_back(run(baseline));
    pruned_ms.push_back(run(pruned));
  }
  SpeedupResult res;
  res.baseline_ms_median = median(base_ms);
  res.pruned_ms_median = median(pruned_ms);
  res.baseline_ms_min = *std::min_element(base_ms.begin(), base_ms.end());
  res.baseline_ms_max = *std::max_element(base_ms.begin(), base_ms.end());
  res.pruned_ms_min = *std::min_element(pruned_ms.begin(), pruned_ms.end());
  res.pruned_ms_max = *std::max_element(pruned_ms.begin(), pruned_ms.end());
  res.speedup = res.baseline_ms_median / res.pruned_ms_median;
  quality(baseline, res.baseline_em, res.baseline_rouge_f1);
  quality(pruned, res.pruned_em, res.pruned_rouge_f1);
  res.examples = eval_count;
  res.repeats = repeats;
  return res;
}

void write_speedup_json(const fs::path& path, const SpeedupResult& r) {
  nlohmann::json j{{"schema_version", 1},
                   {"speedup", r.speedup},
                   {"baseline_ms", {{"median", r.baseline_ms_median},
                                    {"min", r.baseline_ms_min},
                                    {"max", r.baseline_ms_max}}},
                   {"pruned_ms", {{"median", r.pruned_ms_median},
                                  {"min", r.pruned_ms_min},
                                  {"max", r.pruned_ms_max}}},
                   {"baseline_em", r.baseline_em},
                   {"pruned_em", r.pruned_em},
                   {"baseline_rouge_f1", r.baseline_rouge_f1},
                   {"pruned_rouge_f1", r.pruned_rouge_f1},
                   {"examples", r.examples},
                   {"repeats", r.repeats}};
  io::write_json(path, j);
}

}  // namespace nash::infer
