#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "nash/decode.hpp"
#include "nash/model.hpp"
#include "nash/taskgen.hpp"
#include "nash/timing.hpp"

namespace nash::infer {

struct ProfileReport {
  std::array<int64_t, kComponentCount> ns{};     // per-repeat medians
  std::array<int64_t, kComponentCount> calls{};  // per repeat (identical across repeats)
  int64_t tokens = 0;
  int64_t total_wall_ns = 0;  // median decode wall time
  double wall_ns_per_token = 0.0;
  std::string fingerprint;
};

// Greedy-style decode of `gen_len` forced steps with scoped instrumentation;
// warm-up repeat excluded, medians over `repeats`. Single-threaded.
ProfileReport profile_components(const model::Seq2SeqModel& m, int64_t src_len,
                                 int64_t gen_len, int repeats, int64_t batch,
                                 uint64_t seed);

void write_profile_csv(const std::filesystem::path& path, const ProfileReport& r);

struct SweepRow {
  std::string config_id;
  int64_t seq_len = 0;
  double ns_per_layer = 0.0;
};

// Times one full transformer layer (attention + FFN blocks) per config and
// sequence length; median over repeats.
std::vector<SweepRow> seq_len_sweep(
    const std::vector<std::pair<std::string, model::ModelConfig>>& configs,
    const std::vector<int64_t>& seq_lens, int repeats, uint64_t seed);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

struct SpeedupResult {
  double speedup = 0.0;  // baseline_median / pruned_median
  double baseline_ms_median = 0.0, baseline_ms_min = 0.0, baseline_ms_max = 0.0;
  double pruned_ms_median = 0.0, pruned_ms_min = 0.0, pruned_ms_max = 0.0;
  double baseline_em = 0.0, pruned_em = 0.0;
  double baseline_rouge_f1 = 0.0, pruned_rouge_f1 = 0.0;
  int64_t examples = 0;
  int repeats = 0;
};

// Decodes the same eval set with both models; median wall-clock per batch
// over `repeats` runs (>= 5 recommended), plus quality on the decoded output.
SpeedupResult measure_speedup(const model::Seq2SeqModel& baseline,
                              const model::Seq2SeqModel& pruned,
                              const taskgen::TaskSpec& task, int64_t eval_count,
                              const DecodeConfig& cfg, int repeats);

void write_speedup_json(const std::filesystem::path& path, const SpeedupResult& r);

double median(std::vector<double> v);

}  // namespace nash::infer
