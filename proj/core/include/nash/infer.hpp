#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nash/model.hpp"
#include "nash/timing.hpp"

namespace nash::infer {

// Incremental decoding state. Rows are live hypotheses (examples x beams).
// Self-attention keys/values grow one step at a time; cross-attention
// keys/values are computed once from the encoder output.
//
// Eval-only fast path on raw buffers; its logits are pinned to the graph
// forward by the full-recompute equivalence tests.
class DecoderCache {
 public:
  DecoderCache(const model::Seq2SeqModel& m, const model::ForwardTrace& enc,
               ProfileSink* sink = nullptr);

  int64_t rows() const { return rows_; }
  int64_t steps() const { return t_; }

  // Runs one decoder step for every row; last_tokens has one id per row.
  // Returns logits [rows x vocab].
  std::vector<double> step(std::span<const int> last_tokens, ProfileSink* sink = nullptr);

  // Row i of the new layout continues old row parents[i]; shrinking allowed.
  void gather_rows(std::span<const int> parents);

 private:
  struct LayerCache {
    // self KV appended per step: [t][rows][d_head] per head
    std::vector<std::vector<double>> self_k, self_v;
    // cross KV fixed: [rows][t_src][d_head] per head
    std::vector<std::vector<double>> cross_k, cross_v;
  };
  const model::Seq2SeqModel* m_;
  std::vector<LayerCache> layers_;
  std::vector<double> enc_out_;   // [rows][t_src][d]
  std::vector<double> src_mask_;  // [rows][t_src]
  int64_t rows_ = 0;
  int64_t t_src_ = 0;
  int64_t t_ = 0;
};

}  // namespace nash::infer
