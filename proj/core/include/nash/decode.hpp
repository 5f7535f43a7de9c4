#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "nash/infer.hpp"
#include "nash/model.hpp"

namespace nash::infer {

struct DecodeConfig {
  enum class Strategy { greedy, beam };
  Strategy strategy = Strategy::beam;
  int beam_size = 4;
  int max_new_tokens = 64;
  double length_norm = 0.0;  // final scores divided by len^length_norm
};

// Batched next-token scorer. Rows are the live hypotheses of all examples.
// Implementations own whatever state a step needs (KV caches, histories).
class Stepper {
 public:
  virtual ~Stepper() = default;
  virtual int64_t vocab() const = 0;
  virtual int64_t rows() const = 0;
  // Appends log-probabilities for the next token of every row into `out`
  // (rows x vocab, row-major), given the token just emitted per row.
  virtual void step(std::span<const int> last_tokens, std::vector<double>& out) = 0;
  // Row i of the new state continues old row parents[i]; may shrink rows.
  virtual void reorder(std::span<const int> parents) = 0;
};

// Beam search over an abstract stepper. All examples advance in lock-step;
// per example the top beam_size candidates overall are kept, EOS candidates
// retire into the finished set and shrink the live width (this makes
// beam_size = 1 coincide with greedy decoding exactly). Final hypothesis is
// the best finished (or live, if none finished) by score / len^length_norm.
std::vector<std::vector<int>> beam_search(Stepper& stepper, int64_t n_examples, int bos,
                                          int eos, const DecodeConfig& cfg);

std::vector<std::vector<int>> greedy_search(Stepper& stepper, int64_t n_examples, int bos,
                                            int eos, int max_new_tokens);

// Model-backed deciding. Returns generated token ids (no BOS, no EOS).
std::vector<std::vector<int>> greedy_decode(const model::Seq2SeqModel& m,
                                            const model::TokenMatrix& src,
                                            const DecodeConfig& cfg,
                                            ProfileSink* sink = nullptr);
std::vector<std::vector<int>> beam_decode(const model::Seq2SeqModel& m,
                                          const model::TokenMatrix& src,
                                          const DecodeConfig& cfg,
                                          ProfileSink* sink = nullptr);
std::vector<std::vector<int>> decode(const model::Seq2SeqModel& m,
                                     const model::TokenMatrix& src, const DecodeConfig& cfg,
                                     ProfileSink* sink = nullptr);

}  // namespace nash::infer
