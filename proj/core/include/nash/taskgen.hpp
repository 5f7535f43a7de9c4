#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nash/model.hpp"

namespace nash::taskgen {

// Byte-level vocabulary: specials + raw bytes. No learned tokenizer.
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kByteOffset = 3;
constexpr int kVocabSize = kByteOffset + 256;

std::vector<int> encode_bytes(std::string_view s);
// Stops at EOS, skips PAD/BOS.
std::string decode_bytes(std::span<const int> ids);

enum class TaskKind { copy, reverse, sort_digits, lookup_summarize };

TaskKind parse_task(const std::string& name);
std::string task_name(TaskKind k);

struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  std::string alphabet = "abcdefgh";
  int min_len = 8;
  int max_len = 16;
  int num_fields = 20;  // lookup_summarize: key/value fields in the source
  int value_len = 4;    // lookup_summarize: extracted value length
  int64_t train_samples = 4096;
  int64_t eval_samples = 256;
  uint64_t seed = 1;

  int64_t total_samples() const { return train_samples + eval_samples; }
};

// Deterministic function of (spec, index). Target equals the reference
// function of the source.
std::pair<std::string, std::string> generate(const TaskSpec& spec, int64_t index);

struct Batch {
  model::TokenMatrix src;
  model::TokenMatrix tgt_in;   // BOS + target
  model::TokenMatrix tgt_out;  // target + EOS (loss labels)
  std::vector<std::string> src_text;
  std::vector<std::string> tgt_text;
};

Batch make_batch(const TaskSpec& spec, std::span<const int64_t> indices);
model::TokenMatrix make_src_matrix(std::span<const std::string> sources);

// {"src": ..., "tgt": ...} per line.
void dump_jsonl(const TaskSpec& spec, const std::string& path, int64_t count);

// Longest generated target for decode budgets.
int64_t max_target_len(const TaskSpec& spec);

}  // namespace nash::taskgen
