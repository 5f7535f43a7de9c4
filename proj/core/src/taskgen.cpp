#include "nash/taskgen.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "nash/rng.hpp"

namespace nash::taskgen {

std::vector<int> encode_bytes(std::string_view s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (unsigned char c : s) out.push_back(kByteOffset + static_cast<int>(c));
  return out;
}

std::string decode_bytes(std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id < kByteOffset) continue;
    out.push_back(static_cast<char>(id - kByteOffset));
  }
  return out;
}

TaskKind parse_task(const std::string& name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  if (name == "sort_digits") return TaskKind::sort_digits;
  if (name == "lookup_summarize") return TaskKind::lookup_summarize;
  throw num::ContractError("unknown task: " + name);
}

std::string task_name(TaskKind k) {
  switch (k) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::sort_digits: return "sort_digits";
    case TaskKind::lookup_summarize: return "lookup_summarize";
  }
  return "?";
}

std::pair<std::string, std::string> generate(const TaskSpec& spec, int64_t index) {
  if (index < 0 || index >= spec.total_samples())
    throw num::ContractError("generate: index out of range");
  num::Rng rng(spec.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(index) + 1);
  rng.next_u64();

  switch (spec.kind) {
    case TaskKind::copy:
    case TaskKind::reverse: {
      int len = spec.min_len + static_cast<int>(rng.below(
                                   static_cast<uint64_t>(spec.max_len - spec.min_len + 1)));
      std::string src;
      for (int i = 0; i < len; ++i)
        src.push_back(spec.alphabet[rng.below(spec.alphabet.size())]);
      std::string tgt = src;
      if (spec.kind == TaskKind::reverse) std::reverse(tgt.begin(), tgt.end());
      return {src, tgt};
    }
    case TaskKind::sort_digits: {
      int len = spec.min_len + static_cast<int>(rng.below(
                                   static_cast<uint64_t>(spec.max_len - spec.min_len + 1)));
      std::string src;
      for (int i = 0; i < len; ++i)
        src.push_back(static_cast<char>('0' + rng.below(10)));
      std::string tgt = src;
      std::sort(tgt.begin(), tgt.end());
      return {src, tgt};
    }
    case TaskKind::lookup_summarize: {
      // long source of "K=value" fields, short extractive target: the value
      // of the queried key
      int fields = std::min(spec.num_fields, 26);
      std::string src;
      std::vector<std::string> values(static_cast<size_t>(fields));
      for (int f = 0; f < fields; ++f) {
        std::string v;
        for (int i = 0; i < spec.value_len; ++i)
          v.push_back(static_cast<char>('a' + rng.below(26)));
        values[static_cast<size_t>(f)] = v;
        src.push_back(static_cast<char>('A' + f));
        src.push_back('=');
        src += v;
        src.push_back(' ');
      }
      int query = static_cast<int>(rng.below(static_cast<uint64_t>(fields)));
      src.push_back('?');
      src.push_back(static_cast<char>('A' + query));
      return {src, values[static_cast<size_t>(query)]};
    }
  }
  throw num::ContractError("generate: unreachable");
}

namespace {

model::TokenMatrix pad_matrix(const std::vector<std::vector<int>>& rows) {
  model::TokenMatrix m;
  m.batch = static_cast<int64_t>(rows.size());
  m.len = 0;
  for (const auto& r : rows) m.len = std::max<int64_t>(m.len, static_cast<int64_t>(r.size()));
  m.len = std::max<int64_t>(m.len, 1);
  m.ids.assign(static_cast<size_t>(m.batch * m.len), kPad);
  m.mask.assign(static_cast<size_t>(m.batch * m.len), 0.0);
  for (int64_t b = 0; b < m.batch; ++b) {
    const auto& r = rows[static_cast<size_t>(b)];
    for (size_t t = 0; t < r.size(); ++t) {
      m.ids[static_cast<size_t>(b * m.len) + t] = r[t];
      m.mask[static_cast<size_t>(b * m.len) + t] = 1.0;
    }
  }
  return m;
}

}  // namespace

model::TokenMatrix make_src_matrix(std::span<const std::string> sources) {
  std::vector<std::vector<int>> rows;
  rows.reserve(sources.size());
  for (const auto& s : sources) rows.push_back(encode_bytes(s));
  return pad_matrix(rows);
}

Batch make_batch(const TaskSpec& spec, std::span<const int64_t> indices) {
  Batch b;
  std::vector<std::vector<int>> src_rows, in_rows, out_rows;
  for (int64_t idx : indices) {
    auto [src, tgt] = generate(spec, idx);
    b.src_text.push_back(src);
    b.tgt_text.push_back(tgt);
    src_rows.push_back(encode_bytes(src));
    std::vector<int> t = encode_bytes(tgt);
    std::vector<int> in{kBos};
    in.insert(in.end(), t.begin(), t.end());
    std::vector<int> out = t;
    out.push_back(kEos);
    in_rows.push_back(std::move(in));
    out_rows.push_back(std::move(out));
  }
  b.src = pad_matrix(src_rows);
  b.tgt_in = pad_matrix(in_rows);
  b.tgt_out = pad_matrix(out_rows);
  return b;
}

void dump_jsonl(const TaskSpec& spec, const std::string& path, int64_t count) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  for (int64_t i = 0; i < count; ++i) {
    auto [src, tgt] = generate(spec, i);
    nlohmann::json j{{"src", src}, {"tgt", tgt}};
    f << j.dump() << "\n";
  }
}

int64_t max_target_len(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::copy:
    case TaskKind::reverse:
    case TaskKind::sort_digits:
      return spec.max_len;
    case TaskKind::lookup_summarize:
      return spec.value_len;
  }
  return spec.max_len;
}

}  // namespace nash::taskgen
