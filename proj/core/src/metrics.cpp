#include "nash/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace nash::taskgen {

std::vector<std::string> whitespace_tokens(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n')) ++i;
    size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\n') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

int64_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

RougeL rouge_l(std::string_view candidate, std::string_view reference) {
  auto c = whitespace_tokens(candidate);
  auto r = whitespace_tokens(reference);
  RougeL out;
  if (c.empty() && r.empty()) return out;
  double lcs = static_cast<double>(lcs_length(c, r));
  out.precision = c.empty() ? 0.0 : lcs / static_cast<double>(c.size());
  out.recall = r.empty() ? 0.0 : lcs / static_cast<double>(r.size());
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

double exact_match(std::span<const std::string> pred, std::span<const std::string> gold) {
  if (pred.size() != gold.size()) throw std::invalid_argument("exact_match: size mismatch");
  if (pred.empty()) return 0.0;
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == gold[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double token_accuracy(std::span<const std::string> pred, std::span<const std::string> gold) {
  if (pred.size() != gold.size()) throw std::invalid_argument("token_accuracy: size mismatch");
  int64_t matched = 0, total = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    total += static_cast<int64_t>(gold[i].size());
    size_t n = std::min(pred[i].size(), gold[i].size());
    for (size_t c = 0; c < n; ++c)
      if (pred[i][c] == gold[i][c]) ++matched;
  }
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

}  // namespace nash::taskgen
