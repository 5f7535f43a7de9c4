#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nash::taskgen {

std::vector<std::string> whitespace_tokens(std::string_view s);

int64_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct RougeL {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Summary-level LCS on whitespace tokens, no stemming or stopword removal.
// P = LCS/|cand|, R = LCS/|ref|, F1 = 2PR/(P+R); 0 when both sides are empty.
RougeL rouge_l(std::string_view candidate, std::string_view reference);

// Fraction of exactly-equal pairs.
double exact_match(std::span<const std::string> pred, std::span<const std::string> gold);

// Micro average: matched positions / total gold length (byte tokens).
double token_accuracy(std::span<const std::string> pred, std::span<const std::string> gold);

}  // namespace nash::taskgen
