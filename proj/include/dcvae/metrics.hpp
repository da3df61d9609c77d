#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dcvae/data.hpp"
#include "dcvae/decoding.hpp"

namespace dcvae {

// Sentence-level BLEU-1..max_n: brevity penalty times the geometric mean of the
// clipped n-gram precisions up to n, with zero precisions replaced by 1e-9.
std::vector<double> bleu_n(const TokenList& hypothesis, std::span<const TokenList> references, int max_n = 4);

// Unique n-grams over total n-grams across all responses; 0 when there are none.
double distinct_n(std::span<const TokenList> responses, int n);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct EvalReport {
  std::vector<MeanStd> bleu;  // BLEU-1..4
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  std::size_t queries = 0;
  std::size_t responses = 0;
  std::size_t unique_responses = 0;  // distinct strings per query, summed
};

// Generated lines come in query-major order: `samples` consecutive lines per
// unique reference query (first-appearance order). Every response is scored
// against all references that share its query.
EvalReport evaluate(std::span<const GeneratedLine> generated, std::span<const TextPair> references, std::size_t samples);

// Tab-separated `metric\tvalue` lines.
std::string format_report(const EvalReport& report);
std::string summarize_report(const EvalReport& report);

// Unique queries in first-appearance order, each with all of its responses.
struct QueryGroup {
  TokenList query;
  std::vector<TokenList> responses;
};
std::vector<QueryGroup> group_by_query(std::span<const TextPair> pairs);

}  // namespace dcvae
