#include "dcvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

namespace dcvae {

namespace {

using NGram = std::vector<std::string>;

std::map<NGram, std::size_t> ngram_counts(const TokenList& toks, std::size_t n) {
  std::map<NGram, std::size_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[NGram(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

constexpr double kEps = 1e-9;

}  // namespace

std::vector<double> bleu_n(const TokenList& hypothesis, std::span<const TokenList> references, int max_n) {
  if (max_n < 1) throw std::invalid_argument("bleu_n: max_n must be >= 1");
  if (hypothesis.empty()) throw std::invalid_argument("bleu_n: empty hypothesis");
  if (references.empty()) throw std::invalid_argument("bleu_n: no references");
  // Closest reference length, shorter one on ties.
  const double c = static_cast<double>(hypothesis.size());
  std::size_t r = references[0].size();
  for (const TokenList& ref : references) {
    const double d = std::abs(static_cast<double>(ref.size()) - c), best = std::abs(static_cast<double>(r) - c);
    if (d < best || (d == best && ref.size() < r)) r = ref.size();
  }
  const double bp = c >= static_cast<double>(r) ? 1.0 : std::exp(1.0 - static_cast<double>(r) / c);
  std::vector<double> out;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto hyp = ngram_counts(hypothesis, static_cast<std::size_t>(n));
    std::map<NGram, std::size_t> max_ref;
    for (const TokenList& ref : references)
      for (const auto& [g, k] : ngram_counts(ref, static_cast<std::size_t>(n))) max_ref[g] = std::max(max_ref[g], k);
    std::size_t matched = 0, total = 0;
    for (const auto& [g, k] : hyp) {
      total += k;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(k, it->second);
    }
    double p = total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
    if (p == 0.0) p = kEps;
    log_sum += std::log(p);
    out.push_back(bp * std::exp(log_sum / n));
  }
  return out;
}

double distinct_n(std::span<const TokenList> responses, int n) {
  if (n != 1 && n != 2) throw std::invalid_argument("distinct_n: n must be 1 or 2");
  if (responses.empty()) throw std::invalid_argument("distinct_n: no responses");
  std::set<NGram> unique;
  std::size_t total = 0;
  for (const TokenList& r : responses) {
    for (const auto& [g, k] : ngram_counts(r, static_cast<std::size_t>(n))) unique.insert(g), total += k;
  }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

std::vector<QueryGroup> group_by_query(std::span<const TextPair> pairs) {
  std::vector<QueryGroup> out;
  std::map<TokenList, std::size_t> index;
  for (const TextPair& p : pairs) {
    auto [it, fresh] = index.emplace(p.query, out.size());
    if (fresh) out.push_back({p.query, {}});
    out[it->second].responses.push_back(p.response);
  }
  return out;
}

EvalReport evaluate(std::span<const GeneratedLine> generated, std::span<const TextPair> references, std::size_t samples) {
  if (samples < 1) throw std::invalid_argument("evaluate: samples must be >= 1");
  const std::vector<QueryGroup> groups = group_by_query(references);
  if (groups.empty()) throw std::invalid_argument("evaluate: empty reference corpus");
  if (generated.size() != groups.size() * samples) {
    throw std::invalid_argument("evaluate: generated file has " + std::to_string(generated.size()) + " lines but the references need " +
                                std::to_string(groups.size() * samples) + " (" + std::to_string(groups.size()) + " queries x " +
                                std::to_string(samples) + " samples)");
  }
  EvalReport rep;
  rep.queries = groups.size();
  rep.responses = generated.size();
  std::vector<std::vector<double>> per_n(4);
  std::vector<TokenList> pool;
  for (std::size_t q = 0; q < groups.size(); ++q) {
    std::set<TokenList> seen;
    for (std::size_t s = 0; s < samples; ++s) {
      const GeneratedLine& g = generated[q * samples + s];
      if (g.query != groups[q].query) {
        throw std::invalid_argument("evaluate: generated line " + std::to_string(q * samples + s + 1) + " has a query that does not match reference query " +
                                    std::to_string(q + 1));
      }
      seen.insert(g.response);
      pool.push_back(g.response);
      // An empty response shares nothing with any reference.
      const std::vector<double> b = g.response.empty() ? std::vector<double>(4, 0.0) : bleu_n(g.response, groups[q].responses, 4);
      for (std::size_t n = 0; n < 4; ++n) per_n[n].push_back(b[n]);
    }
    rep.unique_responses += seen.size();
  }
  for (const auto& v : per_n) {
    MeanStd m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    for (double x : v) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / static_cast<double>(v.size()));
    rep.bleu.push_back(m);
  }
  rep.distinct1 = distinct_n(pool, 1);
  rep.distinct2 = distinct_n(pool, 2);
  return rep;
}

std::string format_report(const EvalReport& r) {
  std::string out;
  char buf[128];
  auto line = [&](const std::string& k, double v) {
    std::snprintf(buf, sizeof buf, "%s\t%.6f\n", k.c_str(), v);
    out += buf;
  };
  for (std::size_t n = 0; n < r.bleu.size(); ++n) {
    line("bleu" + std::to_string(n + 1) + "_mean", r.bleu[n].mean);
    line("bleu" + std::to_string(n + 1) + "_std", r.bleu[n].std);
  }
  line("distinct1", r.distinct1);
  line("distinct2", r.distinct2);
  out += "queries\t" + std::to_string(r.queries) + "\n";
  out += "responses\t" + std::to_string(r.responses) + "\n";
  out += "unique_responses\t" + std::to_string(r.unique_responses) + "\n";
  return out;
}

std::string summarize_report(const EvalReport& r) {
  std::string out;
  char buf[160];
  for (std::size_t n = 0; n < r.bleu.size(); ++n) {
    std::snprintf(buf, sizeof buf, "BLEU-%zu  %.4f +- %.4f\n", n + 1, r.bleu[n].mean, r.bleu[n].std);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "dist-1  %.4f\ndist-2  %.4f\n", r.distinct1, r.distinct2);
  out += buf;
  std::snprintf(buf, sizeof buf, "%zu queries, %zu responses, %.2f distinct per query\n", r.queries, r.responses,
                r.queries ? static_cast<double>(r.unique_responses) / static_cast<double>(r.queries) : 0.0);
  out += buf;
  return out;
}

}  // namespace dcvae
