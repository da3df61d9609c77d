#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dcvae {

using TokenList = std::vector<std::string>;

struct TextPair {
  TokenList query;
  TokenList response;

  friend bool operator==(const TextPair&, const TextPair&) = default;
};

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecial = 4;
  static const char* const kSpecialTokens[kNumSpecial];

  Vocab();

  // Appends a token; returns its id (existing id if already present).
  int add(const std::string& token, std::size_t count = 0);

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const;
  std::size_t count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

  std::vector<int> encode(const TokenList& tokens) const;
  TokenList decode(std::span<const int> ids) const;

  // Fraction of token occurrences in the corpus used to build the vocab that
  // map to an in-vocabulary id.
  double coverage() const { return coverage_; }
  void set_coverage(double c) { coverage_ = c; }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::string, int> index_;
  double coverage_ = 1.0;
};

// Keeps the `max_size` most frequent tokens (ties broken lexicographically);
// ids after the specials are ordered by descending frequency.
Vocab build_vocab(std::span<const TextPair> pairs, std::size_t max_size);

// Ordered latent vocabulary ids. Never contains a special token.
struct LatentSpace {
  std::vector<int> ids;

  std::size_t size() const { return ids.size(); }
  std::optional<std::size_t> index_of(int vocab_id) const;
};

// top_k empty => all non-special tokens.
LatentSpace restrict_latent_space(const Vocab& vocab, std::optional<long long> top_k);

struct Example {
  std::vector<int> query;
  std::vector<int> response;
  std::optional<int> keyword;
};

std::vector<Example> encode_corpus(const Vocab& vocab, std::span<const TextPair> pairs);

// One pair per line: query tokens, TAB, response tokens (space separated).
std::vector<TextPair> load_corpus(const std::filesystem::path& path);
void save_corpus(std::span<const TextPair> pairs, const std::filesystem::path& path);
std::vector<TextPair> parse_corpus(const std::string& text, const std::string& origin = "<memory>");
std::string format_corpus(std::span<const TextPair> pairs);

bool valid_utf8(std::string_view s);

enum class KeywordSource { query, response };

struct TfIdfOptions {
  KeywordSource source = KeywordSource::query;
  // idf = log((1 + N) / (1 + df)) + 1 instead of log(N / df)
  bool smooth_idf = false;
};

// One keyword per example: argmax over the document's tokens of tf * idf,
// restricted to the latent space. Ties prefer higher tf, then lower id.
// Examples without any latent-space token yield nullopt.
std::vector<std::optional<int>> tfidf_keywords(std::span<const Example> corpus, const LatentSpace& latent,
                                               const TfIdfOptions& options = {});

// Keyword sidecar: one token per line aligned with corpus lines; "-" marks a
// keywordless example.
void save_keywords(const Vocab& vocab, std::span<const std::optional<int>> keywords, const std::filesystem::path& path);
std::vector<std::optional<int>> load_keywords(const Vocab& vocab, const std::filesystem::path& path);

// Atomic text write: temp file in the same directory, then rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace dcvae
