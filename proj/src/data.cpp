#include "dcvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dcvae {

const char* const Vocab::kSpecialTokens[Vocab::kNumSpecial] = {"<pad>", "<unk>", "<s>", "</s>"};

Vocab::Vocab() {
  for (const char* t : kSpecialTokens) add(t);
}

int Vocab::add(const std::string& token, std::size_t count) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  counts_.push_back(count);
  index_.emplace(token, id);
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const TokenList& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

TokenList Vocab::decode(std::span<const int> ids) const {
  TokenList out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

Vocab build_vocab(std::span<const TextPair> pairs, std::size_t max_size) {
  if (pairs.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  std::size_t total = 0;
  for (const auto& p : pairs) {
    for (const auto* side : {&p.query, &p.response}) {
      for (const auto& t : *side) ++freq[t], ++total;
    }
  }
  std::vector<std::pair<std::string, std::size_t>> order(freq.begin(), freq.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  std::size_t covered = 0;
  for (const auto& [tok, n] : order) {
    if (v.size() - Vocab::kNumSpecial >= max_size) break;
    if (v.contains(tok)) continue;  // a literal special token in the text
    v.add(tok, n);
    covered += n;
  }
  v.set_coverage(total == 0 ? 1.0 : static_cast<double>(covered) / static_cast<double>(total));
  return v;
}

std::optional<std::size_t> LatentSpace::index_of(int vocab_id) const {
  auto it = std::find(ids.begin(), ids.end(), vocab_id);
  if (it == ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ids.begin());
}

LatentSpace restrict_latent_space(const Vocab& vocab, std::optional<long long> top_k) {
  std::vector<int> ids;
  for (int i = Vocab::kNumSpecial; i < static_cast<int>(vocab.size()); ++i) ids.push_back(i);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return vocab.count(a) > vocab.count(b); });
  if (top_k) {
    if (*top_k <= 0) throw std::invalid_argument("restrict_latent_space: k must be positive");
    if (static_cast<std::size_t>(*top_k) > ids.size()) {
      throw std::invalid_argument("restrict_latent_space: k = " + std::to_string(*top_k) + " exceeds " +
                                  std::to_string(ids.size()) + " non-special tokens");
    }
    ids.resize(static_cast<std::size_t>(*top_k));
  }
  if (ids.empty()) throw std::invalid_argument("restrict_latent_space: vocabulary has no non-special tokens");
  return LatentSpace{std::move(ids)};
}

std::vector<Example> encode_corpus(const Vocab& vocab, std::span<const TextPair> pairs) {
  std::vector<Example> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(Example{vocab.encode(p.query), vocab.encode(p.response), std::nullopt});
  return out;
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c >> 5) == 0x6) {
      len = 2, cp = c & 0x1F;
    } else if ((c >> 4) == 0xE) {
      len = 3, cp = c & 0x0F;
    } else if ((c >> 3) == 0x1E) {
      len = 4, cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc >> 6) != 0x2) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // overlong forms, surrogates, out of range
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return false;
    if ((cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) return false;
    i += len;
  }
  return true;
}

static TokenList split_tokens(const std::string& s) {
  TokenList out;
  std::istringstream is(s);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

std::vector<TextPair> parse_corpus(const std::string& text, const std::string& origin) {
  if (!valid_utf8(text)) throw std::runtime_error(origin + ": not valid UTF-8");
  std::vector<TextPair> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected exactly one TAB separating query and response");
    }
    TextPair p{split_tokens(line.substr(0, tab)), split_tokens(line.substr(tab + 1))};
    if (p.query.empty() || p.response.empty()) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty query or response");
    }
    out.push_back(std::move(p));
  }
  if (out.empty()) throw std::runtime_error(origin + ": corpus is empty");
  return out;
}

static std::string join(const TokenList& t) {
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) s += ' ';
    s += t[i];
  }
  return s;
}

std::string format_corpus(std::span<const TextPair> pairs) {
  std::string out;
  for (const auto& p : pairs) out += join(p.query) + '\t' + join(p.response) + '\n';
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(tmp.string() + ": cannot open for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error(tmp.string() + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error(path.string() + ": rename failed: " + ec.message());
}

std::vector<TextPair> load_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_file(path), path.string());
}

void save_corpus(std::span<const TextPair> pairs, const std::filesystem::path& path) {
  write_file_atomic(path, format_corpus(pairs));
}

std::vector<std::optional<int>> tfidf_keywords(std::span<const Example> corpus, const LatentSpace& latent,
                                               const TfIdfOptions& options) {
  const std::set<int> in_latent(latent.ids.begin(), latent.ids.end());
  auto doc = [&](const Example& e) -> const std::vector<int>& {
    return options.source == KeywordSource::query ? e.query : e.response;
  };
  std::map<int, std::size_t> df;
  for (const auto& e : corpus) {
    for (int w : std::set<int>(doc(e).begin(), doc(e).end())) ++df[w];
  }
  const double n_docs = static_cast<double>(corpus.size());
  auto idf = [&](int w) {
    const double d = static_cast<double>(df[w]);
    return options.smooth_idf ? std::log((1.0 + n_docs) / (1.0 + d)) + 1.0 : std::log(n_docs / d);
  };

  std::vector<std::optional<int>> out;
  out.reserve(corpus.size());
  for (const auto& e : corpus) {
    std::map<int, std::size_t> tf;
    for (int w : doc(e))
      if (in_latent.count(w)) ++tf[w];
    std::optional<int> best;
    double best_score = 0.0;
    std::size_t best_tf = 0;
    for (const auto& [w, n] : tf) {  // ascending id, so strict comparisons keep the lower id on ties
      const double s = static_cast<double>(n) * idf(w);
      if (!best || s > best_score || (s == best_score && n > best_tf)) best = w, best_score = s, best_tf = n;
    }
    out.push_back(best);
  }
  return out;
}

void save_keywords(const Vocab& vocab, std::span<const std::optional<int>> keywords, const std::filesystem::path& path) {
  std::string out;
  for (const auto& k : keywords) out += (k ? vocab.token(*k) : std::string("-")) + '\n';
  write_file_atomic(path, out);
}

std::vector<std::optional<int>> load_keywords(const Vocab& vocab, const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  std::vector<std::optional<int>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line == "-") {
      out.emplace_back();
      continue;
    }
    if (!vocab.contains(line)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": keyword '" + line + "' not in vocabulary");
    }
    out.emplace_back(vocab.id(line));
  }
  return out;
}

}  // namespace dcvae
