#include "dcvae/synthetic.hpp"

#include <cstdio>
#include <stdexcept>

#include "dcvae/clustering.hpp"
#include "dcvae/rng.hpp"

namespace dcvae {

namespace {

std::string word(const char* stem, std::size_t a) { return stem + std::to_string(a); }
std::string word(const char* stem, std::size_t a, std::size_t b) { return stem + std::to_string(a) + "_" + std::to_string(b); }

}  // namespace

SyntheticCorpus synthesize_corpus(const SyntheticSpec& spec) {
  if (spec.templates < 1 || spec.clusters < 1 || spec.repeats < 1) {
    throw std::invalid_argument("synthesize_corpus: templates, clusters and repeats must be >= 1");
  }
  if (spec.responses_per_query < 2) throw std::invalid_argument("synthesize_corpus: need at least 2 responses per query");
  if (spec.style_per_cluster < 3) throw std::invalid_argument("synthesize_corpus: need at least 3 style words per cluster");
  if (spec.embedding_dim < spec.clusters) throw std::invalid_argument("synthesize_corpus: embedding_dim must be >= clusters");
  if (spec.fillers < spec.fillers_per_query) throw std::invalid_argument("synthesize_corpus: not enough filler words");
  Rng rng(spec.seed);
  SyntheticCorpus out;
  std::vector<std::string> order;  // embedding file order
  auto plant = [&](const std::string& w, int c) {
    if (out.planted_cluster.emplace(w, c).second) order.push_back(w);
  };
  const int C = static_cast<int>(spec.clusters);
  // Words outside the topic/style sets are spread over the clusters round-robin.
  int spread = 0;
  for (std::size_t j = 0; j < spec.fillers; ++j) plant(word("f", j), spread++ % C);
  for (std::size_t c = 0; c < spec.clusters; ++c)
    for (std::size_t j = 0; j < spec.style_per_cluster; ++j) plant(word("s", c, j), static_cast<int>(c));

  struct Answer {
    TokenList tokens;
    std::string topic;
  };
  std::vector<TokenList> keys(spec.templates);
  std::vector<std::vector<Answer>> answers(spec.templates);
  for (std::size_t t = 0; t < spec.templates; ++t) {
    keys[t] = {word("q", t, 0), word("q", t, 1)};
    for (const auto& k : keys[t]) plant(k, spread++ % C);
    for (std::size_t i = 0; i < spec.responses_per_query; ++i) {
      const std::size_t c = i % spec.clusters;
      const std::string topic = word("t", t, i);
      plant(topic, static_cast<int>(c));
      // Three distinct style words of the cluster around the topic word.
      std::vector<std::size_t> pick(spec.style_per_cluster);
      for (std::size_t j = 0; j < pick.size(); ++j) pick[j] = j;
      rng.shuffle(pick.begin(), pick.end());
      answers[t].push_back({{word("s", c, pick[0]), topic, word("s", c, pick[1]), word("s", c, pick[2])}, topic});
    }
  }
  auto make_query = [&](std::size_t t) {
    TokenList q = keys[t];
    std::vector<std::size_t> f(spec.fillers);
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = j;
    rng.shuffle(f.begin(), f.end());
    for (std::size_t j = 0; j < spec.fillers_per_query; ++j) q.push_back(word("f", f[j]));
    rng.shuffle(q.begin(), q.end());
    return q;
  };
  // One query text per repeat shared by all responses of the template, so the
  // query never tells the responses apart.
  for (std::size_t r = 0; r < spec.repeats; ++r)
    for (std::size_t t = 0; t < spec.templates; ++t) {
      const TokenList q = make_query(t);
      for (const Answer& a : answers[t]) {
        out.train.push_back({q, a.tokens});
        out.train_topics.push_back(a.topic);
      }
    }
  for (std::size_t t = 0; t < spec.templates; ++t)
    for (std::size_t r = 0; r < spec.test_queries; ++r) {
      const TokenList q = make_query(t);
      for (const Answer& a : answers[t]) {
        out.test.push_back({q, a.tokens});
        out.test_topics.push_back(a.topic);
      }
    }
  // Cluster centres on distinct axes; members jittered around them.
  for (const std::string& w : order) {
    std::vector<double> v(spec.embedding_dim);
    for (double& x : v) x = spec.noise * (2.0 * rng.uniform() - 1.0);
    v[static_cast<std::size_t>(out.planted_cluster[w])] += spec.centre;
    out.embeddings.emplace_back(w, std::move(v));
  }
  return out;
}

void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_corpus(corpus.train, dir / "train.tsv");
  save_corpus(corpus.test, dir / "test.tsv");
  save_embeddings(corpus.embeddings, dir / "embeddings.txt");
  std::string topics;
  for (const auto& t : corpus.test_topics) topics += t + "\n";
  write_file_atomic(dir / "test_topics.txt", topics);
  std::string planted;
  for (const auto& [w, v] : corpus.embeddings) planted += w + " " + std::to_string(corpus.planted_cluster.at(w)) + "\n";
  write_file_atomic(dir / "planted_clusters.txt", planted);
}

}  // namespace dcvae
