#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dcvae/data.hpp"

namespace dcvae {

// Planted one-to-many corpus. Each query template has `responses_per_query`
// answers; answer i carries a topic word from planted cluster i mod clusters,
// surrounded by style words of that cluster.
struct SyntheticSpec {
  std::size_t templates = 50;
  std::size_t responses_per_query = 4;
  std::size_t clusters = 4;
  std::size_t repeats = 10;        // training copies of every (template, answer); fresh fillers per repeat
  std::size_t test_queries = 1;    // held-out queries per template, each paired with every answer
  std::size_t fillers = 40;
  std::size_t fillers_per_query = 3;
  std::size_t style_per_cluster = 6;
  std::size_t embedding_dim = 64;
  double centre = 32.0;            // distance of each cluster centre from the origin
  double noise = 0.25;             // per-coordinate jitter around the cluster centre
  std::uint64_t seed = 1;
};

struct SyntheticCorpus {
  std::vector<TextPair> train;
  std::vector<TextPair> test;
  std::vector<std::string> train_topics;  // gold topic word per pair
  std::vector<std::string> test_topics;
  std::map<std::string, int> planted_cluster;  // every word -> planted cluster
  std::vector<std::pair<std::string, std::vector<double>>> embeddings;
};

SyntheticCorpus synthesize_corpus(const SyntheticSpec& spec);

// train.tsv, test.tsv, embeddings.txt, test_topics.txt, planted_clusters.txt
void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

}  // namespace dcvae
