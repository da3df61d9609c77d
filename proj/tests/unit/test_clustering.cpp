#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>
#include <stdexcept>

#include "dcvae/clustering.hpp"

#include "blobs.hpp"
#include "oracles.hpp"

using namespace dcvae;
using testing_support::Blobs;
using testing_support::planted;

namespace {

std::vector<int> labels_of(const ClusterModel& m, const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids) out.push_back(m.cluster_of(id));
  return out;
}

void check_partition(const ClusterModel& m, const std::vector<int>& ids) {
  REQUIRE(m.members.size() == m.k);
  std::set<int> seen;
  for (std::size_t c = 0; c < m.k; ++c) {
    CHECK_FALSE(m.members[c].empty());
    CHECK(std::is_sorted(m.members[c].begin(), m.members[c].end()));
    for (int id : m.members[c]) {
      CHECK(seen.insert(id).second);
      CHECK(m.cluster_of(id) == static_cast<int>(c));
    }
  }
  CHECK(seen == std::set<int>(ids.begin(), ids.end()));
}

void check_sse_monotone(const ClusterModel& m) {
  REQUIRE_FALSE(m.sse_history.empty());
  for (std::size_t i = 1; i < m.sse_history.size(); ++i) CHECK(m.sse_history[i] <= m.sse_history[i - 1]);
}

}  // namespace

TEST_SUITE("clustering") {

TEST_CASE("K = 1 puts everything in one cluster at the mean") {
  Blobs b = planted(3, 5, 4, 3.0, 1.0, 1);
  ClusterModel m = kmeans(b.emb, b.ids, 1);
  check_partition(m, b.ids);
  for (int id : b.ids) CHECK(m.cluster_of(id) == 0);
  for (std::size_t d = 0; d < 4; ++d) {
    double mean = 0;
    for (int id : b.ids) mean += b.emb.vectors.at(id)[d];
    mean /= static_cast<double>(b.ids.size());
    CHECK(m.centroids[0][d] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("K = number of points gives singleton clusters with zero SSE") {
  Blobs b = planted(2, 4, 3, 3.0, 1.0, 2);
  ClusterModel m = kmeans(b.emb, b.ids, static_cast<long long>(b.ids.size()));
  check_partition(m, b.ids);
  for (const auto& mem : m.members) CHECK(mem.size() == 1);
  CHECK(within_cluster_sse(b.emb, m) == doctest::Approx(0.0));
}

TEST_CASE("invalid K is rejected") {
  Blobs b = planted(2, 3, 3, 3.0, 1.0, 3);
  CHECK_THROWS_AS(kmeans(b.emb, b.ids, 0), std::invalid_argument);
  CHECK_THROWS_AS(kmeans(b.emb, b.ids, -2), std::invalid_argument);
  CHECK_THROWS_AS(kmeans(b.emb, b.ids, 7), std::invalid_argument);
  KMeansOptions bad;
  bad.max_iters = 0;
  CHECK_THROWS_AS(kmeans(b.emb, b.ids, 2, bad), std::invalid_argument);
}

TEST_CASE("two planted blobs are recovered exactly") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Blobs b = planted(2, 20, 5, 10.0, 1.0, 100 + seed);
    KMeansOptions opt;
    opt.seed = seed;
    ClusterModel m = kmeans(b.emb, b.ids, 2, opt);
    check_partition(m, b.ids);
    check_sse_monotone(m);
    CHECK(oracle::adjusted_rand_index(labels_of(m, b.ids), b.labels) == 1.0);
  }
}

TEST_CASE("K planted blobs are recovered exactly") {
  for (std::size_t k : {3u, 4u, 6u, 8u}) {
    Blobs b = planted(k, 12, 6, 10.0, 1.0, 200 + k);
    KMeansOptions opt;
    opt.seed = k;
    ClusterModel m = kmeans(b.emb, b.ids, static_cast<long long>(k), opt);
    check_partition(m, b.ids);
    check_sse_monotone(m);
    CHECK(oracle::adjusted_rand_index(labels_of(m, b.ids), b.labels) == 1.0);
  }
}

TEST_CASE("assignments agree with the nearest centroid at convergence") {
  std::mt19937_64 g(5);
  std::normal_distribution<double> n(0.0, 1.0);
  WordEmbeddings emb;
  emb.dim = 3;
  std::vector<int> ids;
  for (int i = 0; i < 60; ++i) {
    emb.vectors[i + 4] = {n(g), n(g), n(g)};
    ids.push_back(i + 4);
  }
  ClusterModel m = kmeans(emb, ids, 5, {.max_iters = 500, .seed = 3});
  check_partition(m, ids);
  check_sse_monotone(m);
  for (int id : ids) {
    const auto& v = emb.vectors.at(id);
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < m.k; ++c) {
      double d = 0;
      for (std::size_t j = 0; j < 3; ++j) d += (v[j] - m.centroids[c][j]) * (v[j] - m.centroids[c][j]);
      if (d < best_d) best_d = d, best = c;
    }
    CHECK(m.cluster_of(id) == static_cast<int>(best));
  }
  CHECK(within_cluster_sse(emb, m) == doctest::Approx(m.sse_history.back()).epsilon(1e-12));
}

TEST_CASE("same seed gives an identical model") {
  Blobs b = planted(4, 10, 4, 2.0, 1.5, 6);
  CHECK(kmeans(b.emb, b.ids, 4, {.seed = 9}) == kmeans(b.emb, b.ids, 4, {.seed = 9}));
}

TEST_CASE("cluster_of rejects unknown ids") {
  Blobs b = planted(2, 3, 3, 3.0, 1.0, 7);
  ClusterModel m = kmeans(b.emb, b.ids, 2);
  CHECK_THROWS_AS(m.cluster_of(999), std::invalid_argument);
}

TEST_CASE("missing embeddings are completed deterministically in range") {
  WordEmbeddings emb;
  emb.dim = 4;
  emb.vectors[5] = {1, 2, 3, 4};
  const int ids[] = {5, 6, 7};
  WordEmbeddings a = complete_embeddings(emb, ids, 11), b = complete_embeddings(emb, ids, 11);
  CHECK(a.vectors == b.vectors);
  CHECK(a.vectors.at(5) == emb.vectors.at(5));
  for (int id : {6, 7})
    for (double x : a.vectors.at(id)) CHECK((x >= -0.1 && x <= 0.1));
}

TEST_CASE("embedding and cluster files round trip") {
  Vocab vocab;
  for (const char* w : {"cat", "dog", "car", "bus"}) vocab.add(w);
  WordEmbeddings emb = parse_embeddings("cat 1 0\ndog 1.1 0\nunknownword 5 5\ncar 0 1\nbus 0 1.2\n", vocab);
  CHECK(emb.dim == 2);
  CHECK(emb.vectors.size() == 4);
  CHECK_THROWS_AS(parse_embeddings("cat 1 0\ndog 1\n", vocab), std::runtime_error);
  const std::vector<int> ids = {vocab.id("cat"), vocab.id("dog"), vocab.id("car"), vocab.id("bus")};
  ClusterModel m = kmeans(emb, ids, 2, {.seed = 1});
  CHECK(m.cluster_of(vocab.id("cat")) == m.cluster_of(vocab.id("dog")));
  CHECK(m.cluster_of(vocab.id("car")) == m.cluster_of(vocab.id("bus")));
  CHECK(m.cluster_of(vocab.id("cat")) != m.cluster_of(vocab.id("car")));
  const auto path = std::filesystem::temp_directory_path() / "dcvae_clusters_test.txt";
  save_clusters(m, vocab, path);
  ClusterModel back = load_clusters(path, vocab);
  CHECK(back.k == m.k);
  CHECK(back.assignment == m.assignment);
  CHECK(back.members == m.members);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
