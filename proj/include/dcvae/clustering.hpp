#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "dcvae/data.hpp"

namespace dcvae {

// Pre-trained word vectors keyed by vocabulary id.
struct WordEmbeddings {
  std::size_t dim = 0;
  std::map<int, std::vector<double>> vectors;

  bool contains(int id) const { return vectors.count(id) != 0; }
};

// Text format: one token per line followed by `dim` space-separated floats.
// Tokens outside the vocabulary are skipped.
WordEmbeddings load_embeddings(const std::filesystem::path& path, const Vocab& vocab);
WordEmbeddings parse_embeddings(const std::string& text, const Vocab& vocab, const std::string& origin = "<memory>");
void save_embeddings(const std::vector<std::pair<std::string, std::vector<double>>>& rows, const std::filesystem::path& path);

// Returns `emb` extended with U[-0.1, 0.1] vectors for every id in `ids` it
// lacks, drawn in `ids` order from a generator seeded with `seed`.
WordEmbeddings complete_embeddings(const WordEmbeddings& emb, std::span<const int> ids, std::uint64_t seed);

struct ClusterModel {
  std::size_t k = 0;
  std::vector<std::vector<double>> centroids;  // may be empty when loaded from a cluster file
  std::map<int, int> assignment;               // latent id -> cluster
  std::vector<std::vector<int>> members;       // cluster -> sorted latent ids
  std::vector<double> sse_history;             // within-cluster SSE after each iteration

  bool fitted() const { return k > 0; }
  int cluster_of(int latent_id) const;

  // Rebuilds `members` from `assignment` and validates the partition.
  void rebuild_members();
  friend bool operator==(const ClusterModel&, const ClusterModel&) = default;
};

struct KMeansOptions {
  int max_iters = 100;
  std::uint64_t seed = 0;
  bool normalize = false;  // cluster unit-normalised vectors (cosine variant)
};

// Lloyd iterations from k-means++ seeding. Throws if the within-cluster SSE
// ever increases between iterations.
ClusterModel kmeans(const WordEmbeddings& embeddings, std::span<const int> latent_ids, long long k,
                    const KMeansOptions& options = {});

double within_cluster_sse(const WordEmbeddings& embeddings, const ClusterModel& model);

// Cluster file: one line per latent id, "token cluster".
void save_clusters(const ClusterModel& model, const Vocab& vocab, const std::filesystem::path& path);
ClusterModel load_clusters(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace dcvae
