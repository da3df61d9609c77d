#pragma once

#include <cstddef>
#include <memory>
#include <vector>

namespace dcvae {

// Groups of latent indices; every latent index appears in exactly one group.
using Partition = std::vector<std::vector<std::size_t>>;

// Cluster-level categorical paired with one word-level categorical per
// cluster, supported exactly on that cluster's members. A flat categorical is
// the special case of a single group holding the whole latent space.
struct TwoStageDist {
  std::vector<double> cluster;             // length K
  std::vector<std::vector<double>> words;  // words[k] aligned with (*partition)[k]
  std::shared_ptr<const Partition> partition;

  std::size_t num_clusters() const { return cluster.size(); }
  std::size_t latent_size() const;
  // q(z) = cluster[c_z] * words[c_z][z], indexed by latent index.
  std::vector<double> flat() const;
  // Throws unless every component is a simplex within `tol` aligned with the partition.
  void validate(double tol = 1e-9) const;

  static TwoStageDist flat_categorical(std::vector<double> probs);
};

bool same_partition(const TwoStageDist& a, const TwoStageDist& b);

}  // namespace dcvae
