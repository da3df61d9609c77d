#include "dcvae/latent_dist.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dcvae {

std::size_t TwoStageDist::latent_size() const {
  std::size_t n = 0;
  for (const auto& g : *partition) n += g.size();
  return n;
}

std::vector<double> TwoStageDist::flat() const {
  std::vector<double> out(latent_size(), 0.0);
  for (std::size_t k = 0; k < cluster.size(); ++k) {
    const auto& members = (*partition)[k];
    for (std::size_t j = 0; j < members.size(); ++j) out[members[j]] = cluster[k] * words[k][j];
  }
  return out;
}

static void check_simplex(const std::vector<double>& p, double tol, const std::string& what) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(what + ": negative or non-finite probability");
    s += v;
  }
  if (std::abs(s - 1.0) > tol) throw std::invalid_argument(what + ": probabilities sum to " + std::to_string(s));
}

void TwoStageDist::validate(double tol) const {
  if (!partition) throw std::invalid_argument("two-stage distribution: missing partition");
  if (partition->size() != cluster.size() || words.size() != cluster.size()) {
    throw std::invalid_argument("two-stage distribution: cluster count disagrees with partition");
  }
  check_simplex(cluster, tol, "cluster stage");
  for (std::size_t k = 0; k < words.size(); ++k) {
    if (words[k].size() != (*partition)[k].size()) {
      throw std::invalid_argument("two-stage distribution: word stage " + std::to_string(k) + " does not match its members");
    }
    check_simplex(words[k], tol, "word stage " + std::to_string(k));
  }
}

TwoStageDist TwoStageDist::flat_categorical(std::vector<double> probs) {
  auto part = std::make_shared<Partition>(1);
  for (std::size_t i = 0; i < probs.size(); ++i) (*part)[0].push_back(i);
  return TwoStageDist{{1.0}, {std::move(probs)}, std::move(part)};
}

bool same_partition(const TwoStageDist& a, const TwoStageDist& b) {
  if (!a.partition || !b.partition) return false;
  return a.partition == b.partition || *a.partition == *b.partition;
}

}  // namespace dcvae
