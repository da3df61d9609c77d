#include "dcvae/sampling.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dcvae {

std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  if (probs.empty()) throw std::invalid_argument("sample_categorical: empty distribution");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("sample_categorical: negative or non-finite probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("sample_categorical: probabilities sum to " + std::to_string(total));
  }
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    cum += probs[i];
    if (u < cum) return i;
  }
  return last;  // u landed in the rounding gap above the final cumulative sum
}

LatentSample two_stage_sample(const TwoStageDist& dist, Rng& rng) {
  dist.validate();
  LatentSample s;
  s.cluster = sample_categorical(dist.cluster, rng);
  const std::size_t pos = sample_categorical(dist.words[s.cluster], rng);
  s.latent = (*dist.partition)[s.cluster][pos];
  return s;
}

}  // namespace dcvae
