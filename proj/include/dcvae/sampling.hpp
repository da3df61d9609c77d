#pragma once

#include <cstddef>
#include <span>

#include "dcvae/latent_dist.hpp"
#include "dcvae/rng.hpp"

namespace dcvae {

// Inverse-CDF draw. Never returns an index with zero probability.
std::size_t sample_categorical(std::span<const double> probs, Rng& rng);

struct LatentSample {
  std::size_t cluster = 0;
  std::size_t latent = 0;  // latent index, a member of `cluster`
};

// Cluster first, then a member of that cluster.
LatentSample two_stage_sample(const TwoStageDist& dist, Rng& rng);

}  // namespace dcvae
