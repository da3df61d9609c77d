#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "dcvae/autodiff.hpp"
#include "dcvae/data.hpp"
#include "dcvae/latent_dist.hpp"
#include "dcvae/networks.hpp"
#include "dcvae/rng.hpp"

namespace dcvae {

// sum_z q(z) log(q(z) / p(z)) with 0 log 0 = 0. Throws when q puts mass where p
// has none.
double kl_categorical(std::span<const double> q, std::span<const double> p);

// KL(q_c || p_c) + sum_k q_c(k) KL(q_w|k || p_w|k); equals the flat KL.
double kl_two_stage(const TwoStageDist& q, const TwoStageDist& p);

// -sum_t log softmax(h_b)[y_t]
double bow_nll(std::span<const double> h_b, std::span<const int> response);

struct LossBreakdown {
  double reconstruction = 0.0;
  double kl = 0.0;
  double bow = 0.0;
  double total = 0.0;
};

struct LossVars {
  Var reconstruction;
  Var kl;
  Var bow;
  Var total;

  LossBreakdown values() const;
};

struct ObjectiveOptions {
  std::size_t samples = 1;        // posterior samples per example
  bool straight_through = true;   // route reconstruction/BoW gradients into the posterior
};

// Per-example negative objective -J averaged over the batch:
// reconstruction NLL + KL(q || p) + bag-of-words NLL, each averaged over the
// posterior samples drawn from `rng`.
LossVars training_loss(Tape& tape, const Model& model, std::span<const Example> batch, const ObjectiveOptions& options,
                       Rng& rng);

// KL recorded on a tape, via the two-stage decomposition.
Var kl_on_tape(const LatentDistVars& q, const LatentDistVars& p);

// Exact enumeration over the latent space (toy models).
// sum_z q(z|x,y) log p(y|x,z) - KL(q || p), without the bag-of-words term.
double exact_elbo(const Model& model, std::span<const int> query, std::span<const int> response);
// log sum_z p(z|x) p(y|x,z)
double exact_log_likelihood(const Model& model, std::span<const int> query, std::span<const int> response);

struct PretrainLoss {
  double cluster_ce = 0.0;
  double word_ce = 0.0;
  double total = 0.0;
};

struct PretrainVars {
  Var cluster_ce;
  Var word_ce;
  Var total;

  PretrainLoss values() const;
};

// Cross-entropy of the prior and posterior heads against (cluster_of(keyword),
// keyword), summed over both networks and averaged over the batch.
PretrainVars pretrain_loss(Tape& tape, const Model& model, std::span<const Example> batch);

}  // namespace dcvae
