#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dcvae/networks.hpp"
#include "dcvae/objective.hpp"
#include "dcvae/optimizer.hpp"

namespace dcvae {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch = 128;
  std::size_t epochs = 1;
  std::size_t samples = 1;  // posterior samples per example
  std::uint64_t seed = 0;
  std::optional<LatentMode> mode;  // when set, must agree with the model
  bool straight_through = true;
  double clip = 5.0;  // global gradient norm cap; <= 0 disables

  void validate() const;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> checkpoint;  // rewritten after every epoch
  std::optional<std::filesystem::path> log;         // epoch log, rewritten after every epoch
  std::ostream* progress = nullptr;                 // epoch lines echoed here
};

// Tab-separated epoch line: epoch, recon, kl, bow, total.
std::string format_epoch_line(std::size_t epoch, const LossBreakdown& loss);

// Minibatch Adam over all parameters. Returns one example-weighted mean
// breakdown per epoch. Deterministic given config.seed.
std::vector<LossBreakdown> train(Model& model, std::span<const Example> corpus, const TrainConfig& config,
                                 const TrainOutputs& outputs = {});

struct PretrainConfig {
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t steps = 200;
  std::uint64_t seed = 0;
  double clip = 5.0;

  void validate() const;
};

// Parameters touched by pretraining: the prior and posterior networks only.
std::vector<Tensor*> pretrain_parameters(Model& model);

// One update of the prior and posterior heads on `batch`; returns the loss
// before the update.
PretrainLoss pretrain_step(Model& model, std::span<const Example> batch, AdamState& state, double lr, double clip = 5.0);

// `steps` updates on batches drawn by cycling a seeded shuffle of the corpus.
// Examples without a keyword are skipped. Returns the per-step losses.
std::vector<PretrainLoss> pretrain(Model& model, std::span<const Example> corpus, const PretrainConfig& config,
                                   std::ostream* progress = nullptr);

}  // namespace dcvae
