#pragma once

// End-to-end plumbing shared by the CLI subcommands and the acceptance run.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dcvae/clustering.hpp"
#include "dcvae/data.hpp"
#include "dcvae/decoding.hpp"
#include "dcvae/metrics.hpp"
#include "dcvae/networks.hpp"
#include "dcvae/trainer.hpp"

namespace dcvae {

// Vocabulary file: "token<TAB>count" per non-special token in id order, after
// a "# coverage <value>" header.
void save_vocab(const Vocab& vocab, const std::filesystem::path& path);
Vocab load_vocab(const std::filesystem::path& path);

// K-means over the latent space. Latent words missing from `embeddings` get
// U[-0.1, 0.1] vectors drawn from `seed`.
ClusterModel fit_clusters(const Vocab& vocab, const LatentSpace& latent, const WordEmbeddings& embeddings, long long k,
                          std::uint64_t seed);

// Fraction of examples whose posterior arg-max latent is `gold[i]`.
double posterior_top1(const Model& model, std::span<const Example> examples, std::span<const int> gold);

// `samples` lines per unique query of `references`, query-major.
std::string generate_lines(const Model& model, std::span<const TextPair> references, std::size_t samples, const BeamOptions& beam,
                           std::uint64_t seed);

struct PipelineConfig {
  std::filesystem::path train_corpus;
  std::filesystem::path test_corpus;
  std::optional<std::filesystem::path> embeddings;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> gold_topics;  // one topic word per test pair
  LatentConfig latent;
  ModelDims dims;
  long long clusters = 4;
  std::size_t vocab_size = 0;  // 0 keeps every token
  TfIdfOptions keywords;
  PretrainConfig pretrain;
  bool run_pretrain = true;
  TrainConfig train;
  std::size_t samples = 10;
  BeamOptions beam;
  std::uint64_t seed = 0;
};

struct PipelineResult {
  EvalReport report;
  std::vector<LossBreakdown> epochs;
  std::vector<PretrainLoss> pretrain;
  std::optional<double> posterior_top1;  // against gold_topics on the test pairs
};

// prep -> cluster -> keywords -> pretrain -> train -> generate -> evaluate,
// writing every intermediate file into out_dir.
PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* progress = nullptr);

// Sub-seeds for the pipeline stages.
enum class Stage : std::uint64_t { cluster = 1, init = 2, pretrain = 3, train = 4, generate = 5 };
std::uint64_t stage_seed(std::uint64_t seed, Stage stage);

}  // namespace dcvae
