#pragma once

// Prior, posterior and generation networks of the discrete CVAE.
//
// Latent variables are indexed 0..|Z|-1 ("latent index"). In word modes the
// latent index maps to a vocabulary id through Model::latent; in cd_variant it
// is an abstract index with its own embedding table.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcvae/autodiff.hpp"
#include "dcvae/clustering.hpp"
#include "dcvae/data.hpp"
#include "dcvae/latent_dist.hpp"
#include "dcvae/layers.hpp"

namespace dcvae {

enum class LatentMode { two_stage, one_stage, cd_variant, no_latent };

std::string_view to_string(LatentMode mode);
LatentMode parse_latent_mode(std::string_view text);

struct LatentConfig {
  LatentMode mode = LatentMode::two_stage;
  std::optional<long long> top_k;  // empty => whole vocabulary
  std::size_t cd_size = 0;         // cd_variant latent count; 0 => size of the word latent space
};

struct ModelDims {
  std::size_t word_dim = 64;
  std::size_t hidden = 32;
  std::size_t cluster_dim = 64;
  std::size_t scorer_hidden = 32;
  std::size_t bow_hidden = 32;

  void validate() const;
};

struct PriorNetwork {
  BiGRUEncoder encoder;
  ScorerParams cluster_scorer;
  ScorerParams word_scorer;
  Tensor cluster_proj;  // [2*hidden, cluster_dim], maps e_c into the summary space

  template <class F>
  void for_each(F&& f) {
    encoder.for_each("prior.encoder", f);
    cluster_scorer.for_each("prior.cluster_scorer", f);
    word_scorer.for_each("prior.word_scorer", f);
    f(std::string("prior.cluster_proj"), cluster_proj);
  }
};

struct PosteriorNetwork {
  BiGRUEncoder query_encoder;
  BiGRUEncoder response_encoder;
  ScorerParams cluster_scorer;
  ScorerParams word_scorer;
  Tensor cluster_proj;

  template <class F>
  void for_each(F&& f) {
    query_encoder.for_each("posterior.query_encoder", f);
    response_encoder.for_each("posterior.response_encoder", f);
    cluster_scorer.for_each("posterior.cluster_scorer", f);
    word_scorer.for_each("posterior.word_scorer", f);
    f(std::string("posterior.cluster_proj"), cluster_proj);
  }
};

struct GenerationNetwork {
  BiGRUEncoder encoder;
  Tensor init_w, init_b;  // decoder initial state from the query summary
  GRUParams decoder;
  AttentionParams attention;
  Tensor out_w, out_b;  // [V, hidden + word_dim] over concat(attentional state, h_z)
  Tensor cluster_proj;  // [word_dim, cluster_dim], maps e_c into the word space
  ScorerParams bow;     // MLP(concat(x summary, h_z)) -> V

  template <class F>
  void for_each(F&& f) {
    encoder.for_each("generation.encoder", f);
    f(std::string("generation.init_w"), init_w), f(std::string("generation.init_b"), init_b);
    decoder.for_each("generation.decoder", f);
    attention.for_each("generation.attention", f);
    f(std::string("generation.out_w"), out_w), f(std::string("generation.out_b"), out_b);
    f(std::string("generation.cluster_proj"), cluster_proj);
    bow.for_each("generation.bow", f);
  }
};

struct DCVAEParams {
  Tensor word_embeddings;     // [V, word_dim]
  Tensor cluster_embeddings;  // [K, cluster_dim], two_stage only
  Tensor latent_embeddings;   // [M, word_dim], cd_variant only
  PriorNetwork prior;
  PosteriorNetwork posterior;
  GenerationNetwork generation;

  // Visits every allocated parameter with a stable dotted name.
  template <class F>
  void for_each(F&& f) {
    auto g = [&](const std::string& name, Tensor& t) {
      if (!t.empty()) f(name, t);
    };
    g("word_embeddings", word_embeddings);
    g("cluster_embeddings", cluster_embeddings);
    g("latent_embeddings", latent_embeddings);
    prior.for_each(g);
    posterior.for_each(g);
    generation.for_each(g);
  }
};

class Model {
 public:
  Vocab vocab;
  LatentSpace latent;  // vocabulary ids; cd_variant: abstract 0..M-1
  LatentConfig config;
  ModelDims dims;
  ClusterModel clusters;  // two_stage only
  DCVAEParams params;

  // Allocates parameters for the given configuration (all zero).
  Model(Vocab vocab, LatentSpace latent, LatentConfig config, ModelDims dims, ClusterModel clusters = {});

  // U[-0.1, 0.1] for everything; rows of the word table found in `pretrained`
  // are copied from it; cluster projections start as identity when square.
  void init(std::uint64_t seed, const WordEmbeddings* pretrained = nullptr);

  LatentMode mode() const { return config.mode; }
  bool has_latent() const { return config.mode != LatentMode::no_latent; }
  bool two_stage() const { return config.mode == LatentMode::two_stage; }
  std::size_t latent_size() const { return latent.size(); }
  std::size_t num_groups() const { return groups_->size(); }
  const std::shared_ptr<const Partition>& partition() const { return groups_; }
  std::size_t group_of(std::size_t latent_index) const { return group_of_[latent_index]; }
  std::size_t position_in_group(std::size_t latent_index) const { return pos_in_group_[latent_index]; }
  // Latent index of a vocabulary id (word modes).
  std::optional<std::size_t> latent_index(int vocab_id) const;
  // Human-readable latent label: the word, or "#i" for abstract latents.
  std::string latent_label(std::size_t latent_index) const;
  // Row of each latent index in its embedding table (word or abstract).
  const std::vector<std::size_t>& latent_rows() const { return latent_rows_; }

  std::vector<std::pair<std::string, const Tensor*>> prior_registry() const;
  std::vector<std::pair<std::string, const Tensor*>> posterior_registry() const;
  std::vector<std::pair<std::string, const Tensor*>> generation_registry() const;
  std::vector<std::pair<std::string, Tensor*>> named_parameters();

 private:
  void build_layout();

  std::shared_ptr<const Partition> groups_;
  std::vector<std::size_t> group_of_;
  std::vector<std::size_t> pos_in_group_;
  std::vector<std::size_t> latent_rows_;  // row in the embedding table of each latent index
};

// Latent distribution recorded on a tape.
struct LatentDistVars {
  Var cluster_logp;               // [K] (constant [0] in flat modes)
  std::vector<Var> word_logp;     // per group, aligned with the partition
  Var flat_logp;                  // [|Z|] by latent index
};

LatentDistVars prior_dist(Tape& tape, const Model& model, std::span<const int> query);
LatentDistVars posterior_dist(Tape& tape, const Model& model, std::span<const int> query, std::span<const int> response);
TwoStageDist to_distribution(const Model& model, const LatentDistVars& d);

// Value-level conveniences on a private tape.
TwoStageDist prior_dist(const Model& model, std::span<const int> query);
TwoStageDist posterior_dist(const Model& model, std::span<const int> query, std::span<const int> response);

// h_z for latent index z in cluster c (c ignored outside two_stage).
Var latent_repr(Tape& tape, const Model& model, std::size_t z, std::optional<std::size_t> c = std::nullopt);
Tensor latent_repr(const Model& model, std::size_t z, std::optional<std::size_t> c = std::nullopt);
// Rows h_z for every latent index, [|Z|, word_dim].
Var latent_table(Tape& tape, const Model& model);

struct GenerationContext {
  Encoding encoding;
  Var init_state;
};

GenerationContext encode_query(Tape& tape, const Model& model, std::span<const int> query);

struct DecodeStep {
  Var log_probs;  // [V]
  Var state;      // [hidden]
};

DecodeStep decode_step(Tape& tape, const Model& model, int prev_token, Var dec_state, Var memory, Var h_z);

// Unnormalised vocabulary logits h^b of the bag-of-words head.
Var bow_logits(Tape& tape, const Model& model, Var x_summary, Var h_z);

// Teacher-forced -log p(y | x, h_z), including the final EOS.
Var sequence_nll(Tape& tape, const Model& model, const GenerationContext& ctx, std::span<const int> response, Var h_z);

// Versioned binary checkpoint holding config, vocabulary, latent space,
// cluster model and every named parameter. Round trip is bit-exact.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
std::string serialize_model(const Model& model);
Model deserialize_model(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace dcvae
