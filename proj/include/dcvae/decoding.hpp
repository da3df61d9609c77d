#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dcvae/data.hpp"
#include "dcvae/networks.hpp"
#include "dcvae/rng.hpp"

namespace dcvae {

template <class State>
struct BeamHypothesis {
  std::vector<int> tokens;  // generated tokens; ends with EOS when finished
  double score = 0.0;       // cumulative log-probability
  State state{};
  bool finished = false;
};

struct BeamOptions {
  std::size_t beam_size = 10;
  std::size_t max_len = 30;  // generated tokens, EOS included
  bool length_normalize = false;
  int eos = Vocab::kEos;
  std::vector<int> banned = {Vocab::kPad, Vocab::kBos};  // never expanded
};

struct BeamResult {
  std::vector<int> tokens;  // without the final EOS
  double score = 0.0;
  bool finished = false;
};

namespace detail {

// Higher score first; equal scores go to the lexicographically smaller sequence.
template <class H>
bool beam_before(const H& a, const H& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

inline double final_score(double score, std::size_t len, bool normalize) {
  return normalize && len > 0 ? score / static_cast<double>(len) : score;
}

}  // namespace detail

// Generic beam search. `step(state, prev_token)` returns the next-token
// log-probabilities and the successor state.
template <class State, class Step>
BeamResult beam_search(State initial, int start_token, Step&& step, const BeamOptions& options) {
  if (options.beam_size < 1) throw std::invalid_argument("beam_search: beam_size must be >= 1");
  if (options.max_len < 1) throw std::invalid_argument("beam_search: max_len must be >= 1");
  using H = BeamHypothesis<State>;
  std::vector<H> active{H{{}, 0.0, std::move(initial), false}};
  std::vector<H> done;
  auto better_final = [&](const H& a, const H& b) {
    const double sa = detail::final_score(a.score, a.tokens.size(), options.length_normalize);
    const double sb = detail::final_score(b.score, b.tokens.size(), options.length_normalize);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  };
  for (std::size_t t = 0; t < options.max_len && !active.empty(); ++t) {
    std::vector<H> candidates;
    for (const H& h : active) {
      const int prev = h.tokens.empty() ? start_token : h.tokens.back();
      auto [log_probs, next_state] = step(h.state, prev);
      for (std::size_t w = 0; w < log_probs.size(); ++w) {
        const int tok = static_cast<int>(w);
        if (std::find(options.banned.begin(), options.banned.end(), tok) != options.banned.end()) continue;
        H c{h.tokens, h.score + log_probs[w], next_state, tok == options.eos};
        c.tokens.push_back(tok);
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), detail::beam_before<H>);
    if (candidates.size() > options.beam_size) candidates.resize(options.beam_size);
    active.clear();
    for (H& c : candidates) (c.finished ? done : active).push_back(std::move(c));
    if (!done.empty() && !active.empty() && !options.length_normalize) {
      // Scores never increase along a hypothesis, so once the best finished
      // beats every active one nothing can overtake it.
      const H& best_done = *std::min_element(done.begin(), done.end(), better_final);
      if (best_done.score > active.front().score) break;
    }
  }
  const std::vector<H>& pool = done.empty() ? active : done;
  if (pool.empty()) throw std::logic_error("beam_search: no hypotheses");
  const H& best = *std::min_element(pool.begin(), pool.end(), better_final);
  BeamResult r;
  r.tokens = best.tokens;
  r.finished = best.finished;
  if (r.finished) r.tokens.pop_back();
  r.score = best.score;
  return r;
}

// Model wrappers. h_z has word_dim entries (zeros in no_latent mode).
BeamResult beam_search(const Model& model, std::span<const int> query, const Tensor& h_z, const BeamOptions& options = {});
// Argmax at every step (ties to the smaller id), never emitting PAD or BOS.
BeamResult greedy_decode(const Model& model, std::span<const int> query, const Tensor& h_z, std::size_t max_len = 30);

struct GenerationResult {
  std::optional<std::size_t> latent;   // latent index; empty in no_latent mode
  std::optional<std::size_t> cluster;  // two_stage only
  std::vector<int> response;
  double score = 0.0;
};

// Samples (cluster, z) from the prior num_samples times and beam-decodes each.
std::vector<GenerationResult> generate_diverse(const Model& model, std::span<const int> query, std::size_t num_samples, Rng& rng,
                                               const BeamOptions& options = {});

// query, z label, cluster index (-1 if none), response, beam score.
std::string format_generation_line(const Model& model, const TokenList& query, const GenerationResult& result);

struct GeneratedLine {
  TokenList query;
  std::string latent;
  long long cluster = -1;
  TokenList response;
  double score = 0.0;
};

std::vector<GeneratedLine> parse_generated(const std::string& text, const std::string& origin = "<memory>");
std::vector<GeneratedLine> load_generated(const std::filesystem::path& path);

}  // namespace dcvae
