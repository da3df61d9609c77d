#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dcvae/autodiff.hpp"
#include "dcvae/rng.hpp"

namespace dcvae {

void init_uniform(Tensor& t, Rng& rng, double radius = 0.1);

// Standard GRU cell:
//   u = sigmoid(Wu x + Uu h + bu)
//   r = sigmoid(Wr x + Ur h + br)
//   n = tanh(Wn x + Un (r * h) + bn)
//   h' = (1 - u) * h + u * n
struct GRUParams {
  Tensor w_update, u_update, b_update;
  Tensor w_reset, u_reset, b_reset;
  Tensor w_cand, u_cand, b_cand;

  GRUParams() = default;
  GRUParams(std::size_t input_dim, std::size_t hidden_dim);

  std::size_t input_dim() const { return w_update.shape()[1]; }
  std::size_t hidden_dim() const { return w_update.shape()[0]; }
  void init(Rng& rng);

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".w_update", w_update), f(prefix + ".u_update", u_update), f(prefix + ".b_update", b_update);
    f(prefix + ".w_reset", w_reset), f(prefix + ".u_reset", u_reset), f(prefix + ".b_reset", b_reset);
    f(prefix + ".w_cand", w_cand), f(prefix + ".u_cand", u_cand), f(prefix + ".b_cand", b_cand);
  }
};

Var gru_step(Tape& tape, const GRUParams& p, Var x, Var h_prev);

struct BiGRUEncoder {
  GRUParams forward;
  GRUParams backward;

  BiGRUEncoder() = default;
  BiGRUEncoder(std::size_t input_dim, std::size_t hidden_dim) : forward(input_dim, hidden_dim), backward(input_dim, hidden_dim) {}

  std::size_t hidden_dim() const { return forward.hidden_dim(); }
  std::size_t output_dim() const { return 2 * forward.hidden_dim(); }
  void init(Rng& rng) { forward.init(rng), backward.init(rng); }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    forward.for_each(prefix + ".fwd", f);
    backward.for_each(prefix + ".bwd", f);
  }
};

struct Encoding {
  std::vector<Var> states;  // concat(forward_t, backward_t), one per position
  Var memory;               // states stacked into [T, 2*d_h]
  Var summary;              // concat(final forward, final backward)
};

// `embeddings` is the shared word table [V, d_in].
Encoding encode_bidirectional(Tape& tape, const BiGRUEncoder& enc, const Tensor& embeddings,
                              std::span<const int> token_ids);

// Multiplicative ("general") attention: score_i = s^T W enc_i.
struct AttentionParams {
  Tensor score;  // [d_h, 2*d_h]
  Tensor out_w;  // [d_h, 2*d_h + d_h]
  Tensor out_b;  // [d_h]

  AttentionParams() = default;
  AttentionParams(std::size_t dec_dim, std::size_t enc_dim);
  void init(Rng& rng);

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".score", score), f(prefix + ".out_w", out_w), f(prefix + ".out_b", out_b);
  }
};

struct Attended {
  Var context;
  Var weights;
};

Attended attend(Tape& tape, const AttentionParams& p, Var dec_state, Var memory);
Attended attend(Tape& tape, const AttentionParams& p, Var dec_state, std::span<const Var> enc_states);
// tanh(W [context; dec_state] + b)
Var attentional_state(Tape& tape, const AttentionParams& p, Var dec_state, Var context);

// W2 tanh(W1 v + b1) + b2
struct ScorerParams {
  Tensor w1, b1, w2, b2;

  ScorerParams() = default;
  ScorerParams(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim);
  std::size_t input_dim() const { return w1.shape()[1]; }
  std::size_t output_dim() const { return w2.shape()[0]; }
  void init(Rng& rng);

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".w1", w1), f(prefix + ".b1", b1), f(prefix + ".w2", w2), f(prefix + ".b2", b2);
  }
};

Var score(Tape& tape, const ScorerParams& p, Var v);
// Row-wise score of v [n, in]; returns [n, out].
Var score_rows(Tape& tape, const ScorerParams& p, Var v);

}  // namespace dcvae
