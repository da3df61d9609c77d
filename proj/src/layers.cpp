#include "dcvae/layers.hpp"

#include <stdexcept>

namespace dcvae {

void init_uniform(Tensor& t, Rng& rng, double radius) {
  for (double& v : t.data()) v = rng.uniform(-radius, radius);
}

GRUParams::GRUParams(std::size_t input_dim, std::size_t hidden_dim)
    : w_update({hidden_dim, input_dim}), u_update({hidden_dim, hidden_dim}), b_update({hidden_dim}),
      w_reset({hidden_dim, input_dim}), u_reset({hidden_dim, hidden_dim}), b_reset({hidden_dim}),
      w_cand({hidden_dim, input_dim}), u_cand({hidden_dim, hidden_dim}), b_cand({hidden_dim}) {}

void GRUParams::init(Rng& rng) {
  for_each("", [&](const std::string&, Tensor& t) { init_uniform(t, rng); });
}

Var gru_step(Tape& tape, const GRUParams& p, Var x, Var h_prev) {
  if (x.value().rank() != 1 || x.size() != p.input_dim()) {
    throw std::invalid_argument("gru_step: input " + shape_string(x.shape()) + " vs input dim " +
                                std::to_string(p.input_dim()));
  }
  if (h_prev.value().rank() != 1 || h_prev.size() != p.hidden_dim()) {
    throw std::invalid_argument("gru_step: state " + shape_string(h_prev.shape()) + " vs hidden dim " +
                                std::to_string(p.hidden_dim()));
  }
  auto P = [&](const Tensor& t) { return tape.parameter(t); };
  using namespace ops;
  Var u = sigmoid(add(affine(P(p.w_update), x, P(p.b_update)), matmul(P(p.u_update), h_prev)));
  Var r = sigmoid(add(affine(P(p.w_reset), x, P(p.b_reset)), matmul(P(p.u_reset), h_prev)));
  Var n = ops::tanh(add(affine(P(p.w_cand), x, P(p.b_cand)), matmul(P(p.u_cand), mul(r, h_prev))));
  // (1 - u) * h + u * n == h + u * (n - h)
  return add(h_prev, mul(u, sub(n, h_prev)));
}

Encoding encode_bidirectional(Tape& tape, const BiGRUEncoder& enc, const Tensor& embeddings,
                              std::span<const int> token_ids) {
  if (token_ids.empty()) throw std::invalid_argument("encode_bidirectional: empty sequence");
  const std::size_t vocab = embeddings.shape()[0];
  for (int id : token_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::invalid_argument("encode_bidirectional: token id " + std::to_string(id) + " outside embedding table of " +
                                  std::to_string(vocab));
    }
  }
  Var table = tape.parameter(embeddings);
  const std::size_t n = token_ids.size();
  std::vector<Var> inputs;
  inputs.reserve(n);
  for (int id : token_ids) inputs.push_back(ops::lookup(table, static_cast<std::size_t>(id)));

  const std::size_t dh = enc.hidden_dim();
  std::vector<Var> fwd(n), bwd(n);
  Var h = tape.constant(Tensor({dh}, 0.0));
  for (std::size_t t = 0; t < n; ++t) fwd[t] = h = gru_step(tape, enc.forward, inputs[t], h);
  h = tape.constant(Tensor({dh}, 0.0));
  for (std::size_t t = n; t-- > 0;) bwd[t] = h = gru_step(tape, enc.backward, inputs[t], h);

  Encoding out;
  out.states.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    const Var pair[] = {fwd[t], bwd[t]};
    out.states.push_back(ops::concat(pair));
  }
  out.memory = ops::stack(out.states);
  const Var ends[] = {fwd[n - 1], bwd[0]};
  out.summary = ops::concat(ends);
  return out;
}

AttentionParams::AttentionParams(std::size_t dec_dim, std::size_t enc_dim)
    : score({dec_dim, enc_dim}), out_w({dec_dim, enc_dim + dec_dim}), out_b({dec_dim}) {}

void AttentionParams::init(Rng& rng) {
  for_each("", [&](const std::string&, Tensor& t) { init_uniform(t, rng); });
}

Attended attend(Tape& tape, const AttentionParams& p, Var dec_state, Var memory) {
  if (memory.value().rank() != 2) throw std::invalid_argument("attend: empty encoder states");
  if (dec_state.size() != p.score.shape()[0] || memory.shape()[1] != p.score.shape()[1]) {
    throw std::invalid_argument("attend: shape mismatch " + shape_string(dec_state.shape()) + " vs " +
                                shape_string(memory.shape()));
  }
  Var key = ops::matmul(dec_state, tape.parameter(p.score));  // [2*d_h]
  Var weights = ops::softmax(ops::matmul(memory, key));       // [T]
  Var context = ops::matmul(weights, memory);                 // [2*d_h]
  return {context, weights};
}

Attended attend(Tape& tape, const AttentionParams& p, Var dec_state, std::span<const Var> enc_states) {
  if (enc_states.empty()) throw std::invalid_argument("attend: empty encoder states");
  return attend(tape, p, dec_state, ops::stack(enc_states));
}

Var attentional_state(Tape& tape, const AttentionParams& p, Var dec_state, Var context) {
  const Var parts[] = {context, dec_state};
  return ops::tanh(ops::affine(tape.parameter(p.out_w), ops::concat(parts), tape.parameter(p.out_b)));
}

ScorerParams::ScorerParams(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim)
    : w1({hidden_dim, input_dim}), b1({hidden_dim}), w2({output_dim, hidden_dim}), b2({output_dim}) {}

void ScorerParams::init(Rng& rng) {
  for_each("", [&](const std::string&, Tensor& t) { init_uniform(t, rng); });
}

Var score(Tape& tape, const ScorerParams& p, Var v) {
  if (v.value().rank() != 1 || v.size() != p.input_dim()) {
    throw std::invalid_argument("score: input " + shape_string(v.shape()) + " vs scorer input dim " +
                                std::to_string(p.input_dim()));
  }
  Var hidden = ops::tanh(ops::affine(tape.parameter(p.w1), v, tape.parameter(p.b1)));
  return ops::affine(tape.parameter(p.w2), hidden, tape.parameter(p.b2));
}

Var score_rows(Tape& tape, const ScorerParams& p, Var v) {
  if (v.value().rank() != 2 || v.shape()[1] != p.input_dim()) {
    throw std::invalid_argument("score: input " + shape_string(v.shape()) + " vs scorer input dim " +
                                std::to_string(p.input_dim()));
  }
  Var hidden = ops::tanh(ops::add_row(ops::matmul_nt(v, tape.parameter(p.w1)), tape.parameter(p.b1)));
  return ops::add_row(ops::matmul_nt(hidden, tape.parameter(p.w2)), tape.parameter(p.b2));
}

}  // namespace dcvae
