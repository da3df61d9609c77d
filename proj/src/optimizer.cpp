#include "dcvae/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dcvae {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " params vs " + std::to_string(grads.size()) + " grads");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape(), 0.0);
      state.v.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state was built for a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape() || state.m[i].shape() != params[i]->shape()) {
      throw std::invalid_argument("adam_step: shape mismatch " + shape_string(params[i]->shape()) + " vs " + shape_string(grads[i].shape()));
    }
  }
  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

double clip_global_norm(std::span<Tensor> grads, double cap) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double x : g.values()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (cap > 0.0 && norm > cap) {
    const double s = cap / norm;
    for (Tensor& g : grads)
      for (double& x : g.data()) x *= s;
  }
  return norm;
}

}  // namespace dcvae
