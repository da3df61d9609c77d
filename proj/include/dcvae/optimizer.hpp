#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dcvae/tensor.hpp"

namespace dcvae {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  std::vector<Tensor> m;  // first moments, allocated on the first step
  std::vector<Tensor> v;  // second moments
};

// One Adam update with bias correction. grads[i] must match params[i] in shape.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr);

// Scales grads in place so their joint L2 norm is at most `cap`; returns the
// norm before clipping. cap <= 0 disables clipping.
double clip_global_norm(std::span<Tensor> grads, double cap);

}  // namespace dcvae
