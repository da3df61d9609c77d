#include "dcvae/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dcvae/sampling.hpp"

namespace dcvae {

namespace {

void require_simplex(std::span<const double> p, const char* what) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": negative or non-finite probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument(std::string(what) + ": not a simplex (sum " + std::to_string(total) + ")");
}

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

double kl_categorical(std::span<const double> q, std::span<const double> p) {
  if (q.size() != p.size()) {
    throw std::invalid_argument("kl_categorical: length mismatch " + std::to_string(q.size()) + " vs " + std::to_string(p.size()));
  }
  require_simplex(q, "kl_categorical");
  require_simplex(p, "kl_categorical");
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] == 0.0) continue;
    if (p[i] == 0.0) throw std::invalid_argument("kl_categorical: q > 0 where p = 0 (infinite divergence)");
    kl += q[i] * std::log(q[i] / p[i]);
  }
  return kl;
}

double kl_two_stage(const TwoStageDist& q, const TwoStageDist& p) {
  if (!same_partition(q, p)) throw std::invalid_argument("kl_two_stage: distributions use different partitions");
  q.validate();
  p.validate();
  double kl = kl_categorical(q.cluster, p.cluster);
  for (std::size_t k = 0; k < q.num_clusters(); ++k) {
    if (q.cluster[k] == 0.0) continue;
    kl += q.cluster[k] * kl_categorical(q.words[k], p.words[k]);
  }
  return kl;
}

double bow_nll(std::span<const double> h_b, std::span<const int> response) {
  if (response.empty()) throw std::invalid_argument("bow_nll: empty response");
  if (h_b.empty()) throw std::invalid_argument("bow_nll: empty logits");
  const double lse = log_sum_exp(h_b);
  double nll = 0.0;
  for (int y : response) {
    if (y < 0 || static_cast<std::size_t>(y) >= h_b.size()) throw std::invalid_argument("bow_nll: token id out of range");
    nll -= h_b[static_cast<std::size_t>(y)] - lse;
  }
  return nll;
}

LossBreakdown LossVars::values() const {
  return {reconstruction.value().item(), kl.value().item(), bow.value().item(), total.value().item()};
}

PretrainLoss PretrainVars::values() const { return {cluster_ce.value().item(), word_ce.value().item(), total.value().item()}; }

Var kl_on_tape(const LatentDistVars& q, const LatentDistVars& p) {
  if (q.word_logp.size() != p.word_logp.size() || q.cluster_logp.size() != p.cluster_logp.size()) {
    throw std::invalid_argument("kl_on_tape: distributions use different partitions");
  }
  Var qc = ops::exp(q.cluster_logp);
  Var cluster_kl = ops::sum(ops::mul(qc, ops::sub(q.cluster_logp, p.cluster_logp)));
  std::vector<Var> per_cluster;
  per_cluster.reserve(q.word_logp.size());
  for (std::size_t k = 0; k < q.word_logp.size(); ++k) {
    Var qw = ops::exp(q.word_logp[k]);
    per_cluster.push_back(ops::sum(ops::mul(qw, ops::sub(q.word_logp[k], p.word_logp[k]))));
  }
  return ops::add(cluster_kl, ops::sum(ops::mul(qc, ops::concat(per_cluster))));
}

namespace {

Var bow_on_tape(Tape& tape, const Model& model, Var x_summary, Var h_z, std::span<const int> response) {
  Var lp = ops::log_softmax(bow_logits(tape, model, x_summary, h_z));
  std::vector<std::size_t> idx(response.begin(), response.end());
  return ops::scale(ops::sum(ops::gather(lp, idx)), -1.0);
}

}  // namespace

LossVars training_loss(Tape& tape, const Model& model, std::span<const Example> batch, const ObjectiveOptions& options,
                       Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("training_loss: empty batch");
  if (options.samples < 1) throw std::invalid_argument("training_loss: samples must be >= 1");
  if (model.two_stage() && !model.clusters.fitted()) {
    throw std::invalid_argument("training_loss: two_stage mode requires a fitted cluster model");
  }
  const double inv_n = 1.0 / static_cast<double>(options.samples);
  std::vector<Var> recon, kl, bow;
  for (const Example& ex : batch) {
    GenerationContext ctx = encode_query(tape, model, ex.query);
    if (!model.has_latent()) {
      recon.push_back(sequence_nll(tape, model, ctx, ex.response, tape.constant(Tensor({model.dims.word_dim}, 0.0))));
      continue;
    }
    LatentDistVars q = posterior_dist(tape, model, ex.query, ex.response);
    LatentDistVars p = prior_dist(tape, model, ex.query);
    kl.push_back(kl_on_tape(q, p));
    const TwoStageDist qd = to_distribution(model, q);
    Var probs, table;
    if (options.straight_through) {
      probs = ops::exp(q.flat_logp);
      table = latent_table(tape, model);
    }
    std::vector<Var> r, b;
    for (std::size_t s = 0; s < options.samples; ++s) {
      const LatentSample z = two_stage_sample(qd, rng);
      Var h_z = options.straight_through ? ops::straight_through(probs, table, z.latent) : latent_repr(tape, model, z.latent, z.cluster);
      r.push_back(sequence_nll(tape, model, ctx, ex.response, h_z));
      b.push_back(bow_on_tape(tape, model, ctx.encoding.summary, h_z, ex.response));
    }
    recon.push_back(ops::scale(ops::sum(ops::stack(r)), inv_n));
    bow.push_back(ops::scale(ops::sum(ops::stack(b)), inv_n));
  }
  LossVars out;
  out.reconstruction = ops::mean(ops::stack(recon));
  if (model.has_latent()) {
    out.kl = ops::mean(ops::stack(kl));
    out.bow = ops::mean(ops::stack(bow));
    out.total = ops::add(ops::add(out.reconstruction, out.kl), out.bow);
  } else {
    out.kl = tape.constant(Tensor::scalar(0.0));
    out.bow = tape.constant(Tensor::scalar(0.0));
    out.total = out.reconstruction;
  }
  return out;
}

namespace {

// -log p(y | x, z) for every latent index on a no-grad tape.
std::vector<double> nll_per_latent(const Model& model, std::span<const int> query, std::span<const int> response) {
  Tape tape(false);
  GenerationContext ctx = encode_query(tape, model, query);
  std::vector<double> out(model.latent_size());
  for (std::size_t z = 0; z < out.size(); ++z) out[z] = sequence_nll(tape, model, ctx, response, latent_repr(tape, model, z)).value().item();
  return out;
}

}  // namespace

double exact_elbo(const Model& model, std::span<const int> query, std::span<const int> response) {
  const TwoStageDist q = posterior_dist(model, query, response);
  const TwoStageDist p = prior_dist(model, query);
  const std::vector<double> qf = q.flat();
  const std::vector<double> nll = nll_per_latent(model, query, response);
  double expected = 0.0;
  for (std::size_t z = 0; z < qf.size(); ++z) expected -= qf[z] * nll[z];
  return expected - kl_two_stage(q, p);
}

double exact_log_likelihood(const Model& model, std::span<const int> query, std::span<const int> response) {
  Tape tape(false);
  const LatentDistVars p = prior_dist(tape, model, query);
  const std::vector<double> nll = nll_per_latent(model, query, response);
  std::vector<double> terms(p.flat_logp.value().values());
  for (std::size_t z = 0; z < terms.size(); ++z) terms[z] -= nll[z];
  return log_sum_exp(terms);
}

PretrainVars pretrain_loss(Tape& tape, const Model& model, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("pretrain_loss: empty batch");
  if (!model.has_latent() || model.mode() == LatentMode::cd_variant) {
    throw std::invalid_argument("pretrain_loss: pretraining needs word latents (mode " + std::string(to_string(model.mode())) + ")");
  }
  std::vector<Var> cluster_ce, word_ce;
  for (const Example& ex : batch) {
    if (!ex.keyword) throw std::invalid_argument("pretrain_loss: example without a keyword");
    const auto z = model.latent_index(*ex.keyword);
    if (!z) throw std::invalid_argument("pretrain_loss: keyword id " + std::to_string(*ex.keyword) + " is outside the latent space");
    const std::size_t g[] = {model.group_of(*z)};
    const std::size_t pos[] = {model.position_in_group(*z)};
    const LatentDistVars dists[] = {prior_dist(tape, model, ex.query), posterior_dist(tape, model, ex.query, ex.response)};
    for (const auto& d : dists) {
      cluster_ce.push_back(ops::scale(ops::gather(d.cluster_logp, g), -1.0));
      word_ce.push_back(ops::scale(ops::gather(d.word_logp[g[0]], pos), -1.0));
    }
  }
  // Two heads per example: sum them, then average over the batch.
  const double per_example = 2.0 / static_cast<double>(cluster_ce.size());
  PretrainVars out;
  out.cluster_ce = ops::scale(ops::sum(ops::concat(cluster_ce)), per_example);
  out.word_ce = ops::scale(ops::sum(ops::concat(word_ce)), per_example);
  out.total = ops::add(out.cluster_ce, out.word_ce);
  return out;
}

}  // namespace dcvae
