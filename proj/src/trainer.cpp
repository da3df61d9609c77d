#include "dcvae/trainer.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dcvae {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (samples < 1) throw std::invalid_argument("train: samples must be >= 1");
}

void PretrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("pretrain: lr must be > 0");
  if (batch < 1) throw std::invalid_argument("pretrain: batch must be >= 1");
}

std::string format_epoch_line(std::size_t epoch, const LossBreakdown& loss) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.6f\t%.6f\t%.6f", epoch, loss.reconstruction, loss.kl, loss.bow, loss.total);
  return buf;
}

namespace {

std::vector<Tensor> gradients(const Tape& tape, std::span<Tensor* const> params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Tensor* p : params) out.push_back(tape.grad_of(*p));
  return out;
}

}  // namespace

std::vector<LossBreakdown> train(Model& model, std::span<const Example> corpus, const TrainConfig& config,
                                 const TrainOutputs& outputs) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  if (config.mode && *config.mode != model.mode()) {
    throw std::invalid_argument("train: config mode " + std::string(to_string(*config.mode)) + " does not match model mode " +
                                std::string(to_string(model.mode())));
  }
  std::vector<Tensor*> params;
  for (auto& [name, t] : model.named_parameters()) params.push_back(t);
  AdamState adam;
  Rng rng(config.seed);
  ObjectiveOptions options{config.samples, config.straight_through};
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<LossBreakdown> history;
  std::string log_text;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    LossBreakdown sum;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      std::vector<Example> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(corpus[order[i]]);
      Tape tape;
      LossVars loss = training_loss(tape, model, batch, options, rng);
      tape.backward(loss.total);
      std::vector<Tensor> grads = gradients(tape, params);
      clip_global_norm(grads, config.clip);
      adam_step(params, grads, adam, config.lr);
      const LossBreakdown v = loss.values();
      const double w = static_cast<double>(batch.size());
      sum.reconstruction += w * v.reconstruction, sum.kl += w * v.kl, sum.bow += w * v.bow, sum.total += w * v.total;
    }
    const double n = static_cast<double>(corpus.size());
    LossBreakdown mean{sum.reconstruction / n, sum.kl / n, sum.bow / n, sum.total / n};
    history.push_back(mean);
    const std::string line = format_epoch_line(epoch, mean);
    log_text += line + "\n";
    if (outputs.progress) *outputs.progress << line << "\n" << std::flush;
    if (outputs.log) write_file_atomic(*outputs.log, log_text);
    if (outputs.checkpoint) save_checkpoint(model, *outputs.checkpoint);
  }
  return history;
}

std::vector<Tensor*> pretrain_parameters(Model& model) {
  std::vector<Tensor*> out;
  for (auto& [name, t] : model.named_parameters()) {
    if (name.rfind("prior.", 0) == 0 || name.rfind("posterior.", 0) == 0) out.push_back(t);
  }
  return out;
}

PretrainLoss pretrain_step(Model& model, std::span<const Example> batch, AdamState& state, double lr, double clip) {
  std::vector<Tensor*> params = pretrain_parameters(model);
  Tape tape;
  PretrainVars loss = pretrain_loss(tape, model, batch);
  tape.backward(loss.total);
  std::vector<Tensor> grads = gradients(tape, params);
  clip_global_norm(grads, clip);
  adam_step(params, grads, state, lr);
  return loss.values();
}

std::vector<PretrainLoss> pretrain(Model& model, std::span<const Example> corpus, const PretrainConfig& config,
                                   std::ostream* progress) {
  config.validate();
  std::vector<Example> usable;
  for (const Example& ex : corpus)
    if (ex.keyword) usable.push_back(ex);
  if (usable.empty()) throw std::invalid_argument("pretrain: no example carries a keyword");
  Rng rng(config.seed);
  std::vector<std::size_t> order(usable.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  AdamState adam;
  std::vector<PretrainLoss> history;
  std::size_t cursor = 0;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<Example> batch;
    while (batch.size() < std::min(config.batch, usable.size())) {
      if (cursor == order.size()) rng.shuffle(order.begin(), order.end()), cursor = 0;
      batch.push_back(usable[order[cursor++]]);
    }
    history.push_back(pretrain_step(model, batch, adam, config.lr, config.clip));
    if (progress && (step % 50 == 0 || step == config.steps)) {
      const auto& l = history.back();
      *progress << "pretrain\t" << step << "\t" << l.cluster_ce << "\t" << l.word_ce << "\t" << l.total << "\n" << std::flush;
    }
  }
  return history;
}

}  // namespace dcvae
