#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <stdexcept>

#include "dcvae/networks.hpp"
#include "param_check.hpp"
#include "toy_model.hpp"

using namespace dcvae;
using testing_support::param_grad_error;
using testing_support::random_sentence;
using testing_support::toy_model;
using testing_support::ToyOptions;

namespace {

void zero_scorers(Model& m) {
  for (auto& [name, t] : m.named_parameters())
    if (name.find("_scorer.") != std::string::npos) *t = Tensor(t->shape(), 0.0);
}

void check_uniform(const TwoStageDist& d, const Model& m) {
  for (double p : d.cluster) CHECK(p == doctest::Approx(1.0 / static_cast<double>(d.num_clusters())).epsilon(1e-12));
  for (std::size_t k = 0; k < d.num_clusters(); ++k)
    for (double p : d.words[k]) CHECK(p == doctest::Approx(1.0 / static_cast<double>((*m.partition())[k].size())).epsilon(1e-12));
}

void check_simplex(const TwoStageDist& d) {
  double total = 0;
  for (double p : d.cluster) total += p;
  CHECK(std::abs(total - 1.0) < 1e-9);
  for (const auto& w : d.words) {
    double s = 0;
    for (double p : w) s += p;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  double flat = 0;
  for (double p : d.flat()) flat += p;
  CHECK(std::abs(flat - 1.0) < 1e-9);
}

const LatentMode kWordModes[] = {LatentMode::two_stage, LatentMode::one_stage, LatentMode::cd_variant};

}  // namespace

TEST_SUITE("dcvae_networks") {

TEST_CASE("zero scorers give uniform prior and posterior") {
  for (LatentMode mode : kWordModes) {
    Model m = toy_model({.mode = mode});
    zero_scorers(m);
    Rng rng(1);
    const auto x = random_sentence(rng, m, 3), y = random_sentence(rng, m, 4);
    check_uniform(prior_dist(m, x), m);
    check_uniform(posterior_dist(m, x, y), m);
  }
}

TEST_CASE("two-stage layout follows the cluster model") {
  Model m = toy_model({.clusters = 3});
  CHECK(m.num_groups() == 3);
  for (std::size_t z = 0; z < m.latent_size(); ++z) {
    const int id = m.latent.ids[z];
    CHECK(static_cast<int>(m.group_of(z)) == m.clusters.cluster_of(id));
    CHECK((*m.partition())[m.group_of(z)][m.position_in_group(z)] == z);
  }
  for (int id : m.latent.ids) CHECK_FALSE(Vocab::is_special(id));
  CHECK(m.params.cluster_embeddings.shape() == Shape{3, m.dims.cluster_dim});
  CHECK(m.params.word_embeddings.shape()[0] == m.vocab.size());
}

TEST_CASE("flat probability equals the enumerated product and sums to one") {
  Rng rng(2);
  for (LatentMode mode : kWordModes) {
    Model m = toy_model({.mode = mode, .words = 10, .clusters = 4, .radius = 0.8});
    for (int trial = 0; trial < 10; ++trial) {
      const auto x = random_sentence(rng, m, 1 + rng.below(4)), y = random_sentence(rng, m, 1 + rng.below(4));
      for (const TwoStageDist& d : {prior_dist(m, x), posterior_dist(m, x, y)}) {
        check_simplex(d);
        const auto flat = d.flat();
        std::vector<double> brute(flat.size(), -1.0);
        for (std::size_t k = 0; k < d.num_clusters(); ++k)
          for (std::size_t j = 0; j < d.words[k].size(); ++j) brute[(*d.partition)[k][j]] = d.cluster[k] * d.words[k][j];
        for (std::size_t z = 0; z < flat.size(); ++z) CHECK(std::abs(flat[z] - brute[z]) < 1e-12);
      }
    }
  }
}

TEST_CASE("tape distribution agrees with the value-level one") {
  Model m = toy_model({.radius = 0.5});
  Rng rng(3);
  const auto x = random_sentence(rng, m, 3);
  Tape tape;
  LatentDistVars v = prior_dist(tape, m, x);
  const TwoStageDist d = prior_dist(m, x);
  const auto flat = d.flat();
  for (std::size_t z = 0; z < flat.size(); ++z) CHECK(std::exp(v.flat_logp.value()[z]) == doctest::Approx(flat[z]).epsilon(1e-12));
}

TEST_CASE("empty inputs are rejected") {
  Model m = toy_model();
  const int x[] = {5};
  CHECK_THROWS_AS(prior_dist(m, std::span<const int>{}), std::invalid_argument);
  CHECK_THROWS_AS(posterior_dist(m, x, std::span<const int>{}), std::invalid_argument);
  CHECK_THROWS_AS(posterior_dist(m, std::span<const int>{}, x), std::invalid_argument);
  Model none = toy_model({.mode = LatentMode::no_latent});
  CHECK_THROWS_AS(prior_dist(none, x), std::invalid_argument);
}

TEST_CASE("posterior is sensitive to response order") {
  Model m = toy_model({.radius = 0.5});
  Rng rng(4);
  int differ = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_sentence(rng, m, 3);
    auto y = random_sentence(rng, m, 4);
    auto y2 = y;
    std::reverse(y2.begin(), y2.end());
    if (y2 == y) continue;
    differ += posterior_dist(m, x, y).flat() != posterior_dist(m, x, y2).flat();
  }
  CHECK(differ > 0);
  CHECK(differ >= 15);
}

TEST_CASE("latent representation per mode") {
  {
    Model m = toy_model({.mode = LatentMode::one_stage, .radius = 0.5});
    for (std::size_t z = 0; z < m.latent_size(); ++z) {
      const Tensor h = latent_repr(m, z);
      const std::size_t row = static_cast<std::size_t>(m.latent.ids[z]);
      for (std::size_t j = 0; j < m.dims.word_dim; ++j) CHECK(h[j] == m.params.word_embeddings.at(row, j));
    }
  }
  {
    Model m = toy_model({.mode = LatentMode::two_stage});
    for (std::size_t z = 0; z < m.latent_size(); ++z) {
      const std::size_t c = m.group_of(z);
      const Tensor h = latent_repr(m, z, c);
      const std::size_t row = static_cast<std::size_t>(m.latent.ids[z]);
      // identity-initialized projection: h - e_z == e_c
      for (std::size_t j = 0; j < m.dims.word_dim; ++j)
        CHECK(std::abs((h[j] - m.params.word_embeddings.at(row, j)) - m.params.cluster_embeddings.at(c, j)) < 1e-15);
      CHECK_THROWS_AS(latent_repr(m, z, (c + 1) % m.num_groups()), std::invalid_argument);
    }
    CHECK_THROWS_AS(latent_repr(m, m.latent_size()), std::invalid_argument);
  }
  {
    Model m = toy_model({.mode = LatentMode::cd_variant, .cd_size = 5});
    CHECK(m.latent_size() == 5);
    CHECK(m.latent_label(3) == "#3");
    const Tensor h = latent_repr(m, 3);
    for (std::size_t j = 0; j < m.dims.word_dim; ++j) CHECK(h[j] == m.params.latent_embeddings.at(3, j));
  }
  {
    Model m = toy_model({.mode = LatentMode::no_latent});
    const Tensor h = latent_repr(m, 0);
    CHECK(h == Tensor({m.dims.word_dim}, 0.0));
  }
}

TEST_CASE("latent table rows equal the per-index representation") {
  for (LatentMode mode : kWordModes) {
    Model m = toy_model({.mode = mode, .radius = 0.5});
    Tape tape(false);
    Var table = latent_table(tape, m);
    for (std::size_t z = 0; z < m.latent_size(); ++z) {
      const Tensor h = latent_repr(m, z, m.group_of(z));
      for (std::size_t j = 0; j < m.dims.word_dim; ++j) CHECK(table.value().at(z, j) == doctest::Approx(h[j]).epsilon(1e-14));
    }
  }
}

TEST_CASE("decode step normalizes and depends on h_z") {
  Model m = toy_model({.mode = LatentMode::one_stage, .radius = 0.5});
  Rng rng(5);
  const auto x = random_sentence(rng, m, 3);
  Tape tape(false);
  GenerationContext ctx = encode_query(tape, m, x);
  Var zero = tape.constant(Tensor({m.dims.word_dim}));
  DecodeStep a = decode_step(tape, m, Vocab::kBos, ctx.init_state, ctx.encoding.memory, zero);
  DecodeStep b = decode_step(tape, m, Vocab::kBos, ctx.init_state, ctx.encoding.memory, tape.constant(Tensor({m.dims.word_dim})));
  double total = 0;
  for (double lp : a.log_probs.value().values()) total += std::exp(lp);
  CHECK(std::abs(total - 1.0) < 1e-9);
  CHECK(a.log_probs.value() == b.log_probs.value());
  CHECK(a.log_probs.value().size() == m.vocab.size());
  int differ = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t z1 = rng.below(m.latent_size()), z2 = (z1 + 1) % m.latent_size();
    DecodeStep c = decode_step(tape, m, Vocab::kBos, ctx.init_state, ctx.encoding.memory, tape.constant(latent_repr(m, z1)));
    DecodeStep d = decode_step(tape, m, Vocab::kBos, ctx.init_state, ctx.encoding.memory, tape.constant(latent_repr(m, z2)));
    differ += !(c.log_probs.value() == d.log_probs.value());
  }
  CHECK(differ == 10);
  CHECK_THROWS_AS(decode_step(tape, m, Vocab::kBos, ctx.init_state, ctx.encoding.memory, tape.constant(Tensor({3}))), std::invalid_argument);
  CHECK_THROWS_AS(decode_step(tape, m, static_cast<int>(m.vocab.size()), ctx.init_state, ctx.encoding.memory, zero), std::invalid_argument);
}

TEST_CASE("three-step teacher-forced decode gradient") {
  Model m = toy_model({.mode = LatentMode::two_stage, .radius = 0.4});
  Rng rng(6);
  const auto x = random_sentence(rng, m, 2);
  const std::vector<int> y = {5, 7};  // plus EOS: three steps
  const std::size_t z = 2;
  auto build = [&](Tape& tape) {
    GenerationContext ctx = encode_query(tape, m, x);
    return sequence_nll(tape, m, ctx, y, latent_repr(tape, m, z, m.group_of(z)));
  };
  std::vector<Tensor*> params;
  for (auto& [name, t] : m.named_parameters())
    if (name.rfind("generation.", 0) == 0 || name == "word_embeddings" || name == "cluster_embeddings") params.push_back(t);
  CHECK(param_grad_error(build, params) < 1e-4);
}

TEST_CASE("sequence_nll equals the sum of step losses") {
  Model m = toy_model({.mode = LatentMode::one_stage, .radius = 0.5});
  Rng rng(7);
  const auto x = random_sentence(rng, m, 3);
  const std::vector<int> y = {6, 4, 9};
  Tape tape(false);
  GenerationContext ctx = encode_query(tape, m, x);
  Var h = tape.constant(latent_repr(m, 1));
  const double nll = sequence_nll(tape, m, ctx, y, h).value().item();
  double manual = 0;
  Var state = ctx.init_state;
  int prev = Vocab::kBos;
  std::vector<int> targets = y;
  targets.push_back(Vocab::kEos);
  for (int t : targets) {
    DecodeStep s = decode_step(tape, m, prev, state, ctx.encoding.memory, h);
    manual -= s.log_probs.value()[static_cast<std::size_t>(t)];
    state = s.state;
    prev = t;
  }
  CHECK(nll == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("bag-of-words head") {
  Model m = toy_model({.mode = LatentMode::one_stage, .radius = 0.5});
  Rng rng(8);
  const auto x = random_sentence(rng, m, 3);
  {
    Model zero = m;
    zero.params.generation.bow = ScorerParams(zero.params.generation.bow.input_dim(), zero.dims.bow_hidden, zero.vocab.size());
    Tape tape(false);
    GenerationContext ctx = encode_query(tape, zero, x);
    Var p = ops::softmax(bow_logits(tape, zero, ctx.encoding.summary, tape.constant(latent_repr(zero, 0))));
    for (double v : p.value().values()) CHECK(v == doctest::Approx(1.0 / static_cast<double>(zero.vocab.size())).epsilon(1e-12));
  }
  Tape tape(false);
  GenerationContext ctx = encode_query(tape, m, x);
  Var p = ops::softmax(bow_logits(tape, m, ctx.encoding.summary, tape.constant(latent_repr(m, 0))));
  double s = 0;
  for (double v : p.value().values()) s += v;
  CHECK(std::abs(s - 1.0) < 1e-9);
  CHECK_THROWS_AS(bow_logits(tape, m, ctx.encoding.summary, tape.constant(Tensor({2}))), std::invalid_argument);

  auto build = [&](Tape& t) {
    GenerationContext c = encode_query(t, m, x);
    Var lp = ops::log_softmax(bow_logits(t, m, c.encoding.summary, latent_repr(t, m, 3)));
    const std::size_t idx[] = {5, 6, 5};
    return ops::sum(ops::gather(lp, idx));
  };
  std::vector<Tensor*> params;
  m.params.generation.bow.for_each("bow", [&](const std::string&, Tensor& t) { params.push_back(&t); });
  params.push_back(&m.params.word_embeddings);
  CHECK(param_grad_error(build, params) < 1e-4);
}

TEST_CASE("prior and posterior head gradients") {
  for (LatentMode mode : kWordModes) {
    Model m = toy_model({.mode = mode, .radius = 0.8});
    Rng rng(9);
    const auto x = random_sentence(rng, m, 4), y = random_sentence(rng, m, 4);
    const Tensor w = [&] {
      Tensor t({m.latent_size()});
      for (double& v : t.data()) v = rng.uniform(0.5, 1.5);
      return t;
    }();
    auto build = [&](Tape& tape) {
      LatentDistVars p = prior_dist(tape, m, x), q = posterior_dist(tape, m, x, y);
      return ops::sum(ops::mul(ops::sub(q.flat_logp, p.flat_logp), tape.constant(w)));
    };
    std::vector<Tensor*> params;
    for (auto& [name, t] : m.named_parameters())
      if (name.rfind("prior.", 0) == 0 || name.rfind("posterior.", 0) == 0 || name == "cluster_embeddings") params.push_back(t);
    INFO(to_string(mode));
    CHECK(param_grad_error(build, params) < 1e-4);
  }
}

TEST_CASE("prior and posterior parameter sets are disjoint") {
  Model m = toy_model();
  std::set<const Tensor*> prior, posterior;
  for (const auto& [name, t] : m.prior_registry()) prior.insert(t);
  for (const auto& [name, t] : m.posterior_registry()) {
    CHECK(prior.count(t) == 0);
    posterior.insert(t);
  }
  CHECK_FALSE(prior.empty());
  CHECK_FALSE(posterior.empty());
  for (const auto& [name, t] : m.generation_registry()) CHECK((prior.count(t) == 0 && posterior.count(t) == 0));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  for (LatentMode mode : {LatentMode::two_stage, LatentMode::one_stage, LatentMode::cd_variant, LatentMode::no_latent}) {
    Model m = toy_model({.mode = mode, .radius = 0.3});
    const auto path = std::filesystem::temp_directory_path() / "dcvae_ckpt_test.bin";
    save_checkpoint(m, path);
    Model back = load_checkpoint(path);
    std::filesystem::remove(path);
    CHECK(back.mode() == mode);
    CHECK(back.clusters == m.clusters);
    CHECK(back.latent.ids == m.latent.ids);
    CHECK(back.vocab.size() == m.vocab.size());
    auto a = m.named_parameters(), b = back.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(*a[i].second == *b[i].second);
    }
    CHECK(serialize_model(back) == serialize_model(m));
  }
  std::string bytes = serialize_model(toy_model());
  CHECK_THROWS(deserialize_model(bytes.substr(0, bytes.size() / 2)));
  CHECK_THROWS(deserialize_model("not a checkpoint"));
}

TEST_CASE("latent mode names") {
  for (LatentMode mode : {LatentMode::two_stage, LatentMode::one_stage, LatentMode::cd_variant, LatentMode::no_latent})
    CHECK(parse_latent_mode(to_string(mode)) == mode);
  CHECK(parse_latent_mode("cd") == LatentMode::cd_variant);
  CHECK_THROWS_AS(parse_latent_mode("three_stage"), std::invalid_argument);
}

}  // TEST_SUITE
