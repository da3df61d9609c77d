#include "dcvae/networks.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace dcvae {

std::string_view to_string(LatentMode mode) {
  switch (mode) {
    case LatentMode::two_stage: return "two_stage";
    case LatentMode::one_stage: return "one_stage";
    case LatentMode::cd_variant: return "cd";
    case LatentMode::no_latent: return "no_latent";
  }
  return "?";
}

LatentMode parse_latent_mode(std::string_view text) {
  if (text == "two_stage") return LatentMode::two_stage;
  if (text == "one_stage") return LatentMode::one_stage;
  if (text == "cd" || text == "cd_variant") return LatentMode::cd_variant;
  if (text == "no_latent") return LatentMode::no_latent;
  throw std::invalid_argument("unknown latent mode '" + std::string(text) + "'");
}

void ModelDims::validate() const {
  if (word_dim == 0 || hidden == 0 || cluster_dim == 0 || scorer_hidden == 0 || bow_hidden == 0) {
    throw std::invalid_argument("model dims must be positive");
  }
}

Model::Model(Vocab vocab_in, LatentSpace latent_in, LatentConfig config_in, ModelDims dims_in, ClusterModel clusters_in)
    : vocab(std::move(vocab_in)),
      latent(std::move(latent_in)),
      config(config_in),
      dims(dims_in),
      clusters(std::move(clusters_in)) {
  dims.validate();
  if (vocab.size() <= static_cast<std::size_t>(Vocab::kNumSpecial)) throw std::invalid_argument("model: vocabulary has no words");
  if (config.mode == LatentMode::cd_variant) {
    const std::size_t m = config.cd_size ? config.cd_size : latent.size();
    if (m == 0) throw std::invalid_argument("model: cd_variant needs a positive latent count");
    config.cd_size = m;
    latent.ids.resize(m);
    for (std::size_t i = 0; i < m; ++i) latent.ids[i] = static_cast<int>(i);
  } else if (config.mode != LatentMode::no_latent) {
    for (int id : latent.ids) {
      if (Vocab::is_special(id) || id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
        throw std::invalid_argument("model: latent space contains special or unknown id " + std::to_string(id));
      }
    }
  }
  if (config.mode != LatentMode::two_stage) clusters = ClusterModel{};

  const std::size_t V = vocab.size(), dw = dims.word_dim, h = dims.hidden, S = 2 * dims.hidden;
  const std::size_t Z = latent.size(), sh = dims.scorer_hidden;
  params.word_embeddings = Tensor({V, dw});
  auto& gen = params.generation;
  gen.encoder = BiGRUEncoder(dw, h);
  gen.init_w = Tensor({h, S});
  gen.init_b = Tensor({h});
  gen.decoder = GRUParams(dw, h);
  gen.attention = AttentionParams(h, S);
  gen.out_w = Tensor({V, h + dw});
  gen.out_b = Tensor({V});

  if (has_latent()) {
    if (Z == 0) throw std::invalid_argument("model: empty latent space");
    gen.bow = ScorerParams(S + dw, dims.bow_hidden, V);
    params.prior.encoder = BiGRUEncoder(dw, h);
    params.prior.word_scorer = ScorerParams(S, sh, Z);
    params.posterior.query_encoder = BiGRUEncoder(dw, h);
    params.posterior.response_encoder = BiGRUEncoder(dw, h);
    params.posterior.word_scorer = ScorerParams(S, sh, Z);
  }
  if (config.mode == LatentMode::cd_variant) params.latent_embeddings = Tensor({Z, dw});
  if (two_stage() && clusters.fitted()) {
    const std::size_t K = clusters.k;
    params.cluster_embeddings = Tensor({K, dims.cluster_dim});
    params.prior.cluster_scorer = ScorerParams(S, sh, K);
    params.prior.cluster_proj = Tensor({S, dims.cluster_dim});
    params.posterior.cluster_scorer = ScorerParams(S, sh, K);
    params.posterior.cluster_proj = Tensor({S, dims.cluster_dim});
    gen.cluster_proj = Tensor({dw, dims.cluster_dim});
  }
  build_layout();
}

void Model::build_layout() {
  auto part = std::make_shared<Partition>();
  const std::size_t Z = latent.size();
  group_of_.assign(Z, 0);
  pos_in_group_.assign(Z, 0);
  latent_rows_.assign(Z, 0);
  for (std::size_t i = 0; i < Z; ++i) {
    latent_rows_[i] = config.mode == LatentMode::cd_variant ? i : static_cast<std::size_t>(latent.ids[i]);
  }
  if (two_stage()) {
    if (clusters.fitted()) {
      if (clusters.assignment.size() != Z) {
        throw std::invalid_argument("model: cluster model covers " + std::to_string(clusters.assignment.size()) +
                                    " ids but the latent space has " + std::to_string(Z));
      }
      part->assign(clusters.k, {});
      for (std::size_t i = 0; i < Z; ++i) {
        auto it = clusters.assignment.find(latent.ids[i]);
        if (it == clusters.assignment.end()) {
          throw std::invalid_argument("model: latent id " + std::to_string(latent.ids[i]) + " missing from cluster model");
        }
        const auto c = static_cast<std::size_t>(it->second);
        group_of_[i] = c;
        pos_in_group_[i] = (*part)[c].size();
        (*part)[c].push_back(i);
      }
    }
  } else if (Z > 0) {
    part->assign(1, {});
    for (std::size_t i = 0; i < Z; ++i) pos_in_group_[i] = i, (*part)[0].push_back(i);
  }
  groups_ = std::move(part);
}

void Model::init(std::uint64_t seed, const WordEmbeddings* pretrained) {
  Rng rng(seed);
  params.for_each([&](const std::string&, Tensor& t) { init_uniform(t, rng); });
  if (pretrained) {
    if (pretrained->dim != dims.word_dim) {
      throw std::invalid_argument("model: pretrained embedding dim " + std::to_string(pretrained->dim) +
                                  " differs from word dim " + std::to_string(dims.word_dim));
    }
    for (const auto& [id, v] : pretrained->vectors) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) continue;
      std::copy(v.begin(), v.end(), params.word_embeddings.data().begin() + static_cast<std::ptrdiff_t>(id) * static_cast<std::ptrdiff_t>(dims.word_dim));
    }
  }
  for (Tensor* proj : {&params.prior.cluster_proj, &params.posterior.cluster_proj, &params.generation.cluster_proj}) {
    if (proj->empty() || proj->shape()[0] != proj->shape()[1]) continue;
    std::fill(proj->data().begin(), proj->data().end(), 0.0);
    for (std::size_t i = 0; i < proj->shape()[0]; ++i) proj->at(i, i) = 1.0;
  }
}

std::optional<std::size_t> Model::latent_index(int vocab_id) const {
  if (config.mode == LatentMode::cd_variant || config.mode == LatentMode::no_latent) return std::nullopt;
  return latent.index_of(vocab_id);
}

std::string Model::latent_label(std::size_t i) const {
  if (config.mode == LatentMode::cd_variant) return "#" + std::to_string(i);
  if (config.mode == LatentMode::no_latent) return "-";
  return vocab.token(latent.ids.at(i));
}

namespace {

template <class Net>
std::vector<std::pair<std::string, const Tensor*>> registry_of(const Net& net) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  const_cast<Net&>(net).for_each([&](const std::string& name, Tensor& t) {
    if (!t.empty()) out.emplace_back(name, &t);
  });
  return out;
}

}  // namespace

std::vector<std::pair<std::string, const Tensor*>> Model::prior_registry() const { return registry_of(params.prior); }
std::vector<std::pair<std::string, const Tensor*>> Model::posterior_registry() const { return registry_of(params.posterior); }
std::vector<std::pair<std::string, const Tensor*>> Model::generation_registry() const { return registry_of(params.generation); }

std::vector<std::pair<std::string, Tensor*>> Model::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  params.for_each([&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void require_latent(const Model& model, const char* what) {
  if (!model.has_latent()) throw std::invalid_argument(std::string(what) + ": model has no latent variable (no_latent mode)");
  if (model.two_stage() && !model.clusters.fitted()) {
    throw std::invalid_argument(std::string(what) + ": two_stage mode requires a fitted cluster model");
  }
}

LatentDistVars latent_head(Tape& tape, const Model& model, Var summary, const ScorerParams& cluster_scorer,
                           const ScorerParams& word_scorer, const Tensor& cluster_proj) {
  LatentDistVars out;
  const Partition& part = *model.partition();
  if (!model.two_stage()) {
    out.cluster_logp = tape.constant(Tensor({1}, 0.0));
    out.word_logp.push_back(ops::log_softmax(score(tape, word_scorer, summary)));
    out.flat_logp = out.word_logp[0];
    return out;
  }
  const std::size_t Z = model.latent_size();
  out.cluster_logp = ops::log_softmax(score(tape, cluster_scorer, summary));
  // Word stage: summary + projected cluster embedding, scored per cluster and
  // normalised over that cluster's members only.
  Var inputs = ops::add_row(ops::matmul_nt(tape.parameter(model.params.cluster_embeddings), tape.parameter(cluster_proj)), summary);
  Var logits = score_rows(tape, word_scorer, inputs);  // [K, Z]
  std::vector<std::size_t> concat_pos(Z);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < part.size(); ++k) {
    std::vector<std::size_t> idx;
    idx.reserve(part[k].size());
    for (std::size_t z : part[k]) idx.push_back(k * Z + z), concat_pos[z] = offset++;
    out.word_logp.push_back(ops::log_softmax(ops::gather(logits, idx)));
  }
  Var words = ops::concat(out.word_logp);
  std::vector<std::size_t> group(Z);
  for (std::size_t z = 0; z < Z; ++z) group[z] = model.group_of(z);
  out.flat_logp = ops::add(ops::gather(out.cluster_logp, group), ops::gather(words, concat_pos));
  return out;
}

}  // namespace

LatentDistVars prior_dist(Tape& tape, const Model& model, std::span<const int> query) {
  require_latent(model, "prior_dist");
  if (query.empty()) throw std::invalid_argument("prior_dist: empty query");
  const auto& net = model.params.prior;
  Encoding enc = encode_bidirectional(tape, net.encoder, model.params.word_embeddings, query);
  return latent_head(tape, model, enc.summary, net.cluster_scorer, net.word_scorer, net.cluster_proj);
}

LatentDistVars posterior_dist(Tape& tape, const Model& model, std::span<const int> query, std::span<const int> response) {
  require_latent(model, "posterior_dist");
  if (query.empty() || response.empty()) throw std::invalid_argument("posterior_dist: empty query or response");
  const auto& net = model.params.posterior;
  Encoding ex = encode_bidirectional(tape, net.query_encoder, model.params.word_embeddings, query);
  Encoding ey = encode_bidirectional(tape, net.response_encoder, model.params.word_embeddings, response);
  return latent_head(tape, model, ops::add(ex.summary, ey.summary), net.cluster_scorer, net.word_scorer, net.cluster_proj);
}

TwoStageDist to_distribution(const Model& model, const LatentDistVars& d) {
  TwoStageDist out;
  out.partition = model.partition();
  for (double v : d.cluster_logp.value().values()) out.cluster.push_back(std::exp(v));
  for (const Var& w : d.word_logp) {
    std::vector<double> p;
    p.reserve(w.size());
    for (double v : w.value().values()) p.push_back(std::exp(v));
    out.words.push_back(std::move(p));
  }
  return out;
}

TwoStageDist prior_dist(const Model& model, std::span<const int> query) {
  Tape tape;
  return to_distribution(model, prior_dist(tape, model, query));
}

TwoStageDist posterior_dist(const Model& model, std::span<const int> query, std::span<const int> response) {
  Tape tape;
  return to_distribution(model, posterior_dist(tape, model, query, response));
}

Var latent_repr(Tape& tape, const Model& model, std::size_t z, std::optional<std::size_t> c) {
  if (!model.has_latent()) return tape.constant(Tensor({model.dims.word_dim}, 0.0));
  if (z >= model.latent_size()) throw std::invalid_argument("latent_repr: latent index " + std::to_string(z) + " out of range");
  if (model.mode() == LatentMode::cd_variant) return ops::lookup(tape.parameter(model.params.latent_embeddings), z);
  Var word = ops::lookup(tape.parameter(model.params.word_embeddings), model.latent_rows()[z]);
  if (!model.two_stage()) return word;
  require_latent(model, "latent_repr");
  const std::size_t cluster = c.value_or(model.group_of(z));
  if (cluster != model.group_of(z)) {
    throw std::invalid_argument("latent_repr: latent " + model.latent_label(z) + " is not in cluster " + std::to_string(cluster));
  }
  Var ce = ops::lookup(tape.parameter(model.params.cluster_embeddings), cluster);
  return ops::add(word, ops::matmul(tape.parameter(model.params.generation.cluster_proj), ce));
}

Tensor latent_repr(const Model& model, std::size_t z, std::optional<std::size_t> c) {
  Tape tape;
  return latent_repr(tape, model, z, c).value();
}

Var latent_table(Tape& tape, const Model& model) {
  require_latent(model, "latent_table");
  if (model.mode() == LatentMode::cd_variant) return tape.parameter(model.params.latent_embeddings);
  Var words = ops::rows(tape.parameter(model.params.word_embeddings), model.latent_rows());
  if (!model.two_stage()) return words;
  Var clusters = ops::matmul_nt(tape.parameter(model.params.cluster_embeddings), tape.parameter(model.params.generation.cluster_proj));
  std::vector<std::size_t> group(model.latent_size());
  for (std::size_t z = 0; z < group.size(); ++z) group[z] = model.group_of(z);
  return ops::add(words, ops::rows(clusters, group));
}

GenerationContext encode_query(Tape& tape, const Model& model, std::span<const int> query) {
  if (query.empty()) throw std::invalid_argument("encode_query: empty query");
  const auto& gen = model.params.generation;
  GenerationContext ctx;
  ctx.encoding = encode_bidirectional(tape, gen.encoder, model.params.word_embeddings, query);
  ctx.init_state = ops::tanh(ops::affine(tape.parameter(gen.init_w), ctx.encoding.summary, tape.parameter(gen.init_b)));
  return ctx;
}

DecodeStep decode_step(Tape& tape, const Model& model, int prev_token, Var dec_state, Var memory, Var h_z) {
  if (prev_token < 0 || static_cast<std::size_t>(prev_token) >= model.vocab.size()) {
    throw std::invalid_argument("decode_step: token id " + std::to_string(prev_token) + " out of range");
  }
  if (h_z.value().rank() != 1 || h_z.size() != model.dims.word_dim) {
    throw std::invalid_argument("decode_step: latent representation " + shape_string(h_z.shape()) + " vs word dim " +
                                std::to_string(model.dims.word_dim));
  }
  const auto& gen = model.params.generation;
  Var input = ops::lookup(tape.parameter(model.params.word_embeddings), static_cast<std::size_t>(prev_token));
  Var state = gru_step(tape, gen.decoder, input, dec_state);
  Attended att = attend(tape, gen.attention, state, memory);
  Var attentional = attentional_state(tape, gen.attention, state, att.context);
  const Var parts[] = {attentional, h_z};
  Var logits = ops::affine(tape.parameter(gen.out_w), ops::concat(parts), tape.parameter(gen.out_b));
  return {ops::log_softmax(logits), state};
}

Var bow_logits(Tape& tape, const Model& model, Var x_summary, Var h_z) {
  if (!model.has_latent()) throw std::invalid_argument("bow_logits: no bag-of-words head in no_latent mode");
  const Var parts[] = {x_summary, h_z};
  return score(tape, model.params.generation.bow, ops::concat(parts));
}

Var sequence_nll(Tape& tape, const Model& model, const GenerationContext& ctx, std::span<const int> response, Var h_z) {
  if (response.empty()) throw std::invalid_argument("sequence_nll: empty response");
  Var state = ctx.init_state;
  int prev = Vocab::kBos;
  std::vector<Var> picked;
  picked.reserve(response.size() + 1);
  for (std::size_t t = 0; t <= response.size(); ++t) {
    const int target = t < response.size() ? response[t] : Vocab::kEos;
    DecodeStep step = decode_step(tape, model, prev, state, ctx.encoding.memory, h_z);
    const std::size_t idx[] = {static_cast<std::size_t>(target)};
    picked.push_back(ops::gather(step.log_probs, idx));
    state = step.state;
    prev = target;
  }
  return ops::scale(ops::sum(ops::concat(picked)), -1.0);
}

// ---------------------------------------------------------------------------
// Checkpoint. Native little-endian layout; the magic guards against misuse.

namespace {

constexpr char kMagic[8] = {'D', 'C', 'V', 'A', 'E', 'C', 'K', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <class T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_ += s;
  }
  void doubles(std::span<const double> v) {
    pod<std::uint64_t>(v.size());
    out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const auto n = pod<std::uint64_t>();
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  void expect(const char* p, std::size_t n) {
    need(n);
    if (bytes_.compare(pos_, n, p, n) != 0) fail("bad magic, not a checkpoint");
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& why) const { throw std::runtime_error(origin_ + ": " + why); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail("truncated checkpoint");
  }
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const Model& model) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kVersion);
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(model.config.mode));
  w.pod<std::int64_t>(model.config.top_k ? *model.config.top_k : -1);
  w.pod<std::uint64_t>(model.config.cd_size);
  for (std::size_t d : {model.dims.word_dim, model.dims.hidden, model.dims.cluster_dim, model.dims.scorer_hidden, model.dims.bow_hidden}) {
    w.pod<std::uint64_t>(d);
  }
  w.pod<std::uint64_t>(model.vocab.size());
  for (std::size_t i = 0; i < model.vocab.size(); ++i) {
    w.str(model.vocab.token(static_cast<int>(i)));
    w.pod<std::uint64_t>(model.vocab.count(static_cast<int>(i)));
  }
  w.pod<double>(model.vocab.coverage());
  w.pod<std::uint64_t>(model.latent.ids.size());
  for (int id : model.latent.ids) w.pod<std::int32_t>(id);
  const ClusterModel& cm = model.clusters;
  w.pod<std::uint64_t>(cm.k);
  w.pod<std::uint64_t>(cm.assignment.size());
  for (const auto& [id, c] : cm.assignment) w.pod<std::int32_t>(id), w.pod<std::int32_t>(c);
  w.pod<std::uint64_t>(cm.centroids.size());
  for (const auto& c : cm.centroids) w.doubles(c);
  w.doubles(cm.sse_history);

  auto named = const_cast<Model&>(model).named_parameters();
  w.pod<std::uint64_t>(named.size());
  for (const auto& [name, t] : named) {
    w.str(name);
    w.pod<std::uint64_t>(t->rank());
    for (std::size_t d : t->shape()) w.pod<std::uint64_t>(d);
    w.doubles(t->data());
  }
  return w.take();
}

Model deserialize_model(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.expect(kMagic, sizeof kMagic);
  if (const auto v = r.pod<std::uint32_t>(); v != kVersion) r.fail("unsupported checkpoint version " + std::to_string(v));
  LatentConfig config;
  const auto mode = r.pod<std::uint8_t>();
  if (mode > static_cast<std::uint8_t>(LatentMode::no_latent)) r.fail("bad latent mode");
  config.mode = static_cast<LatentMode>(mode);
  if (const auto k = r.pod<std::int64_t>(); k >= 0) config.top_k = k;
  config.cd_size = r.pod<std::uint64_t>();
  ModelDims dims;
  for (std::size_t* d : {&dims.word_dim, &dims.hidden, &dims.cluster_dim, &dims.scorer_hidden, &dims.bow_hidden}) {
    *d = r.pod<std::uint64_t>();
  }
  Vocab vocab;
  const auto vsize = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < vsize; ++i) {
    std::string tok = r.str();
    const auto count = r.pod<std::uint64_t>();
    if (i < static_cast<std::uint64_t>(Vocab::kNumSpecial)) {
      if (tok != Vocab::kSpecialTokens[i]) r.fail("special token mismatch");
      continue;
    }
    if (vocab.add(tok, count) != static_cast<int>(i)) r.fail("duplicate vocabulary token '" + tok + "'");
  }
  vocab.set_coverage(r.pod<double>());
  LatentSpace latent;
  const auto zsize = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < zsize; ++i) latent.ids.push_back(r.pod<std::int32_t>());
  ClusterModel cm;
  cm.k = r.pod<std::uint64_t>();
  const auto na = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < na; ++i) {
    const int id = r.pod<std::int32_t>();
    cm.assignment[id] = r.pod<std::int32_t>();
  }
  const auto nc = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nc; ++i) cm.centroids.push_back(r.doubles());
  cm.sse_history = r.doubles();
  if (cm.k > 0) cm.rebuild_members();

  Model model(std::move(vocab), std::move(latent), config, dims, std::move(cm));
  auto named = model.named_parameters();
  const auto np = r.pod<std::uint64_t>();
  if (np != named.size()) r.fail("parameter count " + std::to_string(np) + " does not match configuration (" + std::to_string(named.size()) + ")");
  for (std::uint64_t i = 0; i < np; ++i) {
    const std::string name = r.str();
    auto it = std::find_if(named.begin(), named.end(), [&](const auto& p) { return p.first == name; });
    if (it == named.end()) r.fail("unexpected parameter '" + name + "'");
    Shape shape(r.pod<std::uint64_t>());
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    std::vector<double> data = r.doubles();
    if (shape != it->second->shape() || data.size() != it->second->size()) r.fail("shape mismatch for parameter '" + name + "'");
    *it->second = Tensor(std::move(shape), std::move(data));
  }
  if (!r.done()) r.fail("trailing bytes");
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) { write_file_atomic(path, serialize_model(model)); }

Model load_checkpoint(const std::filesystem::path& path) { return deserialize_model(read_file(path), path.string()); }

}  // namespace dcvae
