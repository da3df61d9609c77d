#include "dcvae/decoding.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "dcvae/sampling.hpp"

namespace dcvae {

namespace {

BeamResult decode_with(Tape& tape, const Model& model, const GenerationContext& ctx, Var h_z, const BeamOptions& options) {
  auto step = [&](const Var& state, int prev) {
    DecodeStep s = decode_step(tape, model, prev, state, ctx.encoding.memory, h_z);
    return std::make_pair(s.log_probs.value().values(), s.state);
  };
  return beam_search(ctx.init_state, Vocab::kBos, step, options);
}

Var constant_latent(Tape& tape, const Model& model, const Tensor& h_z) {
  if (h_z.rank() != 1 || h_z.size() != model.dims.word_dim) {
    throw std::invalid_argument("beam_search: latent representation " + shape_string(h_z.shape()) + " vs word dim " +
                                std::to_string(model.dims.word_dim));
  }
  return tape.constant(h_z);
}

}  // namespace

BeamResult beam_search(const Model& model, std::span<const int> query, const Tensor& h_z, const BeamOptions& options) {
  if (query.empty()) throw std::invalid_argument("beam_search: empty query");
  Tape tape(false);
  GenerationContext ctx = encode_query(tape, model, query);
  return decode_with(tape, model, ctx, constant_latent(tape, model, h_z), options);
}

BeamResult greedy_decode(const Model& model, std::span<const int> query, const Tensor& h_z, std::size_t max_len) {
  if (query.empty()) throw std::invalid_argument("greedy_decode: empty query");
  if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  Tape tape(false);
  GenerationContext ctx = encode_query(tape, model, query);
  Var hz = constant_latent(tape, model, h_z);
  BeamResult r;
  Var state = ctx.init_state;
  int prev = Vocab::kBos;
  for (std::size_t t = 0; t < max_len; ++t) {
    DecodeStep s = decode_step(tape, model, prev, state, ctx.encoding.memory, hz);
    const auto& lp = s.log_probs.value().values();
    int best = -1;
    for (std::size_t w = 0; w < lp.size(); ++w) {
      const int tok = static_cast<int>(w);
      if (tok == Vocab::kPad || tok == Vocab::kBos) continue;
      if (best < 0 || lp[w] > lp[static_cast<std::size_t>(best)]) best = tok;
    }
    r.score += lp[static_cast<std::size_t>(best)];
    if (best == Vocab::kEos) {
      r.finished = true;
      break;
    }
    r.tokens.push_back(best);
    state = s.state;
    prev = best;
  }
  return r;
}

std::vector<GenerationResult> generate_diverse(const Model& model, std::span<const int> query, std::size_t num_samples, Rng& rng,
                                               const BeamOptions& options) {
  if (query.empty()) throw std::invalid_argument("generate_diverse: empty query");
  if (num_samples < 1) throw std::invalid_argument("generate_diverse: num_samples must be >= 1");
  Tape tape(false);
  GenerationContext ctx = encode_query(tape, model, query);
  std::vector<GenerationResult> out;
  if (!model.has_latent()) {
    const BeamResult b = decode_with(tape, model, ctx, tape.constant(Tensor({model.dims.word_dim}, 0.0)), options);
    for (std::size_t i = 0; i < num_samples; ++i) out.push_back({std::nullopt, std::nullopt, b.tokens, b.score});
    return out;
  }
  const TwoStageDist prior = to_distribution(model, prior_dist(tape, model, query));
  // Beam search is deterministic, so repeated draws of the same z share one decode.
  std::map<std::size_t, BeamResult> cache;
  for (std::size_t i = 0; i < num_samples; ++i) {
    const LatentSample s = two_stage_sample(prior, rng);
    auto it = cache.find(s.latent);
    if (it == cache.end()) {
      it = cache.emplace(s.latent, decode_with(tape, model, ctx, latent_repr(tape, model, s.latent, s.cluster), options)).first;
    }
    GenerationResult g;
    g.latent = s.latent;
    if (model.two_stage()) g.cluster = s.cluster;
    g.response = it->second.tokens;
    g.score = it->second.score;
    out.push_back(std::move(g));
  }
  return out;
}

namespace {

std::string join(const TokenList& t) {
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) s += (i ? " " : "") + t[i];
  return s;
}

TokenList split_spaces(const std::string& s) {
  TokenList out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace

std::string format_generation_line(const Model& model, const TokenList& query, const GenerationResult& result) {
  char score[64];
  std::snprintf(score, sizeof score, "%.6f", result.score);
  const std::string z = result.latent ? model.latent_label(*result.latent) : "-";
  const long long c = result.cluster ? static_cast<long long>(*result.cluster) : -1;
  return join(query) + "\t" + z + "\t" + std::to_string(c) + "\t" + join(model.vocab.decode(result.response)) + "\t" + score;
}

std::vector<GeneratedLine> parse_generated(const std::string& text, const std::string& origin) {
  std::vector<GeneratedLine> out;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (true) {
      const std::size_t tab = line.find('\t', pos);
      f.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (f.size() != 5) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected 5 tab-separated fields, got " + std::to_string(f.size()));
    }
    GeneratedLine g;
    g.query = split_spaces(f[0]);
    g.latent = f[1];
    g.response = split_spaces(f[3]);
    try {
      g.cluster = std::stoll(f[2]);
      g.score = std::stod(f[4]);
    } catch (const std::exception&) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": malformed cluster or score field");
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<GeneratedLine> load_generated(const std::filesystem::path& path) { return parse_generated(read_file(path), path.string()); }

}  // namespace dcvae
