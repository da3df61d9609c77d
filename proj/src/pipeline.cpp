#include "dcvae/pipeline.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "dcvae/objective.hpp"

namespace dcvae {

std::uint64_t stage_seed(std::uint64_t seed, Stage stage) {
  // splitmix64 of (seed, stage)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(stage) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "# coverage %.17g\n", vocab.coverage());
  std::string out = buf;
  for (std::size_t id = Vocab::kNumSpecial; id < vocab.size(); ++id) {
    out += vocab.token(static_cast<int>(id)) + "\t" + std::to_string(vocab.count(static_cast<int>(id))) + "\n";
  }
  write_file_atomic(path, out);
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  Vocab vocab;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) { throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + why); };
    if (line[0] == '#') {
      std::istringstream h(line.substr(1));
      std::string key;
      double cov = 0.0;
      if (h >> key >> cov && key == "coverage") vocab.set_coverage(cov);
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) fail("expected token<TAB>count");
    const std::string token = line.substr(0, tab);
    std::size_t count = 0;
    try {
      count = std::stoull(line.substr(tab + 1));
    } catch (const std::exception&) {
      fail("bad count");
    }
    if (vocab.contains(token)) fail("duplicate token '" + token + "'");
    vocab.add(token, count);
  }
  if (vocab.size() <= static_cast<std::size_t>(Vocab::kNumSpecial)) throw std::runtime_error(path.string() + ": empty vocabulary");
  return vocab;
}

ClusterModel fit_clusters(const Vocab& vocab, const LatentSpace& latent, const WordEmbeddings& embeddings, long long k,
                          std::uint64_t seed) {
  (void)vocab;
  const WordEmbeddings full = complete_embeddings(embeddings, latent.ids, seed);
  KMeansOptions opts;
  opts.seed = seed;
  return kmeans(full, latent.ids, k, opts);
}

double posterior_top1(const Model& model, std::span<const Example> examples, std::span<const int> gold) {
  if (examples.size() != gold.size()) throw std::invalid_argument("posterior_top1: examples and gold labels differ in length");
  if (examples.empty()) throw std::invalid_argument("posterior_top1: no examples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const std::vector<double> q = posterior_dist(model, examples[i].query, examples[i].response).flat();
    std::size_t best = 0;
    for (std::size_t z = 1; z < q.size(); ++z)
      if (q[z] > q[best]) best = z;
    if (model.latent.ids[best] == gold[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

std::string generate_lines(const Model& model, std::span<const TextPair> references, std::size_t samples, const BeamOptions& beam,
                           std::uint64_t seed) {
  Rng rng(seed);
  std::string out;
  for (const QueryGroup& g : group_by_query(references)) {
    const std::vector<int> ids = model.vocab.encode(g.query);
    for (const GenerationResult& r : generate_diverse(model, ids, samples, rng, beam)) out += format_generation_line(model, g.query, r) + "\n";
  }
  return out;
}

namespace {

void note(std::ostream* progress, const std::string& s) {
  if (progress) *progress << s << "\n" << std::flush;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, std::ostream* progress) {
  std::filesystem::create_directories(cfg.out_dir);
  const std::vector<TextPair> train_pairs = load_corpus(cfg.train_corpus);
  const std::vector<TextPair> test_pairs = load_corpus(cfg.test_corpus);
  const Vocab vocab = build_vocab(train_pairs, cfg.vocab_size ? cfg.vocab_size : static_cast<std::size_t>(-1));
  save_vocab(vocab, cfg.out_dir / "vocab.tsv");
  const LatentSpace latent = restrict_latent_space(vocab, cfg.latent.top_k);

  WordEmbeddings pretrained{cfg.dims.word_dim, {}};
  if (cfg.embeddings) pretrained = load_embeddings(*cfg.embeddings, vocab);

  ClusterModel clusters;
  if (cfg.latent.mode == LatentMode::two_stage) {
    clusters = fit_clusters(vocab, latent, pretrained, cfg.clusters, stage_seed(cfg.seed, Stage::cluster));
    save_clusters(clusters, vocab, cfg.out_dir / "clusters.txt");
    note(progress, "clusters\t" + std::to_string(clusters.k) + "\tsse\t" + std::to_string(clusters.sse_history.back()));
  }

  Model model(vocab, latent, cfg.latent, cfg.dims, clusters);
  model.init(stage_seed(cfg.seed, Stage::init), cfg.embeddings ? &pretrained : nullptr);

  std::vector<Example> examples = encode_corpus(vocab, train_pairs);
  PipelineResult result;
  const bool word_latents = cfg.latent.mode == LatentMode::two_stage || cfg.latent.mode == LatentMode::one_stage;
  if (word_latents) {
    const auto keywords = tfidf_keywords(examples, latent, cfg.keywords);
    save_keywords(vocab, keywords, cfg.out_dir / "keywords.txt");
    for (std::size_t i = 0; i < examples.size(); ++i) examples[i].keyword = keywords[i];
    if (cfg.run_pretrain) {
      PretrainConfig pc = cfg.pretrain;
      pc.seed = stage_seed(cfg.seed, Stage::pretrain);
      result.pretrain = pretrain(model, examples, pc, progress);
      save_checkpoint(model, cfg.out_dir / "pretrained.ckpt");
    }
  }

  TrainConfig tc = cfg.train;
  tc.seed = stage_seed(cfg.seed, Stage::train);
  TrainOutputs outs{cfg.out_dir / "model.ckpt", cfg.out_dir / "train_log.tsv", progress};
  result.epochs = train(model, examples, tc, outs);

  if (cfg.gold_topics && model.has_latent() && model.mode() != LatentMode::cd_variant) {
    std::istringstream in(read_file(*cfg.gold_topics));
    std::vector<int> gold;
    for (std::string w; std::getline(in, w);)
      if (!w.empty()) gold.push_back(vocab.contains(w) ? vocab.id(w) : -1);
    result.posterior_top1 = posterior_top1(model, encode_corpus(vocab, test_pairs), gold);
    note(progress, "posterior_top1\t" + std::to_string(*result.posterior_top1));
  }

  const std::string generated = generate_lines(model, test_pairs, cfg.samples, cfg.beam, stage_seed(cfg.seed, Stage::generate));
  write_file_atomic(cfg.out_dir / "generated.tsv", generated);
  result.report = evaluate(parse_generated(generated, (cfg.out_dir / "generated.tsv").string()), test_pairs, cfg.samples);
  std::string report = format_report(result.report);
  if (result.posterior_top1) report += "posterior_top1\t" + std::to_string(*result.posterior_top1) + "\n";
  write_file_atomic(cfg.out_dir / "report.tsv", report);
  note(progress, summarize_report(result.report));
  return result;
}

}  // namespace dcvae
