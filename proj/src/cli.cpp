#include "dcvae/cli.hpp"

#include <CLI11.hpp>

#include <optional>
#include <sstream>
#include <stdexcept>

#include "dcvae/pipeline.hpp"
#include "dcvae/synthetic.hpp"

namespace dcvae {

std::vector<std::pair<std::string, std::string>> parse_config(const std::string& text, const std::string& origin) {
  if (!valid_utf8(text)) throw std::runtime_error(origin + ": not valid UTF-8");
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    out.emplace_back(key, value);
  }
  return out;
}

namespace {

struct Options {
  std::uint64_t seed = 0;
  std::string gold;
  std::string corpus, test_corpus, embeddings, clusters, checkpoint, out, vocab, keywords, generated, log;
  std::string mode = "two_stage";
  long long latent_top_k = 0;  // 0 => whole vocabulary
  long long K = 4;
  std::size_t vocab_size = 0;
  std::size_t cd_size = 0;
  ModelDims dims;
  std::size_t beam = 10, max_len = 30, samples = 10;
  std::size_t epochs = 1, batch = 128, train_samples = 1;
  double lr = 1e-4;
  bool no_straight_through = false;
  std::size_t pretrain_steps = 200, pretrain_batch = 32;
  double pretrain_lr = 1e-3;
  bool no_pretrain = false;
  std::string keyword_source = "query";
  bool smooth_idf = false;
  SyntheticSpec synth;
};

std::optional<long long> top_k(const Options& o) { return o.latent_top_k > 0 ? std::optional<long long>(o.latent_top_k) : std::nullopt; }

LatentConfig latent_config(const Options& o) { return {parse_latent_mode(o.mode), top_k(o), o.cd_size}; }

KeywordSource keyword_source(const std::string& s) {
  if (s == "query") return KeywordSource::query;
  if (s == "response") return KeywordSource::response;
  throw std::invalid_argument("unknown keyword source '" + s + "' (expected query or response)");
}


Vocab vocab_for(const Options& o, const std::vector<TextPair>& pairs) {
  if (!o.vocab.empty()) return load_vocab(o.vocab);
  return build_vocab(pairs, o.vocab_size ? o.vocab_size : static_cast<std::size_t>(-1));
}

WordEmbeddings embeddings_for(const Options& o, const Vocab& vocab) {
  if (o.embeddings.empty()) return WordEmbeddings{o.dims.word_dim, {}};
  return load_embeddings(o.embeddings, vocab);
}

// Fresh model from corpus-side files (vocab, clusters, embeddings).
Model fresh_model(const Options& o, const std::vector<TextPair>& pairs) {
  const Vocab vocab = vocab_for(o, pairs);
  const LatentConfig lc = latent_config(o);
  const LatentSpace latent = restrict_latent_space(vocab, lc.top_k);
  const WordEmbeddings emb = embeddings_for(o, vocab);
  ClusterModel clusters;
  if (lc.mode == LatentMode::two_stage) {
    clusters = o.clusters.empty() ? fit_clusters(vocab, latent, emb, o.K, stage_seed(o.seed, Stage::cluster)) : load_clusters(o.clusters, vocab);
  }
  Model model(vocab, latent, lc, o.dims, clusters);
  model.init(stage_seed(o.seed, Stage::init), o.embeddings.empty() ? nullptr : &emb);
  return model;
}

std::vector<Example> examples_with_keywords(const Options& o, const Model& model, const std::vector<TextPair>& pairs) {
  std::vector<Example> ex = encode_corpus(model.vocab, pairs);
  if (model.mode() != LatentMode::two_stage && model.mode() != LatentMode::one_stage) return ex;
  std::vector<std::optional<int>> kw;
  if (!o.keywords.empty()) {
    kw = load_keywords(model.vocab, o.keywords);
    if (kw.size() != ex.size()) {
      throw std::runtime_error(o.keywords + ": " + std::to_string(kw.size()) + " keywords for " + std::to_string(ex.size()) + " pairs");
    }
  } else {
    kw = tfidf_keywords(ex, model.latent, {keyword_source(o.keyword_source), o.smooth_idf});
  }
  for (std::size_t i = 0; i < ex.size(); ++i) ex[i].keyword = kw[i];
  return ex;
}

TrainConfig train_config(const Options& o, LatentMode mode) {
  TrainConfig tc;
  tc.lr = o.lr, tc.batch = o.batch, tc.epochs = o.epochs, tc.samples = o.train_samples;
  tc.seed = stage_seed(o.seed, Stage::train);
  tc.mode = mode;
  tc.straight_through = !o.no_straight_through;
  return tc;
}

PretrainConfig pretrain_config(const Options& o) {
  PretrainConfig pc;
  pc.lr = o.pretrain_lr, pc.batch = o.pretrain_batch, pc.steps = o.pretrain_steps;
  pc.seed = stage_seed(o.seed, Stage::pretrain);
  return pc;
}

BeamOptions beam_options(const Options& o) {
  BeamOptions b;
  b.beam_size = o.beam, b.max_len = o.max_len;
  return b;
}

void add_seed(CLI::App* c, Options& o) { c->add_option("--seed", o.seed, "random seed"); }

void add_model_flags(CLI::App* c, Options& o) {
  c->add_option("--mode", o.mode, "two_stage | one_stage | cd | no_latent")
      ->check(CLI::IsMember({"two_stage", "one_stage", "cd", "cd_variant", "no_latent"}));
  c->add_option("--latent-top-k", o.latent_top_k, "latent space = top-k frequent words (0: all)");
  c->add_option("--K", o.K, "number of word clusters");
  c->add_option("--cd-size", o.cd_size, "abstract latent count for cd (0: latent space size)");
  c->add_option("--hidden", o.dims.hidden, "GRU hidden size")->check(CLI::PositiveNumber);
  c->add_option("--word-dim", o.dims.word_dim, "word embedding size")->check(CLI::PositiveNumber);
  c->add_option("--cluster-dim", o.dims.cluster_dim, "cluster embedding size")->check(CLI::PositiveNumber);
  c->add_option("--scorer-hidden", o.dims.scorer_hidden, "latent scorer hidden size")->check(CLI::PositiveNumber);
  c->add_option("--bow-hidden", o.dims.bow_hidden, "bag-of-words MLP hidden size")->check(CLI::PositiveNumber);
}

void add_corpus_side(CLI::App* c, Options& o) {
  c->add_option("--vocab", o.vocab, "vocabulary file from prep");
  c->add_option("--vocab-size", o.vocab_size, "max vocabulary size when building from the corpus (0: all)");
  c->add_option("--embeddings", o.embeddings, "pretrained word vectors");
  c->add_option("--clusters", o.clusters, "cluster file (two_stage)");
}

void add_keyword_flags(CLI::App* c, Options& o) {
  c->add_option("--keyword-source", o.keyword_source, "query | response")->check(CLI::IsMember({"query", "response"}));
  c->add_flag("--smooth-idf", o.smooth_idf, "log((1+N)/(1+df)) + 1");
}

void add_train_flags(CLI::App* c, Options& o) {
  c->add_option("--epochs", o.epochs, "training epochs");
  c->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  c->add_option("--batch", o.batch, "batch size")->check(CLI::PositiveNumber);
  c->add_option("--train-samples", o.train_samples, "posterior samples per example")->check(CLI::PositiveNumber);
  c->add_flag("--no-straight-through", o.no_straight_through, "posterior learns from KL and BoW only");
}

void add_pretrain_flags(CLI::App* c, Options& o) {
  c->add_option("--pretrain-steps", o.pretrain_steps, "pretraining updates");
  c->add_option("--pretrain-lr", o.pretrain_lr, "pretraining learning rate")->check(CLI::PositiveNumber);
  c->add_option("--pretrain-batch", o.pretrain_batch, "pretraining batch size")->check(CLI::PositiveNumber);
}

void add_generation_flags(CLI::App* c, Options& o) {
  c->add_option("--beam", o.beam, "beam size")->check(CLI::PositiveNumber);
  c->add_option("--max-len", o.max_len, "max generated tokens")->check(CLI::PositiveNumber);
  c->add_option("--samples", o.samples, "latent samples per query")->check(CLI::PositiveNumber);
}

// Config entries become flags right after the subcommand name, so flags given
// on the command line (later, last one wins) override them.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a file path");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!path) return rest;
  std::vector<std::string> injected;
  for (const auto& [k, v] : parse_config(read_file(*path), *path)) injected.push_back("--" + k + "=" + v);
  const std::size_t at = rest.size() > 1 ? 2 : rest.size();  // after program name and subcommand
  rest.insert(rest.begin() + static_cast<std::ptrdiff_t>(at), injected.begin(), injected.end());
  return rest;
}

void print_report(std::ostream& out, const EvalReport& r) { out << summarize_report(r); }

}  // namespace

int run_cli(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Discrete CVAE for short-text response generation"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  app.add_option("--config", "key = value file; flags override it");  // handled before parsing
  Options o;

  auto* synth = app.add_subcommand("synth", "write the planted synthetic corpus");
  add_seed(synth, o);
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--templates", o.synth.templates, "query templates");
  synth->add_option("--responses", o.synth.responses_per_query, "responses per query");
  synth->add_option("--K", o.synth.clusters, "planted clusters");
  synth->add_option("--repeats", o.synth.repeats, "training copies per response");
  synth->add_option("--fillers", o.synth.fillers, "filler words");
  synth->add_option("--dim", o.synth.embedding_dim, "embedding dimension");

  auto* prep = app.add_subcommand("prep", "build the vocabulary and latent space");
  prep->add_option("--corpus", o.corpus, "training corpus")->required();
  prep->add_option("--out", o.out, "vocabulary file")->required();
  prep->add_option("--vocab-size", o.vocab_size, "max vocabulary size (0: all)");
  prep->add_option("--latent-top-k", o.latent_top_k, "latent space = top-k frequent words (0: all)");

  auto* cluster = app.add_subcommand("cluster", "k-means over latent word embeddings");
  add_seed(cluster, o);
  cluster->add_option("--corpus", o.corpus, "training corpus")->required();
  add_corpus_side(cluster, o);
  cluster->add_option("--K", o.K, "number of clusters");
  cluster->add_option("--latent-top-k", o.latent_top_k, "latent space = top-k frequent words (0: all)");
  cluster->add_option("--word-dim", o.dims.word_dim, "dimension used when no embeddings are given");
  cluster->add_option("--out", o.out, "cluster file")->required();

  auto* keywords = app.add_subcommand("keywords", "TF-IDF keyword per pair");
  keywords->add_option("--corpus", o.corpus, "training corpus")->required();
  keywords->add_option("--vocab", o.vocab, "vocabulary file from prep");
  keywords->add_option("--vocab-size", o.vocab_size, "max vocabulary size (0: all)");
  keywords->add_option("--latent-top-k", o.latent_top_k, "latent space = top-k frequent words (0: all)");
  add_keyword_flags(keywords, o);
  keywords->add_option("--out", o.out, "keyword file")->required();

  auto* pretrain_cmd = app.add_subcommand("pretrain", "pretrain prior and posterior on keywords");
  add_seed(pretrain_cmd, o);
  pretrain_cmd->add_option("--corpus", o.corpus, "training corpus")->required();
  add_corpus_side(pretrain_cmd, o);
  add_model_flags(pretrain_cmd, o);
  add_keyword_flags(pretrain_cmd, o);
  pretrain_cmd->add_option("--keywords", o.keywords, "keyword file (default: computed)");
  add_pretrain_flags(pretrain_cmd, o);
  pretrain_cmd->add_option("--out", o.out, "checkpoint")->required();

  auto* train_cmd = app.add_subcommand("train", "train the full model");
  add_seed(train_cmd, o);
  train_cmd->add_option("--corpus", o.corpus, "training corpus")->required();
  train_cmd->add_option("--checkpoint", o.checkpoint, "start from this checkpoint (default: fresh model)");
  add_corpus_side(train_cmd, o);
  add_model_flags(train_cmd, o);
  add_train_flags(train_cmd, o);
  train_cmd->add_option("--log", o.log, "epoch log file");
  train_cmd->add_option("--out", o.out, "checkpoint")->required();

  auto* generate = app.add_subcommand("generate", "sample latents and beam-decode responses");
  add_seed(generate, o);
  generate->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  generate->add_option("--corpus", o.corpus, "reference corpus whose unique queries are answered")->required();
  add_generation_flags(generate, o);
  generate->add_option("--out", o.out, "generation file")->required();

  auto* evaluate_cmd = app.add_subcommand("evaluate", "BLEU and distinct-n against references");
  evaluate_cmd->add_option("--generated", o.generated, "generation file")->required();
  evaluate_cmd->add_option("--corpus", o.corpus, "reference corpus")->required();
  evaluate_cmd->add_option("--samples", o.samples, "lines per query in the generation file")->check(CLI::PositiveNumber);
  evaluate_cmd->add_option("--out", o.out, "report file");

  auto* ablate = app.add_subcommand("ablate", "full pipeline for one latent mode");
  add_seed(ablate, o);
  ablate->add_option("--corpus", o.corpus, "training corpus")->required();
  ablate->add_option("--test-corpus", o.test_corpus, "held-out corpus")->required();
  ablate->add_option("--embeddings", o.embeddings, "pretrained word vectors");
  ablate->add_option("--gold", o.gold, "gold topic word per test pair; reports posterior top-1 accuracy");
  ablate->add_option("--vocab-size", o.vocab_size, "max vocabulary size (0: all)");
  add_model_flags(ablate, o);
  add_keyword_flags(ablate, o);
  add_pretrain_flags(ablate, o);
  ablate->add_flag("--no-pretrain", o.no_pretrain, "skip keyword pretraining");
  add_train_flags(ablate, o);
  add_generation_flags(ablate, o);
  ablate->add_option("--out", o.out, "output directory")->required();

  try {
    const std::vector<std::string> args = expand_config(args_in);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*synth) {
      o.synth.seed = o.seed;
      const SyntheticCorpus c = synthesize_corpus(o.synth);
      write_synthetic(c, o.out);
      out << "train " << c.train.size() << " pairs, test " << c.test.size() << " pairs, " << c.embeddings.size() << " embedded words\n";
    } else if (*prep) {
      const auto pairs = load_corpus(o.corpus);
      const Vocab vocab = build_vocab(pairs, o.vocab_size ? o.vocab_size : static_cast<std::size_t>(-1));
      const LatentSpace latent = restrict_latent_space(vocab, top_k(o));
      save_vocab(vocab, o.out);
      out << "vocab " << vocab.size() << " (coverage " << vocab.coverage() << "), latent space " << latent.size() << "\n";
    } else if (*cluster) {
      const auto pairs = load_corpus(o.corpus);
      const Vocab vocab = vocab_for(o, pairs);
      const LatentSpace latent = restrict_latent_space(vocab, top_k(o));
      const ClusterModel cm = fit_clusters(vocab, latent, embeddings_for(o, vocab), o.K, stage_seed(o.seed, Stage::cluster));
      save_clusters(cm, vocab, o.out);
      out << "K " << cm.k << ", " << cm.sse_history.size() << " iterations, SSE " << cm.sse_history.back() << "\n";
    } else if (*keywords) {
      const auto pairs = load_corpus(o.corpus);
      const Vocab vocab = vocab_for(o, pairs);
      const LatentSpace latent = restrict_latent_space(vocab, top_k(o));
      const auto kw = tfidf_keywords(encode_corpus(vocab, pairs), latent, {keyword_source(o.keyword_source), o.smooth_idf});
      save_keywords(vocab, kw, o.out);
      std::size_t n = 0;
      for (const auto& k : kw) n += k.has_value();
      out << n << " of " << kw.size() << " pairs have a keyword\n";
    } else if (*pretrain_cmd) {
      const auto pairs = load_corpus(o.corpus);
      Model model = fresh_model(o, pairs);
      const auto ex = examples_with_keywords(o, model, pairs);
      const auto hist = pretrain(model, ex, pretrain_config(o), &out);
      save_checkpoint(model, o.out);
      out << "pretrain loss " << hist.front().total << " -> " << hist.back().total << "\n";
    } else if (*train_cmd) {
      const auto pairs = load_corpus(o.corpus);
      Model model = o.checkpoint.empty() ? fresh_model(o, pairs) : load_checkpoint(o.checkpoint);
      const auto ex = encode_corpus(model.vocab, pairs);
      TrainOutputs outs;
      outs.checkpoint = o.out;
      if (!o.log.empty()) outs.log = o.log;
      outs.progress = &out;
      std::optional<LatentMode> mode;
      // An explicit --mode must agree with a loaded checkpoint.
      if (!o.checkpoint.empty() && train_cmd->count("--mode")) mode = parse_latent_mode(o.mode);
      TrainConfig tc = train_config(o, model.mode());
      tc.mode = mode ? mode : std::optional<LatentMode>(model.mode());
      train(model, ex, tc, outs);
    } else if (*generate) {
      const Model model = load_checkpoint(o.checkpoint);
      const auto pairs = load_corpus(o.corpus);
      write_file_atomic(o.out, generate_lines(model, pairs, o.samples, beam_options(o), stage_seed(o.seed, Stage::generate)));
    } else if (*evaluate_cmd) {
      const auto generated = load_generated(o.generated);
      const auto refs = load_corpus(o.corpus);
      const EvalReport r = evaluate(generated, refs, o.samples);
      if (!o.out.empty()) write_file_atomic(o.out, format_report(r));
      print_report(out, r);
    } else if (*ablate) {
      PipelineConfig pc;
      pc.train_corpus = o.corpus;
      pc.test_corpus = o.test_corpus;
      if (!o.embeddings.empty()) pc.embeddings = o.embeddings;
      pc.out_dir = o.out;
      if (!o.gold.empty()) pc.gold_topics = o.gold;
      pc.latent = latent_config(o);
      pc.dims = o.dims;
      pc.clusters = o.K;
      pc.vocab_size = o.vocab_size;
      pc.keywords = {keyword_source(o.keyword_source), o.smooth_idf};
      pc.pretrain = pretrain_config(o);
      pc.run_pretrain = !o.no_pretrain;
      pc.train = train_config(o, pc.latent.mode);
      pc.samples = o.samples;
      pc.beam = beam_options(o);
      pc.seed = o.seed;
      run_pipeline(pc, &out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace dcvae
