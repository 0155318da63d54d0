#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "skipgru/binary_io.hpp"
#include "skipgru/corpus.hpp"
#include "skipgru/error.hpp"
#include "skipgru/expansion.hpp"
#include "skipgru/model.hpp"
#include "skipgru/probes.hpp"
#include "skipgru/ranking.hpp"
#include "skipgru/trainer.hpp"

namespace skipgru::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string fmt(double v, int digits = 17) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

struct Manifest {
  std::string command;
  json config = json::object();
  json seeds = json::object();
  std::vector<fs::path> inputs, outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void input(const fs::path& p) {
    if (!p.empty()) inputs.push_back(p);
  }
  void output(const fs::path& p) { outputs.push_back(p); }

  void write(const fs::path& path) const {
    json j;
    j["command"] = command;
    j["config"] = config;
    j["seeds"] = seeds;
    json in = json::object(), out = json::object();
    for (const auto& p : inputs) in[p.string()] = file_digest(p);
    for (const auto& p : outputs) out[p.string()] = file_digest(p);
    j["inputs"] = in;
    j["outputs"] = out;
    j["wall_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write manifest " + path.string());
    f << j.dump(2) << '\n';
  }
};

// Snapshot of every option of a subcommand, defaults included.
json snapshot(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || name == "manifest") continue;
    if (opt->get_type_size() == 0) {
      j[name] = opt->count() > 0 && opt->as<bool>();
    } else if (opt->count() > 0) {
      std::string v;
      for (const auto& r : opt->results()) v += (v.empty() ? "" : ",") + r;
      j[name] = v;
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// key=value lines become --key=value arguments unless the flag was given.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  fs::path file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
  }
  if (file.empty()) return args;
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> extra;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(file.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty() || key == "config") {
      throw ConfigError(file.string() + ":" + std::to_string(line_no) + ": invalid key");
    }
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(),
                                   [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
    if (!given) extra.push_back(flag + "=" + value);
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

// Sentence encoder built from one or two checkpoints.
struct EncoderOptions {
  std::string ckpt, ckpt2, expansion, expansion2, embeddings;

  void add(CLI::App* sub, bool required) {
    auto* c = sub->add_option("--ckpt", ckpt, "Model checkpoint")->check(CLI::ExistingFile);
    if (required) c->required();
    sub->add_option("--ckpt2", ckpt2, "Second checkpoint; vectors are concatenated")->check(CLI::ExistingFile);
    sub->add_option("--expansion", expansion, "Expansion map for --ckpt")->check(CLI::ExistingFile);
    sub->add_option("--expansion2", expansion2, "Expansion map for --ckpt2")->check(CLI::ExistingFile);
    sub->add_option("--embeddings", embeddings, "External word vectors used by the expansion maps")
        ->check(CLI::ExistingFile);
  }
};

struct LoadedEncoder {
  std::vector<std::unique_ptr<SkipThoughtModel>> models;
  std::optional<ExternalEmbeddings> ext;
  TextEncoder encoder;
  std::string variant;
};

std::unique_ptr<LoadedEncoder> load_encoder(const EncoderOptions& o, Manifest& m) {
  if (o.ckpt.empty()) throw ConfigError("--ckpt is required");
  if (!o.ckpt2.empty() && o.ckpt2 == o.ckpt) throw ConfigError("--ckpt2 must differ from --ckpt");
  if (!o.expansion2.empty() && o.ckpt2.empty()) throw ConfigError("--expansion2 needs --ckpt2");
  auto enc = std::make_unique<LoadedEncoder>();
  if (!o.embeddings.empty()) {
    enc->ext = ExternalEmbeddings::load(o.embeddings);
    m.input(o.embeddings);
  } else if (!o.expansion.empty() || !o.expansion2.empty()) {
    throw ConfigError("--expansion needs --embeddings");
  }
  auto add = [&](const std::string& ckpt, const std::string& map_path) {
    enc->models.push_back(std::make_unique<SkipThoughtModel>(load_checkpoint(ckpt).model));
    m.input(ckpt);
    const SkipThoughtModel& model = *enc->models.back();
    std::optional<ExpansionMap> map;
    if (!map_path.empty()) {
      map = ExpansionMap::load(map_path);
      m.input(map_path);
    } else if (enc->ext) {
      map = fit_expansion(*enc->ext, model);
    }
    enc->encoder.add(model, map, enc->ext ? &*enc->ext : nullptr);
  };
  add(o.ckpt, o.expansion);
  if (!o.ckpt2.empty()) add(o.ckpt2, o.expansion2);
  enc->variant = enc->models.size() == 2 ? "combine" : std::string(to_string(enc->models[0]->config.mode));
  return enc;
}

Matrix encode_lines(const std::vector<std::string>& lines, const TextEncoder& encoder, std::size_t* unknown) {
  Matrix out(lines.size(), encoder.dim());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const EncodedText e = encoder.encode(lines[i]);
    std::copy(e.vector.begin(), e.vector.end(), out.row(i).begin());
    if (unknown) *unknown += e.unknown_tokens;
  }
  return out;
}

void warn_unknown(std::size_t unknown, std::ostream& err) {
  if (unknown > 0) err << "warning: " << unknown << " token(s) fell back to <unk>\n";
}

void emit_metrics(const std::vector<MetricRow>& rows, const std::string& path, std::ostream& out, Manifest& m) {
  write_metrics_csv(out, rows);
  if (!path.empty()) {
    auto f = open_out(path);
    write_metrics_csv(f, rows);
    f.close();
    m.output(path);
  }
}

std::vector<double> grid_or_default(const std::vector<double>& grid) { return grid.empty() ? default_l2_grid() : grid; }

struct PairData {
  Matrix features;
  std::vector<double> gold;
};

PairData pair_data(const std::vector<PairExample>& examples, const TextEncoder& encoder, std::size_t* unknown) {
  std::vector<std::string> a, b;
  for (const auto& e : examples) {
    a.push_back(e.a);
    b.push_back(e.b);
  }
  const Matrix va = encode_lines(a, encoder, unknown), vb = encode_lines(b, encoder, unknown);
  PairData d{Matrix(examples.size(), 2 * encoder.dim()), {}};
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Vector f = pair_features(va.row(i), vb.row(i));
    std::copy(f.begin(), f.end(), d.features.row(i).begin());
    d.gold.push_back(examples[i].gold);
  }
  return d;
}

std::vector<std::size_t> binary_labels(const std::vector<double>& gold) {
  std::vector<std::size_t> out;
  for (double g : gold) {
    if (g != 0.0 && g != 1.0) throw InputError("paraphrase labels must be 0 or 1");
    out.push_back(g == 1.0 ? 1 : 0);
  }
  return out;
}

std::vector<double> subset(const std::vector<double>& v, const std::vector<std::size_t>& rows) {
  std::vector<double> out;
  for (std::size_t r : rows) out.push_back(v.at(r));
  return out;
}

std::vector<double> relatedness_predictions(const ProbeModel& probe, const Matrix& x) {
  std::vector<double> out;
  for (std::size_t i = 0; i < x.rows(); ++i) out.push_back(predict_relatedness(probe, x.row(i)));
  return out;
}

std::vector<std::size_t> class_predictions(const ProbeModel& probe, const Matrix& x) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < x.rows(); ++i) out.push_back(probe.predict(x.row(i)));
  return out;
}

struct Command {
  CLI::App* app = nullptr;
  std::function<void()> action;
  std::string out;       // primary output, names the default manifest
  std::string manifest;  // explicit manifest path
};

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {
    app_.require_subcommand(1);
    app_.option_defaults()->always_capture_default();
    build_vocab();
    stats();
    train();
    encode();
    expand();
    nn_word();
    nn_sent();
    eval_sick();
    eval_paraphrase();
    eval_classify();
    eval_rank();
    generate();
  }

  int run(const std::vector<std::string>& args) {
    std::vector<std::string> argv = apply_config_file(args);
    std::reverse(argv.begin(), argv.end());
    try {
      app_.parse(argv);
    } catch (const CLI::ParseError& e) {
      std::ostringstream o, e2;
      const int code = app_.exit(e, o, e2);
      out_ << o.str();
      err_ << e2.str();
      return code == 0 ? kExitOk : kExitUsage;
    }
    for (auto& [name, cmd] : commands_) {
      if (!cmd.app->parsed()) continue;
      manifest_.command = name;
      manifest_.config = snapshot(*cmd.app);
      cmd.action();
      fs::path path = cmd.manifest;
      if (path.empty())
        path = cmd.out.empty() ? fs::path("skipgru-" + name + ".manifest.json") : fs::path(cmd.out + ".manifest.json");
      manifest_.write(path);
    }
    return kExitOk;
  }

 private:
  Command& add(const std::string& name, const std::string& help) {
    Command& c = commands_.emplace_back(name, Command{}).second;
    c.app = app_.add_subcommand(name, help);
    c.app->add_option("--config", config_file_, "key=value file; flags given on the command line win");
    c.app->add_option("--manifest", c.manifest, "Run manifest path (default <out>.manifest.json)");
    return c;
  }

  void build_vocab() {
    auto& c = add("build-vocab", "Build a vocabulary from a corpus");
    struct O {
      std::string corpus;
      std::size_t size = 20000;
    };
    auto o = std::make_shared<O>();
    c.app->add_option("--corpus", o->corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    c.app->add_option("--size", o->size, "Vocabulary size including reserved tokens");
    c.app->add_option("--out", c.out, "Vocabulary file")->required();
    c.action = [this, o, &c] {
      const auto corpus = read_corpus(o->corpus);
      manifest_.input(o->corpus);
      skipgru::build_vocab(corpus, o->size).save(c.out);
      manifest_.output(c.out);
    };
  }

  void stats() {
    auto& c = add("stats", "Corpus statistics as JSON");
    auto corpus = std::make_shared<std::string>();
    c.app->add_option("--corpus", *corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    c.app->add_option("--out", c.out, "Also write the JSON here");
    c.action = [this, corpus, &c] {
      const std::string j = corpus_stats(read_corpus(*corpus)).to_json();
      manifest_.input(*corpus);
      out_ << j << '\n';
      if (!c.out.empty()) {
        auto f = open_out(c.out);
        f << j << '\n';
        f.close();
        manifest_.output(c.out);
      }
    };
  }

  void train() {
    auto& c = add("train", "Train a skip-thought model");
    struct O {
      std::string corpus, vocab, mode = "uni", metrics, resume;
      TrainConfig cfg;
    };
    auto o = std::make_shared<O>();
    auto* a = c.app;
    a->add_option("--corpus", o->corpus, "Training corpus")->required()->check(CLI::ExistingFile);
    a->add_option("--vocab", o->vocab, "Vocabulary file")->check(CLI::ExistingFile);
    a->add_option("--mode", o->mode, "Encoder: uni or bi");
    a->add_option("--embed-dim", o->cfg.embed_dim, "Word embedding size");
    a->add_option("--hidden-dim", o->cfg.hidden_dim, "GRU units per direction");
    a->add_option("--batch", o->cfg.batch_size, "Triples per step");
    a->add_option("--clip", o->cfg.clip_threshold, "Global gradient norm threshold");
    a->add_option("--lr", o->cfg.adam.alpha, "Adam step size");
    a->add_option("--beta1", o->cfg.adam.beta1);
    a->add_option("--beta2", o->cfg.adam.beta2);
    a->add_option("--epsilon", o->cfg.adam.epsilon);
    a->add_option("--steps", o->cfg.max_steps, "Optimiser steps (total, including resumed ones)");
    a->add_option("--seed", o->cfg.seed, "Initialisation and batching seed");
    a->add_option("--max-tokens", o->cfg.max_tokens, "Sentence length cap before eos");
    a->add_option("--checkpoint-every", o->cfg.checkpoint_every, "Also save <out>.step<N> every N steps");
    a->add_option("--resume", o->resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
    a->add_option("--metrics", o->metrics, "Per-step CSV (default <out>.metrics.csv)");
    a->add_option("--out", c.out, "Checkpoint file")->required();
    c.action = [this, o, &c] {
      const auto corpus = read_corpus(o->corpus);
      manifest_.input(o->corpus);
      SkipThoughtModel model;
      AdamState opt;
      if (!o->resume.empty()) {
        auto ck = load_checkpoint(o->resume);
        manifest_.input(o->resume);
        model = std::move(ck.model);
        opt = std::move(ck.opt);
        model.config.max_steps = o->cfg.max_steps;
      } else {
        if (o->vocab.empty()) throw ConfigError("--vocab is required unless --resume is given");
        o->cfg.mode = parse_encoder_mode(o->mode);
        Vocabulary vocab = Vocabulary::load(o->vocab);
        manifest_.input(o->vocab);
        o->cfg.vocab_size = vocab.size();
        o->cfg.validate();
        model = SkipThoughtModel::init(std::move(vocab), o->cfg);
        opt = make_optimizer(model);
      }
      manifest_.seeds["seed"] = model.config.seed;
      const TripleSet triples = make_triples(corpus, model.vocab, model.config.max_tokens);
      if (triples.skipped_documents > 0) {
        err_ << "warning: skipped " << triples.skipped_documents << " document(s) with fewer than three sentences\n";
      }
      const std::string metrics = o->metrics.empty() ? c.out + ".metrics.csv" : o->metrics;
      auto csv = open_out(metrics);
      csv << "step,loss,grad_norm,clipped\n";
      if (model.config.max_steps > opt.step) {
        Trainer trainer(model, opt, triples.triples);
        trainer.set_workers(worker_count());
        const std::uint64_t every = model.config.checkpoint_every;
        trainer.run_until(model.config.max_steps, [&](const StepResult& r) {
          csv << r.step << ',' << fmt(r.loss) << ',' << fmt(r.grad_norm) << ',' << (r.clipped ? 1 : 0) << '\n';
          if (every > 0 && r.step % every == 0 && r.step != model.config.max_steps) {
            const std::string path = c.out + ".step" + std::to_string(r.step);
            save_checkpoint(model, opt, path);
            manifest_.output(path);
          }
        });
      }
      csv.close();
      if (!csv) throw IoError("write failed for " + metrics);
      save_checkpoint(model, opt, c.out);
      manifest_.output(c.out);
      manifest_.output(metrics);
    };
  }

  void encode() {
    auto& c = add("encode", "Encode one sentence per line");
    struct O {
      EncoderOptions enc;
      std::string input, format = "bin";
    };
    auto o = std::make_shared<O>();
    o->enc.add(c.app, true);
    c.app->add_option("--input", o->input, "Sentences, one per line")->required()->check(CLI::ExistingFile);
    c.app->add_option("--format", o->format, "bin (header n, dim; float32 rows) or text")
        ->check(CLI::IsMember({"bin", "text"}));
    c.app->add_option("--out", c.out, "Vector file")->required();
    c.action = [this, o, &c] {
      const auto enc = load_encoder(o->enc, manifest_);
      const auto lines = read_lines(o->input);
      manifest_.input(o->input);
      std::size_t unknown = 0;
      const Matrix v = encode_lines(lines, enc->encoder, &unknown);
      warn_unknown(unknown, err_);
      if (o->format == "bin") {
        write_vectors(c.out, v);
      } else {
        auto f = open_out(c.out);
        f << v.rows() << ' ' << v.cols() << '\n';
        for (std::size_t i = 0; i < v.rows(); ++i) {
          for (std::size_t j = 0; j < v.cols(); ++j) f << (j ? " " : "") << fmt(static_cast<float>(v(i, j)), 9);
          f << '\n';
        }
        f.close();
        if (!f) throw IoError("write failed for " + c.out);
      }
      manifest_.output(c.out);
    };
  }

  void expand() {
    auto& c = add("expand", "Fit a map from external word vectors into the model's word space");
    struct O {
      std::string ckpt, embeddings;
    };
    auto o = std::make_shared<O>();
    c.app->add_option("--ckpt", o->ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    c.app->add_option("--embeddings", o->embeddings, "External word vectors")->required()->check(CLI::ExistingFile);
    c.app->add_option("--out", c.out, "Map file")->required();
    c.action = [this, o, &c] {
      const auto model = load_checkpoint(o->ckpt).model;
      const auto ext = ExternalEmbeddings::load(o->embeddings);
      manifest_.input(o->ckpt);
      manifest_.input(o->embeddings);
      if (ext.skipped_phrases > 0) err_ << "warning: skipped " << ext.skipped_phrases << " phrase entries\n";
      const ExpansionMap map = fit_expansion(ext, model);
      if (map.rank_deficient) err_ << "warning: shared words do not span the external space; minimum-norm map\n";
      map.save(c.out);
      manifest_.output(c.out);
      json j;
      j["shared_words"] = map.shared_count;
      j["residual_rms"] = map.residual_rms;
      j["rank"] = map.rank;
      j["rank_deficient"] = map.rank_deficient;
      j["native_words"] = model.vocab.size() - 2;
      j["expanded_words"] = ExpandedLookup(model.vocab, model.encoder().embedding, ext, map).tokens().size();
      out_ << j.dump() << '\n';
    };
  }

  void nn_word() {
    auto& c = add("nn-word", "Nearest words by cosine in the (expanded) embedding table");
    struct O {
      std::string ckpt, expansion, embeddings;
      std::vector<std::string> queries;
      std::size_t k = 5;
    };
    auto o = std::make_shared<O>();
    c.app->add_option("--ckpt", o->ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    c.app->add_option("--expansion", o->expansion, "Expansion map")->check(CLI::ExistingFile);
    c.app->add_option("--embeddings", o->embeddings, "External word vectors")->check(CLI::ExistingFile);
    c.app->add_option("--query", o->queries, "Query word (repeatable)")->required()->delimiter(',');
    c.app->add_option("--k", o->k, "Neighbours per query");
    c.app->add_option("--out", c.out, "Also write the table here");
    c.action = [this, o, &c] {
      const auto model = load_checkpoint(o->ckpt).model;
      manifest_.input(o->ckpt);
      std::optional<ExternalEmbeddings> ext;
      std::optional<ExpansionMap> map;
      if (!o->embeddings.empty()) {
        ext = ExternalEmbeddings::load(o->embeddings);
        manifest_.input(o->embeddings);
        if (!o->expansion.empty()) {
          map = ExpansionMap::load(o->expansion);
          manifest_.input(o->expansion);
        } else {
          map = fit_expansion(*ext, model);
        }
      } else if (!o->expansion.empty()) {
        throw ConfigError("--expansion needs --embeddings");
      }
      const Matrix& emb = model.encoder().embedding;
      const ExpandedLookup lookup =
          ext ? ExpandedLookup(model.vocab, emb, *ext, *map) : ExpandedLookup(model.vocab, emb);
      std::ostringstream table;
      table << "query\tneighbour\tsimilarity\n";
      for (const auto& q : o->queries)
        for (const auto& n : nearest_words(q, lookup, o->k))
          table << q << '\t' << n.label << '\t' << fmt(n.similarity, 6) << '\n';
      write_table(table.str(), c.out);
    };
  }

  void nn_sent() {
    auto& c = add("nn-sent", "Nearest sentences of a bank by cosine of their vectors");
    struct O {
      EncoderOptions enc;
      std::string bank, queries_file;
      std::vector<std::string> queries;
      std::size_t k = 5;
    };
    auto o = std::make_shared<O>();
    o->enc.add(c.app, true);
    c.app->add_option("--bank", o->bank, "Candidate sentences, one per line")->required()->check(CLI::ExistingFile);
    c.app->add_option("--query", o->queries, "Query sentence (repeatable)");
    c.app->add_option("--queries", o->queries_file, "Query sentences, one per line")->check(CLI::ExistingFile);
    c.app->add_option("--k", o->k, "Neighbours per query");
    c.app->add_option("--out", c.out, "Also write the table here");
    c.action = [this, o, &c] {
      const auto enc = load_encoder(o->enc, manifest_);
      std::vector<std::string> queries = o->queries;
      if (!o->queries_file.empty()) {
        const auto more = read_lines(o->queries_file);
        manifest_.input(o->queries_file);
        queries.insert(queries.end(), more.begin(), more.end());
      }
      if (queries.empty()) throw ConfigError("give --query or --queries");
      const SentenceBank bank = encode_bank(read_lines(o->bank), enc->encoder);
      manifest_.input(o->bank);
      std::ostringstream table;
      table << "query\trank\tsimilarity\tsentence\n";
      for (const auto& q : queries) {
        std::size_t rank = 0;
        for (const auto& n : nearest_sentences(q, enc->encoder, bank, o->k))
          table << q << '\t' << ++rank << '\t' << fmt(n.similarity, 6) << '\t' << n.label << '\n';
      }
      write_table(table.str(), c.out);
    };
  }

  void write_table(const std::string& text, const std::string& path) {
    out_ << text;
    if (path.empty()) return;
    auto f = open_out(path);
    f << text;
    f.close();
    manifest_.output(path);
  }

  void eval_sick() {
    auto& c = add("eval-sick", "Relatedness probe on sentence pairs");
    struct O {
      EncoderOptions enc;
      std::string train, dev, test;
      std::vector<double> grid;
      std::size_t folds = 5;
      std::uint64_t seed = 1234;
    };
    auto o = std::make_shared<O>();
    o->enc.add(c.app, true);
    c.app->add_option("--train", o->train, "Training pairs (a, b, score in [1, 5])")
        ->required()
        ->check(CLI::ExistingFile);
    c.app->add_option("--dev", o->dev, "Pairs used to pick l2; cross-validation on train if absent")
        ->check(CLI::ExistingFile);
    c.app->add_option("--test", o->test, "Evaluation pairs")->required()->check(CLI::ExistingFile);
    c.app->add_option("--l2", o->grid, "l2 grid")->delimiter(',');
    c.app->add_option("--folds", o->folds, "Folds when no dev set is given");
    c.app->add_option("--seed", o->seed, "Fold seed");
    c.app->add_option("--out", c.out, "Metrics CSV");
    c.action = [this, o, &c] {
      const auto enc = load_encoder(o->enc, manifest_);
      manifest_.seeds["seed"] = o->seed;
      std::size_t unknown = 0;
      const PairData train = pair_data(read_pair_dataset(o->train), enc->encoder, &unknown);
      const PairData test = pair_data(read_pair_dataset(o->test), enc->encoder, &unknown);
      manifest_.input(o->train);
      manifest_.input(o->test);
      const auto grid = grid_or_default(o->grid);
      double best_l2 = grid.front();
      // l2 is selected by mean squared error, which stays defined on constant gold.
      if (!o->dev.empty()) {
        const PairData dev = pair_data(read_pair_dataset(o->dev), enc->encoder, &unknown);
        manifest_.input(o->dev);
        double best = INFINITY;
        for (double l2 : grid) {
          const double e =
              mse(relatedness_predictions(fit_relatedness(train.features, train.gold, l2), dev.features), dev.gold);
          if (e < best) best = e, best_l2 = l2;
        }
      } else {
        const std::vector<std::size_t> strata(train.gold.size(), 0);
        best_l2 =
            cross_validate(
                strata, o->folds, grid, o->seed,
                [&](const std::vector<std::size_t>& tr, const std::vector<std::size_t>& te, double l2) {
                  const auto probe = fit_relatedness(select_rows(train.features, tr), subset(train.gold, tr), l2);
                  return -mse(relatedness_predictions(probe, select_rows(train.features, te)), subset(train.gold, te));
                })
                .best_l2;
      }
      warn_unknown(unknown, err_);
      const auto probe = fit_relatedness(train.features, train.gold, best_l2);
      const auto pred = relatedness_predictions(probe, test.features);
      std::vector<MetricRow> rows;
      const std::string& v = enc->variant;
      for (auto [name, f] : {std::pair{"pearson", &pearson}, std::pair{"spearman", &spearman}}) {
        double value = NAN;
        try {
          value = f(pred, test.gold);
        } catch (const NumericError& e) {
          err_ << "warning: " << name << " undefined: " << e.what() << '\n';
        }
        rows.push_back({"sick", v, name, value});
      }
      rows.push_back({"sick", v, "mse", mse(pred, test.gold)});
      rows.push_back({"sick", v, "l2", best_l2});
      emit_metrics(rows, c.out, out_, manifest_);
    };
  }

  void eval_paraphrase() {
    auto& c = add("eval-paraphrase", "Paraphrase detection probe on sentence pairs");
    struct O {
      EncoderOptions enc;
      std::string train, test;
      std::vector<double> grid;
      std::size_t folds = 10;
      std::uint64_t seed = 1234;
    };
    auto o = std::make_shared<O>();
    o->enc.add(c.app, true);
    c.app->add_option("--train", o->train, "Training pairs (a, b, 0/1)")->required()->check(CLI::ExistingFile);
    c.app->add_option("--test", o->test, "Evaluation pairs")->required()->check(CLI::ExistingFile);
    c.app->add_option("--l2", o->grid, "l2 grid")->delimiter(',');
    c.app->add_option("--folds", o->folds, "Cross-validation folds for l2");
    c.app->add_option("--seed", o->seed, "Fold seed");
    c.app->add_option("--out", c.out, "Metrics CSV");
    c.action = [this, o, &c] {
      const auto enc = load_encoder(o->enc, manifest_);
      manifest_.seeds["seed"] = o->seed;
      std::size_t unknown = 0;
      const PairData train = pair_data(read_pair_dataset(o->train), enc->encoder, &unknown);
      const PairData test = pair_data(read_pair_dataset(o->test), enc->encoder, &unknown);
      manifest_.input(o->train);
      manifest_.input(o->test);
      warn_unknown(unknown, err_);
      const auto train_y = binary_labels(train.gold), test_y = binary_labels(test.gold);
      const auto cv = cross_validate(train.features, train_y, 2, o->folds, grid_or_default(o->grid), o->seed);
      const auto pred = class_predictions(fit_logreg(train.features, train_y, 2, cv.best_l2), test.features);
      emit_metrics({{"paraphrase", enc->variant, "accuracy", accuracy(pred, test_y)},
                    {"paraphrase", enc->variant, "f1", f1(pred, test_y)},
                    {"paraphrase", enc->variant, "l2", cv.best_l2}},
                   c.out, out_, manifest_);
    };
  }

  void eval_classify() {
    auto& c = add("eval-classify", "Sentence classification probe");
    struct O {
      EncoderOptions enc;
      std::string data, test;
      std::vector<double> grid;
      std::size_t folds = 10, inner_folds = 10;
      std::uint64_t seed = 1234;
      std::string task = "classify";
    };
    auto o = std::make_shared<O>();
    o->enc.add(c.app, true);
    c.app->add_option("--data", o->data, "label<TAB>sentence lines")->required()->check(CLI::ExistingFile);
    c.app->add_option("--test", o->test, "Held-out split; nested cross-validation on --data if absent")
        ->check(CLI::ExistingFile);
    c.app->add_option("--l2", o->grid, "l2 grid")->delimiter(',');
    c.app->add_option("--folds", o->folds, "Outer folds (or l2 folds with --test)");
    c.app->add_option("--inner-folds", o->inner_folds, "Inner folds for l2 selection");
    c.app->add_option("--seed", o->seed, "Fold seed");
    c.app->add_option("--task", o->task, "Task name in the metric rows");
    c.app->add_option("--out", c.out, "Metrics CSV");
    c.action = [this, o, &c] {
      const auto enc = load_encoder(o->enc, manifest_);
      manifest_.seeds["seed"] = o->seed;
      auto load = [&](const std::string& path, std::vector<std::size_t>& labels, std::size_t* unknown) {
        std::vector<std::string> text;
        for (auto& ex : read_classification_dataset(path)) {
          labels.push_back(ex.label);
          text.push_back(std::move(ex.text));
        }
        manifest_.input(path);
        return encode_lines(text, enc->encoder, unknown);
      };
      std::size_t unknown = 0;
      std::vector<std::size_t> y, test_y;
      const Matrix x = load(o->data, y, &unknown);
      Matrix test_x;
      if (!o->test.empty()) test_x = load(o->test, test_y, &unknown);
      warn_unknown(unknown, err_);
      std::size_t classes = 0;
      for (auto* ls : {&y, &test_y})
        for (std::size_t l : *ls) classes = std::max(classes, l + 1);
      const auto grid = grid_or_default(o->grid);
      std::vector<MetricRow> rows;
      if (o->test.empty()) {
        const auto r = nested_cross_validate(x, y, classes, o->folds, o->inner_folds, grid, o->seed);
        rows.push_back({o->task, enc->variant, "accuracy", r.mean_accuracy});
        for (std::size_t f = 0; f < r.fold_accuracy.size(); ++f)
          rows.push_back({o->task, enc->variant, "fold" + std::to_string(f) + "_accuracy", r.fold_accuracy[f]});
      } else {
        const auto cv = cross_validate(x, y, classes, o->folds, grid, o->seed);
        const auto pred = class_predictions(fit_logreg(x, y, classes, cv.best_l2), test_x);
        rows.push_back({o->task, enc->variant, "accuracy", accuracy(pred, test_y)});
        rows.push_back({o->task, enc->variant, "l2", cv.best_l2});
      }
      emit_metrics(rows, c.out, out_, manifest_);
    };
  }

  void eval_rank() {
    auto& c = add("eval-rank", "Image-sentence ranking: train the joint embedding and report retrieval");
    struct O {
      EncoderOptions enc;
      std::string train_images, train_captions, dev_images, dev_captions, test_images, test_captions;
      std::size_t per_image = 5, embed_dim = 1000, k = 50;
      double margin = 0.2;
      bool identity = false;
      RankerConfig cfg;
    };
    auto o = std::make_shared<O>();
    auto* a = c.app;
    o->enc.add(a, false);
    a->add_option("--train-images", o->train_images, "Image features (n, dim header; float32 rows)")
        ->check(CLI::ExistingFile);
    a->add_option("--train-captions", o->train_captions, "Captions: text with --ckpt, else vector file")
        ->check(CLI::ExistingFile);
    a->add_option("--dev-images", o->dev_images)->check(CLI::ExistingFile);
    a->add_option("--dev-captions", o->dev_captions)->check(CLI::ExistingFile);
    a->add_option("--test-images", o->test_images)->required()->check(CLI::ExistingFile);
    a->add_option("--test-captions", o->test_captions)->required()->check(CLI::ExistingFile);
    a->add_option("--per-image", o->per_image, "Consecutive captions per image");
    a->add_option("--embed-dim", o->embed_dim, "Joint space size");
    a->add_option("--margin", o->margin, "Hinge margin");
    a->add_option("--k", o->k, "Contrastive terms per positive and direction");
    a->add_option("--epochs", o->cfg.epochs);
    a->add_option("--batch", o->cfg.batch_size);
    a->add_option("--lr", o->cfg.adam.alpha);
    a->add_option("--seed", o->cfg.seed, "Initialisation, shuffling and contrastive seed");
    a->add_flag("--identity", o->identity, "Score test pairs with identity maps; no training");
    a->add_option("--out", c.out, "Metrics CSV");
    c.action = [this, o, &c] {
      if (o->per_image == 0) throw ConfigError("--per-image must be positive");
      std::unique_ptr<LoadedEncoder> enc;
      if (!o->enc.ckpt.empty()) enc = load_encoder(o->enc, manifest_);
      std::size_t unknown = 0;
      auto images = [&](const std::string& p) {
        manifest_.input(p);
        return read_vectors(p);
      };
      auto captions = [&](const std::string& p, std::size_t n_images) {
        manifest_.input(p);
        Matrix m = enc ? encode_lines(read_lines(p), enc->encoder, &unknown) : read_vectors(p);
        if (m.rows() != n_images * o->per_image) {
          throw ShapeError(p + ": expected " + std::to_string(n_images * o->per_image) + " captions, found " +
                           std::to_string(m.rows()));
        }
        return m;
      };
      auto owner = [&](std::size_t n_caps) {
        std::vector<std::size_t> v(n_caps);
        for (std::size_t i = 0; i < n_caps; ++i) v[i] = i / o->per_image;
        return v;
      };
      const Matrix test_x = images(o->test_images);
      const Matrix test_y = captions(o->test_captions, test_x.rows());
      const std::string variant = enc ? enc->variant : "vectors";
      std::vector<MetricRow> rows;
      RankingModel model;
      if (o->identity) {
        if (test_x.cols() != test_y.cols()) throw ShapeError("--identity needs equal image and caption dimensions");
        model = RankingModel{Matrix::identity(test_x.cols()), Matrix::identity(test_y.cols()), o->margin, o->k};
      } else {
        for (const auto* p : {&o->train_images, &o->train_captions, &o->dev_images, &o->dev_captions})
          if (p->empty())
            throw ConfigError("training needs --train-images/--train-captions/--dev-images/--dev-captions");
        manifest_.seeds["seed"] = o->cfg.seed;
        const Matrix tx = images(o->train_images);
        const Matrix ty = captions(o->train_captions, tx.rows());
        const Matrix dx = images(o->dev_images);
        const Matrix dy = captions(o->dev_captions, dx.rows());
        const Matrix pair_x = select_rows(tx, owner(ty.rows()));
        const auto init = RankingModel::init(o->embed_dim, tx.cols(), ty.cols(), o->margin, o->k, o->cfg.seed);
        const auto r = train_ranker(pair_x, ty, dx, dy, owner(dy.rows()), init, o->cfg);
        model = r.best;
        rows.push_back({"rank", variant, "best_epoch", static_cast<double>(r.best_epoch)});
        rows.push_back({"rank", variant, "dev_mean_r1", r.history[r.best_epoch].dev_mean_r1});
      }
      warn_unknown(unknown, err_);
      const auto report = evaluate_retrieval(score_matrix(test_x, test_y, model), owner(test_y.rows()));
      for (auto [dir, res] : {std::pair{"annotation", &report.annotation}, std::pair{"search", &report.search}}) {
        for (const auto& [k, v] : res->recall_at)
          rows.push_back({"rank", variant, std::string(dir) + "_r" + std::to_string(k), v});
        rows.push_back({"rank", variant, std::string(dir) + "_median_rank", res->median_rank});
      }
      emit_metrics(rows, c.out, out_, manifest_);
    };
  }

  void generate() {
    auto& c = add("generate", "Continue a story one sampled sentence at a time");
    struct O {
      std::string ckpt, seed_sentence;
      std::size_t sentences = 20;
      SampleOptions sample;
      std::uint64_t seed = 1234;
    };
    auto o = std::make_shared<O>();
    c.app->add_option("--ckpt", o->ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    c.app->add_option("--seed-sentence", o->seed_sentence, "First sentence of the story")->required();
    c.app->add_option("--sentences", o->sentences, "Sentences to generate");
    c.app->add_option("--temperature", o->sample.temperature, "Softmax temperature");
    c.app->add_option("--max-len", o->sample.max_len, "Token cap per sentence, eos included");
    c.app->add_flag("--greedy", o->sample.greedy, "Argmax decoding");
    c.app->add_option("--seed", o->seed, "Sampling seed");
    c.app->add_option("--out", c.out, "Also write the sentences here");
    c.action = [this, o, &c] {
      const auto model = load_checkpoint(o->ckpt).model;
      manifest_.input(o->ckpt);
      manifest_.seeds["seed"] = o->seed;
      const IdSequence start = model.vocab.encode(tokenize(o->seed_sentence), model.config.max_tokens);
      std::ostringstream text;
      for (const auto& ids : generate_story(model, start, o->sentences, o->sample, o->seed))
        text << detokenize(model.vocab.decode(ids)) << '\n';
      write_table(text.str(), c.out);
    };
  }

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"Skip-thought sentence encoder toolkit", "skipgru"};
  std::deque<std::pair<std::string, Command>> commands_;
  std::string config_file_;
  Manifest manifest_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    Cli cli(out, err);
    return cli.run(args);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace skipgru::cli
