// End-to-end acceptance checks. One PASS/FAIL line per criterion; exit
// status is nonzero if any criterion fails.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "skipgru/binary_io.hpp"
#include "skipgru/expansion.hpp"
#include "skipgru/probes.hpp"
#include "skipgru/ranking.hpp"
#include "skipgru/trainer.hpp"
#include "test_support.hpp"

using namespace skipgru;
using namespace skipgru::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------- 1

// Losses here are O(10), so entries much below 1e-6 sit under what central
// differences resolve in double precision; they are compared absolutely.
constexpr double kFdEps = 1e-4;
constexpr double kFdFloor = 1e-6;

double encoder_fd(EncoderMode mode, std::uint64_t seed) {
  Rng rng(seed);
  auto model = tiny_model(mode, 8, 3, 4, seed).params.encoder;
  const IdSequence s = random_sentence(2 + rng.index(5), 8, rng);
  const Vector upstream = random_vector(model.output_dim(), rng);
  auto grads = EncoderModel::zeros_like(model);
  encoder_backward(encode_traced(s, model), model, upstream, grads);
  ParamRefs params;
  model.append_refs(params);
  ConstParamRefs analytic;
  grads.append_refs(analytic);
  return finite_diff_check([&] { return dot(encode(s, model), upstream); }, params, analytic, kFdEps, kFdFloor)
      .max_rel_error;
}

double decoder_fd(std::uint64_t seed) {
  Rng rng(seed);
  ConditionalGruParams p{random_gru(4, 3, rng), random_matrix(4, 5, rng, 0.5), random_matrix(4, 5, rng, 0.5),
                         random_matrix(4, 5, rng, 0.5), random_matrix(1, 3, rng, 0.5)};
  Matrix out = random_matrix(8, 4, rng, 0.8), emb = random_matrix(8, 3, rng);
  Matrix h = random_matrix(1, 5, rng);
  const IdSequence target = random_sentence(2 + rng.index(5), 8, rng);
  auto g = ConditionalGruParams::zeros_like(p);
  Matrix gout = Matrix::zeros_like(out), gemb = Matrix::zeros_like(emb);
  const Vector gh =
      decoder_backward(decoder_forward(target, h.row(0), p, out, emb), h.row(0), p, out, emb, g, gout, gemb);
  Matrix gh_mat(1, gh.size());
  std::copy(gh.begin(), gh.end(), gh_mat.data().begin());
  ParamRefs params;
  p.append_refs(params);
  params.insert(params.end(), {&out, &emb, &h});
  ConstParamRefs analytic;
  g.append_refs(analytic);
  analytic.insert(analytic.end(), {&gout, &gemb, &gh_mat});
  auto loss = [&] { return -sentence_log_prob(target, h.row(0), p, out, emb); };
  return finite_diff_check(loss, params, analytic, kFdEps, kFdFloor).max_rel_error;
}

double triple_fd(EncoderMode mode, std::uint64_t seed) {
  Rng rng(seed);
  auto model = tiny_model(mode, 8, 3, 4, seed);
  const SentenceTriple t{random_sentence(2 + rng.index(5), 8, rng), random_sentence(2 + rng.index(5), 8, rng),
                         random_sentence(2 + rng.index(5), 8, rng)};
  auto grads = SkipThoughtParams::zeros_like(model.params);
  triple_loss_grad(model.params, t, grads);
  const auto& grads_ref = grads;
  return finite_diff_check([&] { return triple_loss(model, t); }, model.params.refs(), grads_ref.refs(), kFdEps,
                           kFdFloor)
      .max_rel_error;
}

double logreg_fd(std::uint64_t seed) {
  Rng rng(seed);
  const Matrix x = random_matrix(12, 5, rng);
  Matrix t(12, 3);
  for (std::size_t i = 0; i < 12; ++i) {
    const Vector p = softmax(random_vector(3, rng, 2.0));
    std::copy(p.begin(), p.end(), t.row(i).begin());
  }
  Matrix w = random_matrix(3, 5, rng), b = random_matrix(1, 3, rng);
  Matrix gw;
  Vector gb;
  logreg_objective(x, t, w, b.row(0), 0.3, &gw, &gb);
  Matrix gb_row(1, 3);
  std::copy(gb.begin(), gb.end(), gb_row.data().begin());
  auto loss = [&] { return logreg_objective(x, t, w, b.row(0), 0.3); };
  return finite_diff_check(loss, ParamRefs{&w, &b}, ConstParamRefs{&gw, &gb_row}, kFdEps, kFdFloor).max_rel_error;
}

// Returns a negative value when the drawn instance sits near a hinge kink.
double ranking_fd(std::uint64_t seed) {
  Rng rng(seed);
  auto model = RankingModel::init(3, 4, 3, 0.5, 2, seed);
  for (Matrix* p : model.refs())
    for (double& v : p->data()) v = rng.uniform(-1, 1);
  const Matrix x = random_matrix(5, 4, rng), y = random_matrix(5, 3, rng);
  const auto c = sample_contrastives(5, 2, seed);
  for (std::size_t i = 0; i < 5; ++i) {
    const double pos = pair_score(x.row(i), y.row(i), model);
    for (std::size_t j : c.sentences[i])
      if (std::abs(0.5 - pos + pair_score(x.row(i), y.row(j), model)) < 1e-3) return -1.0;
    for (std::size_t j : c.images[i])
      if (std::abs(0.5 - pos + pair_score(x.row(j), y.row(i), model)) < 1e-3) return -1.0;
  }
  auto grads = RankingModel::zeros_like(model);
  ranking_loss(x, y, model, c, &grads);
  const auto& grads_ref = grads;
  return finite_diff_check([&] { return ranking_loss(x, y, model, c); }, model.refs(), grads_ref.refs(), kFdEps,
                           kFdFloor)
      .max_rel_error;
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  struct Entry {
    std::string name;
    double worst = 0.0;
  };
  std::vector<Entry> entries{{"encoder-uni"}, {"encoder-bi"}, {"decoder"}, {"triple-uni"},
                             {"triple-bi"},   {"logreg"},     {"ranking"}};
  for (std::uint64_t s = 1; s <= 10; ++s) {
    entries[0].worst = std::max(entries[0].worst, encoder_fd(EncoderMode::kUni, s));
    entries[1].worst = std::max(entries[1].worst, encoder_fd(EncoderMode::kBi, s));
    entries[2].worst = std::max(entries[2].worst, decoder_fd(s));
    entries[3].worst = std::max(entries[3].worst, triple_fd(EncoderMode::kUni, s));
    entries[4].worst = std::max(entries[4].worst, triple_fd(EncoderMode::kBi, s));
    entries[5].worst = std::max(entries[5].worst, logreg_fd(s));
  }
  int ranked = 0;
  for (std::uint64_t s = 1; ranked < 10 && s < 200; ++s) {
    const double e = ranking_fd(s);
    if (e < 0) continue;
    entries[6].worst = std::max(entries[6].worst, e);
    ++ranked;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ranked == 10 && secs < 60.0;
  for (const auto& e : entries) {
    o.pass = o.pass && e.worst < 1e-4;
    o.detail += e.name + "=" + num(e.worst) + " ";
  }
  o.detail += "time=" + num(secs) + "s";
  return o;
}

// ---------------------------------------------------------------- 2

Outcome memorization() {
  const auto t0 = Clock::now();
  TrainConfig cfg;
  cfg.embed_dim = 16;
  cfg.hidden_dim = 32;
  cfg.batch_size = 20;
  cfg.adam.alpha = 0.01;
  cfg.seed = 7;
  auto model = SkipThoughtModel::init(tiny_vocab(30), cfg);
  Rng rng(21);
  std::vector<SentenceTriple> triples;
  double baseline = 0.0;
  for (int i = 0; i < 20; ++i) {
    SentenceTriple t{random_sentence(3 + rng.index(4), 30, rng), random_sentence(3 + rng.index(4), 30, rng),
                     random_sentence(3 + rng.index(4), 30, rng)};
    baseline += static_cast<double>(t.prev.size() + t.next.size()) * std::log(30.0);
    triples.push_back(std::move(t));
  }
  baseline /= 20.0;
  auto opt = make_optimizer(model);
  std::vector<const SentenceTriple*> batch;
  for (const auto& t : triples) batch.push_back(&t);
  auto mean_loss = [&] {
    double s = 0.0;
    for (const auto& t : triples) s += triple_loss(model, t);
    return s / 20.0;
  };
  std::size_t steps = 0;
  double loss = mean_loss();
  while (steps < 2000 && loss >= 0.1 * baseline) {
    for (int i = 0; i < 50 && steps < 2000; ++i, ++steps) train_step(model, batch, opt, worker_count());
    loss = mean_loss();
  }
  const double secs = seconds_since(t0);
  return {loss < 0.1 * baseline && secs < 120.0, "mean_loss=" + num(loss) + " baseline=" + num(baseline) +
                                                     " ratio=" + num(loss / baseline) +
                                                     " steps=" + std::to_string(steps) + " time=" + num(secs) + "s"};
}

// ---------------------------------------------------------------- 3

Outcome sick_readout() {
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const double y = 1.0 + 4.0 * i / 499.0;
    worst = std::max(worst, std::abs(distribution_to_score(score_to_distribution(y)) - y));
  }
  Rng rng(12);
  const Vector w = random_vector(8, rng, 2.0);
  auto make = [&](std::size_t n, Matrix& f, std::vector<double>& gold) {
    f = Matrix(n, 8);
    for (std::size_t i = 0; i < n; ++i) {
      const Vector p = pair_features(random_vector(4, rng), random_vector(4, rng));
      std::copy(p.begin(), p.end(), f.row(i).begin());
      gold.push_back(2.0 + sigmoid(dot(w, p) - 1.0));
    }
  };
  Matrix train, test;
  std::vector<double> gold_train, gold_test, pred;
  make(300, train, gold_train);
  make(200, test, gold_test);
  const auto probe = fit_relatedness(train, gold_train, 1e-4);
  for (std::size_t i = 0; i < test.rows(); ++i) pred.push_back(predict_relatedness(probe, test.row(i)));
  const double r = pearson(pred, gold_test);
  return {worst <= 1e-12 && r > 0.95, "roundtrip_max_err=" + num(worst) + " pearson=" + num(r)};
}

// ---------------------------------------------------------------- 4

struct PlantedExpansion {
  SkipThoughtModel model;
  ExternalEmbeddings ext;
  Matrix a;
};

PlantedExpansion plant_expansion(std::size_t shared, std::size_t rnn_dim, std::size_t ext_dim, double noise,
                                 std::uint64_t seed) {
  Rng rng(seed);
  TrainConfig cfg;
  cfg.embed_dim = rnn_dim;
  cfg.hidden_dim = 3;
  PlantedExpansion p{SkipThoughtModel::init(tiny_vocab(shared + 2), cfg), {}, Matrix(rnn_dim, ext_dim)};
  for (double& v : p.a.data()) v = rng.normal();
  std::vector<std::string> tokens;
  Matrix ext(shared, ext_dim);
  for (TokenId id = 2; id < shared + 2; ++id) {
    tokens.push_back(p.model.vocab.token(id));
    for (double& v : ext.row(id - 2)) v = rng.normal();
    Vector y = matvec(p.a, ext.row(id - 2));
    for (double& e : y) e += noise * rng.normal();
    std::copy(y.begin(), y.end(), p.model.params.encoder.embedding.row(id).begin());
  }
  p.ext = ExternalEmbeddings::from_rows(tokens, ext);
  return p;
}

Outcome expansion_recovery() {
  const auto clean = plant_expansion(2 * 10 + 5, 8, 10, 0.0, 3);
  const auto map = fit_expansion(clean.ext, clean.model);
  double worst = 0.0;
  for (std::size_t i = 0; i < map.w.size(); ++i) worst = std::max(worst, std::abs(map.w.data()[i] - clean.a.data()[i]));
  const auto noisy = plant_expansion(400, 8, 10, 0.01, 4);
  const auto noisy_map = fit_expansion(noisy.ext, noisy.model);
  const bool pass = map.shared_count >= 20 && worst < 1e-6 && map.residual_rms < 1e-8 &&
                    noisy_map.residual_rms >= 0.005 && noisy_map.residual_rms <= 0.02;
  return {pass, "shared=" + std::to_string(map.shared_count) + " max_entry_err=" + num(worst) +
                    " residual_rms=" + num(map.residual_rms) + " noisy_residual_rms=" + num(noisy_map.residual_rms)};
}

// ---------------------------------------------------------------- 5

Outcome ranking() {
  Rng rng(23);
  Matrix map(16, 16);
  for (double& v : map.data()) v = rng.uniform(-1, 1);
  auto planted = [&](std::size_t n, Matrix& x, Matrix& y) {
    x = Matrix(n, 16);
    y = Matrix(n, 16);
    for (std::size_t i = 0; i < n; ++i) {
      for (double& v : x.row(i)) v = rng.normal();
      Vector s = matvec(map, x.row(i));
      for (double& v : s) v += 0.1 * rng.normal();
      std::copy(s.begin(), s.end(), y.row(i).begin());
    }
  };
  Matrix tx, ty, dx, dy;
  planted(100, tx, ty);
  planted(100, dx, dy);
  std::vector<std::size_t> owner(100);
  for (std::size_t i = 0; i < 100; ++i) owner[i] = i;
  RankerConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 10;
  cfg.adam.alpha = 0.01;
  const auto r = train_ranker(tx, ty, dx, dy, owner, RankingModel::init(16, 16, 16, 0.2, 5, 3), cfg);
  const auto dev = evaluate_retrieval(score_matrix(dx, dy, r.best), owner);
  const double ann = dev.annotation.recall_at.at(1), search = dev.search.recall_at.at(1);

  const std::size_t n = 1000;
  Matrix scores(n, n);
  Rng noise(17);
  for (double& v : scores.data()) v = noise.uniform(0, 1);
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i;
  const auto random = evaluate_retrieval(scores, diag);
  const double p = 1.0 / n, sd_r1 = 100.0 * std::sqrt(p * (1 - p) / n), sd_med = 0.5 * n / std::sqrt(double(n));
  bool baseline = true;
  for (const auto* d : {&random.annotation, &random.search}) {
    baseline = baseline && std::abs(d->recall_at.at(1) - 100.0 * p) <= 3 * sd_r1 &&
               std::abs(d->median_rank - n / 2.0) <= 3 * sd_med;
  }
  return {ann >= 90.0 && search >= 90.0 && baseline, "dev_r1_annotation=" + num(ann) + " dev_r1_search=" + num(search) +
                                                         " best_epoch=" + std::to_string(r.best_epoch) +
                                                         " random_r1=" + num(random.search.recall_at.at(1)) +
                                                         " random_median=" + num(random.search.median_rank) +
                                                         " (expect " + num(100.0 * p) + ", " + num(n / 2.0) + ")"};
}

// ---------------------------------------------------------------- 6

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("skipgru_accept_" + std::to_string(::getpid()));
  fs::create_directories(root);
  Rng rng(5);
  std::string corpus, sick = "a\tb\tscore\n";
  for (int d = 0; d < 10; ++d) {
    for (int s = 0; s < 5; ++s) {
      std::string line;
      for (std::size_t t = 0, n = 3 + rng.index(4); t < n; ++t) line += "w" + std::to_string(rng.index(40)) + " ";
      corpus += line + ".\n";
      if (s > 0) sick += line + ".\tw1 w2 .\t" + num(1.0 + 4.0 * rng.uniform(0, 1)) + "\n";
    }
    corpus += "\n";
  }
  spit(root / "corpus.txt", corpus);
  spit(root / "sick.tsv", sick);
  Matrix img(20, 6), cap(20, 6);
  for (double& v : img.data()) v = rng.normal();
  for (double& v : cap.data()) v = rng.normal();
  write_vectors(root / "img.bin", img);
  write_vectors(root / "cap.bin", cap);

  const std::vector<std::string> outputs{
      "vocab.txt", "uni.ckpt", "uni.ckpt.metrics.csv", "bi.ckpt", "bi.ckpt.metrics.csv", "vec.bin", "sick.csv",
      "story.txt", "rank.csv"};
  auto run_all = [&](const fs::path& dir, const char* threads) {
    ::setenv("SKIPGRU_THREADS", threads, 1);
    fs::create_directories(dir);
    auto in = [&](const char* f) { return (root / f).string(); };
    auto out = [&](const char* f) { return (dir / f).string(); };
    std::ostringstream sink;
    const std::vector<std::vector<std::string>> commands{
        {"build-vocab", "--corpus", in("corpus.txt"), "--size", "30", "--out", out("vocab.txt")},
        {"train", "--corpus", in("corpus.txt"), "--vocab", out("vocab.txt"), "--embed-dim", "6", "--hidden-dim", "5",
         "--batch", "16", "--steps", "30", "--lr", "0.01", "--out", out("uni.ckpt")},
        {"train", "--corpus", in("corpus.txt"), "--vocab", out("vocab.txt"), "--mode", "bi", "--embed-dim", "6",
         "--hidden-dim", "4", "--batch", "16", "--steps", "30", "--seed", "8", "--out", out("bi.ckpt")},
        {"encode", "--ckpt", out("uni.ckpt"), "--ckpt2", out("bi.ckpt"), "--input", in("corpus.txt"), "--out",
         out("vec.bin")},
        {"eval-sick", "--ckpt", out("uni.ckpt"), "--train", in("sick.tsv"), "--test", in("sick.tsv"), "--folds", "3",
         "--out", out("sick.csv")},
        {"generate", "--ckpt", out("bi.ckpt"), "--seed-sentence", "w1 w2 .", "--sentences", "4", "--seed", "2", "--out",
         out("story.txt")},
        {"eval-rank",
         "--train-images",
         in("img.bin"),
         "--train-captions",
         in("cap.bin"),
         "--dev-images",
         in("img.bin"),
         "--dev-captions",
         in("cap.bin"),
         "--test-images",
         in("img.bin"),
         "--test-captions",
         in("cap.bin"),
         "--per-image",
         "1",
         "--embed-dim",
         "4",
         "--k",
         "3",
         "--batch",
         "8",
         "--epochs",
         "3",
         "--out",
         out("rank.csv")}};
    int failures = 0;
    for (const auto& c : commands) failures += cli::run(c, sink, sink) != 0;
    return failures;
  };
  const int failures = run_all(root / "a", "1") + run_all(root / "b", "3");
  ::unsetenv("SKIPGRU_THREADS");
  std::size_t identical = 0;
  std::string differing;
  for (const auto& f : outputs) {
    const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    if (!a.empty() && a == b) {
      ++identical;
    } else {
      differing += " " + f;
    }
  }
  fs::remove_all(root);
  return {failures == 0 && identical == outputs.size(),
          "command_failures=" + std::to_string(failures) + " identical=" + std::to_string(identical) + "/" +
              std::to_string(outputs.size()) + (differing.empty() ? "" : " differing:" + differing) +
              " (threads 1 vs 3)"};
}

// ---------------------------------------------------------------- 7

Outcome bidirectional() {
  bool pass = true;
  std::size_t worst_dim_mismatch = 0;
  const auto bi = tiny_model(EncoderMode::kBi, 8, 3, 4, 41);
  EncoderModel uni_half{EncoderMode::kUni, bi.params.encoder.embedding, bi.params.encoder.forward, {}};
  const auto uni = tiny_model(EncoderMode::kUni, 8, 3, 5, 42);
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const IdSequence s = random_sentence(1 + rng.index(6), 8, rng);
    const Vector v = encode(s, bi.params.encoder);
    const Vector f = encode(s, uni_half);
    pass = pass && v.size() == 8 && std::equal(f.begin(), f.end(), v.begin());
    const Vector c = encode_combined(s, uni, bi);
    if (c.size() != 5 + 8) worst_dim_mismatch = c.size();
    pass = pass && c.size() == 5 + 8;
  }
  TextEncoder combined;
  combined.add(uni);
  combined.add(bi);
  pass = pass && combined.dim() == 13 && worst_dim_mismatch == 0;
  return {pass, "bi_dim=" + std::to_string(bi.params.encoder.output_dim()) + " (2x4) forward_half_exact=" +
                    (pass ? "yes" : "no") + " combine_dim=" + std::to_string(combined.dim()) + " (5+8)"};
}

// ---------------------------------------------------------------- 8

Outcome generation() {
  std::size_t runs_ok = 0, sentences = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto model = tiny_model(seed % 2 ? EncoderMode::kBi : EncoderMode::kUni, 30, 6, 5, 100 + seed);
    SampleOptions opt;
    opt.temperature = 0.5 + 0.05 * static_cast<double>(seed % 20);
    opt.max_len = 12;
    const std::size_t want = 1 + seed % 10;
    bool ok = true;
    try {
      Rng rng(seed);
      const auto story = generate_story(model, random_sentence(4, 30, rng), want, opt, seed);
      ok = story.size() == want;
      for (const auto& s : story) {
        ok = ok && !s.empty() && s.back() == model.vocab.eos_id() && s.size() <= opt.max_len;
        ok = ok && std::count(s.begin(), s.end(), model.vocab.eos_id()) == 1;
        for (TokenId id : s) ok = ok && id < model.vocab.size();
      }
      sentences += story.size();
    } catch (const std::exception&) {
      ok = false;
    }
    runs_ok += ok;
  }
  return {runs_ok == 100, "runs_ok=" + std::to_string(runs_ok) + "/100 sentences=" + std::to_string(sentences)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient checks", gradient_checks},
      {"memorization", memorization},
      {"relatedness readout", sick_readout},
      {"expansion map recovery", expansion_recovery},
      {"ranking", ranking},
      {"determinism", determinism},
      {"bidirectional contract", bidirectional},
      {"generation", generation},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
