#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "skipgru/binary_io.hpp"
#include "skipgru/rng.hpp"
#include "skipgru/trainer.hpp"

namespace fs = std::filesystem;
using namespace skipgru;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Scratch directory holding a toy corpus over 60 distinct words.
struct Workspace {
  fs::path dir;

  Workspace() {
    dir = fs::temp_directory_path() / ("skipgru_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    Rng rng(4);
    std::string corpus;
    for (int d = 0; d < 12; ++d) {
      for (int s = 0; s < 5; ++s) {
        const std::size_t len = 3 + rng.index(4);
        for (std::size_t t = 0; t < len; ++t) corpus += "w" + std::to_string(rng.index(60)) + " ";
        corpus += ".\n";
      }
      corpus += "\n";
    }
    spit(path("corpus.txt"), corpus);
    spit(path("sents.txt"), "w1 w2 w3 .\nw4 w5 .\nzebra w6 .\n");
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  std::string vocab() {
    const std::string v = path("vocab.txt");
    if (!fs::exists(v))
      REQUIRE(invoke({"build-vocab", "--corpus", path("corpus.txt"), "--size", "50", "--out", v}).code == 0);
    return v;
  }

  // Toy-sized defaults; flags in extra replace them.
  Result train(const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--corpus", path("corpus.txt"), "--vocab", vocab(), "--out", path(out)};
    const std::vector<std::pair<std::string, std::string>> defaults{
        {"--embed-dim", "6"}, {"--hidden-dim", "5"}, {"--batch", "8"}, {"--lr", "0.01"}};
    for (const auto& [flag, value] : defaults) {
      if (std::find(extra.begin(), extra.end(), flag) == extra.end()) args.insert(args.end(), {flag, value});
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return invoke(args);
  }
};

}  // namespace

TEST_CASE("build-vocab") {
  Workspace ws;
  const auto v = ws.vocab();
  const auto text = slurp(v);
  CHECK(count_lines(text) == 50);
  CHECK(text.rfind("<eos>\n<unk>\n", 0) == 0);
  CHECK(fs::exists(v + ".manifest.json"));

  REQUIRE(invoke({"build-vocab", "--corpus", ws.path("corpus.txt"), "--size", "3", "--out", ws.path("v3.txt")}).code ==
          0);
  CHECK(count_lines(slurp(ws.path("v3.txt"))) == 3);

  REQUIRE(
      invoke({"build-vocab", "--corpus", ws.path("corpus.txt"), "--size", "50", "--out", ws.path("again.txt")}).code ==
      0);
  CHECK(slurp(ws.path("again.txt")) == text);

  const auto missing = invoke({"build-vocab", "--corpus", ws.path("nope.txt"), "--out", ws.path("x.txt")});
  CHECK(missing.code == cli::kExitUsage);
  CHECK(!missing.err.empty());
}

TEST_CASE("train") {
  Workspace ws;
  SUBCASE("metrics and loss decrease") {
    REQUIRE(ws.train("m.ckpt", {"--steps", "200"}).code == 0);
    std::istringstream csv(slurp(ws.path("m.ckpt.metrics.csv")));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "step,loss,grad_norm,clipped");
    std::vector<double> loss;
    while (std::getline(csv, line)) loss.push_back(std::stod(line.substr(line.find(',') + 1)));
    REQUIRE(loss.size() == 200);
    CHECK(loss.back() < loss.front());

    const auto manifest = nlohmann::json::parse(slurp(ws.path("m.ckpt.manifest.json")));
    CHECK(manifest["command"] == "train");
    CHECK(manifest["config"]["steps"] == "200");
    CHECK(manifest["seeds"]["seed"] == 1234);
    CHECK(manifest["outputs"][ws.path("m.ckpt")] == file_digest(ws.path("m.ckpt")));
    CHECK(manifest["inputs"].contains(ws.path("corpus.txt")));
  }
  SUBCASE("zero steps saves the initial model") {
    REQUIRE(ws.train("z.ckpt", {"--steps", "0", "--seed", "9"}).code == 0);
    const auto ck = load_checkpoint(ws.path("z.ckpt"));
    TrainConfig cfg = ck.model.config;
    const auto fresh = SkipThoughtModel::init(Vocabulary::load(ws.vocab()), cfg);
    CHECK(serialize_checkpoint(ck.model, ck.opt) == serialize_checkpoint(fresh, make_optimizer(fresh)));
    CHECK(count_lines(slurp(ws.path("z.ckpt.metrics.csv"))) == 1);
  }
  SUBCASE("same seed, same bytes") {
    REQUIRE(ws.train("a.ckpt", {"--steps", "20", "--mode", "bi"}).code == 0);
    REQUIRE(ws.train("b.ckpt", {"--steps", "20", "--mode", "bi"}).code == 0);
    CHECK(slurp(ws.path("a.ckpt")) == slurp(ws.path("b.ckpt")));
    CHECK(slurp(ws.path("a.ckpt.metrics.csv")) == slurp(ws.path("b.ckpt.metrics.csv")));
  }
  SUBCASE("resume matches an uninterrupted run") {
    REQUIRE(ws.train("full.ckpt", {"--steps", "12"}).code == 0);
    REQUIRE(ws.train("half.ckpt", {"--steps", "6"}).code == 0);
    REQUIRE(invoke({"train", "--corpus", ws.path("corpus.txt"), "--resume", ws.path("half.ckpt"), "--steps", "12",
                    "--out", ws.path("resumed.ckpt")})
                .code == 0);
    CHECK(slurp(ws.path("full.ckpt")) == slurp(ws.path("resumed.ckpt")));
  }
  SUBCASE("config file, flags override") {
    spit(ws.path("run.cfg"), "# toy\nsteps = 7\nmode=bi\nseed=3\n");
    REQUIRE(ws.train("c.ckpt", {"--config", ws.path("run.cfg"), "--seed", "4"}).code == 0);
    const auto cfg = load_checkpoint(ws.path("c.ckpt")).model.config;
    CHECK(cfg.max_steps == 7);
    CHECK(cfg.mode == EncoderMode::kBi);
    CHECK(cfg.seed == 4);
    spit(ws.path("bad.cfg"), "no_such_flag=1\n");
    CHECK(ws.train("d.ckpt", {"--config", ws.path("bad.cfg")}).code == cli::kExitUsage);
  }
  SUBCASE("error exit codes") {
    CHECK(ws.train("e.ckpt", {"--steps", "3", "--batch", "0"}).code == cli::kExitUsage);
    CHECK(ws.train("e.ckpt", {"--steps", "3", "--mode", "sideways"}).code == cli::kExitUsage);
    const auto nan = ws.train("n.ckpt", {"--steps", "5", "--lr", "1e300"});
    CHECK(nan.code == cli::kExitNumeric);
    CHECK(nan.err.find("non-finite") != std::string::npos);
  }
}

TEST_CASE("encode") {
  Workspace ws;
  REQUIRE(ws.train("u.ckpt", {"--steps", "5"}).code == 0);
  REQUIRE(ws.train("b.ckpt", {"--steps", "5", "--mode", "bi"}).code == 0);

  const auto r =
      invoke({"encode", "--ckpt", ws.path("u.ckpt"), "--input", ws.path("sents.txt"), "--out", ws.path("u.bin")});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("fell back to <unk>") != std::string::npos);
  const Matrix u = read_vectors(ws.path("u.bin"));
  CHECK(u.rows() == 3);
  CHECK(u.cols() == 5);

  REQUIRE(invoke({"encode", "--ckpt", ws.path("u.ckpt"), "--input", ws.path("sents.txt"), "--out", ws.path("u2.bin")})
              .code == 0);
  CHECK(slurp(ws.path("u.bin")) == slurp(ws.path("u2.bin")));

  REQUIRE(invoke({"encode", "--ckpt", ws.path("u.ckpt"), "--ckpt2", ws.path("b.ckpt"), "--input", ws.path("sents.txt"),
                  "--out", ws.path("c.bin")})
              .code == 0);
  CHECK(read_vectors(ws.path("c.bin")).cols() == 5 + 10);

  REQUIRE(invoke({"encode", "--ckpt", ws.path("u.ckpt"), "--input", ws.path("sents.txt"), "--format", "text", "--out",
                  ws.path("u.txt")})
              .code == 0);
  CHECK(slurp(ws.path("u.txt")).rfind("3 5\n", 0) == 0);

  const std::string bytes = slurp(ws.path("u.ckpt"));
  spit(ws.path("cut.ckpt"), bytes.substr(0, bytes.size() / 2));
  CHECK(invoke({"encode", "--ckpt", ws.path("cut.ckpt"), "--input", ws.path("sents.txt"), "--out", ws.path("x.bin")})
            .code == cli::kExitIo);
}

TEST_CASE("generate") {
  Workspace ws;
  REQUIRE(ws.train("g.ckpt", {"--steps", "5"}).code == 0);
  const std::vector<std::string> base{"generate", "--ckpt",     ws.path("g.ckpt"),         "--seed-sentence",
                                      "w1 w2 .",  "--manifest", ws.path("g.manifest.json")};
  auto one = base;
  one.insert(one.end(), {"--sentences", "1", "--seed", "3"});
  const auto r = invoke(one);
  REQUIRE(r.code == 0);
  CHECK(count_lines(r.out) == 1);
  CHECK(fs::exists(ws.path("g.manifest.json")));
  auto five = base;
  five.insert(five.end(), {"--sentences", "5", "--seed", "3", "--temperature", "0.7"});
  const auto a = invoke(five), b = invoke(five);
  CHECK(count_lines(a.out) == 5);
  CHECK(a.out == b.out);
}

TEST_CASE("expand and neighbours") {
  Workspace ws;
  REQUIRE(ws.train("m.ckpt", {"--steps", "5"}).code == 0);
  Rng rng(1);
  std::string ext = "62 4\n";
  for (int i = 0; i < 60; ++i) {
    ext += "w" + std::to_string(i);
    for (int d = 0; d < 4; ++d) ext += " " + std::to_string(rng.uniform(-1, 1));
    ext += "\n";
  }
  ext += "zebra 0.1 0.2 0.3 0.4\nnew_york 1 1 1 1\n";
  spit(ws.path("ext.txt"), ext);
  const auto r =
      invoke({"expand", "--ckpt", ws.path("m.ckpt"), "--embeddings", ws.path("ext.txt"), "--out", ws.path("map.bin")});
  REQUIRE(r.code == 0);
  const auto summary = nlohmann::json::parse(r.out);
  CHECK(summary["rank"] == 4);
  CHECK(summary["shared_words"].get<int>() >= 40);

  const auto nn = invoke({"nn-word", "--ckpt", ws.path("m.ckpt"), "--embeddings", ws.path("ext.txt"), "--expansion",
                          ws.path("map.bin"), "--query", "zebra", "--k", "3", "--out", ws.path("nn.tsv")});
  REQUIRE(nn.code == 0);
  CHECK(count_lines(nn.out) == 4);
  CHECK(invoke({"nn-word", "--ckpt", ws.path("m.ckpt"), "--query", "zebra", "--out", ws.path("nn2.tsv")}).code ==
        cli::kExitUsage);

  // Expanded vocabulary removes the unk fallback.
  const auto enc = invoke({"encode", "--ckpt", ws.path("m.ckpt"), "--embeddings", ws.path("ext.txt"), "--expansion",
                           ws.path("map.bin"), "--input", ws.path("sents.txt"), "--out", ws.path("e.bin")});
  REQUIRE(enc.code == 0);
  CHECK(enc.err.empty());

  const auto ns = invoke({"nn-sent", "--ckpt", ws.path("m.ckpt"), "--bank", ws.path("sents.txt"), "--query",
                          "w1 w2 w3 .", "--k", "1", "--out", ws.path("ns.tsv")});
  REQUIRE(ns.code == 0);
  CHECK(ns.out.find("w1 w2 w3 .\t1\t1\tw1 w2 w3 .") != std::string::npos);
}

TEST_CASE("evaluation commands") {
  Workspace ws;
  REQUIRE(ws.train("m.ckpt", {"--steps", "5"}).code == 0);
  SUBCASE("relatedness on constant gold") {
    spit(ws.path("same.tsv"), "a\tb\tscore\nw1 w2 .\tw1 w2 .\t5\nw3 .\tw3 .\t5\nw4 w5 w6 .\tw4 w5 w6 .\t5\n");
    const auto r = invoke({"eval-sick", "--ckpt", ws.path("m.ckpt"), "--train", ws.path("same.tsv"), "--test",
                           ws.path("same.tsv"), "--folds", "3", "--out", ws.path("sick.csv")});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("sick,uni,pearson,nan") != std::string::npos);
    CHECK(r.err.find("undefined") != std::string::npos);
    const auto mse_at = r.out.find("sick,uni,mse,");
    REQUIRE(mse_at != std::string::npos);
    CHECK(std::stod(r.out.substr(mse_at + 13)) < 1e-3);
    CHECK(slurp(ws.path("sick.csv")) == r.out);
  }
  SUBCASE("retrieval with identity scores") {
    Matrix eye = Matrix::identity(5);
    write_vectors(ws.path("eye.bin"), eye);
    const auto r = invoke({"eval-rank", "--test-images", ws.path("eye.bin"), "--test-captions", ws.path("eye.bin"),
                           "--per-image", "1", "--identity", "--out", ws.path("rank.csv")});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("rank,vectors,annotation_r1,100\n") != std::string::npos);
    CHECK(r.out.find("rank,vectors,search_median_rank,1\n") != std::string::npos);
  }
  SUBCASE("paraphrase and classification") {
    std::string pairs = "a\tb\tlabel\n", labelled;
    for (int i = 0; i < 20; ++i) {
      const std::string s = "w" + std::to_string(i) + " w" + std::to_string(i + 1) + " .";
      pairs += s + "\t" + (i % 2 ? s : "w50 w51 w52 .") + "\t" + std::to_string(i % 2) + "\n";
      labelled += std::to_string(i % 2) + "\t" + s + "\n";
    }
    spit(ws.path("pairs.tsv"), pairs);
    spit(ws.path("cls.txt"), labelled);
    const auto p = invoke({"eval-paraphrase", "--ckpt", ws.path("m.ckpt"), "--train", ws.path("pairs.tsv"), "--test",
                           ws.path("pairs.tsv"), "--folds", "4", "--out", ws.path("p.csv")});
    REQUIRE(p.code == 0);
    CHECK(p.out.find("paraphrase,uni,f1,") != std::string::npos);
    const auto c = invoke({"eval-classify", "--ckpt", ws.path("m.ckpt"), "--data", ws.path("cls.txt"), "--folds", "4",
                           "--inner-folds", "2", "--l2", "0.01,1", "--out", ws.path("c.csv")});
    REQUIRE(c.code == 0);
    CHECK(c.out.find("classify,uni,accuracy,") != std::string::npos);
    const auto again = invoke({"eval-classify", "--ckpt", ws.path("m.ckpt"), "--data", ws.path("cls.txt"), "--folds",
                               "4", "--inner-folds", "2", "--l2", "0.01,1", "--out", ws.path("c2.csv")});
    CHECK(slurp(ws.path("c.csv")) == slurp(ws.path("c2.csv")));
    // Too few examples per class for the folds.
    CHECK(invoke({"eval-classify", "--ckpt", ws.path("m.ckpt"), "--data", ws.path("cls.txt"), "--folds", "11", "--out",
                  ws.path("c3.csv")})
              .code == cli::kExitUsage);
  }
}
