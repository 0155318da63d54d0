#include <algorithm>
#include <map>
#include <unordered_map>

#include "doctest.h"
#include "skipgru/corpus.hpp"
#include "skipgru/error.hpp"
#include "skipgru/rng.hpp"

using namespace skipgru;
using Tokens = std::vector<std::string>;

TEST_CASE("tokenize") {
  CHECK(tokenize("I got back home.") == Tokens{"i", "got", "back", "home", "."});
  CHECK(tokenize("").empty());
  CHECK(tokenize("   \t ").empty());
  CHECK(tokenize("don't stop") == Tokens{"do", "n't", "stop"});
  CHECK(tokenize("I can't, he'll see.") == Tokens{"i", "ca", "n't", ",", "he", "'ll", "see", "."});
  CHECK(tokenize("\"Wait...\" she said") == Tokens{"\"", "wait", "...", "\"", "she", "said"});
  CHECK(tokenize("double-checking the dogs' bones") ==
        Tokens{"double-checking", "the", "dogs", "'", "bones"});
  CHECK(tokenize("Café  déjà vu") == Tokens{"café", "déjà", "vu"});
  CHECK_THROWS_AS(tokenize("bad \xff byte"), InputError);
  CHECK_THROWS_AS(tokenize("cut \xe2\x82"), InputError);
}

TEST_CASE("tokenize is stable under detokenize") {
  const std::vector<std::string> samples = {
      "`` i 'll take care of it , '' goodman said , taking the phonebook .",
      "He hadn't been following her career -- she'd noticed!!",
      "it was n't as if i did n't open a vein .",
      "O'Neil's rock'n'roll 3.5 (really?) 'em",
  };
  for (const auto& s : samples) {
    const auto once = tokenize(s);
    CHECK(tokenize(detokenize(once)) == once);
  }
}

TEST_CASE("build_vocab") {
  SUBCASE("all tokens fit") {
    const auto v = build_vocab({{"a b", "a c"}}, 5);
    CHECK(v.tokens() == Tokens{"<eos>", "<unk>", "a", "b", "c"});
  }
  SUBCASE("frequency cutoff") {
    const auto v = build_vocab({{"a a b"}}, 3);
    CHECK(v.size() == 3);
    CHECK(v.id("a") == 2);
    CHECK(v.id("b") == v.unk_id());
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(build_vocab({}, 10), InputError);
    CHECK_THROWS_AS(build_vocab({{"a"}}, 2), ConfigError);
  }
}

TEST_CASE("build_vocab matches a counting oracle") {
  Rng rng(11);
  std::vector<Document> corpus(1);
  for (int i = 0; i < 1000; ++i) {
    std::string s;
    const std::size_t len = 1 + rng.index(8);
    for (std::size_t k = 0; k < len; ++k) {
      // Zipf-ish skew so the cutoff is meaningful.
      const std::size_t w = rng.index(1 + rng.index(120));
      s += "t" + std::to_string(w) + " ";
    }
    corpus[0].push_back(s);
  }
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> seen;  // count, first
  std::size_t order = 0;
  for (const auto& s : corpus[0])
    for (const auto& t : tokenize(s)) {
      auto [it, inserted] = seen.try_emplace(t, 0, order);
      if (inserted) ++order;
      ++it->second.first;
    }
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked(seen.begin(), seen.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  const auto v = build_vocab(corpus, 50);
  REQUIRE(v.size() == 50);
  for (std::size_t i = 0; i < 48; ++i) CHECK(v.token(static_cast<TokenId>(i + 2)) == ranked[i].first);
}

TEST_CASE("vocabulary invariants and round trip") {
  const auto v = build_vocab({{"the cat sat on the mat .", "the dog did n't ."}}, 100);
  for (TokenId id = 0; id < v.size(); ++id) CHECK(v.id(v.token(id)) == id);
  CHECK(v.eos_id() != v.unk_id());
  const auto ids = v.encode(tokenize("the dog sat on the mat ."));
  CHECK(ids.back() == v.eos_id());
  CHECK(std::count(ids.begin(), ids.end(), v.unk_id()) == 0);
  CHECK(v.encode(tokenize(detokenize(v.decode(ids)))) == ids);
  CHECK_THROWS_AS(v.token(static_cast<TokenId>(v.size())), RangeError);
  CHECK(v.encode({"a", "b", "c"}, 2).size() == 3);  // truncated before eos
}

TEST_CASE("corpus parsing and triples") {
  const auto docs = parse_corpus("A .\nB .\nC .\n\nD .\nE .\nF .\nG .\n\n\nH .\nI .\n");
  REQUIRE(docs.size() == 3);
  CHECK(docs[0].size() == 3);
  CHECK(docs[1].size() == 4);
  const auto vocab = build_vocab(docs, 100);
  const auto set = make_triples(docs, vocab);
  CHECK(set.triples.size() == 1 + 2);
  CHECK(set.skipped_documents == 1);
  CHECK(set.triples[0].prev == vocab.encode({"a", "."}));
  CHECK(set.triples[0].curr == vocab.encode({"b", "."}));
  CHECK(set.triples[0].next == vocab.encode({"c", "."}));
  CHECK(set.triples[1].prev == vocab.encode({"d", "."}));
  CHECK(set.triples[2].next == vocab.encode({"g", "."}));
}

TEST_CASE("triple count equals the interior-sentence enumeration") {
  Rng rng(4);
  std::vector<Document> docs;
  std::size_t expected = 0;
  for (int d = 0; d < 30; ++d) {
    Document doc;
    const std::size_t n = rng.index(7);
    for (std::size_t i = 0; i < n; ++i) doc.push_back("s" + std::to_string(d) + "_" + std::to_string(i));
    if (doc.empty()) continue;
    expected += n >= 2 ? n - 2 : 0;
    docs.push_back(doc);
  }
  const auto vocab = build_vocab(docs, 1000);
  const auto set = make_triples(docs, vocab);
  CHECK(set.triples.size() == expected);
  for (const auto& t : set.triples) {
    // Sentence ids encode the document index; no triple crosses documents.
    const std::string a = vocab.token(t.prev[0]), c = vocab.token(t.next[0]);
    CHECK(a.substr(0, a.find('_')) == c.substr(0, c.find('_')));
  }
}

TEST_CASE("corpus_stats") {
  const auto s = corpus_stats({{"a b .", "c ."}});
  CHECK(s.sentences == 2);
  CHECK(s.words == 5);
  CHECK(s.unique_words == 4);
  CHECK(s.mean_words_per_sentence == 2.5);
  CHECK(s.to_json() == R"({"sentences":2,"words":5,"unique_words":4,"mean_words_per_sentence":2.5})");
  const auto empty = corpus_stats({});
  CHECK(empty.sentences == 0);
  CHECK(empty.mean_words_per_sentence == 0.0);
}
