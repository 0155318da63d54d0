#include "skipgru/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include "json.hpp"
#include <sstream>
#include <unordered_set>

#include "skipgru/error.hpp"

namespace skipgru {

namespace {

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // overlong forms, surrogates, out of range
    static constexpr std::array<std::uint32_t, 4> kMin = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Letters, digits and every byte of a multi-byte UTF-8 sequence.
bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

bool is_clitic(std::string_view s) {
  return s == "s" || s == "re" || s == "ve" || s == "ll" || s == "d" || s == "m";
}

void push_word(std::string word, std::vector<std::string>& out) {
  if (word.size() > 3 && word.ends_with("n't")) {
    out.push_back(word.substr(0, word.size() - 3));
    out.emplace_back("n't");
    return;
  }
  const auto apos = word.rfind('\'');
  if (apos != std::string::npos && apos > 0 && is_clitic(std::string_view(word).substr(apos + 1))) {
    out.push_back(word.substr(0, apos));
    out.push_back(word.substr(apos));
    return;
  }
  out.push_back(std::move(word));
}

void tokenize_chunk(std::string_view chunk, std::vector<std::string>& out) {
  std::size_t i = 0;
  while (i < chunk.size()) {
    const char c = chunk[i];
    if (is_word_char(c)) {
      std::size_t j = i + 1;
      while (j < chunk.size()) {
        if (is_word_char(chunk[j])) {
          ++j;
        } else if ((chunk[j] == '\'' || chunk[j] == '-') && j + 1 < chunk.size() &&
                   is_word_char(chunk[j + 1])) {
          j += 2;
        } else {
          break;
        }
      }
      push_word(std::string(chunk.substr(i, j - i)), out);
      i = j;
      continue;
    }
    if (c == '\'') {
      std::size_t j = i + 1;
      while (j < chunk.size() && is_word_char(chunk[j])) ++j;
      if (j > i + 1 && is_clitic(chunk.substr(i + 1, j - i - 1))) {
        out.emplace_back(chunk.substr(i, j - i));
        i = j;
        continue;
      }
    }
    // Runs of one punctuation character ("...", "--", "''") stay together.
    std::size_t j = i + 1;
    while (j < chunk.size() && chunk[j] == c) ++j;
    out.emplace_back(chunk.substr(i, j - i));
    i = j;
  }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  if (!valid_utf8(text)) throw InputError("tokenize: invalid UTF-8 input");
  std::string lowered(text);
  for (char& c : lowered) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && is_space(lowered[i])) ++i;
    std::size_t j = i;
    while (j < lowered.size() && !is_space(lowered[j])) ++j;
    if (j > i) tokenize_chunk(std::string_view(lowered).substr(i, j - i), out);
    i = j;
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& regular) {
  Vocabulary v;
  v.id_to_token_.reserve(regular.size() + 2);
  v.id_to_token_.emplace_back(kEosToken);
  v.id_to_token_.emplace_back(kUnkToken);
  v.id_to_token_.insert(v.id_to_token_.end(), regular.begin(), regular.end());
  for (std::size_t i = 0; i < v.id_to_token_.size(); ++i) {
    if (!v.token_to_id_.emplace(v.id_to_token_[i], static_cast<TokenId>(i)).second) {
      throw InputError("vocabulary: duplicate token '" + v.id_to_token_[i] + "'");
    }
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < 2 || lines[0] != kEosToken || lines[1] != kUnkToken) {
    throw InputError("vocabulary " + path.string() + ": first lines must be <eos> and <unk>");
  }
  return from_tokens({lines.begin() + 2, lines.end()});
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& t : id_to_token_) out << t << '\n';
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.contains(std::string(token));
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= id_to_token_.size()) throw RangeError("token id " + std::to_string(id) + " out of range");
  return id_to_token_[id];
}

IdSequence Vocabulary::encode(const std::vector<std::string>& tokens, std::size_t max_tokens) const {
  IdSequence ids;
  const std::size_t n = std::min(tokens.size(), max_tokens);
  ids.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(id(tokens[i]));
  ids.push_back(kEos);
  return ids;
}

std::vector<std::string> Vocabulary::decode(const IdSequence& ids) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == kEos && i + 1 == ids.size()) break;
    out.push_back(token(ids[i]));
  }
  return out;
}

std::vector<Document> parse_corpus(std::string_view text) {
  std::vector<Document> docs;
  Document current;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const bool blank = std::all_of(line.begin(), line.end(), is_space);
    if (blank) {
      if (!current.empty()) docs.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(line);
    }
  }
  if (!current.empty()) docs.push_back(std::move(current));
  return docs;
}

std::vector<Document> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str());
}

Vocabulary build_vocab(const std::vector<Document>& corpus, std::size_t max_size) {
  if (max_size < 3) throw ConfigError("build_vocab: max_size must be at least 3");
  struct Entry {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Entry> counts;
  std::vector<std::string> order;
  for (const auto& doc : corpus) {
    for (const auto& sentence : doc) {
      for (auto& tok : tokenize(sentence)) {
        auto [it, inserted] = counts.try_emplace(tok, Entry{0, order.size()});
        if (inserted) order.push_back(tok);
        ++it->second.count;
      }
    }
  }
  if (order.empty()) throw InputError("build_vocab: empty corpus");
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return counts.at(a).count > counts.at(b).count;
  });
  if (order.size() > max_size - 2) order.resize(max_size - 2);
  return Vocabulary::from_tokens(order);
}

TripleSet make_triples(const std::vector<Document>& corpus, const Vocabulary& vocab,
                       std::size_t max_tokens) {
  TripleSet out;
  for (const auto& doc : corpus) {
    if (doc.size() < 3) {
      ++out.skipped_documents;
      continue;
    }
    std::vector<IdSequence> encoded;
    encoded.reserve(doc.size());
    for (const auto& s : doc) encoded.push_back(vocab.encode(tokenize(s), max_tokens));
    for (std::size_t i = 1; i + 1 < encoded.size(); ++i) {
      out.triples.push_back({encoded[i - 1], encoded[i], encoded[i + 1]});
    }
  }
  return out;
}

std::string CorpusStats::to_json() const {
  nlohmann::ordered_json j;
  j["sentences"] = sentences;
  j["words"] = words;
  j["unique_words"] = unique_words;
  j["mean_words_per_sentence"] = mean_words_per_sentence;
  return j.dump();
}

CorpusStats corpus_stats(const std::vector<Document>& corpus) {
  CorpusStats stats;
  std::unordered_set<std::string> unique;
  for (const auto& doc : corpus) {
    for (const auto& sentence : doc) {
      auto toks = tokenize(sentence);
      ++stats.sentences;
      stats.words += toks.size();
      for (auto& t : toks) unique.insert(std::move(t));
    }
  }
  stats.unique_words = unique.size();
  if (stats.sentences > 0) {
    stats.mean_words_per_sentence =
        static_cast<double>(stats.words) / static_cast<double>(stats.sentences);
  }
  return stats;
}

}  // namespace skipgru
