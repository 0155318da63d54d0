#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace skipgru {

using TokenId = std::uint32_t;
using IdSequence = std::vector<TokenId>;

/// Lowercases ASCII, splits punctuation and English contractions
/// ("don't" -> "do" "n't"). Throws InputError on invalid UTF-8.
std::vector<std::string> tokenize(std::string_view text);

/// Joins tokens with single spaces; tokenize(detokenize(t)) == t for any
/// output t of tokenize.
std::string detokenize(const std::vector<std::string>& tokens);

inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kUnkToken = "<unk>";

class Vocabulary {
 public:
  static constexpr TokenId kEos = 0;
  static constexpr TokenId kUnk = 1;

  /// Reserved tokens first, then the given tokens in order. Throws
  /// InputError on duplicates or if a reserved token is repeated.
  static Vocabulary from_tokens(const std::vector<std::string>& regular);
  /// Reads one token per line (line number = id); the first two lines must
  /// be the reserved eos and unk tokens.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return id_to_token_.size(); }
  TokenId eos_id() const { return kEos; }
  TokenId unk_id() const { return kUnk; }

  bool contains(std::string_view token) const;
  /// Unknown tokens map to unk_id.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  /// Maps tokens to ids, truncates to max_tokens and appends eos.
  IdSequence encode(const std::vector<std::string>& tokens, std::size_t max_tokens = 100) const;
  /// Tokens for ids, dropping the terminal eos.
  std::vector<std::string> decode(const IdSequence& ids) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// A document is an ordered list of raw sentences.
using Document = std::vector<std::string>;

/// One sentence per line, blank line between documents.
std::vector<Document> read_corpus(const std::filesystem::path& path);
std::vector<Document> parse_corpus(std::string_view text);

/// Keeps the max_size - 2 most frequent tokens (ties by first occurrence)
/// plus eos and unk.
Vocabulary build_vocab(const std::vector<Document>& corpus, std::size_t max_size);

struct SentenceTriple {
  IdSequence prev;
  IdSequence curr;
  IdSequence next;
};

struct TripleSet {
  std::vector<SentenceTriple> triples;
  std::size_t skipped_documents = 0;  // documents with fewer than three sentences
};

TripleSet make_triples(const std::vector<Document>& corpus, const Vocabulary& vocab,
                       std::size_t max_tokens = 100);

struct CorpusStats {
  std::size_t sentences = 0;
  std::size_t words = 0;
  std::size_t unique_words = 0;
  double mean_words_per_sentence = 0.0;

  /// Single-line JSON record.
  std::string to_json() const;
};

CorpusStats corpus_stats(const std::vector<Document>& corpus);

}  // namespace skipgru
