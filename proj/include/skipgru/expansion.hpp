#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "skipgru/model.hpp"

namespace skipgru {

/// Word vectors from an external model, read from the textual interchange
/// format: a "n_tokens dim" header, then "token v1 ... vdim" per line.
struct ExternalEmbeddings {
  std::vector<std::string> tokens;
  Matrix vectors;  // n_tokens x dim
  std::size_t skipped_phrases = 0;

  static ExternalEmbeddings parse(std::istream& in);
  static ExternalEmbeddings load(const std::filesystem::path& path);
  /// Throws InputError on duplicate tokens, ragged or non-finite rows.
  static ExternalEmbeddings from_rows(std::vector<std::string> tokens, Matrix vectors);

  std::size_t size() const { return tokens.size(); }
  std::size_t dim() const { return vectors.cols(); }
  std::optional<std::size_t> find(const std::string& token) const;

 private:
  void index();
  std::unordered_map<std::string, std::size_t> index_;
};

struct ExpansionMap {
  Matrix w;  // rnn_dim x ext_dim
  std::size_t shared_count = 0;
  double residual_rms = 0.0;
  std::size_t rank = 0;
  bool rank_deficient = false;

  Vector apply(std::span<const double> ext) const { return matvec(w, ext); }

  void save(const std::filesystem::path& path) const;
  static ExpansionMap load(const std::filesystem::path& path);
};

/// Unregularised least squares: W minimises sum_i |W x_i - y_i|^2 over
/// paired rows of x (n x ext_dim) and y (n x rnn_dim). Uses the minimum-norm
/// solution when x lacks full column rank.
ExpansionMap fit_linear_map(const Matrix& x, const Matrix& y);

/// Fits the map over tokens present in both vocabularies (eos and unk
/// excluded). ConfigError when nothing is shared.
ExpansionMap fit_expansion(const ExternalEmbeddings& ext, const SkipThoughtModel& model);

/// Token to embedding resolution: native row, else mapped external vector,
/// else the unk row. Each stage tries the exact token, then its lowercase.
class ExpandedLookup {
 public:
  enum class Source { kNative, kMapped, kUnknown };
  struct Resolved {
    Vector vector;
    Source source = Source::kUnknown;
    std::size_t entry = 0;  // row in vectors() for native/mapped hits
  };

  ExpandedLookup(const Vocabulary& vocab, const Matrix& embedding);
  ExpandedLookup(const Vocabulary& vocab, const Matrix& embedding, const ExternalEmbeddings& ext,
                 const ExpansionMap& map);

  Resolved resolve(const std::string& token) const;

  /// Searchable table: native tokens other than eos/unk, then mapped tokens.
  const std::vector<std::string>& tokens() const { return tokens_; }
  const Matrix& vectors() const { return vectors_; }
  std::size_t native_count() const { return native_count_; }
  std::size_t mapped_count() const { return tokens_.size() - native_count_; }
  std::span<const double> eos_vector() const { return eos_; }

 private:
  std::optional<std::size_t> find_native(const std::string& token) const;
  std::optional<std::size_t> find_mapped(const std::string& token) const;

  std::vector<std::string> tokens_;
  Matrix vectors_;
  std::size_t native_count_ = 0;
  std::unordered_map<std::string, std::size_t> entry_;
  Vector eos_, unk_;
};

struct EncodedText {
  Vector vector;
  std::size_t unknown_tokens = 0;
};

/// Tokenises, caps at max_tokens, appends eos and encodes through the lookup.
EncodedText encode_text(const std::string& sentence, const EncoderModel& encoder,
                        const ExpandedLookup& lookup, std::size_t max_tokens = 100);

/// One or two trained models (two gives the concatenated combined vector),
/// each with its own lookup.
class TextEncoder {
 public:
  void add(const SkipThoughtModel& model, std::optional<ExpansionMap> map = std::nullopt,
           const ExternalEmbeddings* ext = nullptr);
  EncodedText encode(const std::string& sentence) const;
  std::size_t dim() const;
  bool empty() const { return parts_.empty(); }

 private:
  struct Part {
    const SkipThoughtModel* model;
    ExpandedLookup lookup;
  };
  std::vector<Part> parts_;
};

struct Neighbour {
  std::string label;
  std::size_t index = 0;
  double similarity = 0.0;
};

/// Top-k cosine neighbours of the query in the lookup table, query excluded.
/// InputError if the query resolves to neither a native nor a mapped entry.
std::vector<Neighbour> nearest_words(const std::string& query, const ExpandedLookup& lookup, std::size_t k);

/// Top-k rows of bank by cosine to query; ties go to the lower index.
/// InputError on an empty bank.
std::vector<Neighbour> nearest_rows(std::span<const double> query, const Matrix& bank, std::size_t k,
                                    std::optional<std::size_t> exclude = std::nullopt);

struct SentenceBank {
  std::vector<std::string> sentences;
  Matrix vectors;
};

SentenceBank encode_bank(const std::vector<std::string>& sentences, const TextEncoder& encoder);
std::vector<Neighbour> nearest_sentences(const std::string& query, const TextEncoder& encoder,
                                         const SentenceBank& bank, std::size_t k);

}  // namespace skipgru
