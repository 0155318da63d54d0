#include "skipgru/expansion.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "skipgru/binary_io.hpp"
#include "skipgru/error.hpp"

namespace skipgru {

namespace {

using EigenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string ascii_lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double parse_double(std::string_view text, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw InputError("embeddings: bad number '" + std::string(text) + "' on line " + std::to_string(line_no));
  }
  return v;
}

std::size_t parse_count(std::string_view text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw InputError("embeddings: bad header field '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace

std::optional<std::size_t> ExternalEmbeddings::find(const std::string& token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void ExternalEmbeddings::index() {
  index_.clear();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!index_.emplace(tokens[i], i).second) throw InputError("embeddings: duplicate token '" + tokens[i] + "'");
  }
}

ExternalEmbeddings ExternalEmbeddings::from_rows(std::vector<std::string> tokens, Matrix vectors) {
  if (tokens.size() != vectors.rows()) throw ShapeError("embeddings: token count does not match rows");
  if (!vectors.all_finite()) throw InputError("embeddings: non-finite vector entry");
  ExternalEmbeddings e;
  e.tokens = std::move(tokens);
  e.vectors = std::move(vectors);
  e.index();
  return e;
}

ExternalEmbeddings ExternalEmbeddings::parse(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("embeddings: missing header");
  const auto header = split_ws(line);
  if (header.size() != 2) throw InputError("embeddings: header must be 'n_tokens dim'");
  const std::size_t n = parse_count(header[0]), dim = parse_count(header[1]);
  if (dim == 0) throw InputError("embeddings: zero dimension");

  std::vector<std::string> tokens;
  std::vector<double> values;
  std::size_t skipped = 0, entries = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    ++entries;
    if (fields.size() < dim + 1) {
      throw InputError("embeddings: too few values on line " + std::to_string(line_no));
    }
    // Extra leading fields mean the token itself contains spaces.
    if (fields.size() > dim + 1 || fields[0].find('_') != std::string_view::npos) {
      ++skipped;
      continue;
    }
    tokens.emplace_back(fields[0]);
    for (std::size_t k = 1; k <= dim; ++k) values.push_back(parse_double(fields[k], line_no));
  }
  if (entries != n) {
    throw InputError("embeddings: header announces " + std::to_string(n) + " entries, found " +
                     std::to_string(entries));
  }
  Matrix m(tokens.size(), dim);
  std::copy(values.begin(), values.end(), m.data().begin());
  auto e = from_rows(std::move(tokens), std::move(m));
  e.skipped_phrases = skipped;
  return e;
}

ExternalEmbeddings ExternalEmbeddings::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings file " + path.string());
  return parse(in);
}

namespace {
constexpr std::string_view kMapMagic = "SKGRUMAP";
constexpr std::uint32_t kMapVersion = 1;
}  // namespace

void ExpansionMap::save(const std::filesystem::path& path) const {
  ByteWriter w;
  w.bytes(kMapMagic);
  w.u32(kMapVersion);
  w.matrix(this->w);
  w.u64(shared_count);
  w.f64(residual_rms);
  w.u64(rank);
  w.u8(rank_deficient ? 1 : 0);
  append_checksum(w);
  write_file_bytes(path, w.buffer());
}

ExpansionMap ExpansionMap::load(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(checked_body(bytes, "expansion map"));
  if (r.bytes(kMapMagic.size()) != kMapMagic) throw LoadError("expansion map: bad magic");
  if (r.u32() != kMapVersion) throw LoadError("expansion map: unsupported version");
  ExpansionMap m;
  m.w = r.matrix();
  m.shared_count = r.u64();
  m.residual_rms = r.f64();
  m.rank = r.u64();
  m.rank_deficient = r.u8() != 0;
  if (r.remaining() != 0) throw LoadError("expansion map: trailing bytes");
  if (!m.w.all_finite()) throw LoadError("expansion map: non-finite weights");
  return m;
}

ExpansionMap fit_linear_map(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) throw ShapeError("fit_linear_map: row counts differ");
  if (x.rows() == 0) throw ConfigError("fit_linear_map: no training pairs");
  const Eigen::Map<const EigenMatrix> X(x.data().data(), x.rows(), x.cols());
  const Eigen::Map<const EigenMatrix> Y(y.data().data(), y.rows(), y.cols());
  const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
  const Eigen::MatrixXd wt = cod.solve(Eigen::MatrixXd(Y));  // ext_dim x rnn_dim
  ExpansionMap map;
  map.w = Matrix(y.cols(), x.cols());
  Eigen::Map<EigenMatrix>(map.w.data().data(), y.cols(), x.cols()) = wt.transpose();
  if (!map.w.all_finite()) throw NumericError("fit_linear_map: non-finite solution");
  map.shared_count = x.rows();
  map.rank = static_cast<std::size_t>(cod.rank());
  map.rank_deficient = map.rank < x.cols();
  const double sse = (X * wt - Y).squaredNorm();
  map.residual_rms = std::sqrt(sse / static_cast<double>(x.rows() * y.cols()));
  return map;
}

ExpansionMap fit_expansion(const ExternalEmbeddings& ext, const SkipThoughtModel& model) {
  const Matrix& emb = model.encoder().embedding;
  std::vector<std::pair<std::size_t, TokenId>> shared;
  for (TokenId id = 2; id < model.vocab.size(); ++id) {
    if (auto row = ext.find(model.vocab.token(id))) shared.emplace_back(*row, id);
  }
  if (shared.empty()) throw ConfigError("fit_expansion: no tokens shared with the external vocabulary");
  Matrix x(shared.size(), ext.dim()), y(shared.size(), emb.cols());
  for (std::size_t i = 0; i < shared.size(); ++i) {
    std::copy_n(ext.vectors.row(shared[i].first).begin(), ext.dim(), x.row(i).begin());
    std::copy_n(emb.row(shared[i].second).begin(), emb.cols(), y.row(i).begin());
  }
  return fit_linear_map(x, y);
}

ExpandedLookup::ExpandedLookup(const Vocabulary& vocab, const Matrix& embedding) {
  if (embedding.rows() != vocab.size()) throw ShapeError("lookup: embedding rows do not match vocabulary");
  const auto eos = embedding.row(vocab.eos_id()), unk = embedding.row(vocab.unk_id());
  eos_.assign(eos.begin(), eos.end());
  unk_.assign(unk.begin(), unk.end());
  native_count_ = vocab.size() - 2;
  vectors_ = Matrix(native_count_, embedding.cols());
  for (TokenId id = 2; id < vocab.size(); ++id) {
    tokens_.push_back(vocab.token(id));
    std::copy_n(embedding.row(id).begin(), embedding.cols(), vectors_.row(id - 2).begin());
    entry_.emplace(vocab.token(id), id - 2);
  }
}

ExpandedLookup::ExpandedLookup(const Vocabulary& vocab, const Matrix& embedding, const ExternalEmbeddings& ext,
                               const ExpansionMap& map)
    : ExpandedLookup(vocab, embedding) {
  if (map.w.rows() != embedding.cols() || map.w.cols() != ext.dim()) {
    throw ShapeError("lookup: expansion map does not fit this model and embedding file");
  }
  std::vector<std::size_t> extra;
  for (std::size_t i = 0; i < ext.size(); ++i)
    if (!vocab.contains(ext.tokens[i])) extra.push_back(i);
  Matrix all(native_count_ + extra.size(), embedding.cols());
  std::copy(vectors_.data().begin(), vectors_.data().end(), all.data().begin());
  for (std::size_t j = 0; j < extra.size(); ++j) {
    const std::size_t row = native_count_ + j;
    const Vector v = map.apply(ext.vectors.row(extra[j]));
    std::copy(v.begin(), v.end(), all.row(row).begin());
    tokens_.push_back(ext.tokens[extra[j]]);
    entry_.emplace(ext.tokens[extra[j]], row);
  }
  vectors_ = std::move(all);
}

std::optional<std::size_t> ExpandedLookup::find_native(const std::string& token) const {
  const auto it = entry_.find(token);
  if (it != entry_.end() && it->second < native_count_) return it->second;
  return std::nullopt;
}

std::optional<std::size_t> ExpandedLookup::find_mapped(const std::string& token) const {
  const auto it = entry_.find(token);
  if (it != entry_.end() && it->second >= native_count_) return it->second;
  return std::nullopt;
}

ExpandedLookup::Resolved ExpandedLookup::resolve(const std::string& token) const {
  const std::string lower = ascii_lower(token);
  auto hit = [&](std::size_t entry, Source source) {
    const auto row = vectors_.row(entry);
    return Resolved{Vector(row.begin(), row.end()), source, entry};
  };
  if (token == kEosToken) return Resolved{eos_, Source::kNative, 0};
  for (const std::string* t : {&token, &lower})
    if (auto e = find_native(*t)) return hit(*e, Source::kNative);
  for (const std::string* t : {&token, &lower})
    if (auto e = find_mapped(*t)) return hit(*e, Source::kMapped);
  return Resolved{unk_, Source::kUnknown, 0};
}

EncodedText encode_text(const std::string& sentence, const EncoderModel& encoder, const ExpandedLookup& lookup,
                        std::size_t max_tokens) {
  auto tokens = tokenize(sentence);
  if (tokens.size() > max_tokens) tokens.resize(max_tokens);
  EncodedText out;
  std::vector<Vector> inputs;
  inputs.reserve(tokens.size() + 1);
  for (const auto& t : tokens) {
    auto r = lookup.resolve(t);
    if (r.source == ExpandedLookup::Source::kUnknown) ++out.unknown_tokens;
    inputs.push_back(std::move(r.vector));
  }
  const auto eos = lookup.eos_vector();
  inputs.emplace_back(eos.begin(), eos.end());
  out.vector = encode_embedded(inputs, encoder);
  return out;
}

void TextEncoder::add(const SkipThoughtModel& model, std::optional<ExpansionMap> map,
                      const ExternalEmbeddings* ext) {
  if (map && !ext) throw ConfigError("text encoder: expansion map given without embeddings");
  const Matrix& emb = model.encoder().embedding;
  parts_.push_back(Part{&model, map ? ExpandedLookup(model.vocab, emb, *ext, *map)
                                    : ExpandedLookup(model.vocab, emb)});
}

EncodedText TextEncoder::encode(const std::string& sentence) const {
  if (parts_.empty()) throw StateError("text encoder: no model added");
  EncodedText out;
  for (const auto& part : parts_) {
    auto e = encode_text(sentence, part.model->encoder(), part.lookup, part.model->config.max_tokens);
    out.vector.insert(out.vector.end(), e.vector.begin(), e.vector.end());
    out.unknown_tokens = std::max(out.unknown_tokens, e.unknown_tokens);
  }
  return out;
}

std::size_t TextEncoder::dim() const {
  std::size_t d = 0;
  for (const auto& part : parts_) d += part.model->encoder().output_dim();
  return d;
}

std::vector<Neighbour> nearest_rows(std::span<const double> query, const Matrix& bank, std::size_t k,
                                    std::optional<std::size_t> exclude) {
  if (bank.rows() == 0) throw InputError("nearest: empty bank");
  if (query.size() != bank.cols()) throw ShapeError("nearest: query dimension does not match bank");
  std::vector<Neighbour> all;
  all.reserve(bank.rows());
  for (std::size_t i = 0; i < bank.rows(); ++i) {
    if (exclude && *exclude == i) continue;
    all.push_back(Neighbour{{}, i, cosine(query, bank.row(i))});
  }
  const auto better = [](const Neighbour& a, const Neighbour& b) {
    return a.similarity != b.similarity ? a.similarity > b.similarity : a.index < b.index;
  };
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

std::vector<Neighbour> nearest_words(const std::string& query, const ExpandedLookup& lookup, std::size_t k) {
  const auto r = lookup.resolve(query);
  if (r.source == ExpandedLookup::Source::kUnknown || query == kEosToken) {
    throw InputError("nearest_words: '" + query + "' is not in the expanded vocabulary");
  }
  auto hits = nearest_rows(r.vector, lookup.vectors(), k + 1, r.entry);
  std::erase_if(hits, [&](const Neighbour& n) { return lookup.tokens()[n.index] == query; });
  if (hits.size() > k) hits.resize(k);
  for (auto& n : hits) n.label = lookup.tokens()[n.index];
  return hits;
}

SentenceBank encode_bank(const std::vector<std::string>& sentences, const TextEncoder& encoder) {
  SentenceBank bank{sentences, Matrix(sentences.size(), encoder.dim())};
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const Vector v = encoder.encode(sentences[i]).vector;
    std::copy(v.begin(), v.end(), bank.vectors.row(i).begin());
  }
  return bank;
}

std::vector<Neighbour> nearest_sentences(const std::string& query, const TextEncoder& encoder,
                                         const SentenceBank& bank, std::size_t k) {
  if (bank.sentences.empty()) throw InputError("nearest_sentences: empty bank");
  auto hits = nearest_rows(encoder.encode(query).vector, bank.vectors, k);
  for (auto& n : hits) n.label = bank.sentences[n.index];
  return hits;
}

}  // namespace skipgru
