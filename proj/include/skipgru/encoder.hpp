#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "skipgru/corpus.hpp"
#include "skipgru/gru.hpp"

namespace skipgru {

enum class EncoderMode { kUni, kBi };

std::string_view to_string(EncoderMode mode);
/// Parses "uni" / "bi"; throws ConfigError otherwise.
EncoderMode parse_encoder_mode(std::string_view text);

/// Word embeddings plus one GRU (uni) or a forward/backward pair (bi).
/// The embedding table is shared with the decoders.
struct EncoderModel {
  EncoderMode mode = EncoderMode::kUni;
  Matrix embedding;  // vocab x embed
  GruParams forward;
  GruParams backward;  // empty matrices in uni mode

  static EncoderModel init(EncoderMode mode, std::size_t vocab_size, std::size_t embed_dim,
                           std::size_t hidden_dim, std::uint64_t seed);
  static EncoderModel zeros_like(const EncoderModel& other);

  std::size_t vocab_size() const { return embedding.rows(); }
  std::size_t embed_dim() const { return embedding.cols(); }
  std::size_t hidden_dim() const { return forward.hidden_dim(); }
  std::size_t output_dim() const { return mode == EncoderMode::kBi ? 2 * hidden_dim() : hidden_dim(); }

  void append_refs(ParamRefs& out);
  void append_refs(ConstParamRefs& out) const;
};

/// Cached activations of one encode; consumed by encoder_backward.
struct EncoderTrace {
  IdSequence tokens;
  std::vector<GruStepCache> forward;
  std::vector<GruStepCache> backward;
  Vector output;

  bool valid() const { return !tokens.empty() && forward.size() == tokens.size(); }
};

/// Final hidden state (uni) or [forward final ; backward final over the
/// reversed sequence] (bi), starting from a zero state.
Vector encode(const IdSequence& tokens, const EncoderModel& model);
EncoderTrace encode_traced(const IdSequence& tokens, const EncoderModel& model);

/// Encodes pre-looked-up input vectors (used by vocabulary expansion).
Vector encode_embedded(std::span<const Vector> inputs, const EncoderModel& model);

/// Batched encode: sequences are right-padded to the longest and steps past
/// each sequence's end leave its state unchanged. Equal to per-sequence encode.
std::vector<Vector> encode_batch(const std::vector<IdSequence>& batch, const EncoderModel& model);

/// Accumulates d(loss)/d(params) into grads given d(loss)/d(output).
void encoder_backward(const EncoderTrace& trace, const EncoderModel& model,
                      std::span<const double> grad_output, EncoderModel& grads);

}  // namespace skipgru
