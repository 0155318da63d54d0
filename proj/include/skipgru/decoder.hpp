#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skipgru/corpus.hpp"
#include "skipgru/gru.hpp"
#include "skipgru/rng.hpp"

namespace skipgru {

/// GRU whose gates and candidate are biased by the sentence vector through
/// C_r, C_z and C. `begin` is the learned input row used at the first step.
struct ConditionalGruParams {
  GruParams gru;
  Matrix c_r, c_z, c;  // hidden x encoder_dim
  Matrix begin;        // 1 x embed

  static ConditionalGruParams init(std::size_t hidden, std::size_t embed, std::size_t encoder_dim,
                                   std::uint64_t seed);
  static ConditionalGruParams zeros_like(const ConditionalGruParams& other);

  std::size_t hidden_dim() const { return gru.hidden_dim(); }
  std::size_t encoder_dim() const { return c.cols(); }

  void append_refs(ParamRefs& out);
  void append_refs(ConstParamRefs& out) const;
};

/// Next- and previous-sentence decoders with one shared output matrix.
struct DecoderPair {
  ConditionalGruParams next;
  ConditionalGruParams prev;
  Matrix out;  // vocab x hidden; row w scores word w

  static DecoderPair init(std::size_t vocab_size, std::size_t embed, std::size_t hidden,
                          std::size_t encoder_dim, std::uint64_t seed);
  static DecoderPair zeros_like(const DecoderPair& other);

  void append_refs(ParamRefs& out);
  void append_refs(ConstParamRefs& out) const;
};

Vector cond_gru_step(std::span<const double> x_prev, std::span<const double> h_prev,
                     std::span<const double> h_enc, const ConditionalGruParams& p);

/// Numerically stable softmax of logits.
Vector softmax(std::span<const double> logits);

struct DecoderTrace {
  IdSequence target;
  std::vector<GruStepCache> steps;
  std::vector<Vector> probs;  // per step distribution over the vocabulary
  double log_prob = 0.0;

  bool valid() const { return !target.empty() && steps.size() == target.size(); }
};

/// Teacher-forced forward pass; log_prob = sum_t log softmax(out h_t)[target_t].
DecoderTrace decoder_forward(const IdSequence& target, std::span<const double> h_enc,
                             const ConditionalGruParams& p, const Matrix& out,
                             const Matrix& embedding);

double sentence_log_prob(const IdSequence& target, std::span<const double> h_enc,
                         const ConditionalGruParams& p, const Matrix& out, const Matrix& embedding);

/// Gradients of -log_prob. Parameter gradients accumulate into grads,
/// grad_out and grad_embedding; the gradient w.r.t. h_enc is returned.
Vector decoder_backward(const DecoderTrace& trace, std::span<const double> h_enc,
                        const ConditionalGruParams& p, const Matrix& out, const Matrix& embedding,
                        ConditionalGruParams& grads, Matrix& grad_out, Matrix& grad_embedding);

struct SampleOptions {
  std::size_t max_len = 30;
  double temperature = 1.0;
  bool greedy = false;  // argmax decoding; temperature and rng unused
};

/// Autoregressive sample. The result always ends with eos and never exceeds
/// max_len ids: if no eos was drawn by position max_len - 1, eos is forced.
IdSequence sample_sentence(std::span<const double> h_enc, const ConditionalGruParams& p,
                           const Matrix& out, const Matrix& embedding, const SampleOptions& options,
                           Rng& rng, TokenId eos_id = 0);

}  // namespace skipgru
