#pragma once

#include <cstdint>

#include "skipgru/corpus.hpp"
#include "skipgru/decoder.hpp"
#include "skipgru/encoder.hpp"
#include "skipgru/numerics.hpp"

namespace skipgru {

struct TrainConfig {
  EncoderMode mode = EncoderMode::kUni;
  std::size_t embed_dim = 620;
  std::size_t hidden_dim = 2400;  // per direction in bi mode
  std::size_t vocab_size = 20000;
  std::size_t batch_size = 128;
  double clip_threshold = 10.0;
  AdamConfig adam;
  std::uint64_t max_steps = 0;
  std::uint64_t seed = 1234;
  std::uint64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::size_t max_tokens = 100;        // sentence cap before eos

  /// Throws ConfigError on inconsistent values.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// All trainable tensors. Also used, zero-filled, as the gradient container.
struct SkipThoughtParams {
  EncoderModel encoder;
  DecoderPair decoders;

  static SkipThoughtParams zeros_like(const SkipThoughtParams& other);
  /// Fixed declaration order: embedding, encoder GRU(s), next decoder,
  /// previous decoder, shared output matrix.
  ParamRefs refs();
  ConstParamRefs refs() const;
};

struct SkipThoughtModel {
  Vocabulary vocab;
  TrainConfig config;
  SkipThoughtParams params;

  /// Fresh model; config.vocab_size is overwritten with vocab.size().
  static SkipThoughtModel init(Vocabulary vocab, TrainConfig config);

  const EncoderModel& encoder() const { return params.encoder; }
  const DecoderPair& decoders() const { return params.decoders; }
};

struct TripleLoss {
  double next_nll = 0.0;
  double prev_nll = 0.0;
  double total() const { return next_nll + prev_nll; }
};

/// -[log P(next | h) + log P(prev | h)] with h = encode(curr).
TripleLoss triple_loss(const SkipThoughtParams& params, const SentenceTriple& triple);
double triple_loss(const SkipThoughtModel& model, const SentenceTriple& triple);

/// Returns the triple loss and accumulates its gradients into grads.
double triple_loss_grad(const SkipThoughtParams& params, const SentenceTriple& triple,
                        SkipThoughtParams& grads);

/// Concatenation of a uni and a bi encoding; the two models must share
/// their vocabulary (ConfigError otherwise).
Vector encode_combined(const IdSequence& tokens, const SkipThoughtModel& uni,
                       const SkipThoughtModel& bi);

/// Story continuation with the next-sentence decoder: sentence i + 1 is
/// sampled conditioned on the encoding of sentence i, starting from seed.
/// Every returned sequence ends with eos.
std::vector<IdSequence> generate_story(const SkipThoughtModel& model, const IdSequence& seed,
                                       std::size_t sentences, const SampleOptions& options,
                                       std::uint64_t rng_seed);

}  // namespace skipgru
