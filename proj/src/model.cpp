#include "skipgru/model.hpp"

#include <string>

#include "skipgru/error.hpp"
#include "skipgru/rng.hpp"

namespace skipgru {

void TrainConfig::validate() const {
  if (embed_dim == 0 || hidden_dim == 0) throw ConfigError("embed and hidden dimensions must be positive");
  if (vocab_size < 2) throw ConfigError("vocabulary must contain at least the reserved tokens");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(clip_threshold > 0.0)) throw ConfigError("clip threshold must be positive");
  if (!(adam.alpha >= 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  if (max_tokens == 0) throw ConfigError("max_tokens must be positive");
}

SkipThoughtParams SkipThoughtParams::zeros_like(const SkipThoughtParams& other) {
  return {EncoderModel::zeros_like(other.encoder), DecoderPair::zeros_like(other.decoders)};
}

ParamRefs SkipThoughtParams::refs() {
  ParamRefs out;
  encoder.append_refs(out);
  decoders.append_refs(out);
  return out;
}

ConstParamRefs SkipThoughtParams::refs() const {
  ConstParamRefs out;
  encoder.append_refs(out);
  decoders.append_refs(out);
  return out;
}

SkipThoughtModel SkipThoughtModel::init(Vocabulary vocab, TrainConfig config) {
  config.vocab_size = vocab.size();
  config.validate();
  const Rng base(config.seed);
  auto encoder = EncoderModel::init(config.mode, config.vocab_size, config.embed_dim,
                                    config.hidden_dim, base.split(0).engine()());
  auto decoders = DecoderPair::init(config.vocab_size, config.embed_dim, config.hidden_dim,
                                    encoder.output_dim(), base.split(1).engine()());
  return SkipThoughtModel{std::move(vocab), config, {std::move(encoder), std::move(decoders)}};
}

TripleLoss triple_loss(const SkipThoughtParams& params, const SentenceTriple& triple) {
  const Vector h = encode(triple.curr, params.encoder);
  const auto& d = params.decoders;
  const auto& emb = params.encoder.embedding;
  return TripleLoss{-sentence_log_prob(triple.next, h, d.next, d.out, emb),
                    -sentence_log_prob(triple.prev, h, d.prev, d.out, emb)};
}

double triple_loss(const SkipThoughtModel& model, const SentenceTriple& triple) {
  return triple_loss(model.params, triple).total();
}

double triple_loss_grad(const SkipThoughtParams& params, const SentenceTriple& triple,
                        SkipThoughtParams& grads) {
  const EncoderTrace enc = encode_traced(triple.curr, params.encoder);
  const auto& d = params.decoders;
  const auto& emb = params.encoder.embedding;
  const DecoderTrace next = decoder_forward(triple.next, enc.output, d.next, d.out, emb);
  const DecoderTrace prev = decoder_forward(triple.prev, enc.output, d.prev, d.out, emb);

  Vector grad_h = decoder_backward(next, enc.output, d.next, d.out, emb, grads.decoders.next,
                                   grads.decoders.out, grads.encoder.embedding);
  const Vector grad_h_prev = decoder_backward(prev, enc.output, d.prev, d.out, emb,
                                              grads.decoders.prev, grads.decoders.out,
                                              grads.encoder.embedding);
  axpy(1.0, grad_h_prev, grad_h);
  encoder_backward(enc, params.encoder, grad_h, grads.encoder);
  return -(next.log_prob + prev.log_prob);
}

Vector encode_combined(const IdSequence& tokens, const SkipThoughtModel& uni,
                       const SkipThoughtModel& bi) {
  if (!(uni.vocab == bi.vocab)) throw ConfigError("encode_combined: models use different vocabularies");
  return concat(encode(tokens, uni.encoder()), encode(tokens, bi.encoder()));
}

std::vector<IdSequence> generate_story(const SkipThoughtModel& model, const IdSequence& seed,
                                       std::size_t sentences, const SampleOptions& options,
                                       std::uint64_t rng_seed) {
  if (seed.empty()) throw InputError("generate_story: empty seed sentence");
  Rng rng(rng_seed);
  std::vector<IdSequence> story;
  IdSequence current = seed;
  for (std::size_t i = 0; i < sentences; ++i) {
    const Vector h = encode(current, model.encoder());
    current = sample_sentence(h, model.decoders().next, model.decoders().out, model.encoder().embedding, options,
                              rng, model.vocab.eos_id());
    story.push_back(current);
  }
  return story;
}

}  // namespace skipgru
