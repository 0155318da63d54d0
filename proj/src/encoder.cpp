#include "skipgru/encoder.hpp"

#include <algorithm>
#include <string>

#include "skipgru/error.hpp"
#include "skipgru/rng.hpp"

namespace skipgru {

std::string_view to_string(EncoderMode mode) { return mode == EncoderMode::kBi ? "bi" : "uni"; }

EncoderMode parse_encoder_mode(std::string_view text) {
  if (text == "uni") return EncoderMode::kUni;
  if (text == "bi") return EncoderMode::kBi;
  throw ConfigError("unknown encoder mode '" + std::string(text) + "' (expected uni or bi)");
}

EncoderModel EncoderModel::init(EncoderMode mode, std::size_t vocab_size, std::size_t embed_dim,
                                std::size_t hidden_dim, std::uint64_t seed) {
  const Rng base(seed);
  EncoderModel m;
  m.mode = mode;
  m.embedding = uniform_init(vocab_size, embed_dim, -0.1, 0.1, base.split(0).engine()());
  m.forward = GruParams::init(hidden_dim, embed_dim, base.split(1).engine()());
  if (mode == EncoderMode::kBi) {
    m.backward = GruParams::init(hidden_dim, embed_dim, base.split(2).engine()());
  }
  return m;
}

EncoderModel EncoderModel::zeros_like(const EncoderModel& other) {
  EncoderModel m;
  m.mode = other.mode;
  m.embedding = Matrix::zeros_like(other.embedding);
  m.forward = GruParams::zeros(other.hidden_dim(), other.embed_dim());
  if (other.mode == EncoderMode::kBi) {
    m.backward = GruParams::zeros(other.hidden_dim(), other.embed_dim());
  }
  return m;
}

void EncoderModel::append_refs(ParamRefs& out) {
  out.push_back(&embedding);
  forward.append_refs(out);
  if (mode == EncoderMode::kBi) backward.append_refs(out);
}

void EncoderModel::append_refs(ConstParamRefs& out) const {
  out.push_back(&embedding);
  forward.append_refs(out);
  if (mode == EncoderMode::kBi) backward.append_refs(out);
}

namespace {

void check_tokens(const IdSequence& tokens, const EncoderModel& model) {
  if (tokens.empty()) throw InputError("encode: empty sequence");
  for (TokenId id : tokens) {
    if (id >= model.vocab_size()) {
      throw RangeError("encode: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(model.vocab_size()));
    }
  }
}

template <typename InputAt>
std::vector<GruStepCache> run(std::size_t length, InputAt input_at, const GruParams& p,
                              bool reversed) {
  std::vector<GruStepCache> steps;
  steps.reserve(length);
  Vector h(p.hidden_dim(), 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    const std::size_t pos = reversed ? length - 1 - t : t;
    steps.push_back(gru_step(input_at(pos), h, p));
    h = steps.back().h;
  }
  return steps;
}

template <typename InputAt>
EncoderTrace trace_with(std::size_t length, InputAt input_at, const EncoderModel& model) {
  EncoderTrace trace;
  trace.forward = run(length, input_at, model.forward, false);
  trace.output = trace.forward.back().h;
  if (model.mode == EncoderMode::kBi) {
    trace.backward = run(length, input_at, model.backward, true);
    const Vector& hb = trace.backward.back().h;
    trace.output.insert(trace.output.end(), hb.begin(), hb.end());
  }
  return trace;
}

}  // namespace

EncoderTrace encode_traced(const IdSequence& tokens, const EncoderModel& model) {
  check_tokens(tokens, model);
  EncoderTrace trace = trace_with(
      tokens.size(), [&](std::size_t pos) { return model.embedding.row(tokens[pos]); }, model);
  trace.tokens = tokens;
  return trace;
}

Vector encode(const IdSequence& tokens, const EncoderModel& model) {
  return encode_traced(tokens, model).output;
}

Vector encode_embedded(std::span<const Vector> inputs, const EncoderModel& model) {
  if (inputs.empty()) throw InputError("encode: empty sequence");
  for (const auto& x : inputs) {
    if (x.size() != model.embed_dim()) throw ShapeError("encode: input vector has wrong dimension");
  }
  return trace_with(
             inputs.size(),
             [&](std::size_t pos) { return std::span<const double>(inputs[pos]); }, model)
      .output;
}

std::vector<Vector> encode_batch(const std::vector<IdSequence>& batch, const EncoderModel& model) {
  std::size_t longest = 0;
  for (const auto& s : batch) {
    check_tokens(s, model);
    longest = std::max(longest, s.size());
  }
  const std::size_t n = model.hidden_dim();
  const bool bi = model.mode == EncoderMode::kBi;
  std::vector<Vector> fwd(batch.size(), Vector(n, 0.0));
  std::vector<Vector> bwd(bi ? batch.size() : 0, Vector(n, 0.0));
  for (std::size_t t = 0; t < longest; ++t) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& s = batch[b];
      if (t >= s.size()) continue;  // masked: padded step keeps the state
      fwd[b] = gru_step(model.embedding.row(s[t]), fwd[b], model.forward).h;
      if (bi) bwd[b] = gru_step(model.embedding.row(s[s.size() - 1 - t]), bwd[b], model.backward).h;
    }
  }
  std::vector<Vector> out;
  out.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.push_back(bi ? concat(fwd[b], bwd[b]) : fwd[b]);
  }
  return out;
}

namespace {

void backprop_direction(const std::vector<GruStepCache>& steps, const IdSequence& tokens,
                        bool reversed, const GruParams& p, std::span<const double> grad_final,
                        GruParams& g, Matrix& grad_embedding) {
  const std::size_t n = p.hidden_dim();
  Vector dh(grad_final.begin(), grad_final.end());
  Vector dh_prev(n);
  Vector dx(p.input_dim());
  for (std::size_t t = steps.size(); t-- > 0;) {
    std::fill(dx.begin(), dx.end(), 0.0);
    gru_step_backward(p, steps[t], dh, g, dx, dh_prev);
    const std::size_t pos = reversed ? tokens.size() - 1 - t : t;
    axpy(1.0, dx, grad_embedding.row(tokens[pos]));
    dh.swap(dh_prev);
  }
}

}  // namespace

void encoder_backward(const EncoderTrace& trace, const EncoderModel& model,
                      std::span<const double> grad_output, EncoderModel& grads) {
  if (!trace.valid()) throw StateError("encoder_backward: no cached forward pass");
  if (grad_output.size() != model.output_dim()) throw ShapeError("encoder_backward: gradient size");
  const std::size_t n = model.hidden_dim();
  backprop_direction(trace.forward, trace.tokens, false, model.forward, grad_output.first(n),
                     grads.forward, grads.embedding);
  if (model.mode == EncoderMode::kBi) {
    if (trace.backward.size() != trace.tokens.size()) {
      throw StateError("encoder_backward: trace lacks the backward direction");
    }
    backprop_direction(trace.backward, trace.tokens, true, model.backward, grad_output.subspan(n),
                       grads.backward, grads.embedding);
  }
}

}  // namespace skipgru
