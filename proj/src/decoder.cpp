#include "skipgru/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "skipgru/error.hpp"

namespace skipgru {

ConditionalGruParams ConditionalGruParams::init(std::size_t hidden, std::size_t embed,
                                                std::size_t encoder_dim, std::uint64_t seed) {
  const Rng base(seed);
  auto stream = [&](std::uint64_t s) { return base.split(s).engine()(); };
  return ConditionalGruParams{
      GruParams::init(hidden, embed, stream(0)),
      uniform_init(hidden, encoder_dim, -0.1, 0.1, stream(1)),
      uniform_init(hidden, encoder_dim, -0.1, 0.1, stream(2)),
      uniform_init(hidden, encoder_dim, -0.1, 0.1, stream(3)),
      uniform_init(1, embed, -0.1, 0.1, stream(4)),
  };
}

ConditionalGruParams ConditionalGruParams::zeros_like(const ConditionalGruParams& o) {
  return ConditionalGruParams{GruParams::zeros(o.hidden_dim(), o.gru.input_dim()),
                              Matrix::zeros_like(o.c_r), Matrix::zeros_like(o.c_z),
                              Matrix::zeros_like(o.c), Matrix::zeros_like(o.begin)};
}

void ConditionalGruParams::append_refs(ParamRefs& out) {
  gru.append_refs(out);
  out.insert(out.end(), {&c_r, &c_z, &c, &begin});
}

void ConditionalGruParams::append_refs(ConstParamRefs& out) const {
  gru.append_refs(out);
  out.insert(out.end(), {&c_r, &c_z, &c, &begin});
}

DecoderPair DecoderPair::init(std::size_t vocab_size, std::size_t embed, std::size_t hidden,
                              std::size_t encoder_dim, std::uint64_t seed) {
  const Rng base(seed);
  return DecoderPair{
      ConditionalGruParams::init(hidden, embed, encoder_dim, base.split(0).engine()()),
      ConditionalGruParams::init(hidden, embed, encoder_dim, base.split(1).engine()()),
      uniform_init(vocab_size, hidden, -0.1, 0.1, base.split(2).engine()()),
  };
}

DecoderPair DecoderPair::zeros_like(const DecoderPair& o) {
  return DecoderPair{ConditionalGruParams::zeros_like(o.next),
                     ConditionalGruParams::zeros_like(o.prev), Matrix::zeros_like(o.out)};
}

void DecoderPair::append_refs(ParamRefs& refs) {
  next.append_refs(refs);
  prev.append_refs(refs);
  refs.push_back(&out);
}

void DecoderPair::append_refs(ConstParamRefs& refs) const {
  next.append_refs(refs);
  prev.append_refs(refs);
  refs.push_back(&out);
}

namespace {

struct Conditioning {
  Vector r, z, h;
};

Conditioning conditioning(std::span<const double> h_enc, const ConditionalGruParams& p) {
  if (h_enc.size() != p.encoder_dim()) throw ShapeError("decoder: sentence vector dimension");
  return {matvec(p.c_r, h_enc), matvec(p.c_z, h_enc), matvec(p.c, h_enc)};
}

}  // namespace

Vector cond_gru_step(std::span<const double> x_prev, std::span<const double> h_prev,
                     std::span<const double> h_enc, const ConditionalGruParams& p) {
  const Conditioning cond = conditioning(h_enc, p);
  return gru_step(x_prev, h_prev, p.gru, {cond.r, cond.z, cond.h}).h;
}

Vector softmax(std::span<const double> logits) {
  Vector p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double top = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - top);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace {

std::span<const double> input_row(std::size_t t, const IdSequence& target,
                                  const ConditionalGruParams& p, const Matrix& embedding) {
  return t == 0 ? p.begin.row(0) : embedding.row(target[t - 1]);
}

}  // namespace

DecoderTrace decoder_forward(const IdSequence& target, std::span<const double> h_enc,
                             const ConditionalGruParams& p, const Matrix& out,
                             const Matrix& embedding) {
  if (target.empty()) throw InputError("decoder: empty target");
  if (out.cols() != p.hidden_dim()) throw ShapeError("decoder: output matrix width");
  for (TokenId id : target) {
    if (id >= out.rows() || id >= embedding.rows()) {
      throw RangeError("decoder: token id " + std::to_string(id) + " out of range");
    }
  }
  const Conditioning cond = conditioning(h_enc, p);
  DecoderTrace trace;
  trace.target = target;
  trace.steps.reserve(target.size());
  trace.probs.reserve(target.size());
  Vector h(p.hidden_dim(), 0.0);
  for (std::size_t t = 0; t < target.size(); ++t) {
    trace.steps.push_back(
        gru_step(input_row(t, target, p, embedding), h, p.gru, {cond.r, cond.z, cond.h}));
    h = trace.steps.back().h;
    trace.probs.push_back(softmax(matvec(out, h)));
    trace.log_prob += std::log(trace.probs.back()[target[t]]);
  }
  return trace;
}

double sentence_log_prob(const IdSequence& target, std::span<const double> h_enc,
                         const ConditionalGruParams& p, const Matrix& out,
                         const Matrix& embedding) {
  return decoder_forward(target, h_enc, p, out, embedding).log_prob;
}

Vector decoder_backward(const DecoderTrace& trace, std::span<const double> h_enc,
                        const ConditionalGruParams& p, const Matrix& out,
                        const Matrix& /*embedding*/, ConditionalGruParams& g, Matrix& grad_out,
                        Matrix& grad_embedding) {
  if (!trace.valid()) throw StateError("decoder_backward: no cached forward pass");
  const std::size_t n = p.hidden_dim();
  const auto& target = trace.target;
  Vector cond_r(n, 0.0), cond_z(n, 0.0), cond_h(n, 0.0);
  Vector dh(n, 0.0);
  Vector dh_prev(n);
  Vector dx(p.gru.input_dim());
  for (std::size_t t = trace.steps.size(); t-- > 0;) {
    const GruStepCache& step = trace.steps[t];
    Vector dlogits = trace.probs[t];
    dlogits[target[t]] -= 1.0;
    add_outer(grad_out, dlogits, step.h);
    matvec_t_add(out, dlogits, dh);

    std::fill(dx.begin(), dx.end(), 0.0);
    const GateGrads gates = gru_step_backward(p.gru, step, dh, g.gru, dx, dh_prev);
    axpy(1.0, gates.r, cond_r);
    axpy(1.0, gates.z, cond_z);
    axpy(1.0, gates.h, cond_h);
    if (t == 0) {
      axpy(1.0, dx, g.begin.row(0));
    } else {
      axpy(1.0, dx, grad_embedding.row(target[t - 1]));
    }
    dh.swap(dh_prev);
  }
  add_outer(g.c_r, cond_r, h_enc);
  add_outer(g.c_z, cond_z, h_enc);
  add_outer(g.c, cond_h, h_enc);
  Vector grad_enc(h_enc.size(), 0.0);
  matvec_t_add(p.c_r, cond_r, grad_enc);
  matvec_t_add(p.c_z, cond_z, grad_enc);
  matvec_t_add(p.c, cond_h, grad_enc);
  return grad_enc;
}

IdSequence sample_sentence(std::span<const double> h_enc, const ConditionalGruParams& p,
                           const Matrix& out, const Matrix& embedding, const SampleOptions& options,
                           Rng& rng, TokenId eos_id) {
  if (options.max_len == 0) throw ConfigError("sample_sentence: max_len must be at least 1");
  if (!options.greedy && !(options.temperature > 0.0)) {
    throw ConfigError("sample_sentence: temperature must be positive");
  }
  const Conditioning cond = conditioning(h_enc, p);
  IdSequence ids;
  Vector h(p.hidden_dim(), 0.0);
  while (ids.size() + 1 < options.max_len) {
    auto x = ids.empty() ? p.begin.row(0) : embedding.row(ids.back());
    h = gru_step(x, h, p.gru, {cond.r, cond.z, cond.h}).h;
    Vector logits = matvec(out, h);
    TokenId pick = 0;
    if (options.greedy) {
      pick = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    } else {
      for (double& v : logits) v /= options.temperature;
      const Vector probs = softmax(logits);
      const double u = rng.uniform(0.0, 1.0);
      double acc = 0.0;
      pick = static_cast<TokenId>(probs.size() - 1);
      for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) {
          pick = static_cast<TokenId>(i);
          break;
        }
      }
    }
    ids.push_back(pick);
    if (pick == eos_id) return ids;
  }
  ids.push_back(eos_id);
  return ids;
}

}  // namespace skipgru
