#include "skipgru/gru.hpp"

#include <cmath>

#include "skipgru/error.hpp"
#include "skipgru/rng.hpp"

namespace skipgru {

GruParams GruParams::init(std::size_t hidden, std::size_t input, std::uint64_t seed) {
  const Rng base(seed);
  auto stream = [&](std::uint64_t s) { return base.split(s).engine()(); };
  return GruParams{
      uniform_init(hidden, input, -0.1, 0.1, stream(0)),
      uniform_init(hidden, input, -0.1, 0.1, stream(1)),
      uniform_init(hidden, input, -0.1, 0.1, stream(2)),
      orthogonal_init(hidden, hidden, stream(3)),
      orthogonal_init(hidden, hidden, stream(4)),
      orthogonal_init(hidden, hidden, stream(5)),
  };
}

GruParams GruParams::zeros(std::size_t hidden, std::size_t input) {
  return GruParams{Matrix(hidden, input), Matrix(hidden, input), Matrix(hidden, input),
                   Matrix(hidden, hidden), Matrix(hidden, hidden), Matrix(hidden, hidden)};
}

void GruParams::append_refs(ParamRefs& out) {
  out.insert(out.end(), {&w_r, &w_z, &w, &u_r, &u_z, &u});
}

void GruParams::append_refs(ConstParamRefs& out) const {
  out.insert(out.end(), {&w_r, &w_z, &w, &u_r, &u_z, &u});
}

namespace {

void add_bias(std::span<const double> bias, Vector& pre) {
  if (bias.empty()) return;
  if (bias.size() != pre.size()) throw ShapeError("gru: conditioning size mismatch");
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += bias[i];
}

}  // namespace

GruStepCache gru_step(std::span<const double> x, std::span<const double> h_prev,
                      const GruParams& p, const GateBias& bias) {
  const std::size_t n = p.hidden_dim();
  if (x.size() != p.input_dim() || h_prev.size() != n) throw ShapeError("gru_step: shape mismatch");
  GruStepCache c;
  c.x.assign(x.begin(), x.end());
  c.h_prev.assign(h_prev.begin(), h_prev.end());

  c.r = matvec(p.w_r, x);
  matvec_add(p.u_r, h_prev, c.r);
  add_bias(bias.r, c.r);
  for (double& v : c.r) v = sigmoid(v);

  c.z = matvec(p.w_z, x);
  matvec_add(p.u_z, h_prev, c.z);
  add_bias(bias.z, c.z);
  for (double& v : c.z) v = sigmoid(v);

  Vector rh(n);
  for (std::size_t i = 0; i < n; ++i) rh[i] = c.r[i] * h_prev[i];
  c.hbar = matvec(p.w, x);
  matvec_add(p.u, rh, c.hbar);
  add_bias(bias.h, c.hbar);
  for (double& v : c.hbar) v = std::tanh(v);

  c.h.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.h[i] = (1.0 - c.z[i]) * h_prev[i] + c.z[i] * c.hbar[i];
  return c;
}

GateGrads gru_step_backward(const GruParams& p, const GruStepCache& c,
                            std::span<const double> dh, GruParams& g, std::span<double> dx,
                            std::span<double> dh_prev) {
  const std::size_t n = p.hidden_dim();
  GateGrads out{Vector(n), Vector(n), Vector(n)};
  Vector rh(n);
  for (std::size_t i = 0; i < n; ++i) {
    rh[i] = c.r[i] * c.h_prev[i];
    dh_prev[i] = dh[i] * (1.0 - c.z[i]);
    // candidate and update gate
    out.h[i] = dh[i] * c.z[i] * (1.0 - c.hbar[i] * c.hbar[i]);
    out.z[i] = dh[i] * (c.hbar[i] - c.h_prev[i]) * c.z[i] * (1.0 - c.z[i]);
  }

  add_outer(g.w, out.h, c.x);
  add_outer(g.u, out.h, rh);
  Vector drh(n, 0.0);
  matvec_t_add(p.u, out.h, drh);
  matvec_t_add(p.w, out.h, dx);

  for (std::size_t i = 0; i < n; ++i) {
    dh_prev[i] += drh[i] * c.r[i];
    out.r[i] = drh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i]);
  }

  add_outer(g.w_z, out.z, c.x);
  add_outer(g.u_z, out.z, c.h_prev);
  matvec_t_add(p.u_z, out.z, dh_prev);
  matvec_t_add(p.w_z, out.z, dx);

  add_outer(g.w_r, out.r, c.x);
  add_outer(g.u_r, out.r, c.h_prev);
  matvec_t_add(p.u_r, out.r, dh_prev);
  matvec_t_add(p.w_r, out.r, dx);
  return out;
}

}  // namespace skipgru
