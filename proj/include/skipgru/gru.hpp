#pragma once

#include <cstdint>
#include <span>

#include "skipgru/matrix.hpp"
#include "skipgru/numerics.hpp"

namespace skipgru {

/// Weights of a bias-free GRU cell:
///   r  = sigmoid(W_r x + U_r h)
///   z  = sigmoid(W_z x + U_z h)
///   h~ = tanh(W x + U (r * h))
///   h' = (1 - z) * h + z * h~
struct GruParams {
  Matrix w_r, w_z, w;  // hidden x input
  Matrix u_r, u_z, u;  // hidden x hidden

  /// Recurrent matrices orthogonal, input matrices uniform in [-0.1, 0.1].
  static GruParams init(std::size_t hidden, std::size_t input, std::uint64_t seed);
  static GruParams zeros(std::size_t hidden, std::size_t input);

  std::size_t hidden_dim() const { return u.rows(); }
  std::size_t input_dim() const { return w.cols(); }

  void append_refs(ParamRefs& out);
  void append_refs(ConstParamRefs& out) const;
};

/// Activations of one step, kept for the backward pass.
struct GruStepCache {
  Vector x;
  Vector h_prev;
  Vector r;
  Vector z;
  Vector hbar;
  Vector h;
};

/// Optional additive terms on the three pre-activations; the conditional
/// decoder feeds C_r h_enc, C_z h_enc and C h_enc through here.
struct GateBias {
  std::span<const double> r;
  std::span<const double> z;
  std::span<const double> h;
};

GruStepCache gru_step(std::span<const double> x, std::span<const double> h_prev,
                      const GruParams& p, const GateBias& bias = {});

/// Gradients of the gate pre-activations from one backward step.
struct GateGrads {
  Vector r;
  Vector z;
  Vector h;
};

/// Backpropagates dh (gradient w.r.t. the step output) through one step.
/// Accumulates weight gradients into grads, adds into dx and writes the
/// gradient w.r.t. h_prev into dh_prev (overwritten).
GateGrads gru_step_backward(const GruParams& p, const GruStepCache& cache,
                            std::span<const double> dh, GruParams& grads, std::span<double> dx,
                            std::span<double> dh_prev);

}  // namespace skipgru
