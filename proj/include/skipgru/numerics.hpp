#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "skipgru/matrix.hpp"

namespace skipgru {

/// A parameter set is an ordered list of non-owning matrix references. Models
/// expose their tensors in a fixed declaration order so that gradients,
/// optimiser buffers and checkpoints line up index by index.
using ParamRefs = std::vector<Matrix*>;
using ConstParamRefs = std::vector<const Matrix*>;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix orthogonal_init(std::size_t rows, std::size_t cols, std::uint64_t seed);
Matrix uniform_init(std::size_t rows, std::size_t cols, double lo, double hi, std::uint64_t seed);

double global_norm(std::span<const Matrix* const> grads);

struct ClipResult {
  double norm = 0.0;  // pre-clip global norm
  bool clipped = false;
};

/// Rescales all gradients in place so that their concatenated L2 norm does
/// not exceed threshold. Gradients at or below the threshold are untouched.
ClipResult clip_gradients(std::span<Matrix* const> grads, double threshold);

struct AdamConfig {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  AdamConfig config;

  static AdamState for_params(std::span<const Matrix* const> params, AdamConfig config = {});
};

/// One bias-corrected Adam update applied to params in place.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
               AdamState& state);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t param_index = 0;
  std::size_t entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares analytic gradients with central differences of loss_fn, which
/// must read the current values of params. Params are perturbed in place
/// and restored before returning. Per entry the error is
/// |a - n| / max(floor, |a| + |n|); floor sets the magnitude below which
/// entries are effectively compared in absolute terms.
GradCheckReport finite_diff_check(const std::function<double()>& loss_fn,
                                  std::span<Matrix* const> params,
                                  std::span<const Matrix* const> analytic, double eps = 1e-5,
                                  double floor = 1e-8);

ConstParamRefs as_const(const ParamRefs& refs);

struct LbfgsOptions {
  std::size_t max_iterations = 2000;
  double tolerance = 1e-6;  // on the gradient L2 norm
  std::size_t memory = 10;
};

struct LbfgsResult {
  Vector x;
  double value = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
};

/// Objective returning f(x) and writing the gradient into grad (same size).
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

/// Limited-memory BFGS with backtracking (Armijo) line search. Deterministic.
/// Throws ConvergenceError when the gradient norm is still above tolerance
/// at the iteration cap or no descent step can be found.
LbfgsResult minimize_lbfgs(const Objective& f, Vector x0, const LbfgsOptions& options = {});

}  // namespace skipgru
