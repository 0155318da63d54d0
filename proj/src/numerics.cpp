#include "skipgru/numerics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "skipgru/error.hpp"
#include "skipgru/rng.hpp"

namespace skipgru {

Matrix orthogonal_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  if (rows == 0 || cols == 0) throw ConfigError("orthogonal_init: empty shape");
  // Factor a tall Gaussian matrix; transpose back for wide outputs.
  const std::size_t tall = std::max(rows, cols);
  const std::size_t narrow = std::min(rows, cols);
  Rng rng(seed);
  Eigen::MatrixXd g(tall, narrow);
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.normal();

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, narrow);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(narrow).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }

  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out(i, j) = rows >= cols ? q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))
                               : q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
  return out;
}

Matrix uniform_init(std::size_t rows, std::size_t cols, double lo, double hi, std::uint64_t seed) {
  if (!(lo < hi)) throw ConfigError("uniform_init: requires lo < hi");
  Rng rng(seed);
  Matrix out(rows, cols);
  for (double& v : out.data()) v = rng.uniform(lo, hi);
  return out;
}

double global_norm(std::span<const Matrix* const> grads) {
  double sq = 0.0;
  for (const Matrix* g : grads)
    for (double v : g->data()) sq += v * v;
  return std::sqrt(sq);
}

ClipResult clip_gradients(std::span<Matrix* const> grads, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("clip_gradients: threshold must be positive");
  ConstParamRefs view(grads.begin(), grads.end());
  ClipResult result{global_norm(view), false};
  // Relative slack so a second pass over already-clipped gradients is a no-op
  // despite rounding in the rescaled norm.
  if (result.norm <= threshold * (1.0 + 1e-12)) return result;
  const double scale = threshold / result.norm;
  for (Matrix* g : grads)
    for (double& v : g->data()) v *= scale;
  result.clipped = true;
  return result;
}

AdamState AdamState::for_params(std::span<const Matrix* const> params, AdamConfig config) {
  AdamState state;
  state.config = config;
  for (const Matrix* p : params) {
    state.m.push_back(Matrix::zeros_like(*p));
    state.v.push_back(Matrix::zeros_like(*p));
  }
  return state;
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
               AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(state.m[i]) ||
        !params[i]->same_shape(state.v[i])) {
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= c.alpha * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

GradCheckReport finite_diff_check(const std::function<double()>& loss_fn,
                                  std::span<Matrix* const> params,
                                  std::span<const Matrix* const> analytic, double eps, double floor) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_check: eps must be positive");
  if (!(floor > 0.0)) throw ConfigError("finite_diff_check: floor must be positive");
  if (params.size() != analytic.size()) throw ShapeError("finite_diff_check: count mismatch");
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    if (!params[pi]->same_shape(*analytic[pi])) {
      throw ShapeError("finite_diff_check: shape mismatch at parameter " + std::to_string(pi));
    }
    auto values = params[pi]->data();
    auto grad = analytic[pi]->data();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + eps;
      const double up = loss_fn();
      values[k] = saved - eps;
      const double down = loss_fn();
      values[k] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_diff_check: non-finite loss");
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double rel =
          std::abs(grad[k] - numeric) / std::max(floor, std::abs(grad[k]) + std::abs(numeric));
      if (rel > report.max_rel_error) {
        report = {rel, pi, k, grad[k], numeric};
      }
    }
  }
  return report;
}

ConstParamRefs as_const(const ParamRefs& refs) { return {refs.begin(), refs.end()}; }

LbfgsResult minimize_lbfgs(const Objective& f, Vector x0, const LbfgsOptions& options) {
  const std::size_t n = x0.size();
  LbfgsResult res;
  res.x = std::move(x0);
  Vector g(n), g_new(n), d(n), x_new(n);
  res.value = f(res.x, g);
  if (!std::isfinite(res.value)) throw NumericError("lbfgs: non-finite objective at the starting point");
  std::vector<Vector> s_hist, y_hist;
  std::vector<double> rho_hist;
  std::vector<double> alpha(options.memory);

  for (;;) {
    res.grad_norm = norm2(g);
    if (res.grad_norm < options.tolerance) return res;
    if (res.iterations >= options.max_iterations) {
      throw ConvergenceError("lbfgs: gradient norm " + std::to_string(res.grad_norm) + " after " +
                             std::to_string(res.iterations) + " iterations (tolerance " +
                             std::to_string(options.tolerance) + ")");
    }
    // Two-loop recursion for d = -H g.
    d = g;
    const std::size_t m = s_hist.size();
    for (std::size_t k = m; k-- > 0;) {
      alpha[k] = rho_hist[k] * dot(s_hist[k], d);
      axpy(-alpha[k], y_hist[k], d);
    }
    if (m > 0) {
      const double gamma = dot(s_hist[m - 1], y_hist[m - 1]) / dot(y_hist[m - 1], y_hist[m - 1]);
      for (double& v : d) v *= gamma;
    }
    for (std::size_t k = 0; k < m; ++k) {
      const double beta = rho_hist[k] * dot(y_hist[k], d);
      axpy(alpha[k] - beta, s_hist[k], d);
    }
    for (double& v : d) v = -v;
    double slope = dot(g, d);
    if (!(slope < 0.0)) {
      // Curvature information went stale; restart from steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      slope = -res.grad_norm * res.grad_norm;
    }
    double step = m == 0 ? std::min(1.0, 1.0 / res.grad_norm) : 1.0;
    double f_new = 0.0;
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      for (std::size_t i = 0; i < n; ++i) x_new[i] = res.x[i] + step * d[i];
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= res.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      throw ConvergenceError("lbfgs: line search failed at gradient norm " + std::to_string(res.grad_norm));
    }
    Vector s_k(n), y_k(n);
    for (std::size_t i = 0; i < n; ++i) {
      s_k[i] = x_new[i] - res.x[i];
      y_k[i] = g_new[i] - g[i];
    }
    const double sy = dot(s_k, y_k);
    if (sy > 1e-12 * norm2(s_k) * norm2(y_k)) {
      if (s_hist.size() == options.memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
      s_hist.push_back(std::move(s_k));
      y_hist.push_back(std::move(y_k));
      rho_hist.push_back(1.0 / sy);
    }
    res.x.swap(x_new);
    g.swap(g_new);
    res.value = f_new;
    ++res.iterations;
  }
}

}  // namespace skipgru
