#include <cmath>

#include "doctest.h"
#include "skipgru/error.hpp"
#include "skipgru/numerics.hpp"
#include "test_support.hpp"

using namespace skipgru;
using skipgru::testing::random_matrix;

namespace {

double max_gram_error(const Matrix& q) {
  // Gram matrix over the smaller dimension.
  const Matrix g = q.rows() >= q.cols() ? matmul(transpose(q), q) : matmul(q, transpose(q));
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

}  // namespace

TEST_CASE("matmul basic cases") {
  const Matrix a{{1, 2}, {3, 4}};
  CHECK(matmul(Matrix::identity(2), a) == a);
  const Matrix r = matmul(Matrix{{1, 2}}, Matrix{{3}, {4}});
  CHECK(r.rows() == 1);
  CHECK(r.cols() == 1);
  CHECK(r(0, 0) == 11.0);
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("matmul matches a triple-loop oracle") {
  Rng rng(17);
  const Matrix a = random_matrix(5, 7, rng);
  const Matrix b = random_matrix(7, 3, rng);
  const Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 7; ++k) acc += a(i, k) * b(k, j);
      CHECK(std::abs(c(i, j) - acc) < 1e-12);
    }
}

TEST_CASE("orthogonal_init") {
  CHECK(max_gram_error(orthogonal_init(4, 4, 1)) < 1e-6);
  const Matrix one = orthogonal_init(1, 1, 0);
  CHECK(std::abs(std::abs(one(0, 0)) - 1.0) < 1e-12);
  const Matrix tall = orthogonal_init(6, 3, 2);
  CHECK(tall.rows() == 6);
  CHECK(max_gram_error(tall) < 1e-6);
  for (auto [r, c] : {std::pair{3, 6}, {8, 8}, {10, 2}, {2, 10}, {32, 32}}) {
    CAPTURE(r);
    CAPTURE(c);
    CHECK(max_gram_error(orthogonal_init(r, c, 9)) < 1e-6);
  }
  CHECK(orthogonal_init(5, 5, 42) == orthogonal_init(5, 5, 42));
  CHECK_FALSE(orthogonal_init(5, 5, 42) == orthogonal_init(5, 5, 43));
}

TEST_CASE("uniform_init") {
  const Matrix m = uniform_init(2, 2, -0.1, 0.1, 3);
  for (double v : m.data()) CHECK((v >= -0.1 && v <= 0.1));
  CHECK(std::abs(uniform_init(1, 1, 0.0, 1e-9, 0)(0, 0)) <= 1e-9);
  const Matrix big = uniform_init(100, 100, -0.1, 0.1, 5);
  double mean = 0.0;
  for (double v : big.data()) mean += v;
  mean /= static_cast<double>(big.size());
  CHECK(std::abs(mean) < 0.01);
  CHECK_THROWS_AS(uniform_init(1, 1, 0.1, 0.1, 0), ConfigError);
  CHECK(uniform_init(3, 4, -1, 1, 8) == uniform_init(3, 4, -1, 1, 8));
}

TEST_CASE("clip_gradients") {
  SUBCASE("below threshold is untouched") {
    Matrix g{{3, 4}};  // norm 5
    Matrix* refs[] = {&g};
    const auto r = clip_gradients(refs, 10.0);
    CHECK_FALSE(r.clipped);
    CHECK(g == Matrix{{3, 4}});
  }
  SUBCASE("boundary is untouched") {
    Matrix g{{6, 8}};
    Matrix* refs[] = {&g};
    CHECK_FALSE(clip_gradients(refs, 10.0).clipped);
    CHECK(g == Matrix{{6, 8}});
  }
  SUBCASE("above threshold scales to the threshold") {
    Matrix g{{12, 16}};
    Matrix* refs[] = {&g};
    const auto r = clip_gradients(refs, 10.0);
    CHECK(r.clipped);
    CHECK(r.norm == doctest::Approx(20.0));
    CHECK(g(0, 0) == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(g(0, 1) == doctest::Approx(8.0).epsilon(1e-12));
  }
}

TEST_CASE("clip_gradients is idempotent and never increases the norm") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix a = random_matrix(3, 4, rng, 5.0);
    Matrix b = random_matrix(2, 2, rng, 5.0);
    ParamRefs refs{&a, &b};
    const double before = global_norm(as_const(refs));
    const double threshold = rng.uniform(0.5, 20.0);
    clip_gradients(refs, threshold);
    const double after = global_norm(as_const(refs));
    CHECK(after <= before + 1e-12);
    if (before > threshold) CHECK(std::abs(after - threshold) < 1e-9);
    const Matrix a1 = a, b1 = b;
    clip_gradients(refs, threshold);
    CHECK(a == a1);
    CHECK(b == b1);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves params unchanged for any state") {
    Rng rng(1);
    Matrix p = random_matrix(3, 3, rng);
    const Matrix p0 = p;
    Matrix g(3, 3);
    ParamRefs params{&p};
    auto state = AdamState::for_params(as_const(params));
    state.step = 7;  // the state buffers are still zero
    adam_step(params, ConstParamRefs{&g}, state);
    CHECK(p == p0);
    CHECK(state.step == 8);
  }
  SUBCASE("first and second step against a scalar oracle") {
    Matrix p{{1.0}};
    Matrix g{{1.0}};
    ParamRefs params{&p};
    auto state = AdamState::for_params(as_const(params), AdamConfig{0.1, 0.9, 0.999, 1e-8});
    adam_step(params, ConstParamRefs{&g}, state);
    CHECK(std::abs(p(0, 0) - 0.9) < 1e-7);

    double m = 0.0, v = 0.0, x = 1.0;
    for (int t = 1; t <= 2; ++t) {
      m = 0.9 * m + 0.1 * 1.0;
      v = 0.999 * v + 0.001 * 1.0;
      const double mhat = m / (1.0 - std::pow(0.9, t));
      const double vhat = v / (1.0 - std::pow(0.999, t));
      x -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    }
    adam_step(params, ConstParamRefs{&g}, state);
    CHECK(std::abs(p(0, 0) - x) < 1e-10);
    CHECK(std::abs(p(0, 0) - 0.8) < 1e-6);
  }
  SUBCASE("shape mismatch") {
    Matrix p(2, 2), g(2, 3);
    ParamRefs params{&p};
    auto state = AdamState::for_params(as_const(params));
    CHECK_THROWS_AS(adam_step(params, ConstParamRefs{&g}, state), ShapeError);
  }
}

TEST_CASE("finite_diff_check") {
  Rng rng(3);
  Matrix p = random_matrix(2, 3, rng);
  ParamRefs params{&p};

  SUBCASE("quadratic") {
    auto loss = [&] { return 0.5 * dot(p.data(), p.data()); };
    const Matrix analytic = p;
    CHECK(finite_diff_check(loss, params, ConstParamRefs{&analytic}, 1e-5).max_rel_error < 1e-6);
  }
  SUBCASE("sum of tanh") {
    auto loss = [&] {
      double s = 0.0;
      for (double v : p.data()) s += std::tanh(v);
      return s;
    };
    Matrix analytic = p;
    for (double& v : analytic.data()) v = 1.0 - std::tanh(v) * std::tanh(v);
    CHECK(finite_diff_check(loss, params, ConstParamRefs{&analytic}).max_rel_error < 1e-5);
  }
  SUBCASE("wrong gradient is flagged") {
    auto loss = [&] { return 0.5 * dot(p.data(), p.data()); };
    Matrix analytic = p;
    for (double& v : analytic.data()) v *= 2.0;
    const auto report = finite_diff_check(loss, params, ConstParamRefs{&analytic});
    CHECK(report.max_rel_error == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }
  SUBCASE("params are restored and non-finite loss is an error") {
    const Matrix before = p;
    auto loss = [&] { return p(0, 0) > before(0, 0) ? NAN : 0.0; };
    const Matrix analytic = Matrix::zeros_like(p);
    CHECK_THROWS_AS(finite_diff_check(loss, params, ConstParamRefs{&analytic}), NumericError);
  }
}

TEST_CASE("Rng streams are deterministic and independent") {
  Rng a(10), b(10);
  CHECK(a.uniform(0, 1) == b.uniform(0, 1));
  Rng parent(10);
  Rng c1 = parent.split(1), c1b = parent.split(1), c2 = parent.split(2);
  const double x = c1.uniform(0, 1);
  CHECK(x == c1b.uniform(0, 1));
  CHECK(x != c2.uniform(0, 1));
}
