#include <doctest.h>

#include <array>
#include <cmath>

#include "gcrl/numgrad/optim.hpp"
#include "support.hpp"

using namespace gcrl;
using gcrl::test::max_grad_error;
using gcrl::test::random_matrix;
namespace ng = gcrl::ng;

namespace {

Tensor param(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::parameter(random_matrix(r, c, rng, lo, hi));
}

// Weighted sum so every output element carries a distinct upstream gradient.
Tensor probe(const Tensor& t) {
  Matrix w(t.rows(), t.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  return ng::sum(t * Tensor::constant(w));
}

}  // namespace

TEST_CASE("elementwise binary ops match finite differences, with broadcasting") {
  Rng rng(1);
  Tensor a = param(3, 4, rng), row = param(1, 4, rng), col = param(3, 1, rng), one = param(1, 1, rng);
  Tensor pos = param(3, 4, rng, 0.5, 2.0);
  CHECK(max_grad_error([&] { return probe(a + row); }, {a, row}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(col - a); }, {a, col}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(a * row * one); }, {a, row, one}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(a / pos); }, {a, pos}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(col / pos); }, {col, pos}) < 1e-8);
}

TEST_CASE("unary ops match finite differences") {
  Rng rng(2);
  Tensor x = param(4, 3, rng, -2.0, 2.0);
  Tensor p = param(4, 3, rng, 0.2, 3.0);
  CHECK(max_grad_error([&] { return probe(ng::exp(x)); }, {x}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::log(p)); }, {p}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::tanh(x)); }, {x}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::sigmoid(x)); }, {x}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::square(x)); }, {x}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::sqrt(p)); }, {p}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::leaky_relu(x, 0.2)); }, {x}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::clamp(x, -0.5, 0.7)); }, {x}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::scale(x, -1.7) + 2.5); }, {x}) < 1e-8);
}

TEST_CASE("tanh stays within a few ulp of std::tanh") {
  Matrix x(1, 7);
  x << -40.0, -3.0, -1e-3, 0.0, 1e-9, 0.8, 25.0;
  Matrix y = ng::tanh(Tensor::constant(x)).value();
  for (Eigen::Index i = 0; i < x.size(); ++i) CHECK(std::abs(y(0, i) - std::tanh(x(0, i))) < 1e-15);
}

TEST_CASE("matmul, affine, reductions and reshapes match finite differences") {
  Rng rng(3);
  Tensor a = param(3, 4, rng), b = param(4, 2, rng), bias = param(1, 2, rng);
  CHECK(max_grad_error([&] { return probe(ng::matmul(a, b)); }, {a, b}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::affine(a, b, bias)); }, {a, b, bias}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::transpose(a)); }, {a}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::reshape(a, 2, 6)); }, {a}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::row_sum(a)); }, {a}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::col_sum(a)); }, {a}) < 1e-8);
  CHECK(max_grad_error([&] { return ng::mean(a); }, {a}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::logsumexp_rows(a)); }, {a}) < 1e-8);
}

TEST_CASE("affine equals matmul plus broadcast bias") {
  Rng rng(4);
  Tensor a = param(5, 3, rng), w = param(3, 2, rng), b = param(1, 2, rng);
  CHECK((ng::affine(a, w, b).value() - (ng::matmul(a, w) + b).value()).norm() < 1e-14);
}

TEST_CASE("structural ops route gradients to the right slots") {
  Rng rng(5);
  Tensor a = param(3, 2, rng), b = param(3, 3, rng), c = param(2, 2, rng);
  std::array<Tensor, 2> cols{a, b};
  std::array<Tensor, 2> rows{a, c};
  CHECK(max_grad_error([&] { return probe(ng::concat_cols(cols)); }, {a, b}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::concat_rows(rows)); }, {a, c}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::slice_cols(b, 1, 2)); }, {b}) < 1e-8);
  CHECK(max_grad_error([&] { return probe(ng::slice_rows(b, 1, 1)); }, {b}) < 1e-8);
  const std::vector<Eigen::Index> idx{2, 0, 2, 1, 2};
  CHECK(max_grad_error([&] { return probe(ng::gather_rows(b, idx)); }, {b}) < 1e-8);
}

TEST_CASE("logsumexp is stable for large magnitudes") {
  Matrix x(2, 3);
  x << 1000.0, 1000.0, 1000.0, -1000.0, -1001.0, -1002.0;
  Matrix y = ng::logsumexp_rows(Tensor::constant(x)).value();
  CHECK(y(0, 0) == doctest::Approx(1000.0 + std::log(3.0)).epsilon(1e-14));
  CHECK(y(1, 0) == doctest::Approx(-1000.0 + std::log(1.0 + std::exp(-1.0) + std::exp(-2.0))).epsilon(1e-14));
}

TEST_CASE("shared subexpressions and repeated backward accumulate") {
  Tensor x = Tensor::parameter(Matrix::Constant(1, 1, 3.0));
  Tensor y = x * x + x;  // dy/dx = 2x + 1 = 7
  y.backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(7.0));
  y.backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(14.0));
  x.zero_grad();
  CHECK(x.grad()(0, 0) == 0.0);
}

TEST_CASE("non-finite results raise NumericError naming the op") {
  Tensor x = Tensor::parameter(Matrix::Constant(1, 2, -1.0));
  try {
    (void)ng::log(x);
    FAIL("expected NumericError");
  } catch (const ng::NumericError& e) {
    CHECK(std::string(e.what()).find("'log'") != std::string::npos);
  }
  CHECK_THROWS_AS((void)ng::exp(Tensor::scalar(1e6)), ng::NumericError);
}

TEST_CASE("shape errors") {
  Tensor a = Tensor::zeros(2, 3), b = Tensor::zeros(3, 2);
  CHECK_THROWS_AS((void)(a + b), ng::ShapeError);
  CHECK_THROWS_AS((void)ng::matmul(a, a), ng::ShapeError);
  CHECK_THROWS_AS((void)ng::reshape(a, 4, 2), ng::ShapeError);
  CHECK_THROWS_AS((void)ng::slice_cols(a, 2, 2), ng::ShapeError);
  CHECK_THROWS_AS(a.backward(), ng::ShapeError);
}

TEST_CASE("NoGradGuard records no graph and detach cuts gradients") {
  Tensor x = Tensor::parameter(Matrix::Constant(1, 1, 2.0));
  {
    ng::NoGradGuard guard;
    CHECK_FALSE(ng::grad_enabled());
    CHECK_FALSE((x * x).requires_grad());
  }
  CHECK(ng::grad_enabled());
  Tensor y = x * x.detach();
  y.backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("Adam matches a hand-computed two-step trajectory") {
  Tensor p = Tensor::parameter(Matrix::Constant(1, 2, 1.0));
  ng::Adam opt({p});
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double g1[2] = {0.5, -2.0}, g2[2] = {0.1, 3.0};
  double expect[2] = {1.0, 1.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int step = 1; step <= 2; ++step) {
    const double* g = step == 1 ? g1 : g2;
    p.zero_grad();
    (Tensor::scalar(g[0]) * ng::slice_cols(p, 0, 1) + Tensor::scalar(g[1]) * ng::slice_cols(p, 1, 1)).backward();
    opt.step(lr);
    for (int i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, step)), vh = v[i] / (1 - std::pow(b2, step));
      expect[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    CHECK(p.value()(0, 0) == doctest::Approx(expect[0]).epsilon(1e-14));
    CHECK(p.value()(0, 1) == doctest::Approx(expect[1]).epsilon(1e-14));
  }
  CHECK(opt.t() == 2);
}

TEST_CASE("Adam minimises a quadratic and rejects bad input") {
  Tensor p = Tensor::parameter(Matrix::Constant(2, 2, 3.0));
  ng::Adam opt({p});
  for (int i = 0; i < 2000; ++i) {
    opt.zero_grad();
    ng::sum(ng::square(p + (-1.0))).backward();
    opt.step(0.01);
  }
  CHECK((p.value().array() - 1.0).abs().maxCoeff() < 1e-3);
  CHECK_THROWS_AS(opt.step(0.0), std::invalid_argument);

  std::vector<Matrix> params{Matrix::Zero(1, 1)}, grads{Matrix::Constant(1, 1, NAN)};
  std::vector<Matrix> m{Matrix::Zero(1, 1)}, v{Matrix::Zero(1, 1)};
  std::int64_t t = 0;
  CHECK_THROWS_AS(ng::adam_update(params, grads, m, v, t, 0.1), ng::NumericError);
  grads = {Matrix::Zero(2, 1)};
  CHECK_THROWS_AS(ng::adam_update(params, grads, m, v, t, 0.1), ng::ShapeError);
}

TEST_CASE("learning-rate schedules") {
  ng::LrSchedule constant{ng::ScheduleKind::kConstant, 5e-3, 5e-3, 100};
  CHECK(constant.lr_at(0) == 5e-3);
  CHECK(constant.lr_at(100) == 5e-3);

  ng::LrSchedule cyc{ng::ScheduleKind::kOneCycle, 4e-4, 1e-2, 1000};
  CHECK(cyc.lr_at(0) == doctest::Approx(4e-4));
  CHECK(cyc.lr_at(300) == doctest::Approx(1e-2));
  CHECK(cyc.lr_at(1000) == doctest::Approx(1e-2 / 25.0));
  CHECK(cyc.lr_at(150) == doctest::Approx(0.5 * (4e-4 + 1e-2)));
  // Cosine midpoint of the annealing phase.
  CHECK(cyc.lr_at(650) == doctest::Approx(0.5 * (1e-2 + 1e-2 / 25.0)));
  for (int s = 1; s <= 300; ++s) CHECK(cyc.lr_at(s) >= cyc.lr_at(s - 1));
  for (int s = 301; s <= 1000; ++s) CHECK(cyc.lr_at(s) <= cyc.lr_at(s - 1));
  CHECK_THROWS_AS((void)cyc.lr_at(1001), std::out_of_range);
  CHECK_THROWS_AS((void)cyc.lr_at(-1), std::out_of_range);
  CHECK(ng::parse_schedule_kind("one-cycle") == ng::ScheduleKind::kOneCycle);
  CHECK_THROWS((void)ng::parse_schedule_kind("step"));
}
