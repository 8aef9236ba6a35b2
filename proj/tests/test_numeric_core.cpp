#include <stdexcept>
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "tippo/autograd.hpp"
#include "tippo/gradcheck.hpp"
#include "tippo/kernels.hpp"
#include "tippo/optim.hpp"

using namespace tippo;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tensor p = softmax(Tensor::vector({0.0, 0.0}));
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax matches direct evaluation") {
  Tensor p = softmax(Tensor::vector({1.0, 2.0, 3.0}));
  auto want = oracle::softmax({1.0, 2.0, 3.0});
  const double expected[] = {0.09003, 0.24473, 0.66524};
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(p[i] - expected[i]) < 1e-5);
    CHECK(std::abs(p[i] - want[i]) < 1e-15);
  }
}

TEST_CASE("softmax is shift invariant and stable for large logits") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto v = random_values(7, rng, -5.0, 5.0);
    const double c = std::uniform_real_distribution<double>(-800.0, 800.0)(rng);
    auto shifted = v;
    for (auto& x : shifted) x += c;
    Tensor a = softmax(Tensor::vector(v));
    Tensor b = softmax(Tensor::vector(shifted));
    CHECK(b.all_finite());
    CHECK(max_abs_diff(a, b) < 1e-12);
  }
}

TEST_CASE("cosine similarity") {
  CHECK(cosine_similarity(Tensor::vector({3.0, -4.0}), Tensor::vector({3.0, -4.0})) == doctest::Approx(1.0));
  CHECK(cosine_similarity(Tensor::vector({1.0, 0.0}), Tensor::vector({0.0, 1.0})) == 0.0);
  CHECK(std::abs(cosine_similarity(Tensor::vector({1.0, 0.0}), Tensor::vector({1.0, 1.0})) - 0.70711) < 1e-5);
  bool degenerate = false;
  CHECK(cosine_similarity(Tensor::vector({0.0, 0.0}), Tensor::vector({1.0, 1.0}), &degenerate) == 0.0);
  CHECK(degenerate);
}

TEST_CASE("backward of x.x gives 2x") {
  Parameter x{"x", Tensor::vector({1.0, 2.0})};
  Tape tape;
  Var xv = tape.param(x);
  auto g = backward(tape, sum(mul(xv, xv)));
  CHECK(g.get(x)[0] == 2.0);
  CHECK(g.get(x)[1] == 4.0);
}

TEST_CASE("backward of sum(softmax(x)) is zero") {
  Parameter x{"x", Tensor::vector({0.3, -1.2, 2.5})};
  Tape tape;
  auto g = backward(tape, sum(softmax(tape.param(x))));
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(g.get(x)[i]) < 1e-15);
}

TEST_CASE("tape rejects non-scalar roots") {
  Parameter x{"x", Tensor::vector({1.0, 2.0})};
  Tape tape;
  CHECK_THROWS_AS(backward(tape, tape.param(x)), std::invalid_argument);
}

TEST_CASE("finite-difference check is exact on a linear loss") {
  Parameter theta{"theta", Tensor::vector({0.5, -1.5, 2.0})};
  const Tensor c = Tensor::vector({1.0, -2.0, 0.25});
  auto loss = [&](Tape& t) { return sum(mul(t.param(theta), t.constant(c))); };
  auto report = finite_difference_check(loss, {&theta});
  CHECK(report.passed);
  CHECK(report.max_rel_error() < 1e-10);
}

TEST_CASE("finite-difference check catches a scaled gradient") {
  std::mt19937_64 rng(3);
  Parameter w{"w", Tensor::matrix(3, 4, random_values(12, rng))};
  const Tensor x = Tensor::matrix(2, 4, random_values(8, rng));
  auto loss = [&](Tape& t) { return sum(tanh(linear(t.constant(x), t.param(w)))); };
  CHECK(finite_difference_check(loss, {&w}).passed);
  GradCheckOptions corrupted;
  corrupted.analytic_scale = 1.01;
  auto report = finite_difference_check(loss, {&w}, corrupted);
  CHECK_FALSE(report.passed);
  CHECK(report.params.front().max_rel_error > 1e-4);
}

TEST_CASE("finite-difference check restores parameters") {
  std::mt19937_64 rng(4);
  Parameter w{"w", Tensor::matrix(2, 3, random_values(6, rng))};
  const Tensor before = w.value;
  auto loss = [&](Tape& t) { return sum(exp(t.param(w))); };
  finite_difference_check(loss, {&w});
  CHECK(w.value == before);
}

TEST_CASE("finite-difference check aborts on a nondeterministic loss") {
  Parameter w{"w", Tensor::vector({1.0})};
  int calls = 0;
  auto loss = [&](Tape& t) { return scale(sum(t.param(w)), static_cast<double>(++calls)); };
  auto report = finite_difference_check(loss, {&w});
  CHECK(report.aborted);
  CHECK_FALSE(report.passed);
}

TEST_CASE("finite-difference check validates its step") {
  Parameter w{"w", Tensor::vector({1.0})};
  auto loss = [&](Tape& t) { return sum(t.param(w)); };
  GradCheckOptions bad;
  bad.step = 1e-2;
  CHECK_THROWS_AS(finite_difference_check(loss, {&w}, bad), std::invalid_argument);
}

namespace {

struct PrimitivePoint {
  Parameter a, b, c, r, s;
  explicit PrimitivePoint(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    a = {"a", Tensor::matrix(3, 4, random_values(12, rng))};
    b = {"b", Tensor::matrix(4, 2, random_values(8, rng))};
    c = {"c", Tensor::matrix(3, 4, random_values(12, rng, 0.5, 2.0))};
    r = {"r", Tensor::vector(random_values(4, rng))};
    s = {"s", Tensor::vector(random_values(3, rng))};
  }
};

constexpr std::size_t kPrimitiveCount = 18;

Var primitive_term(std::size_t k, Tape& t, PrimitivePoint& p) {
  static const std::vector<int> ids{2, 0, 2};
  static const std::vector<int> targets{1, 3, 0};
  Var av = t.param(p.a), bv = t.param(p.b), cv = t.param(p.c), rv = t.param(p.r), sv = t.param(p.s);
  switch (k) {
    case 0: return sum(matmul(av, bv));
    case 1: return sum(matmul_nt(av, cv));
    case 2: return mean(mul(add_row(av, rv), sub(cv, av)));
    case 3: return sum(mul_rows(av, sv));
    case 4: return sum(scale_by(av, mean(cv)));
    case 5: return sum(row_mean(cv));
    case 6: return sum(log(cv));
    case 7: return sum(tanh(concat_cols(std::vector<Var>{av, cv})));
    case 8:
      return sum(mul(concat_rows(std::vector<Var>{av, repeat_rows(rv, 2)}),
                     concat_rows(std::vector<Var>{cv, slice_rows(cv, 0, 2)})));
    case 9: return sum(mul(softmax(matmul_nt(av, cv), 0), matmul_nt(cv, av)));
    case 10: return sum(mul(cosine(av, cv), matmul_nt(cv, av)));
    case 11: return sum(mul_rows(logsumexp_rows(av), sv));
    case 12: return sum(mul(gather_rows(cv, ids), av));
    case 13: return cross_entropy(av, targets);
    case 14: return sum(token_log_probs(cv, targets));
    case 15: return sum(mul(clamp(av, -0.3, 0.3), cv));
    case 16: return sum(mul(minimum(av, scale(cv, 0.2)), cv));
    default: return sum(exp(scale(av, 0.5)));
  }
}

}  // namespace

TEST_CASE("every recorded primitive passes the finite-difference check on 100 seeds") {
  for (std::size_t k = 0; k < kPrimitiveCount; ++k) {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      PrimitivePoint p(seed);
      auto loss = [&](Tape& t) { return primitive_term(k, t, p); };
      auto report = finite_difference_check(loss, {&p.a, &p.b, &p.c, &p.r, &p.s});
      for (const auto& q : report.params) {
        INFO("primitive " << k << " seed " << seed << " " << q.name << " rel err " << q.max_rel_error);
        CHECK(q.passed);
      }
    }
  }
}

TEST_CASE("serial and OpenMP kernels agree bitwise") {
  std::mt19937_64 rng(6);
  const kernels::MatDims dims{67, 45, 53};
  auto a = random_values(dims.n * dims.k, rng);
  auto b = random_values(dims.k * dims.m, rng);
  auto bt = random_values(dims.m * dims.k, rng);
  auto at = random_values(dims.k * dims.n, rng);
  std::vector<double> c1(dims.n * dims.m), c2(dims.n * dims.m);

  kernels::serial::matmul(a, b, c1, dims, false);
  kernels::omp::matmul(a, b, c2, dims, false);
  CHECK(c1 == c2);
  kernels::serial::matmul_nt(a, bt, c1, dims, true);
  kernels::omp::matmul_nt(a, bt, c2, dims, true);
  CHECK(c1 == c2);
  kernels::serial::matmul_tn(at, b, c1, dims, false);
  kernels::omp::matmul_tn(at, b, c2, dims, false);
  CHECK(c1 == c2);

  for (long offset : {-1L, 0L, 3L}) {
    std::vector<double> y1(dims.n * dims.m), y2(dims.n * dims.m);
    kernels::serial::softmax_rows(c1, y1, dims.n, dims.m, offset);
    kernels::omp::softmax_rows(c1, y2, dims.n, dims.m, offset);
    CHECK(y1 == y2);
  }
}

TEST_CASE("matmul kernel matches a naive triple loop") {
  std::mt19937_64 rng(7);
  const kernels::MatDims dims{5, 7, 3};
  auto a = random_values(dims.n * dims.k, rng);
  auto b = random_values(dims.k * dims.m, rng);
  std::vector<double> c(dims.n * dims.m);
  kernels::matmul(a, b, c, dims);
  for (std::size_t i = 0; i < dims.n; ++i)
    for (std::size_t j = 0; j < dims.m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < dims.k; ++p) s += a[i * dims.k + p] * b[p * dims.m + j];
      CHECK(c[i * dims.m + j] == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("causal softmax masks future columns") {
  std::vector<double> x(3 * 5, 1.0), y(3 * 5);
  kernels::softmax_rows(x, y, 3, 5, 1);
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      if (c > r + 1) CHECK(y[r * 5 + c] == 0.0);
      total += y[r * 5 + c];
    }
    CHECK(total == doctest::Approx(1.0));
  }
}

TEST_CASE("Adam and SGD descend a quadratic") {
  for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam}) {
    Parameter x{"x", Tensor::vector({3.0, -2.0})};
    Optimizer opt({kind, 0.1});
    for (int i = 0; i < 200; ++i) {
      Tape tape;
      Var v = tape.param(x);
      opt.step({&x}, backward(tape, sum(mul(v, v))));
    }
    CHECK(std::abs(x.value[0]) < 0.05);
    CHECK(std::abs(x.value[1]) < 0.05);
  }
}

TEST_CASE("gradient clipping bounds the update") {
  Parameter x{"x", Tensor::vector({100.0})};
  OptimizerConfig cfg{OptimizerKind::kSgd, 1.0};
  cfg.max_grad_norm = 1.0;
  Optimizer opt(cfg);
  Tape tape;
  Var v = tape.param(x);
  opt.step({&x}, backward(tape, sum(mul(v, v))));
  CHECK(x.value[0] == doctest::Approx(99.0));
}
