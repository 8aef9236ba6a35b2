#include <stdexcept>
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "tippo/gradcheck.hpp"
#include "tippo/objectives.hpp"
#include "tippo/optim.hpp"

using namespace tippo;

namespace {

Tensor from_rows(const oracle::Mat& m) {
  std::vector<double> flat;
  for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::matrix(m.size(), m.front().size(), flat);
}

double per_sample_info_nce(const oracle::Mat& images, const std::vector<double>& proto,
                           InfoNceForm form = InfoNceForm::kAsWritten) {
  Tape tape;
  return info_nce({tape.constant(from_rows(images)), tape.constant(from_rows({proto}))}, form).value().item();
}

}  // namespace

TEST_CASE("identical images give ln N") {
  for (std::size_t n = 2; n <= 5; ++n) {
    oracle::Mat imgs(n, {0.3, -1.2, 0.8});
    CHECK(std::abs(per_sample_info_nce(imgs, {0.3, -1.2, 0.8}) - std::log(static_cast<double>(n))) < 1e-9);
  }
}

TEST_CASE("a single image gives zero") {
  CHECK(std::abs(per_sample_info_nce({{0.4, 2.0, -1.0}}, {0.4, 2.0, -1.0})) < 1e-12);
}

TEST_CASE("two orthogonal images match the direct formula") {
  const oracle::Mat imgs{{1.0, 0.0}, {0.0, 1.0}};
  const double got = per_sample_info_nce(imgs, {0.5, 0.5});
  const double want = oracle::info_nce(imgs, {0.5, 0.5});
  const double closed = -(1.0 / std::sqrt(2.0) - std::log(std::exp(1.0) + 1.0));
  CHECK(std::abs(got - want) < 1e-14);
  CHECK(std::abs(got - closed) < 1e-14);
}

TEST_CASE("random batches match the direct formula") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 4);
    oracle::Mat imgs(n, std::vector<double>(4));
    for (auto& r : imgs)
      for (auto& x : r) x = g(rng);
    std::vector<double> proto(4, 0.0);
    for (const auto& r : imgs)
      for (std::size_t c = 0; c < 4; ++c) proto[c] += r[c] / static_cast<double>(n);
    CHECK(std::abs(per_sample_info_nce(imgs, proto) - oracle::info_nce(imgs, proto)) < 1e-12);
    double terms = 0.0;
    for (double t : info_nce_terms(from_rows(imgs), from_rows({proto}))) terms += t;
    CHECK(std::abs(-terms / static_cast<double>(n) - oracle::info_nce(imgs, proto)) < 1e-12);
  }
}

TEST_CASE("the conventional denominator swaps the self term for the positive") {
  const oracle::Mat imgs{{1.0, 0.0}, {0.0, 1.0}};
  const double got = per_sample_info_nce(imgs, {0.5, 0.5}, InfoNceForm::kStandard);
  const double pos = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(got - (std::log(std::exp(pos) + 1.0) - pos)) < 1e-14);
}

TEST_CASE("contrastive gradients match finite differences") {
  Rng rng(22);
  Parameter s = make_parameter("s", {4, 3}, 1, rng);
  for (auto form : {InfoNceForm::kAsWritten, InfoNceForm::kStandard}) {
    auto loss = [&](Tape& tape) {
      Var imgs = tape.param(s);
      return info_nce({imgs, row_mean(imgs)}, form);
    };
    CHECK(finite_difference_check(loss, {&s}).passed);
  }
}

TEST_CASE("sft loss is the plain sum") {
  CHECK(sft_loss(2.0794, 1.3863) == doctest::Approx(3.4657).epsilon(1e-12));
  CHECK(sft_loss(0.7, 0.0) == 0.7);

  Rng rng(23);
  Parameter w = make_parameter("w", {3, 2}, 2, rng);
  auto ntp = [&](Tape& t) { return cross_entropy(t.param(w), std::vector<int>{1, 0, 1}); };
  auto lc = [&](Tape& t) {
    Var x = t.param(w);
    return info_nce({x, row_mean(x)});
  };
  auto total = [&](Tape& t) { return sft_loss(ntp(t), lc(t)); };
  CHECK(finite_difference_check(total, {&w}).passed);

  Tape t1, t2, t3;
  auto g_sum = backward(t1, total(t1)).get(w);
  auto g_ntp = backward(t2, ntp(t2)).get(w);
  auto g_lc = backward(t3, lc(t3)).get(w);
  for (std::size_t i = 0; i < w.value.size(); ++i) CHECK(g_sum[i] == doctest::Approx(g_ntp[i] + g_lc[i]).epsilon(1e-13));
}

TEST_CASE("batch prototype fallback") {
  Tape tape;
  auto fb = batch_prototype_fallback(tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})));
  CHECK(fb.prototype.value() == Tensor::matrix(1, 2, {0.5, 0.5}));
  CHECK(fb.negatives.size() == 2);
  CHECK(fb.negatives[0] == std::vector<std::size_t>{1});
  CHECK(fb.batch.mode == ContrastiveMode::kBatchFallback);

  auto same = batch_prototype_fallback(tape.constant(Tensor::matrix(3, 2, {2, 1, 2, 1, 2, 1})));
  CHECK(same.prototype.value() == Tensor::matrix(1, 2, {2, 1}));

  auto single = batch_prototype_fallback(tape.constant(Tensor::matrix(1, 3, {0.5, -1, 2})));
  CHECK(single.negatives[0].empty());
  CHECK(std::abs(info_nce(single.batch).value().item()) < 1e-12);
}

TEST_CASE("contrastive input validation") {
  Tape tape;
  CHECK_THROWS_AS(info_nce({tape.constant(Tensor::zeros({2, 3})), tape.constant(Tensor::zeros({1, 2}))}),
                  std::invalid_argument);
  CHECK_THROWS_AS(info_nce({tape.constant(Tensor::zeros({3, 2})), tape.constant(Tensor::zeros({2, 2}))}),
                  std::invalid_argument);
}
