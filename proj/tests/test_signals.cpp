#include <stdexcept>
#include <cmath>
#include <random>

#include "doctest.h"

#include "tippo/signals.hpp"

using namespace tippo;

namespace {

RawSample sample_with(std::size_t n_images, std::size_t d_raw, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  RawSample s;
  s.text_tokens = {1, 3, 2};
  s.reference_tokens = {4, 5};
  s.image_latents.resize(n_images, std::vector<double>(d_raw));
  for (auto& img : s.image_latents)
    for (auto& x : img) x = g(rng);
  return s;
}

Tensor rows_of(const std::vector<std::vector<double>>& m) {
  std::vector<double> flat;
  for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::matrix(m.size(), m.front().size(), flat);
}

}  // namespace

TEST_CASE("sample validation") {
  const auto ok = sample_with(3, 4, 1);
  CHECK_NOTHROW(validate_sample(ok, 8, 4));
  auto no_images = ok;
  no_images.image_latents.clear();
  CHECK_THROWS_AS(validate_sample(no_images, 8, 4), std::invalid_argument);
  auto bad_token = ok;
  bad_token.text_tokens.push_back(8);
  CHECK_THROWS_AS(validate_sample(bad_token, 8, 4), std::invalid_argument);
  auto bad_width = ok;
  bad_width.image_latents[1].pop_back();
  CHECK_THROWS_AS(validate_sample(bad_width, 8, 4), std::invalid_argument);
  auto nan_latent = ok;
  nan_latent.image_latents[0][0] = std::nan("");
  CHECK_THROWS_AS(validate_sample(nan_latent, 8, 4), std::invalid_argument);
}

TEST_CASE("encoder stub is deterministic and per-image") {
  EncoderStub stub(8, 4, 6, 11);
  auto s = sample_with(3, 4, 2);
  auto a = stub.encode(s);
  auto b = stub.encode(s);
  CHECK(a.text == b.text);
  CHECK(a.images == b.images);

  auto permuted = s;
  std::swap(permuted.image_latents[0], permuted.image_latents[2]);
  auto p = stub.encode(permuted);
  for (std::size_t c = 0; c < 6; ++c) {
    CHECK(p.images.at(0, c) == a.images.at(2, c));
    CHECK(p.images.at(2, c) == a.images.at(0, c));
    CHECK(p.images.at(1, c) == a.images.at(1, c));
  }
}

TEST_CASE("single-token text embeds to its table row") {
  EncoderStub stub(8, 4, 6, 11);
  auto s = sample_with(2, 4, 3);
  s.text_tokens = {5};
  auto e = stub.encode(s);
  for (std::size_t c = 0; c < 6; ++c) CHECK(e.text.at(0, c) == stub.token_table().at(5, c));
}

TEST_CASE("adapter algebra") {
  Tape tape;
  const Tensor e1 = Tensor::matrix(1, 3, {0.5, -1.0, 2.0});
  const Tensor e2 = Tensor::matrix(1, 3, {1.5, 0.25, -0.75});

  Adapter zero{zero_parameter("w", {3, 3}), zero_parameter("b", {3})};
  CHECK(adapt(tape.constant(e1), zero).value() == Tensor::zeros({1, 3}));

  Adapter identity{{"w", Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1})}, zero_parameter("b", {3})};
  CHECK(max_abs_diff(adapt(tape.constant(e1), identity).value(), e1) == 0.0);

  Rng rng(4);
  Adapter a = Adapter::init("a", 3, 2, rng);
  Tensor sum_e = e1;
  for (std::size_t i = 0; i < 3; ++i) sum_e[i] += e2[i];
  const Tensor lhs = adapt(tape.constant(sum_e), a).value();
  const Tensor y1 = adapt(tape.constant(e1), a).value();
  const Tensor y2 = adapt(tape.constant(e2), a).value();
  for (std::size_t i = 0; i < 2; ++i) CHECK(lhs[i] == doctest::Approx(y1[i] + y2[i] - a.bias.value[i]).epsilon(1e-13));
}

TEST_CASE("adapter without bias") {
  Rng rng(5);
  Adapter a = Adapter::init("a", 3, 2, rng, false);
  CHECK(a.parameters().size() == 1);
  Tape tape;
  CHECK(adapt(tape.constant(Tensor::zeros({1, 3})), a).value() == Tensor::zeros({1, 2}));
}

TEST_CASE("prototype is the mean image signal") {
  CHECK(compute_prototype({{1.0, 0.0}, {0.0, 1.0}}) == std::vector<double>{0.5, 0.5});
  CHECK(compute_prototype({{0.3, -0.7}}) == std::vector<double>{0.3, -0.7});
  CHECK(compute_prototype({{0.25, 2.0}, {0.25, 2.0}, {0.25, 2.0}}) == std::vector<double>{0.25, 2.0});

  Tape tape;
  const std::vector<std::vector<double>> imgs{{1.0, 2.0, 3.0}, {-1.0, 0.5, 4.0}, {0.0, 0.0, 2.0}};
  Var proto = compute_prototype(tape.constant(rows_of(imgs)));
  const auto want = compute_prototype(imgs);
  for (std::size_t c = 0; c < 3; ++c) CHECK(proto.value()[c] == doctest::Approx(want[c]).epsilon(1e-15));
}

TEST_CASE("extract_signals wires adapters and prototype") {
  EncoderStub stub(8, 4, 6, 11);
  Rng rng(6);
  Adapter text = Adapter::init("text", 6, 5, rng);
  Adapter visual = Adapter::init("visual", 6, 5, rng);
  auto enc = stub.encode(sample_with(4, 4, 7));
  Tape tape;
  auto b = extract_signals(tape, enc, text, visual);
  CHECK(b.num_images() == 4);
  CHECK(b.s_text.value().cols() == 5);
  CHECK(b.s_proto.value().rows() == 1);
  for (std::size_t c = 0; c < 5; ++c) {
    double m = 0.0;
    for (std::size_t i = 0; i < 4; ++i) m += b.s_images.value().at(i, c);
    CHECK(b.s_proto.value()[c] == doctest::Approx(m / 4.0).epsilon(1e-14));
  }
}
