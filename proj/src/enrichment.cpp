#include "tippo/enrichment.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace tippo {

std::pair<double, double> lambda_schedule(std::int64_t step, std::int64_t total) {
  if (total <= 0) throw std::invalid_argument("lambda_schedule: total steps must be positive");
  if (step < 0 || step > total) throw std::invalid_argument("lambda_schedule: step outside [0, total]");
  const double l1 = static_cast<double>(step) / static_cast<double>(total);
  return {l1, 1.0 - l1};
}

Schedule Schedule::at(std::int64_t step, std::int64_t total) {
  auto [l1, l2] = lambda_schedule(step, total);
  return {step, total, l1, l2};
}

Schedule Schedule::frozen(double lambda1) {
  if (!(lambda1 >= 0.0 && lambda1 <= 1.0)) throw std::invalid_argument("lambda1 must lie in [0, 1]");
  return {1, 1, lambda1, 1.0 - lambda1};
}

DaaWeights DaaWeights::init(std::size_t d, std::size_t d_k, Rng& rng) {
  DaaWeights w;
  w.w_tq = make_parameter("daa.w_tq", {d_k, d}, d, rng);
  w.w_pq = make_parameter("daa.w_pq", {d_k, d}, d, rng);
  w.w_tik = make_parameter("daa.w_tik", {d_k, d}, d, rng);
  w.w_pik = make_parameter("daa.w_pik", {d_k, d}, d, rng);
  w.w_v = make_parameter("daa.w_v", {d, d}, d, rng);
  return w;
}

ParameterList DaaWeights::parameters() { return {&w_tq, &w_pq, &w_tik, &w_pik, &w_v}; }

DiffMap DiffMap::init(std::size_t d) { return {zero_parameter("do.pi_d", {d, d})}; }

namespace {

void check_bundle(const SignalBundle& b, std::size_t d) {
  const auto& imgs = b.s_images.value();
  if (imgs.empty()) throw std::invalid_argument("signal bundle has no images");
  if (imgs.cols() != d || b.s_text.value().cols() != d || b.s_proto.value().cols() != d) {
    throw std::invalid_argument("signal bundle widths do not match weight dimension " + std::to_string(d));
  }
}

}  // namespace

AttentionResult dual_alignment_attention(const SignalBundle& bundle, DaaWeights& weights,
                                         const Schedule& schedule) {
  check_bundle(bundle, weights.w_tq.value.cols());
  auto& tape = bundle.s_images.tape();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(weights.key_dim()));

  Var q_text = linear(bundle.s_text, tape.param(weights.w_tq));
  Var q_proto = linear(bundle.s_proto, tape.param(weights.w_pq));
  Var k_text = linear(bundle.s_images, tape.param(weights.w_tik));
  Var k_proto = linear(bundle.s_images, tape.param(weights.w_pik));
  Var values = linear(bundle.s_images, tape.param(weights.w_v));

  Var alpha_proto = softmax(scale(matmul_nt(q_proto, k_proto), inv_sqrt_dk));
  Var alpha_text = softmax(scale(matmul_nt(q_text, k_text), inv_sqrt_dk));
  Var gate = add(scale(alpha_proto, schedule.lambda1), scale(alpha_text, schedule.lambda2));
  return {mul_rows(values, gate), alpha_proto, alpha_text};
}

Var unmixed_values(const SignalBundle& bundle, DaaWeights& weights) {
  check_bundle(bundle, weights.w_v.value.cols());
  return linear(bundle.s_images, bundle.s_images.tape().param(weights.w_v));
}

Var difference_operator(const SignalBundle& bundle, DiffMap& diff) {
  check_bundle(bundle, diff.pi_d.value.cols());
  auto& tape = bundle.s_images.tape();
  Var deviation = sub(bundle.s_images, repeat_rows(bundle.s_proto, bundle.num_images()));
  return add(deviation, linear(deviation, tape.param(diff.pi_d)));
}

Var fuse(Var s_text, Var s_aug, Var s_diff) {
  const auto& a = s_aug.value();
  const auto& d = s_diff.value();
  if (a.rows() != d.rows()) {
    throw std::invalid_argument("fuse: " + std::to_string(a.rows()) + " augmented signals but " +
                                std::to_string(d.rows()) + " differential signals");
  }
  if (s_text.value().rows() != 1 || s_text.value().cols() != a.cols() || d.cols() != a.cols()) {
    throw std::invalid_argument("fuse: signal widths disagree");
  }
  std::array<Var, 3> parts{repeat_rows(s_text, a.rows()), s_aug, s_diff};
  return concat_cols(parts);
}

}  // namespace tippo
