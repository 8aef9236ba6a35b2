#pragma once

#include <cstdint>
#include <utility>

#include "tippo/autograd.hpp"
#include "tippo/optim.hpp"
#include "tippo/signals.hpp"

namespace tippo {

// Training-stage weights of the two alignment maps: lambda1 = m / M weighs
// the prototype map, lambda2 = 1 - lambda1 the text map.
struct Schedule {
  std::int64_t step = 0;
  std::int64_t total = 1;
  double lambda1 = 0.0;
  double lambda2 = 1.0;

  static Schedule at(std::int64_t step, std::int64_t total);
  // Frozen weights, used after training (default lambda1 = 1).
  static Schedule frozen(double lambda1);
};

std::pair<double, double> lambda_schedule(std::int64_t step, std::int64_t total);

struct DaaWeights {
  Parameter w_tq;   // d_k x d, text query
  Parameter w_pq;   // d_k x d, prototype query
  Parameter w_tik;  // d_k x d, text-image keys
  Parameter w_pik;  // d_k x d, prototype-image keys
  Parameter w_v;    // d x d, image values

  static DaaWeights init(std::size_t d, std::size_t d_k, Rng& rng);
  std::size_t key_dim() const { return w_tq.value.rows(); }
  ParameterList parameters();
};

// Residual map on prototype deviations; no bias, zero at initialization.
struct DiffMap {
  Parameter pi_d;  // d x d

  static DiffMap init(std::size_t d);
  ParameterList parameters() { return {&pi_d}; }
};

struct AttentionResult {
  Var augmented;   // N x d, S^A
  Var alpha_proto;  // 1 x N
  Var alpha_text;   // 1 x N
};

// Per-image gating of the values by the scheduled mix of the prototype-image
// and text-image attention distributions over the N images.
AttentionResult dual_alignment_attention(const SignalBundle& bundle, DaaWeights& weights,
                                         const Schedule& schedule);

// Values only (the DAA-ablated path): W^V S_i^I with no attention mix.
Var unmixed_values(const SignalBundle& bundle, DaaWeights& weights);

// (S_i^I - S^P) + pi_D (S_i^I - S^P) for each image.
Var difference_operator(const SignalBundle& bundle, DiffMap& diff);

// Row i is [S^T ; S_i^A ; S_i^D].
Var fuse(Var s_text, Var s_aug, Var s_diff);

}  // namespace tippo
