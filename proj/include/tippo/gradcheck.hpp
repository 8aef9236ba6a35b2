#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tippo/autograd.hpp"

namespace tippo {

// Builds a scalar loss on the given tape. Must be deterministic.
using LossBuilder = std::function<Var(Tape&)>;

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  bool passed = true;
  bool aborted = false;
  std::string abort_reason;

  double max_rel_error() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Multiplies the analytic gradient before comparison; used as a negative
  // control (a correct gradient scaled by 1.01 must fail).
  double analytic_scale = 1.0;
};

// Central differences (f(x+h) - f(x-h)) / 2h against backward(), with
// relative error |a - b| / max(|a|, |b|, 1e-8). Parameters are perturbed in
// place and restored.
GradCheckReport finite_difference_check(const LossBuilder& loss_fn, const std::vector<Parameter*>& params,
                                        GradCheckOptions options = {});

double relative_error(double a, double b);

}  // namespace tippo
