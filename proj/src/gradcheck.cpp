#include "tippo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tippo {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_rel_error);
  return m;
}

namespace {

double evaluate(const LossBuilder& loss_fn) {
  Tape tape(false);
  return loss_fn(tape).value().item();
}

}  // namespace

GradCheckReport finite_difference_check(const LossBuilder& loss_fn, const std::vector<Parameter*>& params,
                                        GradCheckOptions options) {
  if (options.step < 1e-7 || options.step > 1e-3) {
    throw std::invalid_argument("finite_difference_check: step must lie in [1e-7, 1e-3]");
  }
  GradCheckReport report;

  const double first = evaluate(loss_fn);
  const double second = evaluate(loss_fn);
  if (first != second) {
    report.passed = false;
    report.aborted = true;
    report.abort_reason = "loss function is not deterministic";
    return report;
  }

  Tape tape;
  Var root = loss_fn(tape);
  GradientMap grads = backward(tape, root);

  const double h = options.step;
  for (Parameter* p : params) {
    ParamCheck check;
    check.name = p->name;
    Tensor analytic = grads.get(*p);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = evaluate(loss_fn);
      p->value[i] = saved - h;
      const double down = evaluate(loss_fn);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i] * options.analytic_scale;
      const double err = relative_error(a, numeric);
      if (i == 0 || err > check.max_rel_error) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic = a;
        check.numeric = numeric;
      }
    }
    check.passed = check.max_rel_error < options.tolerance;
    report.passed = report.passed && check.passed;
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace tippo
