#include "tippo/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tippo {

Parameter make_parameter(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw std::invalid_argument("make_parameter: fan_in must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor value = Tensor::zeros(std::move(shape));
  for (auto& v : value.values()) v = dist(rng);
  return Parameter{std::move(name), std::move(value)};
}

Parameter zero_parameter(std::string name, Shape shape) {
  return Parameter{std::move(name), Tensor::zeros(std::move(shape))};
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

double global_grad_norm(const ParameterList& params, const GradientMap& grads) {
  double s = 0.0;
  for (const auto* p : params) {
    if (const auto* g = grads.find(*p)) {
      for (auto v : g->values()) s += v * v;
    }
  }
  return std::sqrt(s);
}

void Optimizer::step(const ParameterList& params, const GradientMap& grads) {
  ++steps_;
  double clip = 1.0;
  if (config_.max_grad_norm > 0.0) {
    double norm = global_grad_norm(params, grads);
    if (norm > config_.max_grad_norm) clip = config_.max_grad_norm / norm;
  }
  const double lr = config_.learning_rate;
  for (auto* p : params) {
    const auto* g = grads.find(*p);
    if (!g) continue;
    auto w = p->value.data();
    auto gv = g->data();
    if (config_.kind == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * clip * gv[i];
      continue;
    }
    auto& mom = moments_[p];
    if (mom.m.empty()) {
      mom.m.assign(w.size(), 0.0);
      mom.v.assign(w.size(), 0.0);
    }
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = gv[i] * clip;
      mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * gi;
      mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * gi * gi;
      const double mhat = mom.m[i] / c1;
      const double vhat = mom.v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

}  // namespace tippo
