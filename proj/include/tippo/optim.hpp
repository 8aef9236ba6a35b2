#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "tippo/autograd.hpp"

namespace tippo {

using Rng = std::mt19937_64;
using ParameterList = std::vector<Parameter*>;

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Parameter make_parameter(std::string name, Shape shape, std::size_t fan_in, Rng& rng);
Parameter zero_parameter(std::string name, Shape shape);

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double max_grad_norm = 0.0;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  // Descends along grads; parameters without an entry are left alone.
  void step(const ParameterList& params, const GradientMap& grads);

  const OptimizerConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  OptimizerConfig config_;
  std::int64_t steps_ = 0;
  std::unordered_map<const Parameter*, Moments> moments_;
};

double global_grad_norm(const ParameterList& params, const GradientMap& grads);

}  // namespace tippo
