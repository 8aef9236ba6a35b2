#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tippo/dataset.hpp"
#include "tippo/objectives.hpp"
#include "tippo/optim.hpp"
#include "tippo/polish_ppo.hpp"

namespace tippo {

struct ModelDims {
  std::size_t d_raw = 12;
  std::size_t d_enc = 24;
  std::size_t d = 16;
  std::size_t d_k = 16;
  std::size_t d_tok = 32;
  std::size_t d_hidden = 64;
  std::size_t vocab_size = 64;
  std::size_t max_positions = 32;
  std::size_t decoder_heads = 4;
};

enum class Objective { kNtp, kPpo, kBoth };

Objective parse_objective(const std::string& name);
std::string to_string(Objective objective);

struct AblationFlags {
  bool enable_daa = true;
  bool enable_do = true;
  bool enable_contrastive = true;
  Objective objective = Objective::kBoth;
};

struct SftConfig {
  std::int64_t iterations = 5000;
  std::size_t batch_size = 8;
  OptimizerConfig optimizer{OptimizerKind::kSgd, 5e-5};
  // Held-out ROUGE-L every this many epochs; 0 evaluates only at the end.
  std::size_t eval_every_epochs = 1;
};

struct PpoConfig {
  std::int64_t iterations = 1000;
  std::size_t rollouts = 16;
  double clip = 0.2;
  double gamma = 0.95;
  double temperature = 1.0;
  std::size_t adv_window = 256;
  SpreadMode delta_mode = SpreadMode::kStdDev;
  bool raw_literal_reward = false;
  std::size_t max_length = 16;
  // Gradient steps per rollout batch.
  std::size_t update_epochs = 1;
  OptimizerConfig optimizer{OptimizerKind::kSgd, 1e-5};
};

struct ExperimentConfig {
  ModelDims dims;
  SftConfig sft;
  PpoConfig ppo;
  AblationFlags ablation;
  bool standard_infonce = false;
  double inference_lambda1 = 1.0;
  std::uint64_t seed = 42;
  std::uint64_t encoder_seed = 7;
  std::vector<std::uint64_t> seeds{42, 43, 44};
  double holdout_fraction = 0.2;
  SyntheticTaskSpec task;
  std::optional<std::string> data_path;

  void validate() const;
  InfoNceForm infonce_form() const {
    return standard_infonce ? InfoNceForm::kStandard : InfoNceForm::kAsWritten;
  }
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::string& path);
// Applies TIPPO_SEED, when set, to every seed field except the task's.
void apply_seed_override(ExperimentConfig& c);

std::string config_hash(const ExperimentConfig& c);

}  // namespace tippo
