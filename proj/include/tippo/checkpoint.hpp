#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "json.hpp"

#include "tippo/config.hpp"
#include "tippo/model.hpp"

namespace tippo {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  std::string stage = "init";  // init | sft | ppo
  std::int64_t step = 0;
  std::int64_t total = 0;
  std::uint64_t seed = 0;
  std::string rng_state;
  std::string config_hash;
  ExperimentConfig config;
  std::map<std::string, Tensor> tensors;
};

Checkpoint make_checkpoint(TippoModel& model, const ExperimentConfig& config, std::string stage,
                           std::int64_t step, std::int64_t total, const std::string& rng_state = {});

// Builds a model from the checkpoint's config and loads every tensor.
TippoModel model_from_checkpoint(const Checkpoint& ckpt);
// Loads tensors into an existing model; names and shapes must match.
void restore_parameters(const Checkpoint& ckpt, TippoModel& model);

// 64-bit values as 16 hex digits of their IEEE-754 bit pattern.
std::string encode_double(double v);
double decode_double(const std::string& hex);

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tippo
