#include "tippo/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

namespace tippo {

using nlohmann::json;

Objective parse_objective(const std::string& name) {
  if (name == "ntp") return Objective::kNtp;
  if (name == "ppo") return Objective::kPpo;
  if (name == "both") return Objective::kBoth;
  throw std::invalid_argument("unknown objective '" + name + "' (expected ntp, ppo or both)");
}

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::kNtp: return "ntp";
    case Objective::kPpo: return "ppo";
    case Objective::kBoth: return "both";
  }
  return "both";
}

namespace {

json optimizer_to_json(const OptimizerConfig& o) {
  return json{{"kind", to_string(o.kind)},
              {"learning_rate", o.learning_rate},
              {"beta1", o.beta1},
              {"beta2", o.beta2},
              {"epsilon", o.epsilon},
              {"max_grad_norm", o.max_grad_norm}};
}

OptimizerConfig optimizer_from_json(const json& j, OptimizerConfig d) {
  OptimizerConfig o = d;
  o.kind = parse_optimizer_kind(j.value("kind", to_string(d.kind)));
  o.learning_rate = j.value("learning_rate", d.learning_rate);
  o.beta1 = j.value("beta1", d.beta1);
  o.beta2 = j.value("beta2", d.beta2);
  o.epsilon = j.value("epsilon", d.epsilon);
  o.max_grad_norm = j.value("max_grad_norm", d.max_grad_norm);
  return o;
}

}  // namespace

void to_json(json& j, const ExperimentConfig& c) {
  j = json{
      {"dims",
       {{"d_raw", c.dims.d_raw},
        {"d_enc", c.dims.d_enc},
        {"d", c.dims.d},
        {"d_k", c.dims.d_k},
        {"d_tok", c.dims.d_tok},
        {"d_hidden", c.dims.d_hidden},
        {"vocab_size", c.dims.vocab_size},
        {"max_positions", c.dims.max_positions},
        {"decoder_heads", c.dims.decoder_heads}}},
      {"sft",
       {{"iterations", c.sft.iterations},
        {"batch_size", c.sft.batch_size},
        {"optimizer", optimizer_to_json(c.sft.optimizer)},
        {"eval_every_epochs", c.sft.eval_every_epochs}}},
      {"ppo",
       {{"iterations", c.ppo.iterations},
        {"rollouts", c.ppo.rollouts},
        {"clip", c.ppo.clip},
        {"gamma", c.ppo.gamma},
        {"temperature", c.ppo.temperature},
        {"adv_window", c.ppo.adv_window},
        {"delta_mode", c.ppo.delta_mode == SpreadMode::kVariance ? "variance" : "std"},
        {"raw_literal_reward", c.ppo.raw_literal_reward},
        {"max_length", c.ppo.max_length},
        {"update_epochs", c.ppo.update_epochs},
        {"optimizer", optimizer_to_json(c.ppo.optimizer)}}},
      {"ablation",
       {{"enable_daa", c.ablation.enable_daa},
        {"enable_do", c.ablation.enable_do},
        {"enable_contrastive", c.ablation.enable_contrastive},
        {"objective", to_string(c.ablation.objective)}}},
      {"standard_infonce", c.standard_infonce},
      {"lambda1", c.inference_lambda1},
      {"seed", c.seed},
      {"encoder_seed", c.encoder_seed},
      {"seeds", c.seeds},
      {"holdout_fraction", c.holdout_fraction},
      {"task", c.task},
  };
  if (c.data_path) j["data_path"] = *c.data_path;
}

void from_json(const json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  c = d;
  if (auto it = j.find("dims"); it != j.end()) {
    const auto& x = *it;
    c.dims.d_raw = x.value("d_raw", d.dims.d_raw);
    c.dims.d_enc = x.value("d_enc", d.dims.d_enc);
    c.dims.d = x.value("d", d.dims.d);
    c.dims.d_k = x.value("d_k", c.dims.d);
    c.dims.d_tok = x.value("d_tok", d.dims.d_tok);
    c.dims.d_hidden = x.value("d_hidden", d.dims.d_hidden);
    c.dims.vocab_size = x.value("vocab_size", d.dims.vocab_size);
    c.dims.max_positions = x.value("max_positions", d.dims.max_positions);
    c.dims.decoder_heads = x.value("decoder_heads", d.dims.decoder_heads);
  }
  if (auto it = j.find("sft"); it != j.end()) {
    const auto& x = *it;
    c.sft.iterations = x.value("iterations", d.sft.iterations);
    c.sft.batch_size = x.value("batch_size", d.sft.batch_size);
    if (x.contains("optimizer")) c.sft.optimizer = optimizer_from_json(x["optimizer"], d.sft.optimizer);
    c.sft.eval_every_epochs = x.value("eval_every_epochs", d.sft.eval_every_epochs);
  }
  if (auto it = j.find("ppo"); it != j.end()) {
    const auto& x = *it;
    c.ppo.iterations = x.value("iterations", d.ppo.iterations);
    c.ppo.rollouts = x.value("rollouts", d.ppo.rollouts);
    c.ppo.clip = x.value("clip", d.ppo.clip);
    c.ppo.gamma = x.value("gamma", d.ppo.gamma);
    c.ppo.temperature = x.value("temperature", d.ppo.temperature);
    c.ppo.adv_window = x.value("adv_window", d.ppo.adv_window);
    c.ppo.delta_mode = parse_spread_mode(x.value("delta_mode", std::string("std")));
    c.ppo.raw_literal_reward = x.value("raw_literal_reward", d.ppo.raw_literal_reward);
    c.ppo.max_length = x.value("max_length", d.ppo.max_length);
    c.ppo.update_epochs = x.value("update_epochs", d.ppo.update_epochs);
    if (x.contains("optimizer")) c.ppo.optimizer = optimizer_from_json(x["optimizer"], d.ppo.optimizer);
  }
  if (auto it = j.find("ablation"); it != j.end()) {
    const auto& x = *it;
    c.ablation.enable_daa = x.value("enable_daa", d.ablation.enable_daa);
    c.ablation.enable_do = x.value("enable_do", d.ablation.enable_do);
    c.ablation.enable_contrastive = x.value("enable_contrastive", d.ablation.enable_contrastive);
    c.ablation.objective = parse_objective(x.value("objective", to_string(d.ablation.objective)));
  }
  c.standard_infonce = j.value("standard_infonce", d.standard_infonce);
  c.inference_lambda1 = j.value("lambda1", d.inference_lambda1);
  c.seed = j.value("seed", d.seed);
  c.encoder_seed = j.value("encoder_seed", d.encoder_seed);
  c.seeds = j.value("seeds", d.seeds);
  c.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
  if (j.contains("task")) c.task = j["task"].get<SyntheticTaskSpec>();
  if (j.contains("data_path")) c.data_path = j["data_path"].get<std::string>();
}

void ExperimentConfig::validate() const {
  if (dims.d == 0 || dims.d_k == 0 || dims.d_enc == 0 || dims.d_tok == 0 || dims.d_raw == 0 ||
      dims.d_hidden == 0 || dims.vocab_size < 2) {
    throw std::invalid_argument("config: dimensions must be positive");
  }
  if (dims.decoder_heads == 0 || dims.d_tok % dims.decoder_heads != 0) {
    throw std::invalid_argument("config: decoder_heads must divide d_tok");
  }
  if (dims.max_positions < task.max_images + ppo.max_length) {
    throw std::invalid_argument("config: max_positions must cover max_images + max_length");
  }
  if (task.vocab_size != dims.vocab_size || task.d_raw != dims.d_raw) {
    throw std::invalid_argument("config: task vocabulary/latent width disagree with model dimensions");
  }
  if (sft.batch_size == 0 || sft.iterations < 0 || ppo.iterations < 0 || ppo.rollouts == 0) {
    throw std::invalid_argument("config: iteration and batch counts must be valid");
  }
  if (!(ppo.clip > 0.0)) throw std::invalid_argument("config: ppo.clip must be positive");
  if (!(ppo.gamma > 0.0 && ppo.gamma <= 1.0)) throw std::invalid_argument("config: ppo.gamma must lie in (0, 1]");
  if (!(inference_lambda1 >= 0.0 && inference_lambda1 <= 1.0)) {
    throw std::invalid_argument("config: lambda1 must lie in [0, 1]");
  }
  if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  apply_seed_override(c);
  c.validate();
  return c;
}

void apply_seed_override(ExperimentConfig& c) {
  const char* env = std::getenv("TIPPO_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  const auto seed = std::strtoull(env, &end, 10);
  if (!end || *end != '\0') throw std::invalid_argument(std::string("TIPPO_SEED is not an integer: ") + env);
  c.seed = seed;
  c.seeds = {seed};
}

std::string config_hash(const ExperimentConfig& c) {
  // FNV-1a over the canonical dump.
  const std::string text = json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tippo
