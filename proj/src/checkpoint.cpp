#include "tippo/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

namespace tippo {

using nlohmann::json;

namespace {

constexpr const char* kEmbedderName = "ppo.embedder";

}  // namespace

std::string encode_double(double v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
  return buf;
}

double decode_double(const std::string& hex) {
  if (hex.size() != 16) throw std::invalid_argument("checkpoint: bad hex value '" + hex + "'");
  char* end = nullptr;
  const auto bits = std::strtoull(hex.c_str(), &end, 16);
  if (end != hex.c_str() + hex.size()) throw std::invalid_argument("checkpoint: bad hex value '" + hex + "'");
  return std::bit_cast<double>(static_cast<std::uint64_t>(bits));
}

Checkpoint make_checkpoint(TippoModel& model, const ExperimentConfig& config, std::string stage,
                           std::int64_t step, std::int64_t total, const std::string& rng_state) {
  Checkpoint c;
  c.stage = std::move(stage);
  c.step = step;
  c.total = total;
  c.seed = config.seed;
  c.rng_state = rng_state;
  c.config = config;
  c.config_hash = config_hash(config);
  for (auto* p : model.parameters()) c.tensors[p->name] = p->value;
  if (model.embedder_table) c.tensors[kEmbedderName] = *model.embedder_table;
  return c;
}

void restore_parameters(const Checkpoint& ckpt, TippoModel& model) {
  for (auto* p : model.parameters()) {
    auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end()) throw std::invalid_argument("checkpoint is missing tensor " + p->name);
    if (it->second.shape() != p->value.shape()) {
      throw std::invalid_argument("checkpoint tensor " + p->name + " has shape " +
                                  shape_to_string(it->second.shape()) + ", model expects " +
                                  shape_to_string(p->value.shape()));
    }
    p->value = it->second;
  }
  if (auto it = ckpt.tensors.find(kEmbedderName); it != ckpt.tensors.end()) {
    model.embedder_table = it->second;
  } else {
    model.embedder_table.reset();
  }
}

TippoModel model_from_checkpoint(const Checkpoint& ckpt) {
  TippoModel model(ckpt.config);
  restore_parameters(ckpt, model);
  return model;
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  json tensors = json::object();
  for (const auto& [name, t] : ckpt.tensors) {
    json values = json::array();
    for (double v : t.values()) values.push_back(encode_double(v));
    tensors[name] = json{{"shape", t.shape()}, {"data", std::move(values)}};
  }
  return json{{"format_version", ckpt.format_version},
              {"stage", ckpt.stage},
              {"schedule", {{"m", ckpt.step}, {"M", ckpt.total}}},
              {"seed", ckpt.seed},
              {"rng_state", ckpt.rng_state},
              {"config_hash", ckpt.config_hash},
              {"config", ckpt.config},
              {"tensors", std::move(tensors)}};
}

Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint c;
  try {
    c.format_version = j.at("format_version").get<int>();
    if (c.format_version != kCheckpointFormatVersion) {
      throw std::invalid_argument("unsupported checkpoint format version " + std::to_string(c.format_version));
    }
    c.stage = j.at("stage").get<std::string>();
    c.step = j.at("schedule").at("m").get<std::int64_t>();
    c.total = j.at("schedule").at("M").get<std::int64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.rng_state = j.value("rng_state", std::string{});
    c.config_hash = j.at("config_hash").get<std::string>();
    c.config = j.at("config").get<ExperimentConfig>();
    for (const auto& [name, t] : j.at("tensors").items()) {
      auto shape = t.at("shape").get<Shape>();
      std::vector<double> data;
      for (const auto& v : t.at("data")) data.push_back(decode_double(v.get<std::string>()));
      c.tensors.emplace(name, Tensor(std::move(shape), std::move(data)));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed checkpoint: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path);
  if (!os) throw std::invalid_argument("cannot open " + path + " for writing");
  os << checkpoint_to_json(ckpt).dump() << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open checkpoint " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw std::invalid_argument("checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace tippo
