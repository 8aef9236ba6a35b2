#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "tippo/checkpoint.hpp"
#include "tippo/config.hpp"
#include "tippo/dataset.hpp"
#include "tippo/trainer.hpp"

namespace {

using nlohmann::json;
using namespace tippo;

constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;

// Overrides shared by the training and evaluation commands.
struct Overrides {
  std::optional<double> lambda1;
  bool standard_infonce = false;
  std::optional<std::string> delta_mode;
  std::optional<std::size_t> adv_window;
  bool raw_literal_reward = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lambda1", lambda1, "lambda1 used at inference and during PolishPPO");
    cmd->add_flag("--standard-infonce", standard_infonce, "use the conventional InfoNCE denominator");
    cmd->add_option("--delta-mode", delta_mode, "advantage spread: std or variance");
    cmd->add_option("--adv-window", adv_window, "advantage window size (0 = full history)");
    cmd->add_flag("--raw-literal-reward", raw_literal_reward, "use 1 - raw edit distance as literal reward");
  }

  void apply(ExperimentConfig& cfg) const {
    if (lambda1) cfg.inference_lambda1 = *lambda1;
    if (standard_infonce) cfg.standard_infonce = true;
    if (delta_mode) cfg.ppo.delta_mode = parse_spread_mode(*delta_mode);
    if (adv_window) cfg.ppo.adv_window = *adv_window;
    if (raw_literal_reward) cfg.ppo.raw_literal_reward = true;
    cfg.validate();
  }
};

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

json eval_json(const EvalReport& r) {
  json j = r.to_json();
  if (r.detail_accuracy) j["detail_accuracy"] = *r.detail_accuracy;
  return j;
}

int generate_data(const std::string& spec_path, const std::string& out) {
  std::ifstream is(spec_path);
  if (!is) throw std::invalid_argument("cannot open spec " + spec_path);
  SyntheticTaskSpec spec = json::parse(is).get<SyntheticTaskSpec>();
  const Dataset data = generate_dataset(spec);
  save_dataset(out, data);
  print({{"out", out}, {"n_samples", data.samples.size()}, {"required_vocab", spec.required_vocab()}});
  return 0;
}

int train_sft(const std::string& config_path, const std::string& data_path, const std::string& out,
              const Overrides& overrides) {
  ExperimentConfig cfg = load_config(config_path);
  cfg.data_path = data_path;
  overrides.apply(cfg);
  TippoModel model(cfg);
  const PreparedData prepared = prepare_data(load_dataset(data_path), model, cfg.holdout_fraction);
  const auto report = run_sft(cfg, model, prepared, [](const SftEpochMetrics& e) {
    json line{{"epoch", e.epoch}, {"step", e.step}, {"l_ntp", e.l_ntp}, {"l_c", e.l_c}};
    if (e.heldout_rouge_l) line["heldout_rouge_l"] = *e.heldout_rouge_l;
    std::cerr << line.dump() << '\n';
  });
  save_checkpoint(out, make_checkpoint(model, cfg, "sft", cfg.sft.iterations, cfg.sft.iterations));
  const auto held = evaluate(model, prepared, prepared.split.heldout, cfg);
  print({{"checkpoint", out}, {"sft", report.to_json()}, {"heldout", eval_json(held)}});
  return 0;
}

int train_ppo(const std::string& config_path, const std::string& from, const std::string& out,
              const std::optional<std::string>& data_path, const std::optional<std::string>& reward_log,
              const Overrides& overrides) {
  ExperimentConfig cfg = load_config(config_path);
  if (data_path) cfg.data_path = *data_path;
  overrides.apply(cfg);
  const Checkpoint start = load_checkpoint(from);
  TippoModel model(cfg);
  restore_parameters(start, model);
  const PreparedData prepared = prepare_data(dataset_for(cfg), model, cfg.holdout_fraction);
  std::ofstream log_file;
  if (reward_log) {
    log_file.open(*reward_log);
    if (!log_file) throw std::invalid_argument("cannot open " + *reward_log + " for writing");
  }
  const auto report = run_ppo(cfg, model, prepared, reward_log ? &log_file : nullptr);
  save_checkpoint(out, make_checkpoint(model, cfg, "ppo", cfg.ppo.iterations, cfg.ppo.iterations));
  const auto held = evaluate(model, prepared, prepared.split.heldout, cfg);
  print({{"checkpoint", out}, {"ppo", report.to_json()}, {"heldout", eval_json(held)}});
  return 0;
}

int evaluate_ckpt(const std::string& ckpt_path, const std::string& data_path, const std::string& split,
                  const Overrides& overrides) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  ExperimentConfig cfg = ckpt.config;
  overrides.apply(cfg);
  TippoModel model = model_from_checkpoint(ckpt);
  const PreparedData prepared = prepare_data(load_dataset(data_path), model, cfg.holdout_fraction);
  std::vector<std::size_t> indices;
  if (split == "train") {
    indices = prepared.split.train;
  } else if (split == "heldout") {
    indices = prepared.split.heldout;
  } else {
    indices.resize(prepared.data.samples.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  }
  print(evaluate(model, prepared, indices, cfg).to_json());
  return 0;
}

int gradcheck(const std::string& config_path) {
  const ExperimentConfig cfg = load_config(config_path);
  const auto report = gradcheck_sft(cfg);
  json params = json::array();
  for (const auto& p : report.params) {
    params.push_back({{"name", p.name},
                      {"max_rel_error", p.max_rel_error},
                      {"worst_index", p.worst_index},
                      {"analytic", p.analytic},
                      {"numeric", p.numeric},
                      {"passed", p.passed}});
  }
  json out{{"passed", report.passed}, {"max_rel_error", report.max_rel_error()}, {"params", std::move(params)}};
  if (report.aborted) out["abort_reason"] = report.abort_reason;
  print(out);
  return report.passed ? 0 : kExitNumerical;
}

int ablate(const std::string& config_path, const Overrides& overrides) {
  ExperimentConfig cfg = load_config(config_path);
  overrides.apply(cfg);
  const Dataset data = dataset_for(cfg);
  const auto table = run_ablation_grid(cfg, data, [](const std::string& msg) { std::cerr << msg << '\n'; });
  print(table.to_json());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TIPPo: theme-aware multimodal description with PolishPPO refinement"};
  app.require_subcommand(1);

  std::string spec_path, config_path, data_path, out_path, from_path, ckpt_path, split = "all";
  std::optional<std::string> opt_data, reward_log;
  Overrides sft_overrides, ppo_overrides, eval_overrides, ablate_overrides;

  auto* gen = app.add_subcommand("generate-data", "write a synthetic dataset as JSON Lines");
  gen->add_option("--spec", spec_path, "task spec JSON")->required();
  gen->add_option("--out", out_path, "output .jsonl")->required();

  auto* sft = app.add_subcommand("train-sft", "supervised fine-tuning");
  sft->add_option("--config", config_path, "experiment config JSON")->required();
  sft->add_option("--data", data_path, "dataset .jsonl")->required();
  sft->add_option("--out", out_path, "checkpoint to write")->required();
  sft_overrides.attach(sft);

  auto* ppo = app.add_subcommand("train-ppo", "PolishPPO refinement from a checkpoint");
  ppo->add_option("--config", config_path, "experiment config JSON")->required();
  ppo->add_option("--from", from_path, "starting checkpoint")->required();
  ppo->add_option("--out", out_path, "checkpoint to write")->required();
  ppo->add_option("--data", opt_data, "dataset .jsonl (default: the config's task)");
  ppo->add_option("--reward-log", reward_log, "JSONL file with one line per iteration");
  ppo_overrides.attach(ppo);

  auto* eval = app.add_subcommand("evaluate", "greedy decoding metrics for a checkpoint");
  eval->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  eval->add_option("--data", data_path, "dataset .jsonl")->required();
  eval->add_option("--split", split, "all, train or heldout")->check(CLI::IsMember({"all", "train", "heldout"}));
  eval_overrides.attach(eval);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the SFT pipeline");
  grad->add_option("--config", config_path, "experiment config JSON")->required();

  auto* abl = app.add_subcommand("ablate", "DAA/DO x objective ablation grid");
  abl->add_option("--config", config_path, "experiment config JSON")->required();
  ablate_overrides.attach(abl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*gen) return generate_data(spec_path, out_path);
    if (*sft) return train_sft(config_path, data_path, out_path, sft_overrides);
    if (*ppo) return train_ppo(config_path, from_path, out_path, opt_data, reward_log, ppo_overrides);
    if (*eval) return evaluate_ckpt(ckpt_path, data_path, split, eval_overrides);
    if (*grad) return gradcheck(config_path);
    if (*abl) return ablate(config_path, ablate_overrides);
  } catch (const NumericalError& e) {
    print({{"error", "numerical"}, {"message", e.what()}});
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    print({{"error", "invalid_argument"}, {"message", e.what()}});
    return kExitInvalid;
  } catch (const nlohmann::json::exception& e) {
    print({{"error", "invalid_argument"}, {"message", e.what()}});
    return kExitInvalid;
  }
  return kExitInvalid;
}
