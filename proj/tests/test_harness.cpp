#include <stdexcept>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"

#include "tippo/checkpoint.hpp"
#include "tippo/config.hpp"
#include "tippo/dataset.hpp"
#include "tippo/metrics.hpp"
#include "tippo/trainer.hpp"

using namespace tippo;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.dims = {6, 8, 8, 8, 8, 16, 16, 16, 2};
  c.task.vocab_size = 16;
  c.task.num_themes = 2;
  c.task.theme_tokens = 2;
  c.task.descriptors_per_theme = 2;
  c.task.text_length = 2;
  c.task.num_details = 5;
  c.task.min_images = 1;
  c.task.max_images = 3;
  c.task.num_samples = 40;
  c.task.d_raw = 6;
  c.sft.iterations = 300;
  c.sft.batch_size = 4;
  c.sft.optimizer = {OptimizerKind::kAdam, 1e-2};
  c.sft.eval_every_epochs = 0;
  c.ppo.iterations = 12;
  c.ppo.rollouts = 4;
  c.ppo.max_length = 8;
  c.ppo.optimizer = {OptimizerKind::kAdam, 1e-3};
  c.seeds = {5};
  c.validate();
  return c;
}

std::string dataset_text(const Dataset& d) {
  std::ostringstream os;
  write_dataset(os, d);
  return os.str();
}

bool same_parameters(TippoModel& a, TippoModel& b) {
  auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(pa[i]->value == pb[i]->value)) return false;
  return true;
}

std::string config_path(const std::string& name) { return std::string(TIPPO_SOURCE_DIR) + "/configs/" + name; }

}  // namespace

TEST_CASE("dataset generation is deterministic and well formed") {
  SyntheticTaskSpec spec;
  spec.num_samples = 120;
  const auto a = generate_dataset(spec);
  const auto b = generate_dataset(spec);
  CHECK(dataset_text(a) == dataset_text(b));
  REQUIRE(a.layout);
  for (const auto& s : a.samples) {
    CHECK(s.num_images() >= 3);
    CHECK(s.num_images() <= 5);
    CHECK(s.reference_tokens.size() == a.layout->theme_length + s.num_images() * a.layout->detail_tokens);
    CHECK_NOTHROW(validate_sample(s, spec.vocab_size, spec.d_raw));
  }
  spec.seed = 43;
  CHECK(dataset_text(generate_dataset(spec)) != dataset_text(a));
}

TEST_CASE("samples of one theme share the theme prefix") {
  SyntheticTaskSpec spec;
  spec.num_samples = 200;
  spec.num_themes = 2;
  const auto d = generate_dataset(spec);
  const std::size_t k = d.layout->theme_length;
  std::set<TokenSeq> prefixes;
  for (const auto& s : d.samples) prefixes.insert(TokenSeq(s.reference_tokens.begin(), s.reference_tokens.begin() + k));
  CHECK(prefixes.size() == 2);
}

TEST_CASE("dataset files round-trip") {
  SyntheticTaskSpec spec;
  spec.num_samples = 10;
  const auto d = generate_dataset(spec);
  const auto path = std::filesystem::temp_directory_path() / "tippo_roundtrip.jsonl";
  save_dataset(path.string(), d);
  const auto back = load_dataset(path.string());
  CHECK(dataset_text(back) == dataset_text(d));
  std::filesystem::remove(path);

  std::istringstream bad("{\"text_tokens\": [1], \"reference_tokens\": [2]}\n");
  CHECK_THROWS_AS(read_dataset(bad), std::invalid_argument);
}

TEST_CASE("task spec validation") {
  SyntheticTaskSpec spec;
  spec.min_images = 4;
  spec.max_images = 3;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  SyntheticTaskSpec small;
  small.vocab_size = 5;
  CHECK_THROWS_AS(small.validate(), std::invalid_argument);
}

TEST_CASE("ROUGE-L") {
  CHECK(rouge_l({1, 2, 3, 4}, {1, 3, 4}) == doctest::Approx(6.0 / 7.0).epsilon(1e-15));
  CHECK(std::abs(rouge_l({1, 2, 3, 4}, {1, 3, 4}) - 0.8571) < 1e-4);
  CHECK(rouge_l({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(rouge_l({1, 2}, {3, 4}) == 0.0);
  CHECK(rouge_l({}, {3, 4}) == 0.0);
}

TEST_CASE("ROUGE-L matches an exhaustive LCS") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    const auto la = std::uniform_int_distribution<std::size_t>(0, 8)(rng);
    const auto lb = std::uniform_int_distribution<std::size_t>(0, 8)(rng);
    std::uniform_int_distribution<int> sym(0, 3);
    oracle::Seq a(la), b(lb);
    for (auto& x : a) x = sym(rng);
    for (auto& x : b) x = sym(rng);
    REQUIRE(lcs_length(a, b) == oracle::lcs_exhaustive(a, b));
    REQUIRE(rouge_l(a, b) == oracle::rouge_l(a, b));
  }
}

TEST_CASE("config round-trips through JSON and validates") {
  const auto c = tiny_config();
  const ExperimentConfig back = nlohmann::json(c).get<ExperimentConfig>();
  CHECK(nlohmann::json(back) == nlohmann::json(c));
  CHECK(config_hash(back) == config_hash(c));
  auto bad = c;
  bad.dims.max_positions = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.dims.decoder_heads = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_NOTHROW(load_config(config_path("default.json")));
  CHECK_NOTHROW(load_config(config_path("experiment.json")));
  CHECK_NOTHROW(load_config(config_path("gradcheck.json")));
}

TEST_CASE("ablation switches rewire the fused signal") {
  auto cfg = tiny_config();
  TippoModel model(cfg);
  const auto data = dataset_for(cfg);
  const auto prepared = prepare_data(data, model, cfg.holdout_fraction);
  const auto& enc = prepared.encoded[0];
  const std::size_t n = enc.images.rows(), d = cfg.dims.d;
  const auto schedule = Schedule::at(1, 3);

  Tape tape;
  auto off = model.forward(tape, enc, schedule, {false, false});
  CHECK(off.fused.value().cols() == 3 * d);
  CHECK(off.diff.value() == Tensor::zeros({n, d}));
  const auto values = unmixed_values(off.signals, model.daa).value();
  CHECK(max_abs_diff(off.augmented.value(), values) == 0.0);

  auto on = model.forward(tape, enc, schedule, {true, true});
  auto daa = dual_alignment_attention(on.signals, model.daa, schedule);
  CHECK(max_abs_diff(on.augmented.value(), daa.augmented.value()) == 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += on.diff.value().at(i, c);
    CHECK(std::abs(total) < 1e-10);
  }
}

TEST_CASE("zero iterations leave parameters at initialization") {
  auto cfg = tiny_config();
  cfg.sft.iterations = 0;
  cfg.ppo.iterations = 0;
  TippoModel model(cfg);
  TippoModel init(model);
  const auto prepared = prepare_data(dataset_for(cfg), model, cfg.holdout_fraction);
  run_sft(cfg, model, prepared);
  CHECK(same_parameters(model, init));
  run_ppo(cfg, model, prepared);
  CHECK(same_parameters(model, init));
}

TEST_CASE("SFT starts near the uniform cross-entropy and improves the training split") {
  auto cfg = tiny_config();
  TippoModel model(cfg);
  TippoModel untrained(model);
  const auto prepared = prepare_data(dataset_for(cfg), model, cfg.holdout_fraction);
  const auto report = run_sft(cfg, model, prepared);
  CHECK(report.steps == cfg.sft.iterations);
  CHECK(std::abs(report.initial_ntp - std::log(16.0)) < 0.5);
  CHECK(report.final_ntp < 0.5 * report.initial_ntp);
  const auto trained = evaluate(model, prepared, prepared.split.train, cfg);
  const auto before = evaluate(untrained, prepared, prepared.split.train, cfg);
  CHECK(trained.rouge_l > before.rouge_l);
}

TEST_CASE("evaluation is deterministic and has a fixed schema") {
  auto cfg = tiny_config();
  TippoModel model(cfg);
  const auto prepared = prepare_data(dataset_for(cfg), model, cfg.holdout_fraction);
  const auto a = evaluate(model, prepared, prepared.split.heldout, cfg).to_json();
  const auto b = evaluate(model, prepared, prepared.split.heldout, cfg).to_json();
  CHECK(a == b);
  for (const char* key : {"rouge_l", "r_literal", "r_semantic", "n_samples"}) CHECK(a.contains(key));
  CHECK(a["n_samples"] == prepared.split.heldout.size());
}

TEST_CASE("PPO writes one reward line per iteration") {
  auto cfg = tiny_config();
  TippoModel model(cfg);
  const auto prepared = prepare_data(dataset_for(cfg), model, cfg.holdout_fraction);
  std::ostringstream log;
  const auto report = run_ppo(cfg, model, prepared, &log);
  CHECK(report.log.size() == static_cast<std::size_t>(cfg.ppo.iterations));
  std::istringstream lines(log.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j["m"] == count);
    ++count;
  }
  CHECK(count == static_cast<std::size_t>(cfg.ppo.iterations));
}

TEST_CASE("repeated runs are bitwise identical and checkpoints round-trip") {
  auto cfg = tiny_config();
  cfg.sft.iterations = 60;
  auto run = [&]() {
    TippoModel model(cfg);
    const auto prepared = prepare_data(dataset_for(cfg), model, cfg.holdout_fraction);
    run_sft(cfg, model, prepared);
    run_ppo(cfg, model, prepared);
    return make_checkpoint(model, cfg, "ppo", cfg.ppo.iterations, cfg.ppo.iterations);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.tensors.size() == b.tensors.size());
  for (const auto& [name, t] : a.tensors) CHECK(b.tensors.at(name) == t);

  const auto path = std::filesystem::temp_directory_path() / "tippo_ckpt.json";
  save_checkpoint(path.string(), a);
  const auto back = load_checkpoint(path.string());
  std::filesystem::remove(path);
  CHECK(back.stage == "ppo");
  CHECK(back.config_hash == a.config_hash);
  for (const auto& [name, t] : a.tensors) CHECK(back.tensors.at(name) == t);
  TippoModel restored = model_from_checkpoint(back);
  for (auto* p : restored.parameters()) CHECK(p->value == a.tensors.at(p->name));
}

TEST_CASE("doubles are stored by bit pattern") {
  for (double v : {0.0, -0.0, 1.0 / 3.0, 1e-308, 5e-324, -2.5e300}) {
    const double back = decode_double(encode_double(v));
    CHECK(std::memcmp(&back, &v, sizeof v) == 0);
  }
  CHECK_THROWS_AS(decode_double("xyz"), std::invalid_argument);
}

TEST_CASE("checkpoint loading rejects mismatched shapes") {
  auto cfg = tiny_config();
  TippoModel model(cfg);
  auto ckpt = make_checkpoint(model, cfg, "init", 0, 0);
  ckpt.tensors.begin()->second = Tensor::zeros({1});
  CHECK_THROWS_AS(restore_parameters(ckpt, model), std::invalid_argument);
}

TEST_CASE("SFT gradients pass the finite-difference check") {
  const auto cfg = load_config(config_path("gradcheck.json"));
  const auto report = gradcheck_sft(cfg);
  for (const auto& p : report.params) {
    INFO(p.name << " rel err " << p.max_rel_error << " analytic " << p.analytic << " numeric " << p.numeric);
    CHECK(p.passed);
  }
}

TEST_CASE("ablation grid emits twelve cells") {
  auto cfg = tiny_config();
  cfg.sft.iterations = 20;
  cfg.ppo.iterations = 3;
  const auto table = run_ablation_grid(cfg, dataset_for(cfg));
  CHECK(table.cells.size() == 12);
  CHECK(table.untrained.size() == 4);
  for (const auto& v : ablation_variants())
    for (auto obj : {Objective::kNtp, Objective::kPpo, Objective::kBoth})
      CHECK(table.cell(v.name, obj).per_seed.size() == 1);
}

TEST_CASE("SFT on the default task halves the token loss") {
  const auto cfg = load_config(config_path("default.json"));
  TippoModel model(cfg);
  const auto prepared = prepare_data(dataset_for(cfg), model, cfg.holdout_fraction);
  const auto sft = run_sft(cfg, model, prepared);
  MESSAGE("initial L_NTP " << sft.initial_ntp << ", final " << sft.final_ntp);
  CHECK(sft.final_ntp <= 0.5 * sft.initial_ntp);
}

TEST_CASE("PPO on the default task raises the reward") {
  // Fully trained SFT saturates the reward, so PPO starts from a short run.
  auto cfg = load_config(config_path("default.json"));
  cfg.sft.iterations = 300;
  TippoModel model(cfg);
  const auto prepared = prepare_data(dataset_for(cfg), model, cfg.holdout_fraction);
  run_sft(cfg, model, prepared);
  const auto ppo = run_ppo(cfg, model, prepared);
  const std::size_t tenth = ppo.log.size() / 10;
  const double first = ppo.mean_reward(0, tenth);
  const double last = ppo.mean_reward(ppo.log.size() - tenth, ppo.log.size());
  MESSAGE("PPO reward first 10% " << first << ", last 10% " << last);
  CHECK(last >= first);
}
