#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "tippo/config.hpp"
#include "tippo/dataset.hpp"
#include "tippo/gradcheck.hpp"
#include "tippo/model.hpp"

namespace tippo {

// A loss or tensor went non-finite during training.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset with encoder outputs cached (the encoder is frozen) and a split.
struct PreparedData {
  Dataset data;
  std::vector<EncodedSample> encoded;
  Split split;
};

PreparedData prepare_data(Dataset data, const TippoModel& model, double holdout_fraction);

// Dataset named by the config, or generated from its task spec.
Dataset dataset_for(const ExperimentConfig& cfg);

struct SftLoss {
  Var total;  // mean over the batch of L_NTP + L_C
  double l_ntp = 0.0;
  double l_c = 0.0;
};

// Teacher-forced L_SFT over a batch. Samples with a single image fall back to
// a batch-level prototype for the contrastive term.
SftLoss sft_batch_loss(Tape& tape, TippoModel& model, const PreparedData& prepared,
                       std::span<const std::size_t> batch, const Schedule& schedule, const ExperimentConfig& cfg);

struct EvalReport {
  double rouge_l = 0.0;
  double r_literal = 0.0;
  double r_semantic = 0.0;
  std::size_t n_samples = 0;
  // Position-aligned accuracy on detail tokens; needs a known task layout.
  std::optional<double> detail_accuracy;

  nlohmann::json to_json() const;
};

// Greedy decoding with the frozen inference schedule.
EvalReport evaluate(TippoModel& model, const PreparedData& prepared, std::span<const std::size_t> indices,
                    const ExperimentConfig& cfg);

struct SftEpochMetrics {
  std::size_t epoch = 0;
  std::int64_t step = 0;
  double l_ntp = 0.0;
  double l_c = 0.0;
  std::optional<double> heldout_rouge_l;
};

struct SftReport {
  std::int64_t steps = 0;
  double initial_ntp = 0.0;
  double initial_lc = 0.0;
  double final_ntp = 0.0;
  double final_lc = 0.0;
  std::vector<SftEpochMetrics> epochs;

  nlohmann::json to_json() const;
};

SftReport run_sft(const ExperimentConfig& cfg, TippoModel& model, const PreparedData& prepared,
                  const std::function<void(const SftEpochMetrics&)>& on_epoch = {});

struct PpoIterationLog {
  std::int64_t m = 0;
  double r_literal = 0.0;
  double r_semantic = 0.0;
  double g = 0.0;
  double advantage = 0.0;
  double surrogate_loss = 0.0;

  nlohmann::json to_json() const;
};

struct PpoStageReport {
  std::vector<PpoIterationLog> log;

  double mean_reward(std::size_t begin, std::size_t end) const;  // r_literal + r_semantic
  nlohmann::json to_json() const;
};

// PolishPPO over the training split. Writes one JSON line per iteration to
// `reward_log` when given.
PpoStageReport run_ppo(const ExperimentConfig& cfg, TippoModel& model, const PreparedData& prepared,
                       std::ostream* reward_log = nullptr);

struct AblationVariant {
  std::string name;
  bool enable_daa;
  bool enable_do;
};

const std::vector<AblationVariant>& ablation_variants();

struct AblationCell {
  std::string variant;
  Objective objective;
  std::vector<EvalReport> per_seed;
  EvalReport mean;
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationCell> cells;
  // Untrained model per variant (mean over seeds).
  std::vector<std::pair<std::string, EvalReport>> untrained;

  const AblationCell& cell(const std::string& variant, Objective objective) const;
  const EvalReport& untrained_for(const std::string& variant) const;
  nlohmann::json to_json() const;
};

// {TIP, TIP+DAA, TIP+DO, TIPPo} x {ntp, ppo, both} on the held-out split.
// "both" continues PolishPPO from the ntp checkpoint of the same seed.
AblationTable run_ablation_grid(const ExperimentConfig& cfg, const Dataset& data,
                                const std::function<void(const std::string&)>& progress = {});
// The same grid over a subset of variants.
AblationTable run_ablation_grid(const ExperimentConfig& cfg, const Dataset& data,
                                std::span<const AblationVariant> variants,
                                const std::function<void(const std::string&)>& progress = {});

EvalReport mean_report(std::span<const EvalReport> reports);

// Finite-difference check of every trainable tensor through the full L_SFT
// pipeline, on the first `batch_size` samples of the config's task, at
// schedule step m of M. Parameters are redrawn uniformly in
// [-point_scale, point_scale].
GradCheckReport gradcheck_sft(const ExperimentConfig& cfg, std::size_t batch_size = 2, std::int64_t m = 1,
                              std::int64_t M = 3, double point_scale = 1.0, GradCheckOptions options = {});

}  // namespace tippo
