#pragma once

#include <optional>

#include "tippo/config.hpp"
#include "tippo/decoder.hpp"
#include "tippo/enrichment.hpp"
#include "tippo/signals.hpp"

namespace tippo {

struct PipelineOutput {
  SignalBundle signals;
  Var augmented;  // S^A, or W^V S^I with DAA disabled
  Var diff;       // S^D, or zeros with DO disabled
  Var fused;      // S^F
};

// Encoder stub, modal adapters, DAA, DO and decoder wired together.
class TippoModel {
 public:
  TippoModel(const ModelDims& dims, std::uint64_t encoder_seed, std::uint64_t init_seed);
  explicit TippoModel(const ExperimentConfig& cfg) : TippoModel(cfg.dims, cfg.encoder_seed, cfg.seed) {}

  TippoModel(const TippoModel& other);
  TippoModel& operator=(const TippoModel&) = delete;

  PipelineOutput forward(Tape& tape, const EncodedSample& encoded, const Schedule& schedule,
                         const AblationFlags& flags);

  // Fused signals only, outside any caller tape.
  Tensor fused_signals(const EncodedSample& encoded, const Schedule& schedule, const AblationFlags& flags);

  // Trainable parameters in a fixed order.
  ParameterList parameters();
  Parameter* find_parameter(const std::string& name);

  const EncoderStub& encoder() const { return encoder_; }
  const ModelDims& dims() const { return dims_; }

  Adapter text_adapter;
  Adapter visual_adapter;
  DaaWeights daa;
  DiffMap diff;
  DecoderParams decoder;
  // Frozen semantic embedder table, captured at the start of PolishPPO.
  std::optional<Tensor> embedder_table;

 private:
  ModelDims dims_;
  EncoderStub encoder_;
};

DecoderDims decoder_dims(const ModelDims& dims);

}  // namespace tippo
