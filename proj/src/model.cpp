#include "tippo/model.hpp"

namespace tippo {

DecoderDims decoder_dims(const ModelDims& dims) {
  return {dims.vocab_size, dims.d_tok, dims.d_hidden, 3 * dims.d, dims.max_positions, dims.decoder_heads};
}

TippoModel::TippoModel(const ModelDims& dims, std::uint64_t encoder_seed, std::uint64_t init_seed)
    : dims_(dims), encoder_(dims.vocab_size, dims.d_raw, dims.d_enc, encoder_seed) {
  Rng rng(init_seed);
  text_adapter = Adapter::init("adapter.text", dims.d_enc, dims.d, rng);
  visual_adapter = Adapter::init("adapter.visual", dims.d_enc, dims.d, rng);
  daa = DaaWeights::init(dims.d, dims.d_k, rng);
  diff = DiffMap::init(dims.d);
  decoder = DecoderParams::init(decoder_dims(dims), rng);
}

// Parameters are plain values, so a memberwise copy is a deep copy.
TippoModel::TippoModel(const TippoModel& other) = default;

PipelineOutput TippoModel::forward(Tape& tape, const EncodedSample& encoded, const Schedule& schedule,
                                   const AblationFlags& flags) {
  PipelineOutput out;
  out.signals = extract_signals(tape, encoded, text_adapter, visual_adapter);
  out.augmented = flags.enable_daa ? dual_alignment_attention(out.signals, daa, schedule).augmented
                                   : unmixed_values(out.signals, daa);
  if (flags.enable_do) {
    out.diff = difference_operator(out.signals, diff);
  } else {
    out.diff = tape.constant(Tensor::zeros({out.signals.num_images(), dims_.d}));
  }
  out.fused = fuse(out.signals.s_text, out.augmented, out.diff);
  return out;
}

Tensor TippoModel::fused_signals(const EncodedSample& encoded, const Schedule& schedule,
                                 const AblationFlags& flags) {
  Tape tape(false);
  return forward(tape, encoded, schedule, flags).fused.value();
}

ParameterList TippoModel::parameters() {
  ParameterList out;
  for (auto* p : text_adapter.parameters()) out.push_back(p);
  for (auto* p : visual_adapter.parameters()) out.push_back(p);
  for (auto* p : daa.parameters()) out.push_back(p);
  for (auto* p : diff.parameters()) out.push_back(p);
  for (auto* p : decoder.parameters()) out.push_back(p);
  return out;
}

Parameter* TippoModel::find_parameter(const std::string& name) {
  for (auto* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

}  // namespace tippo
