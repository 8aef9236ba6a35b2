#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tippo/autograd.hpp"
#include "tippo/optim.hpp"
#include "tippo/signals.hpp"

namespace tippo {

struct DecoderDims {
  std::size_t vocab_size = 64;
  std::size_t d_tok = 32;
  std::size_t d_hidden = 64;
  std::size_t d_fused = 48;  // 3d
  std::size_t max_positions = 32;
  std::size_t num_heads = 4;  // must divide d_tok
};

// Single-layer causal multi-head self-attention decoder conditioned on prefix
// slots.
struct DecoderParams {
  Parameter tok_emb;   // vocab x d_tok
  Parameter slot_emb;  // max_positions x d_tok, prefix slot positions
  Parameter pos_emb;   // max_positions x d_tok, token positions
  Parameter prefix_w;  // d_tok x d_fused
  Parameter prefix_b;  // d_tok
  Parameter wq, wk, wv, wo;  // d_tok x d_tok
  Parameter mlp_w1;    // d_hidden x d_tok
  Parameter mlp_b1;    // d_hidden
  Parameter mlp_w2;    // d_tok x d_hidden
  Parameter mlp_b2;    // d_tok
  Parameter out_w;     // vocab x d_tok
  Parameter out_b;     // vocab
  std::size_t num_heads = 1;

  static DecoderParams init(const DecoderDims& dims, Rng& rng);
  DecoderDims dims() const;
  ParameterList parameters();
};

// One logit row per next-token position: row t predicts the token after the
// first t prefix tokens, so the result has len(prefix_tokens) + 1 rows.
// With last_row_only only the final row is produced.
Var decode_logits(Var fused, std::span<const int> prefix_tokens, DecoderParams& params,
                  bool last_row_only = false);

// Mean token cross-entropy of targets under the leading logit rows.
Var ntp_loss(Var logits, std::span<const int> targets);

struct GenerationConfig {
  std::size_t max_length = 16;
  double temperature = 1.0;  // 0 means greedy
  std::uint64_t seed = 0;
  int eos_token = 0;
};

struct Generation {
  TokenSeq tokens;             // emitted tokens, eos excluded
  TokenSeq actions;            // sampled tokens, eos included when sampled
  std::vector<double> log_probs;  // per action, under the sampling policy
};

// Autoregressive decoding from the fused signals. Log-probabilities are
// taken under softmax(logits / T), or T = 1 for greedy decoding.
Generation generate(const Tensor& fused, const GenerationConfig& cfg, DecoderParams& params);

}  // namespace tippo
