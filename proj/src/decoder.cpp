#include "tippo/decoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tippo {

DecoderParams DecoderParams::init(const DecoderDims& dims, Rng& rng) {
  const auto v = dims.vocab_size, t = dims.d_tok, h = dims.d_hidden, f = dims.d_fused;
  if (dims.num_heads == 0 || t % dims.num_heads != 0) {
    throw std::invalid_argument("decoder: num_heads must divide d_tok");
  }
  DecoderParams p;
  p.num_heads = dims.num_heads;
  p.tok_emb = make_parameter("lm.tok_emb", {v, t}, t, rng);
  p.slot_emb = make_parameter("lm.slot_emb", {dims.max_positions, t}, t, rng);
  p.pos_emb = make_parameter("lm.pos_emb", {dims.max_positions, t}, t, rng);
  p.prefix_w = make_parameter("lm.prefix_w", {t, f}, f, rng);
  p.prefix_b = make_parameter("lm.prefix_b", {t}, f, rng);
  p.wq = make_parameter("lm.wq", {t, t}, t, rng);
  p.wk = make_parameter("lm.wk", {t, t}, t, rng);
  p.wv = make_parameter("lm.wv", {t, t}, t, rng);
  p.wo = make_parameter("lm.wo", {t, t}, t, rng);
  p.mlp_w1 = make_parameter("lm.mlp_w1", {h, t}, t, rng);
  p.mlp_b1 = make_parameter("lm.mlp_b1", {h}, t, rng);
  p.mlp_w2 = make_parameter("lm.mlp_w2", {t, h}, h, rng);
  p.mlp_b2 = make_parameter("lm.mlp_b2", {t}, h, rng);
  p.out_w = make_parameter("lm.out_w", {v, t}, t, rng);
  p.out_b = make_parameter("lm.out_b", {v}, t, rng);
  return p;
}

DecoderDims DecoderParams::dims() const {
  return {tok_emb.value.rows(), tok_emb.value.cols(), mlp_w1.value.rows(), prefix_w.value.cols(),
          pos_emb.value.rows(), num_heads};
}

ParameterList DecoderParams::parameters() {
  return {&tok_emb, &slot_emb, &pos_emb, &prefix_w, &prefix_b, &wq,    &wk,    &wv,
          &wo,      &mlp_w1,   &mlp_b1,  &mlp_w2,   &mlp_b2,   &out_w, &out_b};
}

Var decode_logits(Var fused, std::span<const int> prefix_tokens, DecoderParams& params, bool last_row_only) {
  const auto dims = params.dims();
  const auto& fv = fused.value();
  if (fv.cols() != dims.d_fused) {
    throw std::invalid_argument("decode_logits: fused width " + std::to_string(fv.cols()) + ", expected " +
                                std::to_string(dims.d_fused));
  }
  for (int tok : prefix_tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= dims.vocab_size) {
      throw std::invalid_argument("decode_logits: token " + std::to_string(tok) + " out of vocabulary");
    }
  }
  const std::size_t slots = fv.rows();
  const std::size_t len = slots + prefix_tokens.size();
  if (len > dims.max_positions) {
    throw std::invalid_argument("decode_logits: sequence of " + std::to_string(len) +
                                " positions exceeds the maximum " + std::to_string(dims.max_positions));
  }
  auto& tape = fused.tape();
  auto p = [&tape](Parameter& prm) { return tape.param(prm); };

  // Slots and tokens count positions separately, so token t can find slot
  // t - k by position whatever the number of slots.
  Var x = add(linear(fused, p(params.prefix_w), p(params.prefix_b)), slice_rows(p(params.slot_emb), 0, slots));
  if (!prefix_tokens.empty()) {
    Var toks = add(gather_rows(p(params.tok_emb), prefix_tokens),
                   slice_rows(p(params.pos_emb), 0, prefix_tokens.size()));
    std::array<Var, 2> parts{x, toks};
    x = concat_rows(parts);
  }

  const std::size_t d_head = dims.d_tok / dims.num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
  std::vector<Var> heads;
  heads.reserve(dims.num_heads);
  for (std::size_t hd = 0; hd < dims.num_heads; ++hd) {
    Var q = linear(x, slice_rows(p(params.wq), hd * d_head, d_head));
    Var k = linear(x, slice_rows(p(params.wk), hd * d_head, d_head));
    Var v = linear(x, slice_rows(p(params.wv), hd * d_head, d_head));
    Var attn = softmax(scale(matmul_nt(q, k), inv_sqrt), 0);
    heads.push_back(matmul(attn, v));
  }
  Var mixed = heads.size() == 1 ? heads.front() : concat_cols(heads);
  Var h = add(x, linear(mixed, p(params.wo)));
  Var hidden = tanh(linear(h, p(params.mlp_w1), p(params.mlp_b1)));
  h = add(h, linear(hidden, p(params.mlp_w2), p(params.mlp_b2)));

  Var rows = last_row_only ? slice_rows(h, len - 1, 1) : slice_rows(h, slots - 1, prefix_tokens.size() + 1);
  return linear(rows, p(params.out_w), p(params.out_b));
}

Var ntp_loss(Var logits, std::span<const int> targets) {
  if (targets.empty()) throw std::invalid_argument("ntp_loss: empty targets");
  return cross_entropy(logits, targets);
}

Generation generate(const Tensor& fused, const GenerationConfig& cfg, DecoderParams& params) {
  if (cfg.temperature < 0.0) throw std::invalid_argument("generate: temperature must be >= 0");
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double temp = cfg.temperature > 0.0 ? cfg.temperature : 1.0;
  Generation out;
  for (std::size_t step = 0; step < cfg.max_length; ++step) {
    Tape tape(false);
    Var logits = decode_logits(tape.constant(fused), out.actions, params, true);
    const auto& row = logits.value();
    const std::size_t vsize = row.cols();

    std::vector<double> scaled(vsize);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < vsize; ++c) {
      scaled[c] = row[c] / temp;
      mx = std::max(mx, scaled[c]);
    }
    double z = 0.0;
    for (auto s : scaled) z += std::exp(s - mx);
    const double lse = mx + std::log(z);

    std::size_t choice = 0;
    if (cfg.temperature == 0.0) {
      choice = static_cast<std::size_t>(std::max_element(row.values().begin(), row.values().end()) -
                                        row.values().begin());
    } else {
      double u = unit(rng);
      double acc = 0.0;
      choice = vsize - 1;
      for (std::size_t c = 0; c < vsize; ++c) {
        acc += std::exp(scaled[c] - lse);
        if (u < acc) {
          choice = c;
          break;
        }
      }
    }
    const int tok = static_cast<int>(choice);
    out.actions.push_back(tok);
    out.log_probs.push_back(scaled[choice] - lse);
    if (tok == cfg.eos_token) break;
    out.tokens.push_back(tok);
  }
  return out;
}

}  // namespace tippo
