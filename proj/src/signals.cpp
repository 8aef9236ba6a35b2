#include "tippo/signals.hpp"

#include <cmath>
#include <stdexcept>

namespace tippo {

void validate_sample(const RawSample& sample, std::size_t vocab_size, std::size_t d_raw) {
  if (sample.image_latents.empty()) throw std::invalid_argument("sample has no images");
  auto check_tokens = [vocab_size](const TokenSeq& seq, const char* what) {
    for (int tok : seq) {
      if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_size) {
        throw std::invalid_argument(std::string(what) + " token " + std::to_string(tok) +
                                    " outside vocabulary of size " + std::to_string(vocab_size));
      }
    }
  };
  check_tokens(sample.text_tokens, "text");
  check_tokens(sample.reference_tokens, "reference");
  for (const auto& latent : sample.image_latents) {
    if (latent.size() != d_raw) {
      throw std::invalid_argument("image latent has width " + std::to_string(latent.size()) +
                                  ", expected " + std::to_string(d_raw));
    }
    for (double v : latent) {
      if (!std::isfinite(v)) throw std::invalid_argument("image latent is not finite");
    }
  }
}

EncoderStub::EncoderStub(std::size_t vocab_size, std::size_t d_raw, std::size_t d_enc, std::uint64_t seed)
    : token_table_(Tensor::zeros({vocab_size, d_enc})), image_map_(Tensor::zeros({d_enc, d_raw})) {
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (auto& v : token_table_.values()) v = unit(rng);
  std::normal_distribution<double> proj(0.0, 1.0 / std::sqrt(static_cast<double>(d_raw)));
  for (auto& v : image_map_.values()) v = proj(rng);
}

EncodedSample EncoderStub::encode(const RawSample& sample) const {
  validate_sample(sample, vocab_size(), d_raw());
  const std::size_t d = d_enc();
  Tensor text = Tensor::zeros({1, d});
  for (int tok : sample.text_tokens) {
    auto row = token_table_.row(static_cast<std::size_t>(tok));
    for (std::size_t c = 0; c < d; ++c) text[c] += row[c];
  }
  if (!sample.text_tokens.empty()) {
    const double inv = 1.0 / static_cast<double>(sample.text_tokens.size());
    for (auto& v : text.values()) v *= inv;
  }
  const std::size_t n = sample.num_images();
  Tensor images = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& latent = sample.image_latents[i];
    for (std::size_t r = 0; r < d; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < latent.size(); ++c) s += image_map_.at(r, c) * latent[c];
      images.at(i, r) = s;
    }
  }
  return {std::move(text), std::move(images)};
}

Adapter Adapter::init(const std::string& name, std::size_t d_enc, std::size_t d, Rng& rng, bool with_bias) {
  Adapter a;
  a.weight = make_parameter(name + ".weight", {d, d_enc}, d_enc, rng);
  a.bias = with_bias ? make_parameter(name + ".bias", {d}, d_enc, rng) : zero_parameter(name + ".bias", {d});
  a.has_bias = with_bias;
  return a;
}

ParameterList Adapter::parameters() {
  if (has_bias) return {&weight, &bias};
  return {&weight};
}

Var adapt(Var embedding, Adapter& adapter) {
  if (embedding.value().cols() != adapter.in_dim()) {
    throw std::invalid_argument("adapt: embedding width " + std::to_string(embedding.value().cols()) +
                                " does not match adapter input " + std::to_string(adapter.in_dim()));
  }
  auto& tape = embedding.tape();
  Var w = tape.param(adapter.weight);
  if (!adapter.has_bias) return linear(embedding, w);
  return linear(embedding, w, tape.param(adapter.bias));
}

Var compute_prototype(Var s_images) {
  if (s_images.value().empty()) throw std::invalid_argument("compute_prototype: no image signals");
  return row_mean(s_images);
}

std::vector<double> compute_prototype(const std::vector<std::vector<double>>& s_images) {
  if (s_images.empty()) throw std::invalid_argument("compute_prototype: no image signals");
  std::vector<double> proto(s_images.front().size(), 0.0);
  for (const auto& s : s_images) {
    if (s.size() != proto.size()) throw std::invalid_argument("compute_prototype: ragged signals");
    for (std::size_t c = 0; c < s.size(); ++c) proto[c] += s[c];
  }
  for (auto& v : proto) v /= static_cast<double>(s_images.size());
  return proto;
}

SignalBundle extract_signals(Tape& tape, const EncodedSample& encoded, Adapter& text_adapter,
                             Adapter& visual_adapter) {
  Var text = adapt(tape.constant(encoded.text), text_adapter);
  Var images = adapt(tape.constant(encoded.images), visual_adapter);
  return {text, images, compute_prototype(images)};
}

}  // namespace tippo
