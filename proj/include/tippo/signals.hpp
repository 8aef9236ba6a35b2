#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tippo/autograd.hpp"
#include "tippo/optim.hpp"

namespace tippo {

using TokenSeq = std::vector<int>;

struct RawSample {
  TokenSeq text_tokens;
  std::vector<std::vector<double>> image_latents;  // N x d_raw
  TokenSeq reference_tokens;

  std::size_t num_images() const { return image_latents.size(); }
};

// Throws std::invalid_argument when N == 0, a token is outside the
// vocabulary, a latent has the wrong width, or a latent is non-finite.
void validate_sample(const RawSample& sample, std::size_t vocab_size, std::size_t d_raw);

struct EncodedSample {
  Tensor text;    // 1 x d_enc
  Tensor images;  // N x d_enc
};

// Frozen featurizer: a seeded token table with mean pooling for text and a
// seeded linear map for image latents. Never trained.
class EncoderStub {
 public:
  EncoderStub(std::size_t vocab_size, std::size_t d_raw, std::size_t d_enc, std::uint64_t seed);

  EncodedSample encode(const RawSample& sample) const;

  std::size_t vocab_size() const { return token_table_.rows(); }
  std::size_t d_raw() const { return image_map_.cols(); }
  std::size_t d_enc() const { return image_map_.rows(); }
  const Tensor& token_table() const { return token_table_; }
  const Tensor& image_map() const { return image_map_; }

 private:
  Tensor token_table_;  // vocab x d_enc
  Tensor image_map_;    // d_enc x d_raw
};

// Trainable affine map d_enc -> d.
struct Adapter {
  Parameter weight;  // d x d_enc
  Parameter bias;    // d
  bool has_bias = true;

  static Adapter init(const std::string& name, std::size_t d_enc, std::size_t d, Rng& rng,
                      bool with_bias = true);
  std::size_t in_dim() const { return weight.value.cols(); }
  std::size_t out_dim() const { return weight.value.rows(); }
  ParameterList parameters();
};

// W e + b, row-wise for a stack of embeddings.
Var adapt(Var embedding, Adapter& adapter);

// Elementwise mean over the image rows.
Var compute_prototype(Var s_images);
std::vector<double> compute_prototype(const std::vector<std::vector<double>>& s_images);

struct SignalBundle {
  Var s_text;    // 1 x d
  Var s_images;  // N x d
  Var s_proto;   // 1 x d

  std::size_t num_images() const { return s_images.value().rows(); }
};

SignalBundle extract_signals(Tape& tape, const EncodedSample& encoded, Adapter& text_adapter,
                             Adapter& visual_adapter);

}  // namespace tippo
