#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tippo/signals.hpp"

namespace tippo {

// Synthetic theme/detail task. Each sample draws a theme and N images; image
// latent i is the theme vector plus the detail vector of image i (plus a
// little noise). The reference is the theme's tokens followed by each
// image's detail tokens in image order. Text tokens are drawn from the
// theme's descriptor set.
struct SyntheticTaskSpec {
  std::size_t vocab_size = 64;
  std::size_t num_themes = 8;
  std::size_t theme_tokens = 2;       // reference tokens per theme
  std::size_t descriptors_per_theme = 3;
  std::size_t text_length = 3;        // text tokens per sample
  std::size_t num_details = 12;
  std::size_t detail_tokens = 1;      // reference tokens per image
  std::size_t min_images = 3;
  std::size_t max_images = 5;
  std::size_t num_samples = 600;
  std::size_t d_raw = 12;
  double theme_scale = 2.0;
  double detail_scale = 1.0;
  double noise = 0.05;
  std::uint64_t seed = 42;

  // Tokens used: eos + theme tokens + descriptors + detail tokens.
  std::size_t required_vocab() const;
  void validate() const;
};

inline constexpr int kEosToken = 0;

void to_json(nlohmann::json& j, const SyntheticTaskSpec& s);
void from_json(const nlohmann::json& j, SyntheticTaskSpec& s);

// Where detail tokens sit in a reference (known for synthetic data only).
struct TaskLayout {
  std::size_t theme_length = 0;
  std::size_t detail_tokens = 1;
};

struct Dataset {
  std::vector<RawSample> samples;
  std::optional<TaskLayout> layout;
};

Dataset generate_dataset(const SyntheticTaskSpec& spec);

// JSON Lines: {"text_tokens": [...], "image_latents": [[...], ...], "reference_tokens": [...]}
void write_dataset(std::ostream& os, const Dataset& data);
Dataset read_dataset(std::istream& is);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

nlohmann::json sample_to_json(const RawSample& s);
RawSample sample_from_json(const nlohmann::json& j);

// Deterministic split: the trailing holdout_fraction of samples is held out.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> heldout;
};
Split split_dataset(std::size_t n, double holdout_fraction);

}  // namespace tippo
