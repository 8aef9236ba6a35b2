#include "tippo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "tippo/optim.hpp"

namespace tippo {

using nlohmann::json;

std::size_t SyntheticTaskSpec::required_vocab() const {
  return 1 + num_themes * theme_tokens + num_themes * descriptors_per_theme + num_details * detail_tokens;
}

void SyntheticTaskSpec::validate() const {
  if (num_themes == 0 || num_details == 0 || theme_tokens == 0 || detail_tokens == 0 ||
      descriptors_per_theme == 0) {
    throw std::invalid_argument("task spec: theme, detail and descriptor counts must be positive");
  }
  if (min_images == 0 || min_images > max_images) {
    throw std::invalid_argument("task spec: image range must satisfy 1 <= min <= max");
  }
  if (max_images > num_details) {
    throw std::invalid_argument("task spec: each image needs a distinct detail, so max_images <= num_details");
  }
  if (required_vocab() > vocab_size) {
    throw std::invalid_argument("task spec: vocabulary of " + std::to_string(vocab_size) +
                                " cannot encode themes and details (needs " + std::to_string(required_vocab()) +
                                ")");
  }
  if (d_raw == 0) throw std::invalid_argument("task spec: d_raw must be positive");
  if (num_samples == 0) throw std::invalid_argument("task spec: num_samples must be positive");
}

void to_json(json& j, const SyntheticTaskSpec& s) {
  j = json{{"vocab_size", s.vocab_size},
           {"num_themes", s.num_themes},
           {"theme_tokens", s.theme_tokens},
           {"descriptors_per_theme", s.descriptors_per_theme},
           {"text_length", s.text_length},
           {"num_details", s.num_details},
           {"detail_tokens", s.detail_tokens},
           {"min_images", s.min_images},
           {"max_images", s.max_images},
           {"num_samples", s.num_samples},
           {"d_raw", s.d_raw},
           {"theme_scale", s.theme_scale},
           {"detail_scale", s.detail_scale},
           {"noise", s.noise},
           {"seed", s.seed}};
}

void from_json(const json& j, SyntheticTaskSpec& s) {
  SyntheticTaskSpec d;
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.num_themes = j.value("num_themes", d.num_themes);
  s.theme_tokens = j.value("theme_tokens", d.theme_tokens);
  s.descriptors_per_theme = j.value("descriptors_per_theme", d.descriptors_per_theme);
  s.text_length = j.value("text_length", d.text_length);
  s.num_details = j.value("num_details", d.num_details);
  s.detail_tokens = j.value("detail_tokens", d.detail_tokens);
  s.min_images = j.value("min_images", d.min_images);
  s.max_images = j.value("max_images", d.max_images);
  s.num_samples = j.value("num_samples", d.num_samples);
  s.d_raw = j.value("d_raw", d.d_raw);
  s.theme_scale = j.value("theme_scale", d.theme_scale);
  s.detail_scale = j.value("detail_scale", d.detail_scale);
  s.noise = j.value("noise", d.noise);
  s.seed = j.value("seed", d.seed);
}

namespace {

std::vector<std::vector<double>> unit_vectors(std::size_t count, std::size_t dim, Rng& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> out(count, std::vector<double>(dim));
  for (auto& v : out) {
    double norm = 0.0;
    for (auto& x : v) {
      x = unit(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
  }
  return out;
}

}  // namespace

Dataset generate_dataset(const SyntheticTaskSpec& spec) {
  spec.validate();
  Rng base(spec.seed);
  const auto themes = unit_vectors(spec.num_themes, spec.d_raw, base);
  const auto details = unit_vectors(spec.num_details, spec.d_raw, base);

  const int theme_base = 1;
  const int desc_base = theme_base + static_cast<int>(spec.num_themes * spec.theme_tokens);
  const int detail_base = desc_base + static_cast<int>(spec.num_themes * spec.descriptors_per_theme);

  Dataset data;
  data.layout = TaskLayout{spec.theme_tokens, spec.detail_tokens};
  data.samples.resize(spec.num_samples);

  // Per-sample generators keyed by (seed, index) so samples are independent
  // of generation order.
  const long n = static_cast<long>(spec.num_samples);
#pragma omp parallel for schedule(static)
  for (long idx = 0; idx < n; ++idx) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(idx), 0x7155u};
    Rng rng(seq);
    std::normal_distribution<double> noise(0.0, 1.0);
    RawSample s;
    const auto theme = std::uniform_int_distribution<std::size_t>(0, spec.num_themes - 1)(rng);
    const auto num_images = std::uniform_int_distribution<std::size_t>(spec.min_images, spec.max_images)(rng);

    std::uniform_int_distribution<std::size_t> pick_desc(0, spec.descriptors_per_theme - 1);
    for (std::size_t t = 0; t < spec.text_length; ++t) {
      s.text_tokens.push_back(desc_base + static_cast<int>(theme * spec.descriptors_per_theme + pick_desc(rng)));
    }

    std::vector<std::size_t> order(spec.num_details);
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates: distinct details per sample.
    for (std::size_t i = 0; i < num_images; ++i) {
      auto j = std::uniform_int_distribution<std::size_t>(i, spec.num_details - 1)(rng);
      std::swap(order[i], order[j]);
    }

    for (std::size_t k = 0; k < spec.theme_tokens; ++k)
      s.reference_tokens.push_back(theme_base + static_cast<int>(theme * spec.theme_tokens + k));
    for (std::size_t i = 0; i < num_images; ++i) {
      const auto detail = order[i];
      std::vector<double> latent(spec.d_raw);
      for (std::size_t c = 0; c < spec.d_raw; ++c) {
        latent[c] = spec.theme_scale * themes[theme][c] + spec.detail_scale * details[detail][c] +
                    spec.noise * noise(rng);
      }
      s.image_latents.push_back(std::move(latent));
      for (std::size_t k = 0; k < spec.detail_tokens; ++k)
        s.reference_tokens.push_back(detail_base + static_cast<int>(detail * spec.detail_tokens + k));
    }
    data.samples[static_cast<std::size_t>(idx)] = std::move(s);
  }
  return data;
}

json sample_to_json(const RawSample& s) {
  return json{{"text_tokens", s.text_tokens},
              {"image_latents", s.image_latents},
              {"reference_tokens", s.reference_tokens}};
}

RawSample sample_from_json(const json& j) {
  RawSample s;
  try {
    s.text_tokens = j.at("text_tokens").get<TokenSeq>();
    s.image_latents = j.at("image_latents").get<std::vector<std::vector<double>>>();
    s.reference_tokens = j.at("reference_tokens").get<TokenSeq>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed sample: ") + e.what());
  }
  if (s.image_latents.empty()) throw std::invalid_argument("malformed sample: no image latents");
  return s;
}

void write_dataset(std::ostream& os, const Dataset& data) {
  for (const auto& s : data.samples) os << sample_to_json(s).dump() << '\n';
}

Dataset read_dataset(std::istream& is) {
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    data.samples.push_back(sample_from_json(j));
  }
  if (data.samples.empty()) throw std::invalid_argument("dataset is empty");
  return data;
}

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::invalid_argument("cannot open " + path + " for writing");
  write_dataset(os, data);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("cannot open dataset " + path);
  return read_dataset(is);
}

Split split_dataset(std::size_t n, double holdout_fraction) {
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw std::invalid_argument("holdout_fraction must lie in [0, 1)");
  }
  auto held = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
  if (held >= n) held = n - 1;
  Split s;
  for (std::size_t i = 0; i < n; ++i) (i < n - held ? s.train : s.heldout).push_back(i);
  if (s.heldout.empty()) s.heldout = s.train;
  return s;
}

}  // namespace tippo
