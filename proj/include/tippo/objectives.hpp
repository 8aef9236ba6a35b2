#pragma once

#include <vector>

#include "tippo/autograd.hpp"

namespace tippo {

enum class ContrastiveMode { kPerSample, kBatchFallback };

enum class InfoNceForm {
  // Numerator image-prototype cosine; denominator sums image-image cosines
  // over every j, self term included.
  kAsWritten,
  // Positive term in the denominator, self term excluded.
  kStandard,
};

// image_signals: N x d. anchors: N x d positive anchors (row i pairs with
// image i), or a single 1 x d row shared by every image.
struct ContrastiveBatch {
  Var image_signals;
  Var positive_anchors;
  ContrastiveMode mode = ContrastiveMode::kPerSample;
};

Var info_nce(const ContrastiveBatch& batch, InfoNceForm form = InfoNceForm::kAsWritten);

// Per-item log-ratios log(exp(cos(S_i, P_i)) / denominator_i), values only.
std::vector<double> info_nce_terms(const Tensor& image_signals, const Tensor& anchors,
                                   InfoNceForm form = InfoNceForm::kAsWritten);

Var sft_loss(Var l_ntp, Var l_c);
double sft_loss(double l_ntp, double l_c);

// For samples with a single image: the prototype becomes the mean of the
// batch's image signals and the negatives are the other batch items.
struct FallbackBatch {
  Var prototype;  // 1 x d
  ContrastiveBatch batch;
  // negatives[i] lists the batch rows contrasted against item i.
  std::vector<std::vector<std::size_t>> negatives;
};

FallbackBatch batch_prototype_fallback(Var image_signals_in_batch);

}  // namespace tippo
