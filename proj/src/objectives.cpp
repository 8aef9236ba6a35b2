#include "tippo/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace tippo {

namespace {

void check_batch(const Tensor& images, const Tensor& anchors) {
  if (images.empty()) throw std::invalid_argument("info_nce: empty batch");
  if (anchors.cols() != images.cols()) throw std::invalid_argument("info_nce: anchor width mismatch");
  if (anchors.rows() != 1 && anchors.rows() != images.rows()) {
    throw std::invalid_argument("info_nce: need one anchor per image or a single shared anchor");
  }
}

}  // namespace

Var info_nce(const ContrastiveBatch& batch, InfoNceForm form) {
  check_batch(batch.image_signals.value(), batch.positive_anchors.value());
  // Sizes are copied: pushing onto the tape may move the stored values.
  const std::size_t n = batch.image_signals.value().rows();
  const std::size_t n_anchors = batch.positive_anchors.value().rows();

  // cos(S_i, P_i) as an (n x 1) column.
  Var positive = cosine(batch.image_signals, batch.positive_anchors);  // n x a
  if (n_anchors != 1) {
    // Keep only the diagonal: positive_i = sum_j cos_ij * [i == j].
    Tensor eye = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0;
    positive = mul(positive, positive.tape().constant(std::move(eye)));
    Tensor ones = Tensor::filled({n, 1}, 1.0);
    positive = matmul(positive, positive.tape().constant(std::move(ones)));
  }
  Var pairwise = cosine(batch.image_signals, batch.image_signals);  // n x n
  auto& tape = pairwise.tape();

  Var denom_logits = pairwise;
  if (form == InfoNceForm::kStandard) {
    // Diagonal replaced by the positive: cos_ij for j != i, cos(S_i, P_i) at j == i.
    Tensor off = Tensor::filled({n, n}, 1.0);
    Tensor eye = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      off.at(i, i) = 0.0;
      eye.at(i, i) = 1.0;
    }
    Var masked = mul(pairwise, tape.constant(std::move(off)));
    Var pos_on_diag = matmul(positive, tape.constant(Tensor::filled({1, n}, 1.0)));
    pos_on_diag = mul(pos_on_diag, tape.constant(std::move(eye)));
    denom_logits = add(masked, pos_on_diag);
  }
  Var log_ratio = sub(positive, logsumexp_rows(denom_logits));
  return scale(mean(log_ratio), -1.0);
}

std::vector<double> info_nce_terms(const Tensor& image_signals, const Tensor& anchors, InfoNceForm form) {
  check_batch(image_signals, anchors);
  const std::size_t n = image_signals.rows();
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto anchor = anchors.row(anchors.rows() == 1 ? 0 : i);
    const double pos = cosine_similarity(image_signals.row(i), anchor);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (form == InfoNceForm::kStandard && j == i) continue;
      denom += std::exp(cosine_similarity(image_signals.row(i), image_signals.row(j)));
    }
    if (form == InfoNceForm::kStandard) denom += std::exp(pos);
    terms[i] = pos - std::log(denom);
  }
  return terms;
}

Var sft_loss(Var l_ntp, Var l_c) { return add(l_ntp, l_c); }

double sft_loss(double l_ntp, double l_c) { return l_ntp + l_c; }

FallbackBatch batch_prototype_fallback(Var image_signals_in_batch) {
  if (image_signals_in_batch.value().empty()) throw std::invalid_argument("batch_prototype_fallback: empty batch");
  const std::size_t n = image_signals_in_batch.value().rows();
  FallbackBatch out;
  out.prototype = row_mean(image_signals_in_batch);
  out.batch = {image_signals_in_batch, out.prototype, ContrastiveMode::kBatchFallback};
  out.negatives.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) out.negatives[i].push_back(j);
  return out;
}

}  // namespace tippo
