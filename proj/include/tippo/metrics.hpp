#pragma once

#include <cstddef>

#include "tippo/signals.hpp"

namespace tippo {

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);

// F1 form of the LCS measure; 0 for an empty candidate or no overlap.
double rouge_l(const TokenSeq& candidate, const TokenSeq& reference);

}  // namespace tippo
