#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tippo/autograd.hpp"
#include "tippo/optim.hpp"
#include "tippo/signals.hpp"

namespace tippo {

// Unit-cost edit distance, O(|a||b|) time and O(|b|) memory.
template <typename Seq>
std::size_t levenshtein(const Seq& a, const Seq& b) {
  const std::size_t n = std::size(a), m = std::size(b);
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  auto ai = std::begin(a);
  for (std::size_t i = 1; i <= n; ++i, ++ai) {
    cur[0] = i;
    auto bj = std::begin(b);
    for (std::size_t j = 1; j <= m; ++j, ++bj) {
      const std::size_t sub = prev[j - 1] + (*ai == *bj ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// 1 - LD(Y, y) / max(|Y|, |y|), in [0, 1]. With raw set, 1 - LD(Y, y).
double literal_reward(const TokenSeq& reference, const TokenSeq& generated, bool raw = false);

// Frozen mean-pooling embedder over a copied token table.
class SequenceEmbedder {
 public:
  SequenceEmbedder() = default;
  explicit SequenceEmbedder(Tensor table) : table_(std::move(table)) {}

  // Mean of the token rows; the zero vector for an empty sequence.
  std::vector<double> embed(const TokenSeq& tokens) const;
  const Tensor& table() const { return table_; }

 private:
  Tensor table_;
};

// cos(emb(Y), emb(y)); 0 when either side is degenerate.
double semantic_reward(const TokenSeq& reference, const TokenSeq& generated, const SequenceEmbedder& emb);

// G_m = gamma^m R_literal + gamma^(M - m) R_semantic.
double discounted_return(double r_literal, double r_semantic, std::int64_t m, std::int64_t total, double gamma);

enum class SpreadMode { kStdDev, kVariance };

SpreadMode parse_spread_mode(const std::string& name);

// Sliding window of past returns. capacity 0 keeps the full history.
class RewardWindow {
 public:
  explicit RewardWindow(std::size_t capacity = 256, SpreadMode mode = SpreadMode::kStdDev)
      : capacity_(capacity), mode_(mode) {}

  void push(double g);
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::size_t capacity() const { return capacity_; }
  SpreadMode mode() const { return mode_; }

  double mean() const;
  // Population standard deviation (or variance, per mode).
  double spread() const;

 private:
  std::size_t capacity_;
  SpreadMode mode_;
  std::deque<double> values_;
};

inline constexpr double kAdvantageEpsilon = 1e-8;
// Fewer stored returns than this give a zero advantage: the spread of one or
// two values is too unstable to divide by.
inline constexpr std::size_t kAdvantageMinHistory = 3;

// (g - mu) / (delta + eps) against the window contents, then pushes g.
double advantage(double g, RewardWindow& window, std::size_t min_history = kAdvantageMinHistory);

struct Trajectory {
  TokenSeq actions;               // sampled tokens, eos included when sampled
  std::vector<double> log_probs;  // under the rollout policy
  std::size_t sample_index = 0;   // conditioning sample
  TokenSeq reference;
};

// Builds per-action log-probabilities (t x 1) of a trajectory under the
// current parameters.
using LogProbFn = std::function<Var(Tape&, const Trajectory&)>;

// Mean over tokens of min(rho * A, clip(rho, 1 - eps, 1 + eps) * A), where
// rho = exp(new - old).
Var clipped_surrogate(Var new_log_probs, std::span<const double> old_log_probs, double adv, double clip);

struct PpoReport {
  double surrogate = 0.0;  // mean over trajectories of the token-mean surrogate
  double loss = 0.0;       // -surrogate
  double grad_norm = 0.0;
};

// One gradient step on the clipped surrogate, with each trajectory's
// sequence-level advantage broadcast to all of its tokens.
PpoReport ppo_update(std::span<const Trajectory> trajectories, std::span<const double> advantages, double clip,
                     const LogProbFn& log_prob_fn, const ParameterList& params, Optimizer& optimizer);

}  // namespace tippo
