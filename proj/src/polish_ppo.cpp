#include "tippo/polish_ppo.hpp"

#include <cmath>
#include <stdexcept>

namespace tippo {

double literal_reward(const TokenSeq& reference, const TokenSeq& generated, bool raw) {
  const double ld = static_cast<double>(levenshtein(reference, generated));
  if (raw) return 1.0 - ld;
  const std::size_t longest = std::max(reference.size(), generated.size());
  if (longest == 0) return 1.0;
  return 1.0 - ld / static_cast<double>(longest);
}

std::vector<double> SequenceEmbedder::embed(const TokenSeq& tokens) const {
  std::vector<double> out(table_.cols(), 0.0);
  if (tokens.empty()) return out;
  for (int tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= table_.rows()) {
      throw std::invalid_argument("SequenceEmbedder: token " + std::to_string(tok) + " out of vocabulary");
    }
    auto row = table_.row(static_cast<std::size_t>(tok));
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
  }
  for (auto& v : out) v /= static_cast<double>(tokens.size());
  return out;
}

double semantic_reward(const TokenSeq& reference, const TokenSeq& generated, const SequenceEmbedder& emb) {
  auto a = emb.embed(reference);
  auto b = emb.embed(generated);
  return cosine_similarity(a, b);
}

double discounted_return(double r_literal, double r_semantic, std::int64_t m, std::int64_t total, double gamma) {
  if (total <= 0) throw std::invalid_argument("discounted_return: total steps must be positive");
  if (m < 0 || m > total) throw std::invalid_argument("discounted_return: step outside [0, total]");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("discounted_return: gamma must lie in (0, 1]");
  return std::pow(gamma, static_cast<double>(m)) * r_literal +
         std::pow(gamma, static_cast<double>(total - m)) * r_semantic;
}

SpreadMode parse_spread_mode(const std::string& name) {
  if (name == "std" || name == "stddev") return SpreadMode::kStdDev;
  if (name == "variance") return SpreadMode::kVariance;
  throw std::invalid_argument("unknown delta mode '" + name + "' (expected std or variance)");
}

void RewardWindow::push(double g) {
  values_.push_back(g);
  if (capacity_ > 0 && values_.size() > capacity_) values_.pop_front();
}

double RewardWindow::mean() const {
  if (values_.empty()) return 0.0;
  double s = 0.0;
  for (double v : values_) s += v;
  return s / static_cast<double>(values_.size());
}

double RewardWindow::spread() const {
  if (values_.empty()) return 0.0;
  const double mu = mean();
  double ss = 0.0;
  for (double v : values_) ss += (v - mu) * (v - mu);
  const double var = ss / static_cast<double>(values_.size());
  return mode_ == SpreadMode::kVariance ? var : std::sqrt(var);
}

double advantage(double g, RewardWindow& window, std::size_t min_history) {
  double adv = 0.0;
  if (!window.empty() && window.size() >= min_history) adv = (g - window.mean()) / (window.spread() + kAdvantageEpsilon);
  window.push(g);
  return adv;
}

Var clipped_surrogate(Var new_log_probs, std::span<const double> old_log_probs, double adv, double clip) {
  const auto& nv = new_log_probs.value();
  if (nv.size() != old_log_probs.size()) {
    throw std::invalid_argument("clipped_surrogate: " + std::to_string(nv.size()) + " new log-probs vs " +
                                std::to_string(old_log_probs.size()) + " old");
  }
  auto& tape = new_log_probs.tape();
  Tensor old(nv.shape(), std::vector<double>(old_log_probs.begin(), old_log_probs.end()));
  Var ratio = exp(sub(new_log_probs, tape.constant(std::move(old))));
  Var unclipped = scale(ratio, adv);
  Var clipped = scale(clamp(ratio, 1.0 - clip, 1.0 + clip), adv);
  return mean(minimum(unclipped, clipped));
}

PpoReport ppo_update(std::span<const Trajectory> trajectories, std::span<const double> advantages, double clip,
                     const LogProbFn& log_prob_fn, const ParameterList& params, Optimizer& optimizer) {
  if (trajectories.size() != advantages.size()) {
    throw std::invalid_argument("ppo_update: " + std::to_string(trajectories.size()) + " trajectories but " +
                                std::to_string(advantages.size()) + " advantages");
  }
  if (!(clip > 0.0)) throw std::invalid_argument("ppo_update: clip must be positive");
  if (trajectories.empty()) throw std::invalid_argument("ppo_update: no trajectories");

  Tape tape;
  std::vector<Var> per_traj;
  per_traj.reserve(trajectories.size());
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto& traj = trajectories[k];
    if (traj.actions.size() != traj.log_probs.size() || traj.actions.empty()) {
      throw std::invalid_argument("ppo_update: trajectory actions and log-probs disagree");
    }
    Var lp = log_prob_fn(tape, traj);
    per_traj.push_back(clipped_surrogate(lp, traj.log_probs, advantages[k], clip));
  }
  Var total = mean(concat_rows(per_traj));
  Var loss = scale(total, -1.0);
  GradientMap grads = backward(tape, loss);

  PpoReport report;
  report.surrogate = total.value().item();
  report.loss = loss.value().item();
  report.grad_norm = global_grad_norm(params, grads);
  optimizer.step(params, grads);
  return report;
}

}  // namespace tippo
