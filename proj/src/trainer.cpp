#include "tippo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "tippo/metrics.hpp"
#include "tippo/objectives.hpp"
#include "tippo/polish_ppo.hpp"

namespace tippo {

using nlohmann::json;

namespace {

Rng stream_rng(std::uint64_t seed, std::uint32_t stream, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream,
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

constexpr std::uint32_t kSftStream = 0x5f7;
constexpr std::uint32_t kPpoStream = 0x990;
constexpr std::uint32_t kRolloutStream = 0x9a1;
constexpr std::uint32_t kGradcheckStream = 0x6c4;

AblationFlags flags_of(const ExperimentConfig& cfg) { return cfg.ablation; }

void check_finite_tape(const Tape& tape, std::int64_t step) {
  for (std::size_t id = 0; id < tape.size(); ++id) {
    if (!tape.value(id).all_finite()) {
      std::ostringstream os;
      os << "non-finite value at step " << step << " in tensor #" << id << " (" << op_name(tape.node(id).tag);
      if (const auto* p = tape.node(id).param) os << " " << p->name;
      os << ", shape " << shape_to_string(tape.value(id).shape()) << ")";
      throw NumericalError(os.str());
    }
  }
}

TokenSeq with_eos(const TokenSeq& ref) {
  TokenSeq t = ref;
  t.push_back(kEosToken);
  return t;
}

}  // namespace

Dataset dataset_for(const ExperimentConfig& cfg) {
  if (cfg.data_path) return load_dataset(*cfg.data_path);
  return generate_dataset(cfg.task);
}

PreparedData prepare_data(Dataset data, const TippoModel& model, double holdout_fraction) {
  PreparedData p;
  p.encoded.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    validate_sample(s, model.dims().vocab_size, model.dims().d_raw);
    if (s.reference_tokens.empty()) throw std::invalid_argument("sample has an empty reference");
    if (s.num_images() + s.reference_tokens.size() + 1 > model.dims().max_positions) {
      throw std::invalid_argument("sample does not fit the decoder's position table");
    }
    p.encoded.push_back(model.encoder().encode(s));
  }
  p.split = split_dataset(data.samples.size(), holdout_fraction);
  p.data = std::move(data);
  return p;
}

SftLoss sft_batch_loss(Tape& tape, TippoModel& model, const PreparedData& prepared,
                       std::span<const std::size_t> batch, const Schedule& schedule, const ExperimentConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("sft_batch_loss: empty batch");
  const auto flags = flags_of(cfg);
  std::vector<Var> ntp_terms;
  std::vector<Var> lc_terms;
  std::vector<Var> single_images;
  for (auto idx : batch) {
    auto out = model.forward(tape, prepared.encoded[idx], schedule, flags);
    const auto& ref = prepared.data.samples[idx].reference_tokens;
    const auto targets = with_eos(ref);
    Var logits = decode_logits(out.fused, ref, model.decoder);
    ntp_terms.push_back(ntp_loss(logits, targets));
    if (!flags.enable_contrastive) continue;
    if (out.signals.num_images() >= 2) {
      lc_terms.push_back(info_nce({out.signals.s_images, out.signals.s_proto, ContrastiveMode::kPerSample},
                                  cfg.infonce_form()));
    } else {
      single_images.push_back(out.signals.s_images);
    }
  }
  SftLoss loss;
  Var ntp = mean(concat_rows(ntp_terms));
  loss.l_ntp = ntp.value().item();
  Var lc;
  if (!single_images.empty()) {
    auto fallback = batch_prototype_fallback(concat_rows(single_images));
    Var fb = info_nce(fallback.batch, cfg.infonce_form());
    // The fallback term stands in for each single-image sample.
    for (std::size_t i = 0; i < single_images.size(); ++i) lc_terms.push_back(fb);
  }
  if (!lc_terms.empty()) {
    lc = scale(sum(concat_rows(lc_terms)), 1.0 / static_cast<double>(batch.size()));
    loss.l_c = lc.value().item();
    loss.total = sft_loss(ntp, lc);
  } else {
    loss.total = ntp;
  }
  return loss;
}

json EvalReport::to_json() const {
  json j{{"rouge_l", rouge_l}, {"r_literal", r_literal}, {"r_semantic", r_semantic}, {"n_samples", n_samples}};
  return j;
}

EvalReport evaluate(TippoModel& model, const PreparedData& prepared, std::span<const std::size_t> indices,
                    const ExperimentConfig& cfg) {
  const auto schedule = Schedule::frozen(cfg.inference_lambda1);
  const auto flags = flags_of(cfg);
  const SequenceEmbedder embedder(model.embedder_table ? *model.embedder_table : model.decoder.tok_emb.value);
  GenerationConfig gen{cfg.ppo.max_length, 0.0, 0, kEosToken};

  const std::size_t n = indices.size();
  std::vector<double> rouge(n), lit(n), sem(n), detail_hits(n), detail_total(n);
  const auto layout = prepared.data.layout;
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < count; ++k) {
    const auto idx = indices[static_cast<std::size_t>(k)];
    const auto& ref = prepared.data.samples[idx].reference_tokens;
    Tensor fused = model.fused_signals(prepared.encoded[idx], schedule, flags);
    const auto out = generate(fused, gen, model.decoder);
    const auto kk = static_cast<std::size_t>(k);
    rouge[kk] = rouge_l(out.tokens, ref);
    lit[kk] = literal_reward(ref, out.tokens, cfg.ppo.raw_literal_reward);
    sem[kk] = semantic_reward(ref, out.tokens, embedder);
    if (layout) {
      for (std::size_t pos = layout->theme_length; pos < ref.size(); ++pos) {
        detail_total[kk] += 1.0;
        if (pos < out.tokens.size() && out.tokens[pos] == ref[pos]) detail_hits[kk] += 1.0;
      }
    }
  }
  EvalReport r;
  r.n_samples = n;
  if (n == 0) return r;
  for (std::size_t k = 0; k < n; ++k) {
    r.rouge_l += rouge[k];
    r.r_literal += lit[k];
    r.r_semantic += sem[k];
  }
  r.rouge_l /= static_cast<double>(n);
  r.r_literal /= static_cast<double>(n);
  r.r_semantic /= static_cast<double>(n);
  if (layout) {
    const double hits = std::accumulate(detail_hits.begin(), detail_hits.end(), 0.0);
    const double total = std::accumulate(detail_total.begin(), detail_total.end(), 0.0);
    r.detail_accuracy = total > 0.0 ? hits / total : 0.0;
  }
  return r;
}

json SftReport::to_json() const {
  json epochs_json = json::array();
  for (const auto& e : epochs) {
    json j{{"epoch", e.epoch}, {"step", e.step}, {"l_ntp", e.l_ntp}, {"l_c", e.l_c}};
    if (e.heldout_rouge_l) j["heldout_rouge_l"] = *e.heldout_rouge_l;
    epochs_json.push_back(std::move(j));
  }
  return json{{"steps", steps},
              {"initial_l_ntp", initial_ntp},
              {"initial_l_c", initial_lc},
              {"final_l_ntp", final_ntp},
              {"final_l_c", final_lc},
              {"epochs", std::move(epochs_json)}};
}

SftReport run_sft(const ExperimentConfig& cfg, TippoModel& model, const PreparedData& prepared,
                  const std::function<void(const SftEpochMetrics&)>& on_epoch) {
  SftReport report;
  const auto total = cfg.sft.iterations;
  report.steps = total;
  if (total == 0) return report;

  const auto& train = prepared.split.train;
  const std::size_t batch_size = std::min(cfg.sft.batch_size, train.size());
  const std::size_t steps_per_epoch = (train.size() + batch_size - 1) / batch_size;
  Rng rng = stream_rng(cfg.seed, kSftStream);
  Optimizer opt(cfg.sft.optimizer);
  auto params = model.parameters();

  std::vector<std::size_t> order = train;
  std::size_t cursor = order.size();
  double epoch_ntp = 0.0, epoch_lc = 0.0;
  std::size_t epoch_steps = 0, epoch = 0;
  // Trailing window for the final loss estimate.
  std::vector<double> tail_ntp, tail_lc;
  const std::size_t tail = std::max<std::size_t>(1, steps_per_epoch);

  std::vector<std::size_t> batch;
  for (std::int64_t m = 0; m < total; ++m) {
    batch.clear();
    while (batch.size() < batch_size) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    const auto schedule = Schedule::at(m, total);
    Tape tape;
    auto loss = sft_batch_loss(tape, model, prepared, batch, schedule, cfg);
    if (!std::isfinite(loss.total.value().item())) check_finite_tape(tape, m);
    if (m == 0) {
      report.initial_ntp = loss.l_ntp;
      report.initial_lc = loss.l_c;
    }
    GradientMap grads = backward(tape, loss.total);
    opt.step(params, grads);

    epoch_ntp += loss.l_ntp;
    epoch_lc += loss.l_c;
    ++epoch_steps;
    tail_ntp.push_back(loss.l_ntp);
    tail_lc.push_back(loss.l_c);
    if (tail_ntp.size() > tail) {
      tail_ntp.erase(tail_ntp.begin());
      tail_lc.erase(tail_lc.begin());
    }

    const bool epoch_done = epoch_steps == steps_per_epoch || m + 1 == total;
    if (epoch_done) {
      SftEpochMetrics em;
      em.epoch = epoch;
      em.step = m + 1;
      em.l_ntp = epoch_ntp / static_cast<double>(epoch_steps);
      em.l_c = epoch_lc / static_cast<double>(epoch_steps);
      const bool last = m + 1 == total;
      const auto every = cfg.sft.eval_every_epochs;
      if ((every > 0 && (epoch + 1) % every == 0) || (last && every > 0)) {
        em.heldout_rouge_l = evaluate(model, prepared, prepared.split.heldout, cfg).rouge_l;
      }
      if (on_epoch) on_epoch(em);
      report.epochs.push_back(em);
      epoch_ntp = epoch_lc = 0.0;
      epoch_steps = 0;
      ++epoch;
    }
  }
  for (auto& p : params) {
    if (!p->value.all_finite()) throw NumericalError("parameter " + p->name + " became non-finite");
  }
  report.final_ntp = std::accumulate(tail_ntp.begin(), tail_ntp.end(), 0.0) / static_cast<double>(tail_ntp.size());
  report.final_lc = std::accumulate(tail_lc.begin(), tail_lc.end(), 0.0) / static_cast<double>(tail_lc.size());
  return report;
}

json PpoIterationLog::to_json() const {
  return json{{"m", m},
              {"r_literal", r_literal},
              {"r_semantic", r_semantic},
              {"g", g},
              {"advantage", advantage},
              {"surrogate_loss", surrogate_loss}};
}

double PpoStageReport::mean_reward(std::size_t begin, std::size_t end) const {
  end = std::min(end, log.size());
  if (begin >= end) return 0.0;
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += log[i].r_literal + log[i].r_semantic;
  return s / static_cast<double>(end - begin);
}

json PpoStageReport::to_json() const {
  const std::size_t n = log.size();
  const std::size_t tenth = std::max<std::size_t>(1, n / 10);
  return json{{"iterations", n},
              {"mean_reward_first_10pct", mean_reward(0, tenth)},
              {"mean_reward_last_10pct", n ? mean_reward(n - tenth, n) : 0.0}};
}

PpoStageReport run_ppo(const ExperimentConfig& cfg, TippoModel& model, const PreparedData& prepared,
                       std::ostream* reward_log) {
  PpoStageReport report;
  const auto total = cfg.ppo.iterations;
  if (total == 0) return report;
  if (!model.embedder_table) model.embedder_table = model.decoder.tok_emb.value;
  const SequenceEmbedder embedder(*model.embedder_table);

  const auto schedule = Schedule::frozen(cfg.inference_lambda1);
  const auto flags = flags_of(cfg);
  const auto& train = prepared.split.train;
  const double temperature = cfg.ppo.temperature;
  const double inv_temp = temperature > 0.0 ? 1.0 / temperature : 1.0;
  Rng rng = stream_rng(cfg.seed, kPpoStream);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  Optimizer opt(cfg.ppo.optimizer);
  auto params = model.parameters();
  RewardWindow window(cfg.ppo.adv_window, cfg.ppo.delta_mode);

  LogProbFn log_prob_fn = [&](Tape& tape, const Trajectory& traj) {
    auto out = model.forward(tape, prepared.encoded[traj.sample_index], schedule, flags);
    std::span<const int> prefix(traj.actions.data(), traj.actions.size() - 1);
    Var logits = decode_logits(out.fused, prefix, model.decoder);
    if (inv_temp != 1.0) logits = scale(logits, inv_temp);
    return token_log_probs(logits, traj.actions);
  };

  const std::size_t k_rollouts = cfg.ppo.rollouts;
  std::vector<Trajectory> trajs(k_rollouts);
  std::vector<double> r_lit(k_rollouts), r_sem(k_rollouts), adv(k_rollouts);
  for (std::int64_t m = 0; m < total; ++m) {
    for (auto& t : trajs) t.sample_index = train[pick(rng)];
    const long kn = static_cast<long>(k_rollouts);
#pragma omp parallel for schedule(dynamic)
    for (long k = 0; k < kn; ++k) {
      auto& traj = trajs[static_cast<std::size_t>(k)];
      const auto& ref = prepared.data.samples[traj.sample_index].reference_tokens;
      Tensor fused = model.fused_signals(prepared.encoded[traj.sample_index], schedule, flags);
      Rng seed_rng = stream_rng(cfg.seed, kRolloutStream, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(k));
      GenerationConfig gen{cfg.ppo.max_length, temperature, seed_rng(), kEosToken};
      auto out = generate(fused, gen, model.decoder);
      traj.actions = std::move(out.actions);
      traj.log_probs = std::move(out.log_probs);
      traj.reference = ref;
      r_lit[static_cast<std::size_t>(k)] = literal_reward(ref, out.tokens, cfg.ppo.raw_literal_reward);
      r_sem[static_cast<std::size_t>(k)] = semantic_reward(ref, out.tokens, embedder);
    }

    PpoIterationLog entry;
    entry.m = m;
    for (std::size_t k = 0; k < k_rollouts; ++k) {
      const double g = discounted_return(r_lit[k], r_sem[k], m, total, cfg.ppo.gamma);
      adv[k] = advantage(g, window);
      entry.r_literal += r_lit[k];
      entry.r_semantic += r_sem[k];
      entry.g += g;
      entry.advantage += adv[k];
    }
    const double inv_k = 1.0 / static_cast<double>(k_rollouts);
    entry.r_literal *= inv_k;
    entry.r_semantic *= inv_k;
    entry.g *= inv_k;
    entry.advantage *= inv_k;

    for (std::size_t e = 0; e < std::max<std::size_t>(1, cfg.ppo.update_epochs); ++e) {
      auto upd = ppo_update(trajs, adv, cfg.ppo.clip, log_prob_fn, params, opt);
      if (!std::isfinite(upd.loss)) throw NumericalError("PolishPPO surrogate became non-finite at iteration " +
                                                         std::to_string(m));
      entry.surrogate_loss = upd.loss;
    }
    if (reward_log) *reward_log << entry.to_json().dump() << '\n';
    report.log.push_back(entry);
  }
  for (auto& p : params) {
    if (!p->value.all_finite()) throw NumericalError("parameter " + p->name + " became non-finite");
  }
  return report;
}

const std::vector<AblationVariant>& ablation_variants() {
  static const std::vector<AblationVariant> variants{
      {"TIP", false, false}, {"TIP+DAA", true, false}, {"TIP+DO", false, true}, {"TIPPo", true, true}};
  return variants;
}

EvalReport mean_report(std::span<const EvalReport> reports) {
  EvalReport r;
  if (reports.empty()) return r;
  double detail = 0.0;
  bool has_detail = true;
  for (const auto& x : reports) {
    r.rouge_l += x.rouge_l;
    r.r_literal += x.r_literal;
    r.r_semantic += x.r_semantic;
    r.n_samples = x.n_samples;
    if (x.detail_accuracy)
      detail += *x.detail_accuracy;
    else
      has_detail = false;
  }
  const double n = static_cast<double>(reports.size());
  r.rouge_l /= n;
  r.r_literal /= n;
  r.r_semantic /= n;
  if (has_detail) r.detail_accuracy = detail / n;
  return r;
}

const AblationCell& AblationTable::cell(const std::string& variant, Objective objective) const {
  for (const auto& c : cells)
    if (c.variant == variant && c.objective == objective) return c;
  throw std::invalid_argument("no ablation cell " + variant + "/" + to_string(objective));
}

const EvalReport& AblationTable::untrained_for(const std::string& variant) const {
  for (const auto& [name, r] : untrained)
    if (name == variant) return r;
  throw std::invalid_argument("no untrained entry for " + variant);
}

json AblationTable::to_json() const {
  auto report_json = [](const EvalReport& r) {
    json j = r.to_json();
    if (r.detail_accuracy) j["detail_accuracy"] = *r.detail_accuracy;
    return j;
  };
  json cells_json = json::array();
  for (const auto& c : cells) {
    json per_seed = json::array();
    for (const auto& r : c.per_seed) per_seed.push_back(report_json(r));
    cells_json.push_back(json{{"variant", c.variant},
                              {"objective", to_string(c.objective)},
                              {"mean", report_json(c.mean)},
                              {"per_seed", std::move(per_seed)}});
  }
  json untrained_json = json::object();
  for (const auto& [name, r] : untrained) untrained_json[name] = report_json(r);
  return json{{"seeds", seeds}, {"cells", std::move(cells_json)}, {"untrained", std::move(untrained_json)}};
}

AblationTable run_ablation_grid(const ExperimentConfig& cfg, const Dataset& data,
                                const std::function<void(const std::string&)>& progress) {
  return run_ablation_grid(cfg, data, ablation_variants(), progress);
}

AblationTable run_ablation_grid(const ExperimentConfig& cfg, const Dataset& data,
                                std::span<const AblationVariant> variants,
                                const std::function<void(const std::string&)>& progress) {
  if (variants.empty()) throw std::invalid_argument("ablation grid: no variants");
  const std::size_t nv = variants.size(), ns = cfg.seeds.size();
  const std::array<Objective, 3> objectives{Objective::kNtp, Objective::kPpo, Objective::kBoth};

  struct JobResult {
    EvalReport untrained, ntp, ppo, both;
  };
  std::vector<JobResult> results(nv * ns);

  const long jobs = static_cast<long>(nv * ns);
#pragma omp parallel for schedule(dynamic)
  for (long job = 0; job < jobs; ++job) {
    const auto& variant = variants[static_cast<std::size_t>(job) / ns];
    ExperimentConfig run = cfg;
    run.seed = cfg.seeds[static_cast<std::size_t>(job) % ns];
    run.ablation.enable_daa = variant.enable_daa;
    run.ablation.enable_do = variant.enable_do;

    TippoModel init(run);
    const PreparedData prepared = prepare_data(data, init, run.holdout_fraction);
    const auto& held = prepared.split.heldout;
    auto& res = results[static_cast<std::size_t>(job)];
    res.untrained = evaluate(init, prepared, held, run);

    TippoModel ppo_only(init);
    run_ppo(run, ppo_only, prepared);
    res.ppo = evaluate(ppo_only, prepared, held, run);

    TippoModel sft(init);
    run_sft(run, sft, prepared);
    res.ntp = evaluate(sft, prepared, held, run);
    run_ppo(run, sft, prepared);
    res.both = evaluate(sft, prepared, held, run);
    if (progress) {
#pragma omp critical
      progress(variant.name + " seed " + std::to_string(run.seed) + " done");
    }
  }

  AblationTable table;
  table.seeds = cfg.seeds;
  for (std::size_t v = 0; v < nv; ++v) {
    std::vector<EvalReport> untrained;
    for (std::size_t s = 0; s < ns; ++s) untrained.push_back(results[v * ns + s].untrained);
    table.untrained.emplace_back(variants[v].name, mean_report(untrained));
    for (auto objective : objectives) {
      AblationCell cell;
      cell.variant = variants[v].name;
      cell.objective = objective;
      for (std::size_t s = 0; s < ns; ++s) {
        const auto& r = results[v * ns + s];
        cell.per_seed.push_back(objective == Objective::kNtp ? r.ntp : objective == Objective::kPpo ? r.ppo : r.both);
      }
      cell.mean = mean_report(cell.per_seed);
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

GradCheckReport gradcheck_sft(const ExperimentConfig& cfg, std::size_t batch_size, std::int64_t m, std::int64_t M,
                              double point_scale, GradCheckOptions options) {
  TippoModel model(cfg);
  // A generic point: the initialization leaves pi_d at zero and attention
  // nearly uniform, which hides some gradient paths.
  Rng rng = stream_rng(cfg.seed, kGradcheckStream);
  std::uniform_real_distribution<double> uniform(-point_scale, point_scale);
  for (auto* p : model.parameters())
    for (auto& v : p->value.values()) v = uniform(rng);
  auto task = cfg.task;
  task.num_samples = std::max(task.num_samples, batch_size);
  const PreparedData prepared = prepare_data(generate_dataset(task), model, 0.0);
  std::vector<std::size_t> batch(batch_size);
  std::iota(batch.begin(), batch.end(), std::size_t{0});
  const auto schedule = Schedule::at(m, M);
  LossBuilder loss_fn = [&](Tape& tape) { return sft_batch_loss(tape, model, prepared, batch, schedule, cfg).total; };
  return finite_difference_check(loss_fn, model.parameters(), options);
}

}  // namespace tippo
