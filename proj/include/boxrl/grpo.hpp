#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "boxrl/error.hpp"
#include "boxrl/policy.hpp"
#include "boxrl/rewards.hpp"
#include "boxrl/rng.hpp"

namespace boxrl {

struct TrainConfig {
  int group_size = 4;
  double beta = 0.04;
  double eps = 0.2;
  int refresh_interval = 1;  // old-policy snapshot period k
  double learning_rate = 1.5;
  std::int64_t steps = 5000;
  std::uint64_t seed = 0;
  double advantage_epsilon = 1e-8;
  double iou_threshold = 0.5;
  double weight_format = 1.0;
  double weight_spatial = 1.0;
  double weight_semantic = 1.0;
  int bins = 16;  // tabular policy discretization

  void validate() const {
    if (group_size < 2) throw ConfigError("group_size must be >= 2");
    if (beta < 0.0) throw ConfigError("beta must be >= 0");
    if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("eps must be in (0,1)");
    if (refresh_interval < 1) throw ConfigError("refresh_interval must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (advantage_epsilon <= 0.0) throw ConfigError("advantage_epsilon must be > 0");
    if (bins < 2) throw ConfigError("bins must be >= 2");
  }
};

struct CompletionGroup {
  std::string sample_id;
  std::vector<Completion> members;
  std::vector<RewardBreakdown> breakdowns;
  std::vector<double> advantages;
};

struct TrainState {
  PolicyParams current;
  PolicyParams old;  // sampling snapshot, refreshed every k steps
  PolicyParams ref;  // frozen for the whole run
  std::int64_t step = 0;
  Rng rng{0};
};

// Per-step scalars logged to train logs.
struct StepRecord {
  std::int64_t step = 0;
  double mean_reward = 0.0;
  double mean_format = 0.0;
  double mean_spatial = 0.0;
  double mean_semantic = 0.0;
  double objective = 0.0;
  double mean_kl = 0.0;
  double clipped_fraction = 0.0;
  double batch_acc = 0.0;

  bool operator==(const StepRecord&) const = default;
};

// Group-relative advantages: z-scores under the population (divide-by-G)
// standard deviation. A near-constant group carries no ranking signal and
// maps to all zeros instead of dividing by ~0.
inline std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                              double advantage_epsilon) {
  const std::size_t g = rewards.size();
  if (g < 2) throw ConfigError("advantage group needs at least 2 rewards");
  double mean = 0.0;
  for (const double r : rewards) {
    if (!std::isfinite(r)) throw NumericError("non-finite reward in group");
    mean += r;
  }
  mean /= static_cast<double>(g);
  double var = 0.0;
  for (const double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(g);
  const double std_dev = std::sqrt(var);
  std::vector<double> adv(g, 0.0);
  if (std_dev < advantage_epsilon) return adv;
  for (std::size_t i = 0; i < g; ++i) adv[i] = (rewards[i] - mean) / std_dev;
  return adv;
}

// Non-negative estimator u - log u - 1 with u = exp(logp_ref - logp_cur).
// The log-probability gap is clamped to +/-50 before exponentiation.
inline double kl_estimate(double logp_ref, double logp_cur) {
  const double d = std::clamp(logp_ref - logp_cur, -50.0, 50.0);
  const double u = std::exp(d);
  return u - d - 1.0;
}

inline double clip_ratio(double ratio, double eps) {
  return std::clamp(ratio, 1.0 - eps, 1.0 + eps);
}

// min(ratio * A, clip(ratio) * A); the clipped side caps how far one step can
// exploit any single completion.
inline double clipped_term(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, clip_ratio(ratio, eps) * advantage);
}

struct ObjectiveResult {
  double value = 0.0;
  std::vector<double> gradient;  // flat block for the group's sample
  double mean_kl = 0.0;
  double clipped_fraction = 0.0;
};

// Clipped surrogate with KL penalty toward the frozen reference, averaged
// over the group. Ratio denominators are the sampling-time log-probabilities
// stored in the members, so later old-policy refreshes never change them.
// Gradients are assembled analytically from log_prob_grad; at a min tie the
// unclipped branch is taken.
inline ObjectiveResult grpo_objective(const CompletionGroup& group, const PolicyParams& current,
                                      const PolicyParams& ref, const SlotSpec& spec,
                                      const GroundingSample& sample, const TrainConfig& cfg) {
  const std::size_t g = group.members.size();
  if (g < 2 || group.advantages.size() != g)
    throw ConfigError("objective needs a group with advantages");

  ObjectiveResult out;
  out.gradient.assign(current.block(sample.id).size(), 0.0);
  const double inv_g = 1.0 / static_cast<double>(g);

  for (std::size_t i = 0; i < g; ++i) {
    const Completion& c = group.members[i];
    const double adv = group.advantages[i];
    const double logp_cur = log_prob(current, spec, sample, c);
    const double logp_ref = log_prob(ref, spec, sample, c);
    const double ratio = std::exp(std::clamp(logp_cur - c.logprob_old, -50.0, 50.0));

    const double unclipped = ratio * adv;
    const double clipped = clip_ratio(ratio, cfg.eps) * adv;
    const double kl = kl_estimate(logp_ref, logp_cur);
    out.value += inv_g * (std::min(unclipped, clipped) - cfg.beta * kl);
    out.mean_kl += inv_g * kl;
    if (clipped < unclipped) out.clipped_fraction += inv_g;

    // Surrogate branch: d(ratio*A)/dtheta = ratio*A*dlogp; a strictly binding
    // clip contributes zero. KL: d(-beta*kl)/dtheta = beta*(u-1)*dlogp.
    const double u = std::exp(std::clamp(logp_ref - logp_cur, -50.0, 50.0));
    const double coeff =
        (unclipped <= clipped ? ratio * adv : 0.0) + cfg.beta * (u - 1.0);
    const std::vector<double> dlogp = log_prob_grad(current, spec, sample, c);
    for (std::size_t j = 0; j < dlogp.size(); ++j) out.gradient[j] += inv_g * coeff * dlogp[j];
  }

  if (!std::isfinite(out.value)) throw NumericError("non-finite objective value");
  for (const double v : out.gradient)
    if (!std::isfinite(v)) throw NumericError("non-finite objective gradient");
  return out;
}

namespace detail {

inline double weighted_total(const RewardBreakdown& b, const TrainConfig& cfg) {
  return cfg.weight_format * b.format + cfg.weight_spatial * b.spatial +
         cfg.weight_semantic * b.semantic;
}

// Accuracy over a set of completions at the fixed evaluation threshold.
inline double batch_accuracy(const std::vector<Completion>& members,
                             const GroundingSample& sample) {
  if (members.empty()) return 0.0;
  int hits = 0;
  for (const auto& m : members) {
    const auto pred = extract_answer_box(m.text);
    if (pred && box_iou(*pred, sample.gt_box) > 0.5) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(members.size());
}

}  // namespace detail

// One optimization step on one sample: snapshot the old policy when due,
// sample the group from it, grade, normalize, ascend. Per-member generators
// are derived from a fresh step key so group sampling is order-independent.
//
// Ascent uses the objective gradient scaled to unit L2 norm. Raw-magnitude
// steps destabilize a tabular softmax policy two ways: the KL term's
// u = exp(logp_ref - logp_cur) kicks grow unbounded once the policy
// concentrates and a rare completion is sampled, and a saturated softmax
// freezes because its own gradient vanishes. Fixed-length steps bound both.
// The objective and its gradient are unchanged.
inline StepRecord train_step(TrainState& state, const GroundingSample& sample,
                             SimilarityProvider& provider, const SlotSpec& spec,
                             const TrainConfig& cfg) {
  if (state.step % cfg.refresh_interval == 0) state.old = state.current;
  const std::uint64_t step_key = state.rng.next_u64();

  CompletionGroup group;
  group.sample_id = sample.id;
  group.members.reserve(cfg.group_size);
  for (int i = 0; i < cfg.group_size; ++i) {
    Rng member_rng(Rng::mix(step_key, static_cast<std::uint64_t>(i)));
    group.members.push_back(sample_completion(state.old, spec, sample, member_rng));
  }

  std::vector<double> rewards(cfg.group_size, 0.0);
  group.breakdowns.reserve(cfg.group_size);
  for (int i = 0; i < cfg.group_size; ++i) {
    group.breakdowns.push_back(
        total_reward(group.members[i].text, sample, provider, cfg.iou_threshold));
    rewards[i] = detail::weighted_total(group.breakdowns[i], cfg);
  }
  group.advantages = compute_advantages(rewards, cfg.advantage_epsilon);

  const ObjectiveResult obj = grpo_objective(group, state.current, state.ref, spec, sample, cfg);
  double grad_norm = 0.0;
  for (const double g : obj.gradient) grad_norm += g * g;
  grad_norm = std::sqrt(grad_norm);
  if (grad_norm > 1e-12)
    state.current.add_scaled(sample.id, obj.gradient, cfg.learning_rate / grad_norm);

  StepRecord rec;
  rec.step = state.step;
  const double inv_g = 1.0 / static_cast<double>(cfg.group_size);
  for (int i = 0; i < cfg.group_size; ++i) {
    rec.mean_reward += inv_g * rewards[i];
    rec.mean_format += inv_g * group.breakdowns[i].format;
    rec.mean_spatial += inv_g * group.breakdowns[i].spatial;
    rec.mean_semantic += inv_g * group.breakdowns[i].semantic;
  }
  rec.objective = obj.value;
  rec.mean_kl = obj.mean_kl;
  rec.clipped_fraction = obj.clipped_fraction;
  rec.batch_acc = detail::batch_accuracy(group.members, sample);
  state.step += 1;
  return rec;
}

// Supervised baseline: ascend the log-likelihood of the ground-truth target
// tuple (first format-valid template, nearest-bin quantized gt box). Logged
// metrics grade the greedy decode; no similarity provider is involved, so the
// semantic component is reported as 0.
inline StepRecord sft_step(TrainState& state, const GroundingSample& sample,
                           const SlotSpec& spec, const TrainConfig& cfg) {
  int target_template = -1;
  for (std::size_t i = 0; i < spec.template_valid.size(); ++i)
    if (spec.template_valid[i]) {
      target_template = static_cast<int>(i);
      break;
    }
  if (target_template < 0) throw ConfigError("slot spec has no format-valid template");

  Completion target;
  target.template_index = target_template;
  target.coord_bins = {
      nearest_bin(sample.gt_box.x1, spec.bins, sample.width),
      nearest_bin(sample.gt_box.y1, spec.bins, sample.height),
      nearest_bin(sample.gt_box.x2, spec.bins, sample.width),
      nearest_bin(sample.gt_box.y2, spec.bins, sample.height),
  };
  target.text = render_completion(target.template_index, target.coord_bins, sample, spec);

  const std::vector<double> grad = log_prob_grad(state.current, spec, sample, target);
  state.current.add_scaled(sample.id, grad, cfg.learning_rate);

  const double logp_cur = log_prob(state.current, spec, sample, target);
  const double logp_ref = log_prob(state.ref, spec, sample, target);

  const Completion greedy = greedy_decode(state.current, spec, sample);
  const auto pred = extract_answer_box(greedy.text);

  StepRecord rec;
  rec.step = state.step;
  rec.mean_format = format_reward(greedy.text);
  rec.mean_spatial = spatial_reward(pred, sample.gt_box, cfg.iou_threshold);
  rec.mean_semantic = 0.0;
  rec.mean_reward = rec.mean_format + rec.mean_spatial;
  rec.objective = logp_cur;
  rec.mean_kl = kl_estimate(logp_ref, logp_cur);
  rec.clipped_fraction = 0.0;
  rec.batch_acc = (pred && box_iou(*pred, sample.gt_box) > 0.5) ? 1.0 : 0.0;
  state.step += 1;
  return rec;
}

}  // namespace boxrl
