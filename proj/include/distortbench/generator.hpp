#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "distortbench/agent.hpp"
#include "distortbench/classifier.hpp"
#include "distortbench/config.hpp"
#include "distortbench/errors.hpp"
#include "distortbench/ledger.hpp"
#include "distortbench/sensitivity.hpp"

namespace distortbench {

enum class Termination {
  Misclassified,
  TargetHit,
  ThresholdHit,
  Budget,
  MaxIter,
  Skipped,
  FailedTransport,
};

inline constexpr std::string_view termination_name(Termination t) {
  switch (t) {
    case Termination::Misclassified: return "misclassified";
    case Termination::TargetHit: return "target-hit";
    case Termination::ThresholdHit: return "threshold-hit";
    case Termination::Budget: return "budget";
    case Termination::MaxIter: return "max_iter";
    case Termination::Skipped: return "skipped";
    case Termination::FailedTransport: return "failed-transport";
  }
  return "unknown";
}

inline Termination parse_termination(std::string_view s) {
  for (Termination t : {Termination::Misclassified, Termination::TargetHit, Termination::ThresholdHit,
                        Termination::Budget, Termination::MaxIter, Termination::Skipped, Termination::FailedTransport}) {
    if (termination_name(t) == s) return t;
  }
  throw InvalidArgument("unknown termination reason: " + std::string(s));
}

/// Query accounting for one step of the episode loop.
struct StepStats {
  std::uint64_t scan_evaluations = 0;
  /// patches * active filters + distorted cells at the start of the step.
  std::uint64_t scan_ceiling = 0;
  /// Everything issued during the step, including the post-action check.
  std::uint64_t step_evaluations = 0;
  ActionSpec action;
  double reward = 0.0;
};

struct EpisodeResult {
  std::size_t index = 0;
  std::size_t label = 0;
  bool success = false;
  Termination reason = Termination::MaxIter;
  ImageTensor original;
  /// Perturbed image at termination; the level-1 sample on success.
  ImageTensor adversarial;
  double l2 = 0.0;
  std::size_t steps = 0;
  QueryCount queries;
  ProbabilityVector clean_probs;
  ProbabilityVector final_probs;
  /// In threshold mode, the image at each threshold crossing, in order.
  std::vector<ImageTensor> threshold_levels;
  std::vector<StepStats> trace;
  std::string error;
};

/// Whether `probs` satisfies the episode's stopping goal (ignoring thresholds).
inline bool goal_reached(AttackMode mode, const ProbabilityVector& probs, std::size_t label,
                         std::optional<std::size_t> target) {
  return mode == AttackMode::Untargeted ? probs.argmax() != label : probs.argmax() == *target;
}

/// Whether `p_tracked` has crossed threshold `t` in the attack's direction.
inline bool threshold_crossed(AttackMode mode, double p_tracked, double t) {
  return mode == AttackMode::Untargeted ? p_tracked <= t : p_tracked >= t;
}

/// Ordered so that crossings happen front to back.
inline std::vector<double> ordered_thresholds(AttackMode mode, std::vector<double> t) {
  if (mode == AttackMode::Untargeted) std::sort(t.begin(), t.end(), std::greater<>());
  else std::sort(t.begin(), t.end());
  return t;
}

/// One attack episode: scan, build state, pick (n_add, n_rem[, filter]),
/// apply the top entries of the sorted add/remove lists, re-render, re-query,
/// until the goal is reached or the budget runs out. With `training` set the
/// agent explores and learns from every transition.
inline EpisodeResult run_episode(const ImageTensor& image, std::size_t label, std::size_t index,
                                 const RunConfig& config, DqnAgent& agent, const ClassifierHandle& classifier,
                                 bool training) {
  EpisodeResult r;
  r.index = index;
  r.label = label;
  r.original = image;
  r.adversarial = image;

  const ClassifierHandle victim = classifier.scoped();
  const AttackMode mode = config.mode;
  if (mode == AttackMode::Targeted) {
    if (!config.target_class) throw InvalidArgument("run_episode: targeted mode without target class");
    if (*config.target_class == label) throw InvalidArgument("run_episode: target class equals ground truth");
  }
  const std::size_t tracked = mode == AttackMode::Untargeted ? label : *config.target_class;
  const PatchGrid grid = partition_patches(image.shape(), config.patch_size);
  const std::vector<double> thresholds = ordered_thresholds(mode, config.thresholds);
  const StateConfig state_cfg = config.state_config();
  const std::uint64_t episode_seed = derive_seed({config.seed, index});

  try {
    r.clean_probs = victim.predict_one(image);
    r.final_probs = r.clean_probs;
    if (label >= r.clean_probs.size() || tracked >= r.clean_probs.size()) {
      throw InvalidArgument("run_episode: class index out of range for victim");
    }
    if (r.clean_probs.argmax() != label && config.skip_misclassified) {
      r.reason = Termination::Skipped;
      r.queries = victim.queries();
      return r;
    }

    DistortionLedger ledger(image, grid, config.filter_params, episode_seed);
    ImageTensor current = image;
    ProbabilityVector probs = r.clean_probs;
    double l2 = 0.0;
    std::size_t next_threshold = 0;

    auto finished = [&]() -> std::optional<Termination> {
      if (!thresholds.empty()) {
        while (next_threshold < thresholds.size() && threshold_crossed(mode, probs[tracked], thresholds[next_threshold])) {
          r.threshold_levels.push_back(current);
          ++next_threshold;
        }
        if (next_threshold == thresholds.size()) return Termination::ThresholdHit;
      } else if (goal_reached(mode, probs, label, config.target_class)) {
        return mode == AttackMode::Untargeted ? Termination::Misclassified : Termination::TargetHit;
      }
      if (config.l2_budget > 0.0 && l2 > config.l2_budget) return Termination::Budget;
      if (config.max_queries > 0 && victim.queries().evaluations >= config.max_queries) return Termination::Budget;
      return std::nullopt;
    };

    std::optional<Termination> done = finished();
    std::optional<Transition> pending;
    const ActionSpace& actions = agent.actions();

    while (!done && r.steps < config.max_iter) {
      const QueryCount step_start = victim.queries();
      const std::uint64_t ceiling = scan_query_ceiling(ledger, config.filters.size());
      const SensitivityLists lists =
          scan(ledger, current, probs[tracked], config.filters, tracked, mode, victim);
      const std::uint64_t scan_evals = (victim.queries() - step_start).evaluations;

      StateVector state = build_state(lists, probs, l2, r.steps, tracked, state_cfg);
      if (pending) {
        pending->next_state = state;
        agent.observe(std::move(*pending));
        pending.reset();
      }

      const std::size_t choice = agent.act(state, lists.list_minus.size(), training);
      const ActionSpec spec = actions.decode(choice);

      for (std::size_t i = 0; i < std::min(spec.n_rem, lists.list_minus.size()); ++i) {
        ledger.remove(lists.list_minus[i].patch_id, lists.list_minus[i].filter);
      }
      std::size_t added = 0;
      for (const auto& e : lists.list_plus) {
        if (added == spec.n_add) break;
        if (e.filter != spec.filter) continue;
        ledger.add(e.patch_id, e.filter);
        ++added;
      }

      current = render(ledger);
      const ProbabilityVector next_probs = victim.predict_one(current);
      const double next_l2 = l2_distance(current, image);
      const RewardTerms reward = compute_reward(mode, probs[tracked], next_probs[tracked], l2, next_l2);
      probs = next_probs;
      l2 = next_l2;
      ++r.steps;

      r.trace.push_back({scan_evals, ceiling, (victim.queries() - step_start).evaluations, spec, reward.reward});
      done = finished();
      if (training) {
        Transition t{std::move(state), choice, reward.reward, {}, done.has_value() || r.steps >= config.max_iter};
        if (t.done) {
          t.next_state.assign(t.state.size(), 0.0);
          agent.observe(std::move(t));
        } else {
          pending = std::move(t);
        }
      }
    }

    r.reason = done.value_or(Termination::MaxIter);
    r.success = r.reason == Termination::Misclassified || r.reason == Termination::TargetHit ||
                r.reason == Termination::ThresholdHit;
    r.adversarial = current;
    r.l2 = l2;
    r.final_probs = probs;
  } catch (const TransportError& e) {
    r.success = false;
    r.reason = Termination::FailedTransport;
    r.error = e.what();
  } catch (const ProtocolError& e) {
    r.success = false;
    r.reason = Termination::FailedTransport;
    r.error = e.what();
  }
  r.queries = victim.queries();
  return r;
}

/// original + s * (level1 - original), clipped to [0, 1]. s = 1 returns the
/// level-1 image unchanged.
inline ImageTensor escalate_severity(const ImageTensor& original, const ImageTensor& level1, double s) {
  if (!(original.shape() == level1.shape())) {
    throw InvalidArgument("escalate_severity: shape " + to_string(original.shape()) + " vs " +
                          to_string(level1.shape()));
  }
  if (!(s >= 1.0) || !std::isfinite(s)) throw InvalidArgument("escalate_severity: severity must be >= 1");
  if (s == 1.0) return level1;
  RawImage out(original.shape(), std::vector<double>(original.size()));
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = original[i] + s * (level1[i] - original[i]);
  return clip_unit(out);
}

/// Builds an agent for `config` sized to the victim's class count.
inline DqnAgent make_agent(const RunConfig& config, std::size_t num_classes) {
  AgentConfig ac = config.agent_config;
  ac.seed = derive_seed({config.seed, 0xa6e47ULL});
  return DqnAgent(state_size(config.state_config(), num_classes), ActionSpace(config.filters), ac);
}

}  // namespace distortbench
