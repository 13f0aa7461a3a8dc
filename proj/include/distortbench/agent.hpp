#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distortbench/errors.hpp"
#include "distortbench/filters.hpp"
#include "distortbench/qnet.hpp"
#include "distortbench/rng.hpp"
#include "distortbench/sensitivity.hpp"

namespace distortbench {

/// How many patches to distort and to restore in one step, and with which
/// filter (meaningful only when several filters are active).
struct ActionSpec {
  std::size_t n_add = 1;
  std::size_t n_rem = 0;
  FilterId filter = FilterId::GaussianNoise;

  friend bool operator==(const ActionSpec&, const ActionSpec&) = default;
};

/// Discrete action grid: filters x n_add choices x n_rem choices, indexed
/// (filter * |add| + add) * |rem| + rem.
class ActionSpace {
 public:
  explicit ActionSpace(std::vector<FilterId> filters, std::vector<std::size_t> add_choices = {1, 2, 4, 8, 16},
                       std::vector<std::size_t> rem_choices = {0, 1, 2, 4})
      : filters_(std::move(filters)), add_(std::move(add_choices)), rem_(std::move(rem_choices)) {
    if (filters_.empty() || add_.empty() || rem_.empty()) throw InvalidArgument("action space: empty axis");
    if (std::find(rem_.begin(), rem_.end(), 0U) == rem_.end()) {
      throw InvalidArgument("action space: n_rem choices must include 0");
    }
  }

  std::size_t size() const noexcept { return filters_.size() * add_.size() * rem_.size(); }
  const std::vector<FilterId>& filters() const noexcept { return filters_; }

  ActionSpec decode(std::size_t index) const {
    if (index >= size()) throw InvalidArgument("action index out of range: " + std::to_string(index));
    const std::size_t r = index % rem_.size();
    const std::size_t a = (index / rem_.size()) % add_.size();
    const std::size_t f = index / (rem_.size() * add_.size());
    return {add_[a], rem_[r], filters_[f]};
  }

  std::size_t encode(const ActionSpec& spec) const {
    const auto f = std::find(filters_.begin(), filters_.end(), spec.filter);
    const auto a = std::find(add_.begin(), add_.end(), spec.n_add);
    const auto r = std::find(rem_.begin(), rem_.end(), spec.n_rem);
    if (f == filters_.end() || a == add_.end() || r == rem_.end()) throw InvalidArgument("action not in grid");
    return (static_cast<std::size_t>(f - filters_.begin()) * add_.size() + static_cast<std::size_t>(a - add_.begin())) *
               rem_.size() +
           static_cast<std::size_t>(r - rem_.begin());
  }

  /// Actions whose n_rem does not exceed the available remove candidates.
  std::vector<bool> valid_mask(std::size_t removable) const {
    std::vector<bool> mask(size());
    for (std::size_t i = 0; i < size(); ++i) mask[i] = rem_[i % rem_.size()] <= removable;
    return mask;
  }

 private:
  std::vector<FilterId> filters_;
  std::vector<std::size_t> add_;
  std::vector<std::size_t> rem_;
};

inline constexpr double kRewardL2Floor = 1e-6;

struct RewardTerms {
  /// Probability dilution change (untargeted) or enhancement change (targeted).
  double delta_p = 0.0;
  double delta_l2 = 0.0;
  double reward = 0.0;
};

/// Probability movement toward the attack goal per unit of L2 change.
/// Untargeted: dilution PD = 1 - P_gt, reward = dPD / max(|dL2|, 1e-6), so
/// lowering P_gt earns positive reward. Targeted: reward = dP_target / max(|dL2|, 1e-6).
/// (The untargeted reward is often printed as -dPD/dL2; with PD defined as the
/// mass moved away from the ground truth that sign would punish progress.)
inline RewardTerms compute_reward(AttackMode mode, double p_before, double p_after, double l2_before,
                                  double l2_after) {
  RewardTerms t;
  t.delta_p = mode == AttackMode::Untargeted ? p_before - p_after : p_after - p_before;
  t.delta_l2 = l2_after - l2_before;
  t.reward = t.delta_p / std::max(std::abs(t.delta_l2), kRewardL2Floor);
  return t;
}

struct Transition {
  StateVector state;
  std::size_t action = 0;
  double reward = 0.0;
  StateVector next_state;
  bool done = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw InvalidArgument("replay buffer: capacity must be >= 1");
  }

  void push(Transition t) {
    if (!std::isfinite(t.reward)) throw InvalidArgument("replay buffer: non-finite reward");
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
  }

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }

  /// Uniform sample with replacement.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
    if (items_.empty()) throw PreconditionViolation("replay buffer: sampling from empty buffer");
    std::vector<const Transition*> out(n);
    for (auto& p : out) p = &items_[rng.uniform_index(items_.size())];
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
};

/// Epsilon-greedy choice among valid actions; greedy ties go to the lowest index.
inline std::size_t select_action(std::span<const double> q, double epsilon, const std::vector<bool>& valid,
                                 Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidArgument("select_action: epsilon must lie in [0,1]");
  if (valid.size() != q.size()) throw InvalidArgument("select_action: mask size mismatch");
  std::vector<std::size_t> allowed;
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) allowed.push_back(i);
  if (allowed.empty()) throw PreconditionViolation("select_action: no valid action");
  if (epsilon > 0.0 && rng.uniform() < epsilon) return allowed[rng.uniform_index(allowed.size())];
  std::size_t best = allowed.front();
  for (std::size_t i : allowed)
    if (q[i] > q[best]) best = i;
  return best;
}

inline std::size_t greedy_action(std::span<const double> q, const std::vector<bool>& valid) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < valid.size() && i < q.size(); ++i)
    if (valid[i] && (!best || q[i] > q[*best])) best = i;
  if (!best) throw PreconditionViolation("greedy_action: no valid action");
  return *best;
}

inline std::size_t select_action(const DuelingQNet& net, std::span<const double> state, double epsilon,
                                 const std::vector<bool>& valid, Rng& rng) {
  const auto q = net.q_values(state);
  return select_action(q, epsilon, valid, rng);
}

namespace detail {

inline DuelingQNet::Matrix stack_states(std::span<const Transition* const> batch, bool next) {
  const std::size_t dim = (next ? batch.front()->next_state : batch.front()->state).size();
  DuelingQNet::Matrix m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const StateVector& s = next ? batch[b]->next_state : batch[b]->state;
    if (s.size() != dim) throw InvalidArgument("td_update: ragged state sizes");
    for (std::size_t i = 0; i < dim; ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) = s[i];
  }
  return m;
}

}  // namespace detail

/// y = r + gamma * max_a Q_target(s', a), or y = r for terminal transitions.
inline std::vector<double> td_targets(const DuelingQNet& target_net, std::span<const Transition* const> batch,
                                      double gamma) {
  std::vector<double> y(batch.size());
  bool any_live = false;
  for (const auto* t : batch) any_live = any_live || (!t->done && gamma != 0.0);
  DuelingQNet::Matrix q_next;
  if (any_live) q_next = target_net.forward(detail::stack_states(batch, true)).q;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    y[b] = batch[b]->reward;
    if (!batch[b]->done && gamma != 0.0) y[b] += gamma * q_next.col(static_cast<Eigen::Index>(b)).maxCoeff();
  }
  return y;
}

/// Mean squared TD error of `net` on the batch, targets from `target_net`.
inline double td_loss(const DuelingQNet& net, const DuelingQNet& target_net,
                      std::span<const Transition* const> batch, double gamma, std::vector<double>* grad = nullptr) {
  if (batch.empty()) throw InvalidArgument("td_update: empty batch");
  const auto y = td_targets(target_net, batch, gamma);
  std::vector<std::size_t> actions(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) actions[b] = batch[b]->action;
  return net.loss_and_gradient(detail::stack_states(batch, false), actions, y, grad);
}

/// One optimizer step on the mean squared TD error. Returns the loss before the step.
inline double td_update(DuelingQNet& net, const DuelingQNet& target_net, std::span<const Transition* const> batch,
                        double gamma, AdamOptimizer& optimizer) {
  std::vector<double> grad;
  const double loss = td_loss(net, target_net, batch, gamma, &grad);
  if (!std::isfinite(loss)) {
    throw TrainingDiverged("td_update: non-finite loss (batch " + std::to_string(batch.size()) + ", gamma " +
                           std::to_string(gamma) + ", optimizer step " + std::to_string(optimizer.steps) + ")");
  }
  optimizer.step(net.parameters(), grad);
  return loss;
}

struct AgentConfig {
  double gamma = 0.99;
  double learning_rate = 1e-3;
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 64;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  std::size_t epsilon_decay_steps = 5000;
  std::size_t target_sync_every = 500;
  std::size_t hidden = 128;
  /// Stored rewards are clipped to [-reward_clip, reward_clip] before TD
  /// learning; 0 keeps them as computed.
  double reward_clip = 0.0;
  std::uint64_t seed = 0;
};

/// Dueling DQN with experience replay and a periodically synced target net.
class DqnAgent {
 public:
  DqnAgent(std::size_t state_dim, ActionSpace actions, AgentConfig cfg)
      : cfg_(cfg), actions_(std::move(actions)),
        online_(DuelingQNet::initialized({state_dim, cfg.hidden, cfg.hidden, actions_.size()}, derive_seed({cfg.seed, 1}))),
        target_(online_), replay_(cfg.replay_capacity), rng_(derive_seed({cfg.seed, 2})) {
    optimizer_.learning_rate = cfg.learning_rate;
  }

  /// Wraps a trained network for inference.
  DqnAgent(DuelingQNet net, ActionSpace actions, AgentConfig cfg)
      : cfg_(cfg), actions_(std::move(actions)), online_(std::move(net)), target_(online_),
        replay_(cfg.replay_capacity), rng_(derive_seed({cfg.seed, 2})) {
    if (online_.dims().actions != actions_.size()) {
      throw InvalidArgument("agent: network has " + std::to_string(online_.dims().actions) +
                            " outputs but the action space has " + std::to_string(actions_.size()));
    }
    optimizer_.learning_rate = cfg.learning_rate;
  }

  const ActionSpace& actions() const noexcept { return actions_; }
  const DuelingQNet& network() const noexcept { return online_; }
  const AgentConfig& config() const noexcept { return cfg_; }
  std::size_t state_dim() const noexcept { return online_.dims().input; }
  std::uint64_t agent_steps() const noexcept { return steps_; }
  std::uint64_t updates() const noexcept { return updates_; }
  const ReplayBuffer& replay() const noexcept { return replay_; }

  double epsilon() const noexcept {
    if (cfg_.epsilon_decay_steps == 0 || steps_ >= cfg_.epsilon_decay_steps) return cfg_.epsilon_end;
    const double frac = static_cast<double>(steps_) / static_cast<double>(cfg_.epsilon_decay_steps);
    return cfg_.epsilon_start + frac * (cfg_.epsilon_end - cfg_.epsilon_start);
  }

  /// Exploring choice (training) or greedy choice (inference). The greedy path
  /// touches no mutable state and is safe to call concurrently.
  std::size_t act(const StateVector& state, std::size_t removable, bool explore) {
    if (!explore) return greedy(state, removable);
    const std::size_t a = select_action(online_, state, epsilon(), actions_.valid_mask(removable), rng_);
    ++steps_;
    return a;
  }

  std::size_t greedy(const StateVector& state, std::size_t removable) const {
    return greedy_action(online_.q_values(state), actions_.valid_mask(removable));
  }

  /// Stores the transition and, once enough are buffered, takes one TD step.
  /// Returns the pre-step loss, or NaN when no update happened.
  double observe(Transition t) {
    if (cfg_.reward_clip > 0.0) t.reward = std::clamp(t.reward, -cfg_.reward_clip, cfg_.reward_clip);
    replay_.push(std::move(t));
    if (replay_.size() < cfg_.batch_size) return std::nan("");
    const auto batch = replay_.sample(cfg_.batch_size, rng_);
    const double loss = td_update(online_, target_, batch, cfg_.gamma, optimizer_);
    if (++updates_ % cfg_.target_sync_every == 0) target_ = online_;
    return loss;
  }

 private:
  AgentConfig cfg_;
  ActionSpace actions_;
  DuelingQNet online_;
  DuelingQNet target_;
  AdamOptimizer optimizer_;
  ReplayBuffer replay_;
  Rng rng_;
  std::uint64_t steps_ = 0;
  std::uint64_t updates_ = 0;
};

}  // namespace distortbench
