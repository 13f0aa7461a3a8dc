#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "distortbench/classifier.hpp"
#include "distortbench/errors.hpp"
#include "distortbench/ledger.hpp"

namespace distortbench {

enum class AttackMode { Untargeted, Targeted };
enum class Direction { Add, Remove };

struct SensitivityEntry {
  std::size_t patch_id = 0;
  FilterId filter = FilterId::GaussianNoise;
  Direction direction = Direction::Add;
  /// P_tracked(candidate) - P_tracked(current).
  double delta_p = 0.0;

  friend bool operator==(const SensitivityEntry&, const SensitivityEntry&) = default;
};

/// Add and remove candidates, most useful first: most negative delta_p when
/// pushing the ground truth down, most positive when pulling a target up.
struct SensitivityLists {
  std::vector<SensitivityEntry> list_plus;
  std::vector<SensitivityEntry> list_minus;
};

inline void sort_entries(std::vector<SensitivityEntry>& entries, AttackMode mode) {
  std::sort(entries.begin(), entries.end(), [mode](const SensitivityEntry& a, const SensitivityEntry& b) {
    if (a.delta_p != b.delta_p) return mode == AttackMode::Untargeted ? a.delta_p < b.delta_p : a.delta_p > b.delta_p;
    if (a.patch_id != b.patch_id) return a.patch_id < b.patch_id;
    return a.filter < b.filter;
  });
}

/// Upper bound on evaluations issued by one scan: one add candidate per
/// (patch, active filter) and one remove candidate per distorted cell.
inline std::size_t scan_query_ceiling(const DistortionLedger& ledger, std::size_t active_filters) {
  return ledger.grid().count() * active_filters + ledger.distorted_pair_count();
}

/// One-level lookahead around the current ledger state. `current` must be
/// render(ledger) and `p_tracked` the victim's probability for the tracked
/// class on it; both are supplied by the caller so the scan itself issues only
/// candidate queries.
inline SensitivityLists scan(const DistortionLedger& ledger, const ImageTensor& current, double p_tracked,
                             std::span<const FilterId> filters, std::size_t tracked_class, AttackMode mode,
                             const ClassifierHandle& classifier) {
  if (filters.empty()) throw InvalidArgument("scan: no active filters");
  if (classifier.num_classes() != 0 && tracked_class >= classifier.num_classes()) {
    throw InvalidArgument("scan: tracked class " + std::to_string(tracked_class) + " out of range");
  }

  std::vector<SensitivityEntry> candidates;
  candidates.reserve(scan_query_ceiling(ledger, filters.size()));
  for (std::size_t p = 0; p < ledger.grid().count(); ++p)
    for (FilterId f : filters) candidates.push_back({p, f, Direction::Add, 0.0});
  for (const auto& [cell, k] : ledger.counts()) {
    candidates.push_back({cell.patch_id, cell.filter, Direction::Remove, 0.0});
  }

  // Render and query in chunks of the victim's batch size to bound memory.
  DistortionLedger scratch = ledger;
  const std::size_t chunk = classifier.max_batch();
  std::vector<ImageTensor> images;
  for (std::size_t start = 0; start < candidates.size(); start += chunk) {
    const std::size_t end = std::min(candidates.size(), start + chunk);
    images.clear();
    for (std::size_t i = start; i < end; ++i) {
      const auto& c = candidates[i];
      if (c.direction == Direction::Add) scratch.add(c.patch_id, c.filter); else scratch.remove(c.patch_id, c.filter);
      images.push_back(render_patch_update(current, scratch, c.patch_id));
      if (c.direction == Direction::Add) scratch.remove(c.patch_id, c.filter); else scratch.add(c.patch_id, c.filter);
    }
    const auto probs = classifier.predict(images);
    for (std::size_t i = start; i < end; ++i) {
      const auto& p = probs[i - start];
      if (tracked_class >= p.size()) throw InvalidArgument("scan: tracked class out of range");
      candidates[i].delta_p = p[tracked_class] - p_tracked;
    }
  }

  SensitivityLists lists;
  for (auto& c : candidates) (c.direction == Direction::Add ? lists.list_plus : lists.list_minus).push_back(c);
  sort_entries(lists.list_plus, mode);
  sort_entries(lists.list_minus, mode);
  return lists;
}

/// Convenience form that renders and queries the current state itself (one
/// extra evaluation).
inline SensitivityLists scan(const DistortionLedger& ledger, std::span<const FilterId> filters,
                             std::size_t tracked_class, AttackMode mode, const ClassifierHandle& classifier) {
  const ImageTensor current = render(ledger);
  const ProbabilityVector p = classifier.predict_one(current);
  if (tracked_class >= p.size()) throw InvalidArgument("scan: tracked class out of range");
  return scan(ledger, current, p[tracked_class], filters, tracked_class, mode, classifier);
}

struct StateConfig {
  /// Entries kept from each sensitivity list.
  std::size_t top_k = 32;
  std::size_t max_iter = 3500;
  /// Class summaries switch from the full vector to top-10 + tracked above this.
  std::size_t full_probability_limit = 32;
  std::size_t summary_top = 10;
};

using StateVector = std::vector<double>;

inline std::size_t probability_summary_size(const StateConfig& cfg, std::size_t num_classes) {
  return num_classes <= cfg.full_probability_limit ? num_classes : cfg.summary_top + 1;
}

inline std::size_t state_size(const StateConfig& cfg, std::size_t num_classes) {
  return 2 * cfg.top_k + probability_summary_size(cfg, num_classes) + 2;
}

/// Layout: top_k add deltas | top_k remove deltas | class probabilities | L2 |
/// step / max_iter. Missing entries are zero.
inline StateVector build_state(const SensitivityLists& lists, const ProbabilityVector& probs, double l2,
                               std::size_t step, std::size_t tracked_class, const StateConfig& cfg) {
  StateVector s(state_size(cfg, probs.size()), 0.0);
  std::size_t o = 0;
  for (std::size_t i = 0; i < cfg.top_k && i < lists.list_plus.size(); ++i) s[o + i] = lists.list_plus[i].delta_p;
  o += cfg.top_k;
  for (std::size_t i = 0; i < cfg.top_k && i < lists.list_minus.size(); ++i) s[o + i] = lists.list_minus[i].delta_p;
  o += cfg.top_k;
  if (probs.size() <= cfg.full_probability_limit) {
    for (std::size_t k = 0; k < probs.size(); ++k) s[o + k] = probs[k];
    o += probs.size();
  } else {
    std::vector<double> sorted(probs.values().begin(), probs.values().end());
    std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(cfg.summary_top), sorted.end(),
                      std::greater<>());
    for (std::size_t k = 0; k < cfg.summary_top; ++k) s[o + k] = sorted[k];
    s[o + cfg.summary_top] = tracked_class < probs.size() ? probs[tracked_class] : 0.0;
    o += cfg.summary_top + 1;
  }
  s[o++] = l2;
  s[o++] = cfg.max_iter == 0 ? 0.0 : static_cast<double>(step) / static_cast<double>(cfg.max_iter);
  return s;
}

}  // namespace distortbench
