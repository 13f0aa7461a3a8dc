#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "distortbench/classifier.hpp"
#include "distortbench/errors.hpp"
#include "distortbench/split_io.hpp"

namespace distortbench {

/// Per-severity clean and corrupt top-1 error over one index intersection.
/// The clean error has no severity; it is replicated per level.
struct ErrorTable {
  std::vector<double> clean;
  std::vector<double> corrupt;
  std::vector<std::size_t> indices;

  std::size_t severities() const noexcept { return corrupt.size(); }
};

/// Evaluates `classifier` on the clean samples and on every severity level of
/// the split, restricted to `indices` (default: split files intersected with
/// the dataset).
inline ErrorTable error_rates(const SplitManifest& split, const Dataset& clean, const ClassifierHandle& classifier,
                              std::vector<std::size_t> indices = {}) {
  std::map<std::size_t, const Sample*> by_index;
  for (const auto& s : clean) by_index[s.index] = &s;
  if (indices.empty()) {
    std::vector<std::size_t> ds_idx;
    for (const auto& [i, s] : by_index) ds_idx.push_back(i);
    indices = intersect_indices({split.indices_with_files(), ds_idx});
  }
  if (indices.empty()) throw InvalidArgument("error_rates: empty index intersection");
  const std::size_t levels = split.level_count();

  std::vector<ImageTensor> clean_images;
  std::vector<std::size_t> labels;
  std::vector<std::vector<ImageTensor>> level_images(levels);
  for (std::size_t idx : indices) {
    const ManifestRecord* rec = split.find(idx);
    auto it = by_index.find(idx);
    if (rec == nullptr || it == by_index.end()) {
      throw InvalidArgument("error_rates: index " + std::to_string(idx) + " missing from split or dataset");
    }
    if (rec->levels.size() != levels) throw InvalidArgument("error_rates: ragged severity levels in split");
    clean_images.push_back(it->second->image);
    labels.push_back(it->second->label);
    for (std::size_t s = 0; s < levels; ++s) level_images[s].push_back(load_level(split, rec->levels[s]));
  }

  auto error_of = [&](const std::vector<ImageTensor>& images) {
    const auto probs = classifier.predict(images);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) wrong += probs[i].argmax() != labels[i];
    return static_cast<double>(wrong) / static_cast<double>(probs.size());
  };
  ErrorTable t;
  t.indices = indices;
  const double clean_error = error_of(clean_images);
  for (std::size_t s = 0; s < levels; ++s) {
    t.corrupt.push_back(error_of(level_images[s]));
    t.clean.push_back(clean_error);
  }
  return t;
}

struct RobustnessSummary {
  /// Mean corrupt error over severities.
  double ce_corrupt = 0.0;
  /// Plain sum of per-severity corrupt errors (can exceed 1).
  double ce_corrupt_raw_sum = 0.0;
  double accuracy_corrupt = 1.0;
  /// Mean of (corrupt - clean) over severities; higher means more degradation.
  double ce_degradation = 0.0;
  /// Sum of (clean - corrupt) over severities, for the opposite sign convention.
  double ce_degradation_raw_sum = 0.0;
  /// Mean CE over corruption types.
  double mce = 0.0;
};

inline RobustnessSummary aggregate(const ErrorTable& table, std::span<const ErrorTable> by_corruption = {}) {
  const std::size_t n = table.severities();
  if (n == 0 || table.clean.size() != n) throw InvalidArgument("aggregate: empty or ragged error table");
  RobustnessSummary s;
  for (std::size_t i = 0; i < n; ++i) {
    s.ce_corrupt_raw_sum += table.corrupt[i];
    s.ce_degradation += table.corrupt[i] - table.clean[i];
    s.ce_degradation_raw_sum += table.clean[i] - table.corrupt[i];
  }
  s.ce_corrupt = s.ce_corrupt_raw_sum / static_cast<double>(n);
  s.accuracy_corrupt = 1.0 - s.ce_corrupt;
  s.ce_degradation /= static_cast<double>(n);

  if (by_corruption.empty()) {
    s.mce = s.ce_corrupt;
  } else {
    double total = 0.0;
    for (const auto& t : by_corruption) {
      if (t.severities() != n || t.clean.size() != n) {
        throw InvalidArgument("aggregate: corruption tables have " + std::to_string(t.severities()) +
                              " severities, expected " + std::to_string(n));
      }
      double sum = 0.0;
      for (double e : t.corrupt) sum += e;
      total += sum / static_cast<double>(n);
    }
    s.mce = total / static_cast<double>(by_corruption.size());
  }
  return s;
}

inline double mean_corruption_error(std::span<const double> ce_by_corruption) {
  if (ce_by_corruption.empty()) throw InvalidArgument("mCE: no corruption types");
  double sum = 0.0;
  for (double c : ce_by_corruption) sum += c;
  return sum / static_cast<double>(ce_by_corruption.size());
}

/// Attack-side statistics read straight from a manifest.
struct AttackStats {
  std::size_t attempted = 0;
  std::size_t succeeded = 0;
  std::size_t skipped = 0;
  double asr = 0.0;
  double avg_l2 = 0.0;
  double max_l2 = 0.0;
  double avg_evaluations = 0.0;
  double avg_batches = 0.0;
  double avg_steps = 0.0;
};

inline AttackStats attack_stats(const SplitManifest& m) {
  AttackStats s;
  double l2_sum = 0.0, eval_sum = 0.0, batch_sum = 0.0, step_sum = 0.0;
  for (const auto& r : m.records) {
    if (r.reason == "skipped") {
      ++s.skipped;
      continue;
    }
    ++s.attempted;
    eval_sum += static_cast<double>(r.evaluations);
    batch_sum += static_cast<double>(r.batches);
    step_sum += static_cast<double>(r.steps);
    if (r.success) {
      ++s.succeeded;
      l2_sum += r.l2;
      s.max_l2 = std::max(s.max_l2, r.l2);
    }
  }
  if (s.attempted > 0) {
    s.asr = static_cast<double>(s.succeeded) / static_cast<double>(s.attempted);
    s.avg_evaluations = eval_sum / static_cast<double>(s.attempted);
    s.avg_batches = batch_sum / static_cast<double>(s.attempted);
    s.avg_steps = step_sum / static_cast<double>(s.attempted);
  }
  if (s.succeeded > 0) s.avg_l2 = l2_sum / static_cast<double>(s.succeeded);
  return s;
}

/// accuracy[i][j]: accuracy of model j on the splits generated against victim
/// i at `level` (1-based), averaged over victim i's filters. All splits are
/// restricted to their common index intersection.
struct TransferMatrix {
  std::vector<std::string> victims;
  std::vector<std::string> models;
  std::vector<std::vector<double>> accuracy;
  std::vector<std::size_t> indices;
};

inline TransferMatrix transfer_matrix(const std::vector<std::vector<SplitManifest>>& splits_by_victim,
                                      const std::vector<ClassifierHandle>& models, std::size_t level = 1) {
  if (splits_by_victim.empty() || splits_by_victim.size() != models.size()) {
    throw InvalidArgument("transfer_matrix: need one model per victim (" + std::to_string(splits_by_victim.size()) +
                          " split groups, " + std::to_string(models.size()) + " models)");
  }
  std::vector<SplitManifest> all;
  for (const auto& group : splits_by_victim) {
    if (group.empty()) throw InvalidArgument("transfer_matrix: victim without splits");
    all.insert(all.end(), group.begin(), group.end());
  }
  TransferMatrix tm;
  tm.indices = intersect_manifests(all);
  if (tm.indices.empty()) throw InvalidArgument("transfer_matrix: empty index intersection");
  if (level == 0) throw InvalidArgument("transfer_matrix: level is 1-based");

  for (std::size_t i = 0; i < splits_by_victim.size(); ++i) {
    tm.victims.push_back(splits_by_victim[i].front().victim);
    std::vector<double> row(models.size(), 0.0);
    for (const auto& split : splits_by_victim[i]) {
      std::vector<ImageTensor> images;
      std::vector<std::size_t> labels;
      for (std::size_t idx : tm.indices) {
        const ManifestRecord* rec = split.find(idx);
        if (rec->levels.size() < level) throw InvalidArgument("transfer_matrix: split lacks level " + std::to_string(level));
        images.push_back(load_level(split, rec->levels[level - 1]));
        labels.push_back(rec->label);
      }
      for (std::size_t j = 0; j < models.size(); ++j) {
        const auto probs = models[j].predict(images);
        std::size_t correct = 0;
        for (std::size_t k = 0; k < probs.size(); ++k) correct += probs[k].argmax() == labels[k];
        row[j] += static_cast<double>(correct) / static_cast<double>(probs.size());
      }
    }
    for (double& a : row) a /= static_cast<double>(splits_by_victim[i].size());
    tm.accuracy.push_back(std::move(row));
  }
  for (const auto& m : models) tm.models.push_back(m.id());
  return tm;
}

inline constexpr double kL2MatchTolerance = 0.25;

struct L2MatchVerdict {
  std::size_t level = 1;
  double ours = 0.0;
  double reference = 0.0;
  /// |ours - reference| / reference.
  double relative_gap = 0.0;
  /// reference / ours - 1: how much larger the reference is.
  double reference_excess = 0.0;
  bool pass = false;
  std::string verdict;
};

/// Per-level check that our mean L2 is within 25% of a reference benchmark's.
inline std::vector<L2MatchVerdict> l2_match_check(std::span<const double> ours, std::span<const double> reference) {
  if (ours.empty() || ours.size() != reference.size()) {
    throw InvalidArgument("l2_match_check: need one reference value per level");
  }
  std::vector<L2MatchVerdict> out;
  for (std::size_t i = 0; i < ours.size(); ++i) {
    if (!(reference[i] > 0.0)) throw InvalidArgument("l2_match_check: reference L2 must be > 0");
    L2MatchVerdict v;
    v.level = i + 1;
    v.ours = ours[i];
    v.reference = reference[i];
    v.relative_gap = std::abs(ours[i] - reference[i]) / reference[i];
    v.reference_excess = ours[i] > 0.0 ? reference[i] / ours[i] - 1.0 : std::numeric_limits<double>::infinity();
    v.pass = v.relative_gap <= kL2MatchTolerance;
    v.verdict = v.pass ? "pass" : (ours[i] < reference[i] ? "fail-as-lower" : "fail-as-higher");
    out.push_back(v);
  }
  return out;
}

/// Mean L2 per level over the records that carry levels.
inline std::vector<double> mean_level_l2(const SplitManifest& m) {
  const std::size_t levels = m.level_count();
  std::vector<double> sum(levels, 0.0);
  std::vector<std::size_t> n(levels, 0);
  for (const auto& r : m.records)
    for (std::size_t i = 0; i < r.levels.size(); ++i) {
      sum[i] += r.levels[i].l2;
      ++n[i];
    }
  for (std::size_t i = 0; i < levels; ++i) sum[i] = n[i] ? sum[i] / static_cast<double>(n[i]) : 0.0;
  return sum;
}

inline std::vector<L2MatchVerdict> l2_match_check(const SplitManifest& ours, std::span<const double> reference) {
  const auto mean = mean_level_l2(ours);
  if (mean.empty()) throw InvalidArgument("l2_match_check: split has no generated levels");
  return l2_match_check(mean, reference);
}

}  // namespace distortbench
