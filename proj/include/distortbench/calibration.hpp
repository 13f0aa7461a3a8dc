#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "distortbench/errors.hpp"
#include "distortbench/ledger.hpp"

namespace distortbench {

/// Mean L2 change caused by a single application of `filter`, averaged over
/// every patch of every sample. Each sample uses mask seed derive(seed, i).
inline double mean_application_l2(FilterId filter, const FilterParams& params,
                                  std::span<const ImageTensor> samples, const PatchGrid& grid,
                                  std::uint64_t seed) {
  if (samples.empty()) throw InvalidArgument("mean_application_l2: no samples");
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    DistortionLedger ledger(samples[i], grid, params, derive_seed({seed, i}));
    for (std::size_t p = 0; p < grid.count(); ++p) {
      ledger.add(p, filter);
      std::vector<double> after = render_patch_unclipped(ledger, p);
      ledger.remove(p, filter);
      const std::vector<double> before = detail::extract_patch(samples[i], grid.window(p));
      double sum = 0.0;
      for (std::size_t j = 0; j < after.size(); ++j) {
        const double v = std::clamp(after[j], 0.0, 1.0);
        sum += (v - before[j]) * (v - before[j]);
      }
      total += std::sqrt(sum);
      ++n;
    }
  }
  return total / static_cast<double>(n);
}

/// Tolerance on the calibrated mean per-application L2 relative to the target.
inline constexpr double kCalibrationTolerance = 0.10;

/// Fits the intensity parameter of `filter` so one application changes L2 by
/// `target_epsilon0` on average over the samples. Continuous parameters are
/// found by bisection; the dead-pixel count by integer bisection.
inline FilterParams calibrate(FilterId filter, std::span<const ImageTensor> samples, const PatchGrid& grid,
                              double target_epsilon0, FilterParams base = {}, std::uint64_t seed = 0) {
  if (!(target_epsilon0 > 0.0) || !std::isfinite(target_epsilon0)) {
    throw InvalidArgument("calibrate: target epsilon0 must be > 0");
  }
  if (samples.empty()) throw InvalidArgument("calibrate: need at least one sample image");
  base.epsilon0 = target_epsilon0;

  auto measure = [&](const FilterParams& p) { return mean_application_l2(filter, p, samples, grid, seed); };
  auto infeasible = [&](double reached) {
    return CalibrationInfeasible("calibrate: " + std::string(filter_name(filter)) + " cannot reach mean L2 " +
                                 std::to_string(target_epsilon0) + " (closest " + std::to_string(reached) + ")");
  };

  if (filter == FilterId::DeadPixel) {
    const std::size_t n = grid.patch_size();
    const std::size_t total = n * n;
    auto with_count = [&](std::size_t k) {
      FilterParams p = base;
      p.deadpixel_fraction = static_cast<double>(k) / static_cast<double>(total);
      return p;
    };
    std::size_t lo = 1, hi = total;
    if (measure(with_count(hi)) < target_epsilon0) {
      const double reached = measure(with_count(hi));
      if (std::abs(reached - target_epsilon0) > kCalibrationTolerance * target_epsilon0) throw infeasible(reached);
      return with_count(hi);
    }
    while (lo < hi) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if (measure(with_count(mid)) >= target_epsilon0) hi = mid; else lo = mid + 1;
    }
    std::size_t best = lo;
    if (lo > 1 && std::abs(measure(with_count(lo - 1)) - target_epsilon0) <
                      std::abs(measure(with_count(lo)) - target_epsilon0)) {
      best = lo - 1;
    }
    const double reached = measure(with_count(best));
    if (std::abs(reached - target_epsilon0) > kCalibrationTolerance * target_epsilon0) throw infeasible(reached);
    return with_count(best);
  }

  double* knob = nullptr;
  double lo = 0.0, hi = 0.0, cap = 0.0, sign = 1.0;
  FilterParams p = base;
  switch (filter) {
    case FilterId::GaussianNoise: knob = &p.noise_sigma; lo = 0.0; hi = 0.01; cap = 16.0; break;
    case FilterId::Custom: knob = &p.custom_intensity; lo = 0.0; hi = 0.01; cap = 1e6; break;
    case FilterId::Brightness:
      knob = &p.brightness_delta; lo = 0.0; hi = 0.999; cap = 0.999;
      sign = base.brightness_delta > 0.0 ? 1.0 : -1.0;
      break;
    case FilterId::GaussianBlur: knob = &p.blur_sigma; lo = 0.05; hi = 0.5; cap = 64.0; break;
    case FilterId::DeadPixel: break;
  }
  auto at = [&](double v) {
    *knob = sign * v;
    return measure(p);
  };
  double reached = at(hi);
  while (reached < target_epsilon0 && hi < cap) {
    lo = hi;
    hi = std::min(cap, hi * 2.0);
    reached = at(hi);
  }
  if (reached < target_epsilon0) {
    if (std::abs(reached - target_epsilon0) > kCalibrationTolerance * target_epsilon0) throw infeasible(reached);
    *knob = sign * hi;
    return p;
  }
  for (int iter = 0; iter < 60 && hi - lo > 1e-12 * std::max(1.0, hi); ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (at(mid) >= target_epsilon0) hi = mid; else lo = mid;
  }
  reached = at(hi);
  if (std::abs(reached - target_epsilon0) > kCalibrationTolerance * target_epsilon0) throw infeasible(reached);
  return p;
}

}  // namespace distortbench
