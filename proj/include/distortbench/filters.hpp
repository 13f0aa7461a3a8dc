#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "distortbench/errors.hpp"
#include "distortbench/rng.hpp"
#include "distortbench/tensor.hpp"

namespace distortbench {

/// Distortion filters. Enumerator order is the canonical composition order
/// used when several filters touch the same patch.
enum class FilterId : std::uint8_t {
  GaussianNoise = 0,
  Brightness = 1,
  Custom = 2,
  GaussianBlur = 3,
  DeadPixel = 4,
};

inline constexpr std::array<FilterId, 4> kBuiltinFilters = {
    FilterId::GaussianNoise, FilterId::Brightness, FilterId::GaussianBlur, FilterId::DeadPixel};

inline constexpr std::string_view filter_name(FilterId f) {
  switch (f) {
    case FilterId::GaussianNoise: return "gaussian_noise";
    case FilterId::Brightness: return "brightness";
    case FilterId::Custom: return "custom";
    case FilterId::GaussianBlur: return "gaussian_blur";
    case FilterId::DeadPixel: return "dead_pixel";
  }
  return "unknown";
}

inline FilterId parse_filter(std::string_view name) {
  for (FilterId f : {FilterId::GaussianNoise, FilterId::Brightness, FilterId::Custom,
                     FilterId::GaussianBlur, FilterId::DeadPixel}) {
    if (filter_name(f) == name) return f;
  }
  if (name == "illumination") return FilterId::Brightness;
  throw InvalidArgument("unknown filter: " + std::string(name));
}

/// User-supplied additive distortion. `generate` receives a zeroed field laid
/// out channel-major over an n x n patch and fills in the offsets to add.
struct CustomFilter {
  std::string name;
  std::function<void(std::span<double> field, std::size_t channels, std::size_t n,
                     double intensity, Rng& rng)>
      generate;
};

struct FilterParams {
  double noise_sigma = 0.05;
  double blur_sigma = 1.0;
  double brightness_delta = -0.1;
  double deadpixel_fraction = 0.5;
  double custom_intensity = 1.0;
  /// Target L2 change of one application, used by calibration.
  double epsilon0 = 1.0;
  std::shared_ptr<const CustomFilter> custom;

  void validate() const {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw InvalidArgument("noise_sigma must be >= 0");
    if (!(blur_sigma > 0.0) || !std::isfinite(blur_sigma)) throw InvalidArgument("blur_sigma must be > 0");
    if (!(brightness_delta > -1.0 && brightness_delta < 1.0)) {
      throw InvalidArgument("brightness_delta must lie in (-1, 1)");
    }
    if (!(deadpixel_fraction > 0.0 && deadpixel_fraction <= 1.0)) {
      throw InvalidArgument("deadpixel_fraction must lie in (0, 1]");
    }
    if (!(epsilon0 > 0.0) || !std::isfinite(epsilon0)) throw InvalidArgument("epsilon0 must be > 0");
  }
};

/// Identifies one application of one filter. Masks are a pure function of it.
struct SeedContext {
  std::uint64_t episode_seed = 0;
  std::size_t patch_id = 0;
  FilterId filter = FilterId::GaussianNoise;
  std::uint32_t application_index = 0;

  std::uint64_t seed() const noexcept {
    return derive_seed({episode_seed, patch_id, static_cast<std::uint64_t>(filter), application_index});
  }
};

/// Offsets added to the patch, channel-major, C * n * n values.
struct AdditiveField {
  std::vector<double> values;
  friend bool operator==(const AdditiveField&, const AdditiveField&) = default;
};

/// Normalized 1-D Gaussian taps, applied separably inside the patch.
struct BlurKernel {
  double sigma = 0.0;
  std::vector<double> taps;
  std::size_t radius() const noexcept { return taps.size() / 2; }
  friend bool operator==(const BlurKernel&, const BlurKernel&) = default;
};

/// Spatial offsets (y * n + x) of pixels forced to zero in every channel.
struct PixelSubset {
  std::vector<std::size_t> pixels;
  friend bool operator==(const PixelSubset&, const PixelSubset&) = default;
};

using Mask = std::variant<AdditiveField, BlurKernel, PixelSubset>;

inline BlurKernel gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::size_t>(std::max(1.0, std::ceil(3.0 * sigma)));
  BlurKernel k{sigma, std::vector<double>(2 * radius + 1)};
  double total = 0.0;
  for (std::size_t i = 0; i < k.taps.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k.taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += k.taps[i];
  }
  for (double& t : k.taps) t /= total;
  return k;
}

inline std::size_t dead_pixel_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n * n)));
}

/// Builds the transform for one application of `filter` on an n x n patch of a
/// `channels`-channel image. Deterministic in `ctx`.
inline Mask make_mask(FilterId filter, const FilterParams& params, std::size_t channels,
                      const PatchWindow& window, const SeedContext& ctx) {
  const std::size_t n = window.size;
  switch (filter) {
    case FilterId::GaussianNoise: {
      Rng rng(ctx.seed());
      AdditiveField f{std::vector<double>(channels * n * n)};
      for (double& v : f.values) v = params.noise_sigma * rng.normal();
      return f;
    }
    case FilterId::Brightness:
      return AdditiveField{std::vector<double>(channels * n * n, params.brightness_delta)};
    case FilterId::Custom: {
      if (!params.custom || !params.custom->generate) {
        throw InvalidArgument("custom filter requested but none registered");
      }
      Rng rng(ctx.seed());
      AdditiveField f{std::vector<double>(channels * n * n, 0.0)};
      params.custom->generate(f.values, channels, n, params.custom_intensity, rng);
      return f;
    }
    case FilterId::GaussianBlur:
      return gaussian_kernel(params.blur_sigma);
    case FilterId::DeadPixel: {
      Rng rng(ctx.seed());
      const std::size_t total = n * n;
      const std::size_t pick = std::min(total, dead_pixel_count(params.deadpixel_fraction, n));
      std::vector<std::size_t> order(total);
      for (std::size_t i = 0; i < total; ++i) order[i] = i;
      for (std::size_t i = 0; i < pick; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(total - i));
        std::swap(order[i], order[j]);
      }
      order.resize(pick);
      std::sort(order.begin(), order.end());
      return PixelSubset{std::move(order)};
    }
  }
  throw InvalidArgument("make_mask: unknown filter id " + std::to_string(static_cast<int>(filter)));
}

/// In-place separable blur of an n x n patch (channel-major, `channels` planes)
/// with edge replication at the patch border.
inline void blur_patch(std::span<double> patch, std::size_t channels, std::size_t n,
                       const BlurKernel& kernel) {
  const auto r = static_cast<std::ptrdiff_t>(kernel.radius());
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  std::vector<double> tmp(n * n);
  for (std::size_t c = 0; c < channels; ++c) {
    std::span<double> plane = patch.subspan(c * n * n, n * n);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -r; k <= r; ++k) {
          const auto xx = std::clamp(static_cast<std::ptrdiff_t>(x) + k, std::ptrdiff_t{0}, last);
          acc += kernel.taps[static_cast<std::size_t>(k + r)] * plane[y * n + static_cast<std::size_t>(xx)];
        }
        tmp[y * n + x] = acc;
      }
    }
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -r; k <= r; ++k) {
          const auto yy = std::clamp(static_cast<std::ptrdiff_t>(y) + k, std::ptrdiff_t{0}, last);
          acc += kernel.taps[static_cast<std::size_t>(k + r)] * tmp[static_cast<std::size_t>(yy) * n + x];
        }
        plane[y * n + x] = acc;
      }
    }
  }
}

}  // namespace distortbench
