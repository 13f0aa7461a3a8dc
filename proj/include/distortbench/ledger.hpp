#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <utility>
#include <vector>

#include "distortbench/errors.hpp"
#include "distortbench/filters.hpp"
#include "distortbench/tensor.hpp"

namespace distortbench {

/// One (patch, filter) cell of the ledger.
struct PatchFilter {
  std::size_t patch_id = 0;
  FilterId filter = FilterId::GaussianNoise;

  friend auto operator<=>(const PatchFilter&, const PatchFilter&) = default;
};

/// Reversible record of every distortion applied to an image: how many times
/// each filter has been applied to each patch. The perturbed image is always
/// re-rendered from the original plus these counts, so the k-th application of
/// a filter on a patch uses the same mask no matter how the count was reached,
/// and removing an application restores the previous render exactly.
class DistortionLedger {
 public:
  DistortionLedger(ImageTensor original, PatchGrid grid, FilterParams params, std::uint64_t episode_seed)
      : original_(std::make_shared<const ImageTensor>(std::move(original))),
        grid_(std::move(grid)),
        params_(std::make_shared<const FilterParams>(std::move(params))),
        seed_(episode_seed) {
    if (!(original_->shape() == grid_.shape())) {
      throw InvalidArgument("ledger: grid shape " + to_string(grid_.shape()) + " does not match image " +
                            to_string(original_->shape()));
    }
  }

  const ImageTensor& original() const noexcept { return *original_; }
  const PatchGrid& grid() const noexcept { return grid_; }
  const FilterParams& params() const noexcept { return *params_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::uint32_t count(std::size_t patch_id, FilterId filter) const {
    auto it = counts_.find({patch_id, filter});
    return it == counts_.end() ? 0U : it->second;
  }

  void add(std::size_t patch_id, FilterId filter) {
    check_patch(patch_id);
    ++counts_[{patch_id, filter}];
  }

  void remove(std::size_t patch_id, FilterId filter) {
    check_patch(patch_id);
    auto it = counts_.find({patch_id, filter});
    if (it == counts_.end()) {
      throw PreconditionViolation("ledger_remove: patch " + std::to_string(patch_id) + " has no " +
                                  std::string(filter_name(filter)) + " application to remove");
    }
    if (--it->second == 0) counts_.erase(it);
  }

  /// Non-zero cells in (patch, filter) order.
  const std::map<PatchFilter, std::uint32_t>& counts() const noexcept { return counts_; }
  std::size_t distorted_pair_count() const noexcept { return counts_.size(); }
  bool empty() const noexcept { return counts_.empty(); }

  bool patch_touched(std::size_t patch_id) const {
    auto it = counts_.lower_bound({patch_id, FilterId::GaussianNoise});
    return it != counts_.end() && it->first.patch_id == patch_id;
  }

  friend bool operator==(const DistortionLedger& a, const DistortionLedger& b) {
    return a.seed_ == b.seed_ && a.grid_ == b.grid_ && a.counts_ == b.counts_ &&
           (a.original_ == b.original_ || *a.original_ == *b.original_);
  }

 private:
  void check_patch(std::size_t patch_id) const {
    if (patch_id >= grid_.count()) throw InvalidArgument("ledger: patch id out of range");
  }

  std::shared_ptr<const ImageTensor> original_;
  PatchGrid grid_;
  std::shared_ptr<const FilterParams> params_;
  std::uint64_t seed_ = 0;
  std::map<PatchFilter, std::uint32_t> counts_;
};

inline DistortionLedger ledger_add(DistortionLedger ledger, std::size_t patch_id, FilterId filter) {
  ledger.add(patch_id, filter);
  return ledger;
}

inline DistortionLedger ledger_remove(DistortionLedger ledger, std::size_t patch_id, FilterId filter) {
  ledger.remove(patch_id, filter);
  return ledger;
}

namespace detail {

inline std::vector<double> extract_patch(const ImageTensor& img, const PatchWindow& w) {
  const Shape& s = img.shape();
  std::vector<double> out(s.channels * w.size * w.size);
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t y = 0; y < w.size; ++y)
      for (std::size_t x = 0; x < w.size; ++x)
        out[(c * w.size + y) * w.size + x] = img.at(c, w.row0 + y, w.col0 + x);
  return out;
}

inline void store_patch_clipped(std::vector<double>& image, const Shape& s, const PatchWindow& w,
                                std::span<const double> patch) {
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t y = 0; y < w.size; ++y)
      for (std::size_t x = 0; x < w.size; ++x) {
        double v = patch[(c * w.size + y) * w.size + x];
        if (std::isnan(v)) throw InvalidArgument("render: NaN produced by filter");
        image[s.index(c, w.row0 + y, w.col0 + x)] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      }
}

}  // namespace detail

/// Unclipped content of one patch after applying all of its ledger entries in
/// canonical filter order.
inline std::vector<double> render_patch_unclipped(const DistortionLedger& ledger, std::size_t patch_id) {
  const PatchWindow w = ledger.grid().window(patch_id);
  const std::size_t channels = ledger.original().shape().channels;
  std::vector<double> patch = detail::extract_patch(ledger.original(), w);

  auto it = ledger.counts().lower_bound({patch_id, FilterId::GaussianNoise});
  for (; it != ledger.counts().end() && it->first.patch_id == patch_id; ++it) {
    const FilterId filter = it->first.filter;
    const std::uint32_t k = it->second;
    SeedContext ctx{ledger.seed(), patch_id, filter, 0};
    if (filter == FilterId::GaussianBlur) {
      const auto kernel = std::get<BlurKernel>(make_mask(filter, ledger.params(), channels, w, ctx));
      for (std::uint32_t i = 0; i < k; ++i) blur_patch(patch, channels, w.size, kernel);
    } else if (filter == FilterId::DeadPixel) {
      std::vector<bool> dead(w.size * w.size, false);
      for (std::uint32_t i = 0; i < k; ++i) {
        ctx.application_index = i;
        const auto subset = std::get<PixelSubset>(make_mask(filter, ledger.params(), channels, w, ctx));
        for (std::size_t p : subset.pixels) dead[p] = true;
      }
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < dead.size(); ++p)
          if (dead[p]) patch[c * dead.size() + p] = 0.0;
    } else {
      for (std::uint32_t i = 0; i < k; ++i) {
        ctx.application_index = i;
        const auto field = std::get<AdditiveField>(make_mask(filter, ledger.params(), channels, w, ctx));
        for (std::size_t j = 0; j < patch.size(); ++j) patch[j] += field.values[j];
      }
    }
  }
  return patch;
}

/// Perturbed image described by the ledger, clipped to [0, 1]. Patches without
/// entries are copied bit-for-bit from the original.
inline ImageTensor render(const DistortionLedger& ledger) {
  const ImageTensor& orig = ledger.original();
  std::vector<double> out(orig.values().begin(), orig.values().end());
  std::size_t last = static_cast<std::size_t>(-1);
  for (const auto& [cell, k] : ledger.counts()) {
    if (cell.patch_id == last) continue;
    last = cell.patch_id;
    detail::store_patch_clipped(out, orig.shape(), ledger.grid().window(last),
                                render_patch_unclipped(ledger, last));
  }
  return ImageTensor(orig.shape(), std::move(out));
}

/// Render of `ledger` given `base`, a render of a ledger that differs from it
/// only on `patch_id`. Equivalent to render(ledger) but touches one patch.
inline ImageTensor render_patch_update(const ImageTensor& base, const DistortionLedger& ledger,
                                       std::size_t patch_id) {
  std::vector<double> out(base.values().begin(), base.values().end());
  detail::store_patch_clipped(out, base.shape(), ledger.grid().window(patch_id),
                              render_patch_unclipped(ledger, patch_id));
  return ImageTensor(base.shape(), std::move(out));
}

}  // namespace distortbench
