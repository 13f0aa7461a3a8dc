#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "distortbench/rng.hpp"
#include "distortbench/tensor.hpp"

using namespace distortbench;

namespace {

ImageTensor random_image(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(s.size());
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return ImageTensor(s, std::move(v));
}

}  // namespace

TEST(ImageTensor, RejectsOutOfRangeAndNonFinite) {
  const Shape s{1, 1, 2};
  EXPECT_THROW(ImageTensor(s, {0.5, 1.5}), InvalidArgument);
  EXPECT_THROW(ImageTensor(s, {-0.1, 0.5}), InvalidArgument);
  EXPECT_THROW(ImageTensor(s, {NAN, 0.5}), InvalidArgument);
  EXPECT_THROW(ImageTensor(s, {0.5}), InvalidArgument);
  EXPECT_NO_THROW(ImageTensor(s, {0.0, 1.0}));
}

TEST(ImageTensor, CopiesShareStorageAndCompareByValue) {
  const auto a = ImageTensor::filled({3, 4, 4}, 0.25);
  const ImageTensor b = a;
  EXPECT_EQ(a.values().data(), b.values().data());
  EXPECT_EQ(a, ImageTensor::filled({3, 4, 4}, 0.25));
  EXPECT_FALSE(a == ImageTensor::filled({3, 4, 4}, 0.5));
}

TEST(L2Distance, IdenticalImagesAreAtZero) {
  const auto a = random_image({3, 8, 8}, 1);
  EXPECT_EQ(l2_distance(a, a), 0.0);
}

TEST(L2Distance, SingleElementDifference) {
  std::vector<double> v(48, 0.5);
  const ImageTensor a({3, 4, 4}, v);
  v[17] = 0.6;
  const ImageTensor b({3, 4, 4}, v);
  EXPECT_NEAR(l2_distance(a, b), 0.1, 1e-12);
}

TEST(L2Distance, MatchesScalarLoopOnNoisyPair) {
  const Shape s{3, 32, 32};
  const auto a = random_image(s, 7, 0.0, 0.9);
  Rng rng(8);
  std::vector<double> bv(s.size());
  for (std::size_t i = 0; i < bv.size(); ++i) bv[i] = a[i] + 0.1 * rng.uniform();
  const ImageTensor b(s, bv);
  long double acc = 0.0L;
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x) {
        const long double d = static_cast<long double>(a.at(c, y, x)) - b.at(c, y, x);
        acc += d * d;
      }
  EXPECT_NEAR(l2_distance(a, b), static_cast<double>(std::sqrt(acc)), 1e-6);
}

TEST(L2Distance, ShapeMismatchIsInvalid) {
  EXPECT_THROW(l2_distance(ImageTensor::filled({1, 4, 4}, 0), ImageTensor::filled({1, 2, 8}, 0)), InvalidArgument);
}

TEST(L2Distance, MetricPropertiesOnRandomTriples) {
  for (std::uint64_t t = 0; t < 200; ++t) {
    const Shape s{2, 4, 4};
    const auto a = random_image(s, 3 * t), b = random_image(s, 3 * t + 1), c = random_image(s, 3 * t + 2);
    EXPECT_NEAR(l2_distance(a, b), l2_distance(b, a), 1e-12);
    EXPECT_GT(l2_distance(a, b), 0.0);
    EXPECT_LE(l2_distance(a, c), l2_distance(a, b) + l2_distance(b, c) + 1e-6);
  }
}

TEST(PartitionPatches, CifarAndImagenetGrids) {
  const auto g2 = partition_patches({3, 32, 32}, 2);
  EXPECT_EQ(g2.rows(), 16u);
  EXPECT_EQ(g2.cols(), 16u);
  EXPECT_EQ(g2.count(), 256u);
  const auto g8 = partition_patches({3, 224, 224}, 8);
  EXPECT_EQ(g8.rows(), 28u);
  EXPECT_EQ(g8.count(), 784u);
}

TEST(PartitionPatches, SinglePatchCoversWholeImage) {
  const auto g = partition_patches({3, 4, 4}, 4);
  ASSERT_EQ(g.count(), 1u);
  const auto w = g.window(0);
  EXPECT_EQ(w.row0, 0u);
  EXPECT_EQ(w.col0, 0u);
  EXPECT_EQ(w.size, 4u);
}

TEST(PartitionPatches, NonDivisibleAndZeroSizeAreInvalid) {
  EXPECT_THROW(partition_patches({3, 32, 30}, 8), InvalidArgument);
  EXPECT_THROW(partition_patches({3, 32, 32}, 0), InvalidArgument);
  EXPECT_THROW(partition_patches({3, 8, 8}, 2).window(16), InvalidArgument);
}

TEST(PartitionPatches, WindowsTileEveryPixelExactlyOnce) {
  for (auto [h, w, n] : {std::tuple{8, 8, 2}, std::tuple{12, 6, 3}, std::tuple{4, 4, 4}, std::tuple{6, 9, 1}}) {
    const PatchGrid g({1, std::size_t(h), std::size_t(w)}, std::size_t(n));
    std::vector<int> hits(std::size_t(h * w), 0);
    for (std::size_t p = 0; p < g.count(); ++p) {
      const auto win = g.window(p);
      for (std::size_t y = 0; y < win.size; ++y)
        for (std::size_t x = 0; x < win.size; ++x) {
          ++hits[(win.row0 + y) * std::size_t(w) + win.col0 + x];
          EXPECT_EQ(g.patch_at(win.row0 + y, win.col0 + x), p);
        }
    }
    for (int c : hits) EXPECT_EQ(c, 1);
  }
}

TEST(ClipUnit, ClampsEndpointsAndRejectsNan) {
  const auto out = clip_unit(RawImage({1, 1, 3}, {1.3, -0.2, 0.4}));
  EXPECT_EQ(out[0], 1.0);
  EXPECT_EQ(out[1], 0.0);
  EXPECT_EQ(out[2], 0.4);
  EXPECT_THROW(clip_unit(RawImage({1, 1, 1}, {NAN})), InvalidArgument);
}

TEST(ClipUnit, InRangeUnchangedAndIdempotent) {
  const auto a = random_image({3, 4, 4}, 11);
  EXPECT_EQ(clip_unit(a.raw()), a);
  EXPECT_EQ(clip_unit(a), a);
  Rng rng(12);
  std::vector<double> v(48);
  for (double& x : v) x = 3.0 * rng.uniform() - 1.0;
  const auto once = clip_unit(RawImage({3, 4, 4}, v));
  EXPECT_EQ(clip_unit(once.raw()), once);
}

TEST(ClipUnit, PreservesOrderOfInRangeValues) {
  const auto out = clip_unit(RawImage({1, 1, 5}, {0.1, 0.2, 0.2, 0.7, 0.9}));
  for (std::size_t i = 1; i < 5; ++i) EXPECT_LE(out[i - 1], out[i]);
}

TEST(QuantizeFloat32, RoundsToNearestFloat) {
  const ImageTensor a({1, 1, 2}, {0.1, 1.0 / 3.0});
  const auto q = quantize_float32(a);
  EXPECT_EQ(q[0], static_cast<double>(0.1f));
  EXPECT_EQ(q[1], static_cast<double>(static_cast<float>(1.0 / 3.0)));
  EXPECT_EQ(quantize_float32(q), q);
}

TEST(Rng, UniformIndexCoversRangeAndSeedsAreStable) {
  Rng a(42), b(42);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.uniform_index(7);
    EXPECT_EQ(x, b.uniform_index(7));
    seen.insert(x);
  }
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_NE(derive_seed({1, 2, 3}), derive_seed({1, 3, 2}));
  EXPECT_EQ(derive_seed({1, 2, 3}), derive_seed({1, 2, 3}));
}
