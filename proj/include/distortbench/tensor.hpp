#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "distortbench/errors.hpp"

namespace distortbench {

/// Channel-major image dimensions (C, H, W).
struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  constexpr std::size_t size() const noexcept { return channels * height * width; }
  constexpr std::size_t plane() const noexcept { return height * width; }
  constexpr std::size_t index(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return (c * height + y) * width + x;
  }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Unconstrained pixel buffer. Used for intermediate results that may leave
/// the unit range before clipping.
struct RawImage {
  Shape shape;
  std::vector<double> data;

  RawImage() = default;
  RawImage(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
    if (data.size() != shape.size()) {
      throw InvalidArgument("raw image: " + std::to_string(data.size()) + " values for shape " +
                            to_string(shape));
    }
  }
};

/// Immutable image with every value finite and in [0, 1]. Copies share the
/// underlying storage.
class ImageTensor {
 public:
  ImageTensor() : data_(std::make_shared<const std::vector<double>>()) {}

  ImageTensor(Shape shape, std::vector<double> values) : shape_(shape) {
    if (values.size() != shape.size()) {
      throw InvalidArgument("image tensor: " + std::to_string(values.size()) +
                            " values for shape " + to_string(shape));
    }
    for (double v : values) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw InvalidArgument("image tensor: value outside [0,1]: " + std::to_string(v));
      }
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(values));
  }

  static ImageTensor filled(Shape shape, double value) {
    return ImageTensor(shape, std::vector<double>(shape.size(), value));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_->size(); }
  std::span<const double> values() const noexcept { return *data_; }
  double operator[](std::size_t i) const noexcept { return (*data_)[i]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return (*data_)[shape_.index(c, y, x)];
  }

  RawImage raw() const { return RawImage(shape_, *data_); }

  friend bool operator==(const ImageTensor& a, const ImageTensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_ || *a.data_ == *b.data_);
  }

 private:
  Shape shape_{};
  std::shared_ptr<const std::vector<double>> data_;
};

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("l2_distance: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

inline double l2_distance(const ImageTensor& a, const ImageTensor& b) {
  if (!(a.shape() == b.shape())) {
    throw InvalidArgument("l2_distance: shape " + to_string(a.shape()) + " vs " +
                          to_string(b.shape()));
  }
  return l2_distance(a.values(), b.values());
}

inline ImageTensor clip_unit(const RawImage& img) {
  std::vector<double> out(img.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = img.data[i];
    if (std::isnan(v)) throw InvalidArgument("clip_unit: NaN at element " + std::to_string(i));
    out[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }
  return ImageTensor(img.shape, std::move(out));
}

inline ImageTensor clip_unit(const ImageTensor& img) { return img; }

/// Rounds every value to the nearest float32. Applied wherever images cross an
/// I/O boundary (files, classifier queries).
inline ImageTensor quantize_float32(const ImageTensor& img) {
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(static_cast<float>(img[i]));
  return ImageTensor(img.shape(), std::move(out));
}

/// Square pixel window of one patch.
struct PatchWindow {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t size = 0;
};

/// Non-overlapping tiling of an image into n x n patches, numbered row-major.
class PatchGrid {
 public:
  PatchGrid() = default;
  PatchGrid(Shape shape, std::size_t patch_size) : shape_(shape), n_(patch_size) {
    if (n_ == 0) throw InvalidArgument("partition_patches: patch size must be >= 1");
    if (shape.height == 0 || shape.width == 0) throw InvalidArgument("partition_patches: empty image");
    if (shape.height % n_ != 0 || shape.width % n_ != 0) {
      throw InvalidArgument("partition_patches: " + std::to_string(shape.height) + "x" +
                            std::to_string(shape.width) + " is not divisible by patch size " +
                            std::to_string(n_));
    }
    rows_ = shape.height / n_;
    cols_ = shape.width / n_;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t patch_size() const noexcept { return n_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t count() const noexcept { return rows_ * cols_; }

  PatchWindow window(std::size_t patch_id) const {
    if (patch_id >= count()) throw InvalidArgument("patch id out of range: " + std::to_string(patch_id));
    return {(patch_id / cols_) * n_, (patch_id % cols_) * n_, n_};
  }

  std::size_t patch_at(std::size_t y, std::size_t x) const noexcept {
    return (y / n_) * cols_ + (x / n_);
  }

  friend bool operator==(const PatchGrid& a, const PatchGrid& b) {
    return a.shape_ == b.shape_ && a.n_ == b.n_;
  }

 private:
  Shape shape_{};
  std::size_t n_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
};

inline PatchGrid partition_patches(Shape shape, std::size_t patch_size) {
  return PatchGrid(shape, patch_size);
}

}  // namespace distortbench
