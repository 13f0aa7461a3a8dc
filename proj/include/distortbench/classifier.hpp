#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distortbench/binary_io.hpp"
#include "distortbench/errors.hpp"
#include "distortbench/tensor.hpp"

namespace distortbench {

/// Per-class probabilities: non-negative and summing to 1 within 1e-5.
class ProbabilityVector {
 public:
  static constexpr double kSumTolerance = 1e-5;

  ProbabilityVector() = default;
  explicit ProbabilityVector(std::vector<double> p) : p_(std::move(p)) {
    if (p_.empty()) throw InvalidArgument("probability vector: no classes");
    double sum = 0.0;
    for (double v : p_) {
      if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("probability vector: invalid entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw InvalidArgument("probability vector: sums to " + std::to_string(sum));
    }
  }

  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t k) const noexcept { return p_[k]; }
  std::span<const double> values() const noexcept { return p_; }

  /// Top-1 class; ties go to the lowest index.
  std::size_t argmax() const noexcept {
    return static_cast<std::size_t>(std::distance(p_.begin(), std::max_element(p_.begin(), p_.end())));
  }

  friend bool operator==(const ProbabilityVector&, const ProbabilityVector&) = default;

 private:
  std::vector<double> p_;
};

/// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - m);
    sum += out[k];
  }
  for (double& v : out) v /= sum;
  return out;
}

struct QueryCount {
  std::uint64_t evaluations = 0;
  std::uint64_t batches = 0;

  friend QueryCount operator-(QueryCount a, QueryCount b) {
    return {a.evaluations - b.evaluations, a.batches - b.batches};
  }
  friend bool operator==(const QueryCount&, const QueryCount&) = default;
};

/// Counts individual image evaluations and forward calls. Thread-safe.
class QueryCounter {
 public:
  void record(std::uint64_t images, std::uint64_t batch_calls) noexcept {
    evaluations_.fetch_add(images, std::memory_order_relaxed);
    batches_.fetch_add(batch_calls, std::memory_order_relaxed);
  }
  QueryCount snapshot() const noexcept {
    return {evaluations_.load(std::memory_order_relaxed), batches_.load(std::memory_order_relaxed)};
  }

 private:
  std::atomic<std::uint64_t> evaluations_{0};
  std::atomic<std::uint64_t> batches_{0};
};

/// Black-box victim: probabilities out, nothing else.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t num_classes() const = 0;
  /// Expected input shape, if the backend constrains it.
  virtual std::optional<Shape> input_shape() const { return std::nullopt; }
  /// One forward call over a batch; one output row per image, same order.
  virtual std::vector<ProbabilityVector> forward(std::span<const ImageTensor> batch) = 0;
  virtual std::string id() const = 0;
};

/// Linear-softmax victim: softmax(W * flatten(x) + b).
class ToyLinearModel final : public Classifier {
 public:
  ToyLinearModel(std::size_t num_classes, std::size_t input_dim, std::vector<double> weights,
                 std::vector<double> bias, std::optional<Shape> shape = std::nullopt,
                 std::string name = "toy")
      : k_(num_classes), d_(input_dim), w_(std::move(weights)), b_(std::move(bias)), shape_(shape),
        name_(std::move(name)) {
    if (k_ == 0 || d_ == 0) throw InvalidArgument("toy model: empty dimensions");
    if (w_.size() != k_ * d_ || b_.size() != k_) throw InvalidArgument("toy model: weight shape mismatch");
    for (double v : w_) if (!std::isfinite(v)) throw InvalidArgument("toy model: non-finite weight");
    for (double v : b_) if (!std::isfinite(v)) throw InvalidArgument("toy model: non-finite bias");
    if (shape_ && shape_->size() != d_) throw InvalidArgument("toy model: shape does not match input dim");
  }

  std::size_t num_classes() const override { return k_; }
  std::size_t input_dim() const noexcept { return d_; }
  std::optional<Shape> input_shape() const override { return shape_; }
  std::string id() const override { return name_; }
  std::span<const double> weights() const noexcept { return w_; }
  std::span<const double> bias() const noexcept { return b_; }

  std::vector<double> logits(std::span<const double> x) const {
    if (x.size() != d_) throw InvalidArgument("toy model: input has " + std::to_string(x.size()) +
                                              " values, expected " + std::to_string(d_));
    std::vector<double> z(b_);
    for (std::size_t k = 0; k < k_; ++k) {
      const double* row = w_.data() + k * d_;
      double acc = 0.0;
      for (std::size_t i = 0; i < d_; ++i) acc += row[i] * x[i];
      z[k] += acc;
    }
    return z;
  }

  ProbabilityVector predict(const ImageTensor& image) const {
    return ProbabilityVector(softmax(logits(image.values())));
  }

  std::vector<ProbabilityVector> forward(std::span<const ImageTensor> batch) override {
    std::vector<ProbabilityVector> out;
    out.reserve(batch.size());
    for (const auto& img : batch) out.push_back(predict(img));
    return out;
  }

 private:
  std::size_t k_, d_;
  std::vector<double> w_, b_;
  std::optional<Shape> shape_;
  std::string name_;
};

inline ProbabilityVector toy_linear_predict(const ToyLinearModel& model, const ImageTensor& image) {
  return model.predict(image);
}

/// Same output for every input.
class ConstantClassifier final : public Classifier {
 public:
  explicit ConstantClassifier(ProbabilityVector p, std::string name = "constant")
      : p_(std::move(p)), name_(std::move(name)) {}
  std::size_t num_classes() const override { return p_.size(); }
  std::string id() const override { return name_; }
  std::vector<ProbabilityVector> forward(std::span<const ImageTensor> batch) override {
    return std::vector<ProbabilityVector>(batch.size(), p_);
  }

 private:
  ProbabilityVector p_;
  std::string name_;
};

/// Wraps an arbitrary deterministic function of the image.
class FunctionClassifier final : public Classifier {
 public:
  using Fn = std::function<ProbabilityVector(const ImageTensor&)>;
  FunctionClassifier(std::size_t num_classes, Fn fn, std::string name = "function")
      : k_(num_classes), fn_(std::move(fn)), name_(std::move(name)) {}
  std::size_t num_classes() const override { return k_; }
  std::string id() const override { return name_; }
  std::vector<ProbabilityVector> forward(std::span<const ImageTensor> batch) override {
    std::vector<ProbabilityVector> out;
    out.reserve(batch.size());
    for (const auto& img : batch) out.push_back(fn_(img));
    return out;
  }

 private:
  std::size_t k_;
  Fn fn_;
  std::string name_;
};

inline constexpr std::size_t kDefaultMaxBatch = 128;

/// Rounds probabilities to float32, the wire precision, so in-process and
/// remote victims produce bit-identical outputs.
inline ProbabilityVector quantize_probabilities(const ProbabilityVector& p) {
  std::vector<double> q(p.size());
  for (std::size_t k = 0; k < q.size(); ++k) q[k] = static_cast<double>(static_cast<float>(p[k]));
  return ProbabilityVector(std::move(q));
}

/// Query access to a victim. Images cross the boundary as float32, outputs come
/// back as float32 probabilities, and every call is counted. Copies share the
/// backend and counter; `scoped()` derives a handle with its own counter that
/// also feeds this one.
class ClassifierHandle {
 public:
  explicit ClassifierHandle(std::shared_ptr<Classifier> backend, std::size_t max_batch = kDefaultMaxBatch)
      : backend_(std::move(backend)), max_batch_(max_batch), counter_(std::make_shared<QueryCounter>()) {
    if (!backend_) throw InvalidArgument("classifier handle: null backend");
    if (max_batch_ == 0) throw InvalidArgument("classifier handle: max batch must be >= 1");
  }

  std::size_t num_classes() const { return backend_->num_classes(); }
  std::size_t max_batch() const noexcept { return max_batch_; }
  std::string id() const { return backend_->id(); }
  QueryCount queries() const noexcept { return counter_->snapshot(); }

  ClassifierHandle scoped() const {
    ClassifierHandle h = *this;
    h.counter_ = std::make_shared<QueryCounter>();
    h.parents_.push_back(counter_);
    return h;
  }

  std::vector<ProbabilityVector> predict(std::span<const ImageTensor> images) const {
    if (images.empty()) throw InvalidArgument("predict: empty image list");
    const Shape shape = images.front().shape();
    if (auto expected = backend_->input_shape(); expected && !(*expected == shape)) {
      throw InvalidArgument("predict: image shape " + to_string(shape) + " but victim expects " +
                            to_string(*expected));
    }
    for (const auto& img : images) {
      if (!(img.shape() == shape)) throw InvalidArgument("predict: mixed image shapes in one call");
    }
    std::vector<ProbabilityVector> out;
    out.reserve(images.size());
    std::uint64_t calls = 0;
    for (std::size_t start = 0; start < images.size(); start += max_batch_) {
      const std::size_t len = std::min(max_batch_, images.size() - start);
      std::vector<ImageTensor> batch;
      batch.reserve(len);
      for (std::size_t i = 0; i < len; ++i) batch.push_back(quantize_float32(images[start + i]));
      auto rows = backend_->forward(batch);
      ++calls;
      if (rows.size() != len) throw ProtocolError("predict: backend returned wrong number of rows");
      for (auto& r : rows) {
        if (r.size() != num_classes()) throw ProtocolError("predict: backend returned wrong class count");
        out.push_back(quantize_probabilities(r));
      }
    }
    counter_->record(images.size(), calls);
    for (const auto& p : parents_) p->record(images.size(), calls);
    return out;
  }

  ProbabilityVector predict_one(const ImageTensor& image) const {
    return predict(std::span<const ImageTensor>(&image, 1)).front();
  }

 private:
  std::shared_ptr<Classifier> backend_;
  std::size_t max_batch_;
  std::shared_ptr<QueryCounter> counter_;
  std::vector<std::shared_ptr<QueryCounter>> parents_;
};

inline std::vector<ProbabilityVector> predict(const ClassifierHandle& handle, std::span<const ImageTensor> images) {
  return handle.predict(images);
}

// Toy weight file: "DBTOY1", u32 K, u32 D, K*D weights then K biases (float64 LE).

inline void save_toy_model(const std::filesystem::path& path, const ToyLinearModel& model) {
  ByteWriter w;
  w.bytes("DBTOY1");
  w.u32(static_cast<std::uint32_t>(model.num_classes()));
  w.u32(static_cast<std::uint32_t>(model.input_dim()));
  for (double v : model.weights()) w.f64(v);
  for (double v : model.bias()) w.f64(v);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write toy model " + path.string());
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline ToyLinearModel load_toy_model(const std::filesystem::path& path, std::optional<Shape> shape = std::nullopt) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (r.bytes(6) != "DBTOY1") throw InvalidArgument("toy model: bad magic in " + path.string());
  const std::size_t k = r.u32();
  const std::size_t d = r.u32();
  if (!r.ok() || k == 0 || d == 0 || r.remaining() != (k * d + k) * 8) {
    throw InvalidArgument("toy model: truncated or oversized file " + path.string());
  }
  std::vector<double> w(k * d), b(k);
  for (double& v : w) v = r.f64();
  for (double& v : b) v = r.f64();
  return ToyLinearModel(k, d, std::move(w), std::move(b), shape, path.stem().string());
}

}  // namespace distortbench
