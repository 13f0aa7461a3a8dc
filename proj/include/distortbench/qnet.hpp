#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "distortbench/binary_io.hpp"
#include "distortbench/errors.hpp"
#include "distortbench/rng.hpp"

namespace distortbench {

struct QNetDims {
  std::size_t input = 0;
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 128;
  std::size_t actions = 0;

  friend bool operator==(const QNetDims&, const QNetDims&) = default;
};

/// Dueling Q-network: two ReLU layers feeding a scalar value head and a
/// per-action advantage head, combined as Q = V + A - mean(A).
///
/// All parameters live in one flat vector (W1 b1 W2 b2 Wv bv Wa ba, matrices
/// column-major) so optimizers, checkpoints and gradient checks see one array.
class DuelingQNet {
 public:
  using Matrix = Eigen::MatrixXd;
  using Vector = Eigen::VectorXd;
  using MatMap = Eigen::Map<Matrix>;
  using CMatMap = Eigen::Map<const Matrix>;
  using VecMap = Eigen::Map<Vector>;
  using CVecMap = Eigen::Map<const Vector>;

  DuelingQNet() = default;

  explicit DuelingQNet(QNetDims dims) : dims_(dims) {
    if (dims.input == 0 || dims.hidden1 == 0 || dims.hidden2 == 0 || dims.actions == 0) {
      throw InvalidArgument("q-net: all layer sizes must be >= 1");
    }
    std::size_t o = 0;
    auto place = [&o](std::size_t n) { const std::size_t at = o; o += n; return at; };
    off_.w1 = place(dims.hidden1 * dims.input);
    off_.b1 = place(dims.hidden1);
    off_.w2 = place(dims.hidden2 * dims.hidden1);
    off_.b2 = place(dims.hidden2);
    off_.wv = place(dims.hidden2);
    off_.bv = place(1);
    off_.wa = place(dims.actions * dims.hidden2);
    off_.ba = place(dims.actions);
    params_.assign(o, 0.0);
  }

  /// He-uniform weights, zero biases.
  static DuelingQNet initialized(QNetDims dims, std::uint64_t seed) {
    DuelingQNet net(dims);
    Rng rng(seed);
    auto fill = [&](std::size_t at, std::size_t n, std::size_t fan_in) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < n; ++i) net.params_[at + i] = (2.0 * rng.uniform() - 1.0) * bound;
    };
    fill(net.off_.w1, dims.hidden1 * dims.input, dims.input);
    fill(net.off_.w2, dims.hidden2 * dims.hidden1, dims.hidden1);
    fill(net.off_.wv, dims.hidden2, dims.hidden2);
    fill(net.off_.wa, dims.actions * dims.hidden2, dims.hidden2);
    return net;
  }

  const QNetDims& dims() const noexcept { return dims_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  /// Advantage-head bias; exposed for the dueling-identity check.
  std::span<double> advantage_bias() noexcept { return {params_.data() + off_.ba, dims_.actions}; }

  struct Activations {
    Matrix z1, h1, z2, h2, value, advantage, q;
  };

  /// Forward pass over a batch of states stored as columns.
  Activations forward(const Matrix& states) const {
    if (static_cast<std::size_t>(states.rows()) != dims_.input) {
      throw InvalidArgument("q-net: state has " + std::to_string(states.rows()) + " features, expected " +
                            std::to_string(dims_.input));
    }
    Activations a;
    a.z1 = (w1() * states).colwise() + b1();
    a.h1 = a.z1.cwiseMax(0.0);
    a.z2 = (w2() * a.h1).colwise() + b2();
    a.h2 = a.z2.cwiseMax(0.0);
    a.value = ((wv().transpose() * a.h2).array() + bv()).matrix();
    a.advantage = (wa() * a.h2).colwise() + ba();
    const Eigen::RowVectorXd mean_adv = a.advantage.colwise().mean();
    a.q = a.advantage;
    a.q.rowwise() += a.value.row(0) - mean_adv;
    return a;
  }

  std::vector<double> q_values(std::span<const double> state) const {
    if (state.size() != dims_.input) {
      throw InvalidArgument("q_values: state has " + std::to_string(state.size()) + " features, expected " +
                            std::to_string(dims_.input));
    }
    const Matrix x = CVecMap(state.data(), static_cast<Eigen::Index>(state.size()));
    const Matrix q = forward(x).q;
    return std::vector<double>(q.data(), q.data() + q.size());
  }

  /// Mean squared error between Q(s_b, a_b) and targets_b, and its gradient
  /// with respect to every parameter.
  double loss_and_gradient(const Matrix& states, std::span<const std::size_t> actions,
                           std::span<const double> targets, std::vector<double>* grad) const {
    const auto batch = static_cast<std::size_t>(states.cols());
    if (actions.size() != batch || targets.size() != batch || batch == 0) {
      throw InvalidArgument("q-net loss: batch size mismatch");
    }
    const Activations a = forward(states);
    Matrix dq = Matrix::Zero(static_cast<Eigen::Index>(dims_.actions), static_cast<Eigen::Index>(batch));
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      if (actions[b] >= dims_.actions) throw InvalidArgument("q-net loss: action index out of range");
      const double err = a.q(static_cast<Eigen::Index>(actions[b]), static_cast<Eigen::Index>(b)) - targets[b];
      loss += err * err;
      dq(static_cast<Eigen::Index>(actions[b]), static_cast<Eigen::Index>(b)) = 2.0 * err / static_cast<double>(batch);
    }
    loss /= static_cast<double>(batch);
    if (grad == nullptr) return loss;

    grad->assign(params_.size(), 0.0);
    const Eigen::RowVectorXd dv = dq.colwise().sum();
    Matrix da = dq;
    da.rowwise() -= dv / static_cast<double>(dims_.actions);

    MatMap(grad->data() + off_.wv, static_cast<Eigen::Index>(dims_.hidden2), 1) = a.h2 * dv.transpose();
    (*grad)[off_.bv] = dv.sum();
    MatMap(grad->data() + off_.wa, rows(dims_.actions), rows(dims_.hidden2)) = da * a.h2.transpose();
    VecMap(grad->data() + off_.ba, rows(dims_.actions)) = da.rowwise().sum();

    Matrix dh2 = wv() * dv + wa().transpose() * da;
    Matrix dz2 = dh2.cwiseProduct((a.z2.array() > 0.0).cast<double>().matrix());
    MatMap(grad->data() + off_.w2, rows(dims_.hidden2), rows(dims_.hidden1)) = dz2 * a.h1.transpose();
    VecMap(grad->data() + off_.b2, rows(dims_.hidden2)) = dz2.rowwise().sum();

    Matrix dh1 = w2().transpose() * dz2;
    Matrix dz1 = dh1.cwiseProduct((a.z1.array() > 0.0).cast<double>().matrix());
    MatMap(grad->data() + off_.w1, rows(dims_.hidden1), rows(dims_.input)) = dz1 * states.transpose();
    VecMap(grad->data() + off_.b1, rows(dims_.hidden1)) = dz1.rowwise().sum();
    return loss;
  }

  friend bool operator==(const DuelingQNet& a, const DuelingQNet& b) {
    return a.dims_ == b.dims_ && a.params_ == b.params_;
  }

 private:
  static Eigen::Index rows(std::size_t n) { return static_cast<Eigen::Index>(n); }

  CMatMap w1() const { return CMatMap(params_.data() + off_.w1, rows(dims_.hidden1), rows(dims_.input)); }
  CVecMap b1() const { return CVecMap(params_.data() + off_.b1, rows(dims_.hidden1)); }
  CMatMap w2() const { return CMatMap(params_.data() + off_.w2, rows(dims_.hidden2), rows(dims_.hidden1)); }
  CVecMap b2() const { return CVecMap(params_.data() + off_.b2, rows(dims_.hidden2)); }
  CVecMap wv() const { return CVecMap(params_.data() + off_.wv, rows(dims_.hidden2)); }
  double bv() const { return params_[off_.bv]; }
  CMatMap wa() const { return CMatMap(params_.data() + off_.wa, rows(dims_.actions), rows(dims_.hidden2)); }
  CVecMap ba() const { return CVecMap(params_.data() + off_.ba, rows(dims_.actions)); }

  struct Offsets {
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, wv = 0, bv = 0, wa = 0, ba = 0;
  };

  QNetDims dims_{};
  Offsets off_{};
  std::vector<double> params_;
};

inline std::vector<double> q_values(const DuelingQNet& net, std::span<const double> state) {
  return net.q_values(state);
}

/// Adam over a flat parameter vector.
struct AdamOptimizer {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> m, v;
  std::uint64_t steps = 0;

  void step(std::span<double> params, std::span<const double> grad) {
    if (m.size() != params.size()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
      steps = 0;
    }
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
    }
  }
};

// Checkpoint: "DBAGT1" | u64 config hash | u32 4 | u32 dims[4] | u64 count | float64 params.

inline void save_checkpoint(const std::filesystem::path& path, const DuelingQNet& net, std::uint64_t config_hash) {
  ByteWriter w;
  w.bytes("DBAGT1");
  w.u64(config_hash);
  const QNetDims& d = net.dims();
  w.u32(4);
  for (std::size_t v : {d.input, d.hidden1, d.hidden2, d.actions}) w.u32(static_cast<std::uint32_t>(v));
  w.u64(net.parameter_count());
  for (double p : net.parameters()) w.f64(p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw IoError("short write to " + path.string());
}

struct Checkpoint {
  DuelingQNet net;
  std::uint64_t config_hash = 0;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(bytes);
  if (r.bytes(6) != "DBAGT1") throw InvalidArgument("checkpoint: bad magic in " + path.string());
  Checkpoint ck;
  ck.config_hash = r.u64();
  if (r.u32() != 4) throw InvalidArgument("checkpoint: unexpected layer count");
  QNetDims d;
  d.input = r.u32();
  d.hidden1 = r.u32();
  d.hidden2 = r.u32();
  d.actions = r.u32();
  if (!r.ok()) throw InvalidArgument("checkpoint: truncated header");
  ck.net = DuelingQNet(d);
  if (r.u64() != ck.net.parameter_count() || r.remaining() != ck.net.parameter_count() * 8) {
    throw InvalidArgument("checkpoint: parameter count does not match layer sizes");
  }
  for (double& p : ck.net.parameters()) p = r.f64();
  return ck;
}

}  // namespace distortbench
