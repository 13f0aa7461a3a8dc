#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "distortbench/agent.hpp"
#include "distortbench/qnet.hpp"

using namespace distortbench;

namespace {

std::vector<double> random_state(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> s(n);
  for (double& x : s) x = 2.0 * rng.uniform() - 1.0;
  return s;
}

// Independent forward pass with explicit loops over the flat parameter layout.
std::vector<double> oracle_q(const DuelingQNet& net, const std::vector<double>& s) {
  const auto d = net.dims();
  const auto p = net.parameters();
  std::size_t o = 0;
  auto dense = [&](const std::vector<double>& in, std::size_t out_n, bool relu) {
    std::vector<double> out(out_n, 0.0);
    const std::size_t w = o, b = o + out_n * in.size();
    for (std::size_t r = 0; r < out_n; ++r) {
      double acc = p[b + r];
      for (std::size_t c = 0; c < in.size(); ++c) acc += p[w + c * out_n + r] * in[c];
      out[r] = relu ? std::max(0.0, acc) : acc;
    }
    o = b + out_n;
    return out;
  };
  const auto h1 = dense(s, d.hidden1, true);
  const auto h2 = dense(h1, d.hidden2, true);
  const double v = dense(h2, 1, false)[0];
  const auto a = dense(h2, d.actions, false);
  double mean = 0;
  for (double x : a) mean += x / double(a.size());
  std::vector<double> q(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) q[i] = v + a[i] - mean;
  return q;
}

}  // namespace

TEST(QNet, ZeroWeightsGiveEqualQ) {
  const DuelingQNet net({6, 8, 8, 5});
  const auto q = net.q_values(random_state(6, 1));
  for (double v : q) EXPECT_EQ(v, q[0]);
}

TEST(QNet, DuelingIdentityUnderAdvantageShift) {
  auto net = DuelingQNet::initialized({10, 16, 16, 7}, 2);
  const auto s = random_state(10, 3);
  const auto before = net.q_values(s);
  for (double& b : net.advantage_bias()) b += 5.0;
  const auto after = net.q_values(s);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(after[i], before[i], 1e-9);
}

TEST(QNet, ForwardMatchesScalarOracle) {
  auto net = DuelingQNet::initialized({12, 9, 7, 5}, 4);
  Rng rng(5);
  for (double& b : net.parameters()) b += 0.05 * rng.normal();
  for (std::uint64_t t = 0; t < 10; ++t) {
    const auto s = random_state(12, 10 + t);
    const auto q = q_values(net, s);
    const auto o = oracle_q(net, s);
    for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(q[i], o[i], 1e-6);
  }
}

TEST(QNet, DimensionMismatchIsInvalid) {
  const auto net = DuelingQNet::initialized({4, 8, 8, 3}, 6);
  EXPECT_THROW(net.q_values(random_state(5, 1)), InvalidArgument);
  EXPECT_THROW(DuelingQNet({0, 8, 8, 3}), InvalidArgument);
}

TEST(QNet, TdLossGradientMatchesCentralDifferences) {
  auto net = DuelingQNet::initialized({6, 10, 8, 4}, 7);
  Rng rng(8);
  for (double& p : net.parameters()) p += 0.01 * rng.normal();
  auto target = DuelingQNet::initialized({6, 10, 8, 4}, 9);
  std::vector<Transition> ts;
  for (std::uint64_t i = 0; i < 5; ++i) {
    ts.push_back({random_state(6, 20 + i), std::size_t(i % 4), 0.3 * double(i) - 0.5, random_state(6, 40 + i), i == 4});
  }
  std::vector<const Transition*> batch;
  for (const auto& t : ts) batch.push_back(&t);

  std::vector<double> grad;
  td_loss(net, target, batch, 0.9, &grad);
  const double h = 1e-5;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < net.parameter_count(); ++i) {
    const double keep = net.parameters()[i];
    net.parameters()[i] = keep + h;
    const double up = td_loss(net, target, batch, 0.9);
    net.parameters()[i] = keep - h;
    const double down = td_loss(net, target, batch, 0.9);
    net.parameters()[i] = keep;
    const double fd = (up - down) / (2 * h);
    ASSERT_LE(std::abs(grad[i] - fd), 1e-4 * std::max(std::abs(grad[i]), std::abs(fd)) + 1e-9)
        << "parameter " << i << " analytic " << grad[i] << " numeric " << fd;
    checked += grad[i] != 0.0;
  }
  EXPECT_GT(checked, net.parameter_count() / 4);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  const auto net = DuelingQNet::initialized({9, 5, 6, 20}, 11);
  const auto path = std::filesystem::temp_directory_path() / "distortbench_ckpt_test.dbagt";
  save_checkpoint(path, net, 0x1234abcdULL);
  const auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.net, net);
  EXPECT_EQ(ck.config_hash, 0x1234abcdULL);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 1);
  EXPECT_THROW(load_checkpoint(path), InvalidArgument);
  std::filesystem::remove(path);
}

TEST(Adam, FirstStepMovesEachParameterByLearningRate) {
  AdamOptimizer opt;
  opt.learning_rate = 0.01;
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 1e-3};
  opt.step(p, g);
  EXPECT_NEAR(p[0], 0.99, 1e-9);
  EXPECT_NEAR(p[1], -1.99, 1e-9);
  EXPECT_NEAR(p[2], 0.49, 1e-7);
}
