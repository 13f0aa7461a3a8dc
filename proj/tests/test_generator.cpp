#include <gtest/gtest.h>

#include <cmath>

#include "distortbench/generator.hpp"
#include "distortbench/split_io.hpp"

using namespace distortbench;

namespace {

// Two classes; class 0 wins while mean intensity exceeds 0.45.
std::shared_ptr<Classifier> mean_victim() {
  return std::make_shared<FunctionClassifier>(2, [](const ImageTensor& x) {
    double m = 0;
    for (double v : x.values()) m += v;
    m /= double(x.size());
    const double p0 = 1.0 / (1.0 + std::exp(-20.0 * (m - 0.45)));
    return ProbabilityVector({p0, 1.0 - p0});
  });
}

RunConfig small_config() {
  RunConfig c;
  c.patch_size = 4;
  c.filters = {FilterId::Brightness};
  c.max_iter = 20;
  c.state_top_k = 4;
  c.seed = 3;
  return c;
}

const ImageTensor kGray = ImageTensor::filled({1, 8, 8}, 0.5);

}  // namespace

TEST(Episode, ConstantVictimRunsToMaxIter) {
  RunConfig c = small_config();
  c.max_iter = 5;
  const ClassifierHandle victim(std::make_shared<ConstantClassifier>(ProbabilityVector({0.9, 0.1})));
  DqnAgent agent = make_agent(c, 2);
  const auto r = run_episode(kGray, 0, 0, c, agent, victim, false);
  EXPECT_EQ(r.reason, Termination::MaxIter);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.steps, 5u);
  EXPECT_EQ(victim.queries().evaluations, r.queries.evaluations);
}

TEST(Episode, MisclassifiedCleanSampleIsSkippedAfterOneQuery) {
  const RunConfig c = small_config();
  const ClassifierHandle victim(mean_victim());
  DqnAgent agent = make_agent(c, 2);
  const auto r = run_episode(kGray, 1, 7, c, agent, victim, false);
  EXPECT_EQ(r.reason, Termination::Skipped);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.queries.evaluations, 1u);
  EXPECT_EQ(r.index, 7u);
}

TEST(Episode, SuccessIsSoundAndQueriesAreAccounted) {
  const RunConfig c = small_config();
  const ClassifierHandle victim(mean_victim());
  DqnAgent agent = make_agent(c, 2);
  const auto r = run_episode(kGray, 0, 0, c, agent, victim, false);
  ASSERT_TRUE(r.success) << termination_name(r.reason);
  EXPECT_EQ(r.reason, Termination::Misclassified);
  EXPECT_NE(victim.predict_one(r.adversarial).argmax(), 0u);
  EXPECT_EQ(r.final_probs, victim.predict_one(r.adversarial));
  EXPECT_DOUBLE_EQ(r.l2, l2_distance(r.adversarial, r.original));
  for (double v : r.adversarial.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  std::uint64_t total = 1;
  for (const auto& s : r.trace) {
    EXPECT_EQ(s.scan_evaluations, s.scan_ceiling);
    EXPECT_EQ(s.step_evaluations, s.scan_evaluations + 1);
    total += s.step_evaluations;
  }
  EXPECT_EQ(r.queries.evaluations, total);
  EXPECT_EQ(r.trace.size(), r.steps);
}

TEST(Episode, InferenceIsDeterministic) {
  const RunConfig c = small_config();
  const ClassifierHandle victim(mean_victim());
  DqnAgent agent = make_agent(c, 2);
  const auto a = run_episode(kGray, 0, 4, c, agent, victim, false);
  const auto b = run_episode(kGray, 0, 4, c, agent, victim, false);
  EXPECT_EQ(a.adversarial, b.adversarial);
  EXPECT_EQ(a.steps, b.steps);
  EXPECT_EQ(a.queries, b.queries);
}

TEST(Episode, ThresholdModeRecordsCrossingsInOrder) {
  RunConfig c = small_config();
  c.thresholds = {0.3, 0.6};
  const ClassifierHandle victim(mean_victim());
  DqnAgent agent = make_agent(c, 2);
  const auto r = run_episode(kGray, 0, 0, c, agent, victim, false);
  ASSERT_EQ(r.reason, Termination::ThresholdHit);
  ASSERT_EQ(r.threshold_levels.size(), 2u);
  EXPECT_LE(victim.predict_one(r.threshold_levels[0])[0], 0.6);
  EXPECT_LE(victim.predict_one(r.threshold_levels[1])[0], 0.3);
  EXPECT_LE(l2_distance(r.threshold_levels[0], kGray), l2_distance(r.threshold_levels[1], kGray));
}

TEST(Episode, BudgetsTerminate) {
  RunConfig c = small_config();
  c.max_queries = 3;
  const ClassifierHandle victim(std::make_shared<ConstantClassifier>(ProbabilityVector({0.9, 0.1})));
  DqnAgent agent = make_agent(c, 2);
  const auto r = run_episode(kGray, 0, 0, c, agent, victim, false);
  EXPECT_EQ(r.reason, Termination::Budget);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.steps, 1u);

  RunConfig tight = small_config();
  tight.l2_budget = 1e-3;
  const auto t = run_episode(kGray, 0, 0, tight, agent, victim, false);
  EXPECT_EQ(t.reason, Termination::Budget);
  EXPECT_GT(t.l2, 1e-3);
}

TEST(Episode, TransportFailureEndsOnlyThatEpisode) {
  auto calls = std::make_shared<int>(0);
  auto flaky = std::make_shared<FunctionClassifier>(2, [calls](const ImageTensor&) -> ProbabilityVector {
    if (++*calls > 3) throw TransportError("connection reset");
    return ProbabilityVector({0.9, 0.1});
  });
  const RunConfig c = small_config();
  DqnAgent agent = make_agent(c, 2);
  const auto r = run_episode(kGray, 0, 0, c, agent, ClassifierHandle(flaky), false);
  EXPECT_EQ(r.reason, Termination::FailedTransport);
  EXPECT_FALSE(r.success);
  EXPECT_NE(r.error.find("connection reset"), std::string::npos);
}

TEST(Episode, TargetedArgumentsAreChecked) {
  RunConfig c = small_config();
  c.mode = AttackMode::Targeted;
  const ClassifierHandle victim(mean_victim());
  DqnAgent agent = make_agent(c, 2);
  EXPECT_THROW(run_episode(kGray, 0, 0, c, agent, victim, false), InvalidArgument);
  c.target_class = 0;
  EXPECT_THROW(run_episode(kGray, 0, 0, c, agent, victim, false), InvalidArgument);
  c.target_class = 1;
  const auto r = run_episode(kGray, 0, 0, c, agent, victim, false);
  EXPECT_EQ(r.reason, Termination::TargetHit);
}

TEST(Episode, TrainingFeedsTheReplayBuffer) {
  const RunConfig c = small_config();
  const ClassifierHandle victim(mean_victim());
  DqnAgent agent = make_agent(c, 2);
  const auto r = run_episode(kGray, 0, 0, c, agent, victim, true);
  EXPECT_EQ(agent.replay().size(), r.steps);
}

TEST(Severity, UnclippedScalingIsExactlyLinear) {
  Rng rng(1);
  std::vector<double> v(3 * 8 * 8);
  for (double& x : v) x = 0.5 + 0.02 * (2 * rng.uniform() - 1);
  const ImageTensor original = ImageTensor::filled({3, 8, 8}, 0.5);
  const ImageTensor level1({3, 8, 8}, v);
  const double base = l2_distance(level1, original);
  EXPECT_EQ(escalate_severity(original, level1, 1.0), level1);
  for (double s : {1.5, 2.0, 3.0, 4.0, 5.0}) {
    EXPECT_NEAR(l2_distance(escalate_severity(original, level1, s), original) / base, s, 1e-6 * s);
  }
}

TEST(Severity, ClippingOnlyShrinksTheRatio) {
  const ImageTensor original = ImageTensor::filled({1, 4, 4}, 0.9);
  const ImageTensor level1 = ImageTensor::filled({1, 4, 4}, 0.95);
  const double base = l2_distance(level1, original);
  double prev = base;
  for (double s : {2.0, 3.0, 4.0, 5.0}) {
    const double l2 = l2_distance(escalate_severity(original, level1, s), original);
    EXPECT_LE(l2 / base, s + 1e-12);
    EXPECT_GE(l2, prev);
    prev = l2;
  }
  EXPECT_THROW(escalate_severity(original, level1, 0.5), InvalidArgument);
  EXPECT_THROW(escalate_severity(original, ImageTensor::filled({1, 4, 5}, 0.9), 2.0), InvalidArgument);
}

TEST(Termination, NamesRoundTrip) {
  for (Termination t : {Termination::Misclassified, Termination::TargetHit, Termination::ThresholdHit,
                        Termination::Budget, Termination::MaxIter, Termination::Skipped,
                        Termination::FailedTransport}) {
    EXPECT_EQ(parse_termination(termination_name(t)), t);
  }
  EXPECT_THROW(parse_termination("timeout"), InvalidArgument);
}
