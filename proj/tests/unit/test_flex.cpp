#include <gtest/gtest.h>

#include <cmath>

#include "entryprune/flex.hpp"
#include "harness.hpp"

using namespace entryprune;

namespace {

// Drives flex_update with a constant loss until it reports a change.
std::optional<double> stall(FlexState& fs, double l, double c, std::size_t K, std::size_t N) {
  std::optional<double> out;
  for (int i = 0; i < 10 && !out; ++i) out = flex_update(fs, l, c, K, N);
  return out;
}

}  // namespace

TEST(FlexUpdate, StartsShrinking) {
  FlexState fs;
  EXPECT_EQ(fs.direction, FlexDirection::Shrink);
  EXPECT_EQ(fs.stall_counter, 0u);
  EXPECT_TRUE(std::isnan(fs.l_change));
}

TEST(FlexUpdate, GrowClampsAtOne) {
  FlexState fs;
  fs.direction = FlexDirection::Grow;
  fs.l_change = 10.0;
  fs.best_loss = 0.5;
  const auto next = stall(fs, 1.0, 0.5, 50, 784);
  ASSERT_TRUE(next.has_value());
  EXPECT_EQ(*next, 1.0);
  EXPECT_FALSE(stall(fs, 0.9, 1.0, 50, 784).has_value());
}

TEST(FlexUpdate, ShrinkClampsAtOneFifthOfK) {
  FlexState fs;
  fs.l_change = 10.0;
  fs.best_loss = 0.5;
  const auto next = stall(fs, 1.0, 0.02, 50, 784);
  ASSERT_TRUE(next.has_value());
  EXPECT_NEAR(*next, 0.2 * 50.0 / 734.0, 1e-15);
  EXPECT_NEAR(*next, 0.013624, 1e-6);
  EXPECT_EQ(candidate_count(*next, 50, 784), 10u);
  EXPECT_EQ(50 + flex_candidate_count(*next, 50, 784), 60u);
}

TEST(FlexUpdate, ImprovingLossNeverChangesSize) {
  FlexState fs;
  double c = 0.5;
  for (int r = 0; r < 1000; ++r) {
    EXPECT_FALSE(flex_update(fs, 1000.0 - r, c, 10, 100).has_value());
  }
  EXPECT_EQ(fs.stall_counter, 0u);
}

TEST(FlexUpdate, FlipsOnlyWhenLossRoseSinceLastChange) {
  FlexState fs;
  (void)flex_update(fs, 1.0, 0.5, 10, 100);  // l_change = 1.0, best = 1.0
  auto c1 = stall(fs, 1.0, 0.5, 10, 100);
  ASSERT_TRUE(c1.has_value());
  EXPECT_EQ(fs.direction, FlexDirection::Shrink);  // l == l_change: no flip
  EXPECT_EQ(*c1, 0.25);
  EXPECT_EQ(fs.stall_counter, 0u);

  auto c2 = stall(fs, 2.0, *c1, 10, 100);
  ASSERT_TRUE(c2.has_value());
  EXPECT_EQ(fs.direction, FlexDirection::Grow);
  EXPECT_EQ(*c2, 0.5);
  EXPECT_EQ(fs.l_change, 2.0);
}

TEST(FlexUpdate, PatienceIsTenRotations) {
  FlexState fs;
  (void)flex_update(fs, 1.0, 0.5, 10, 100);
  for (int i = 0; i < 9; ++i) EXPECT_FALSE(flex_update(fs, 1.0, 0.5, 10, 100).has_value());
  EXPECT_TRUE(flex_update(fs, 1.0, 0.5, 10, 100).has_value());
}

TEST(FlexUpdate, FuzzKeepsBoundsAndFactors) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = harness::flex_fuzz(50, 784, 1000, seed);
    EXPECT_EQ(r.bound_violations, 0u);
    EXPECT_EQ(r.factor_violations, 0u);
    EXPECT_GT(r.changes, 10u);
  }
  const auto small = harness::flex_fuzz(7, 12, 1000, 9);
  EXPECT_EQ(small.bound_violations, 0u);
  EXPECT_EQ(small.factor_violations, 0u);
}

TEST(CandidateCount, ClampedToPool) {
  EXPECT_EQ(candidate_count(1.0, 12, 20), 8u);
  EXPECT_EQ(candidate_count(1e-9, 12, 20), 1u);
  EXPECT_EQ(candidate_count(0.2, 50, 784), 147u);
  EXPECT_THROW(candidate_count(0.5, 20, 20), ConfigError);
}

TEST(FinalScaling, TenEvenStepsWithLinearSizes) {
  const auto s = flex_final_scaling(4975, 10, 100);
  ASSERT_EQ(s.size(), 10u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s[i].rotation, 10 * (i + 1));
    const double expect = 4975.0 + (10.0 - 4975.0) * static_cast<double>(i + 1) / 10.0;
    EXPECT_EQ(s[i].candidate_count, static_cast<std::size_t>(std::llround(expect)));
  }
  EXPECT_EQ(s.back().candidate_count, 10u);
}

TEST(FinalScaling, EmptyWhenSizesMatch) { EXPECT_TRUE(flex_final_scaling(40, 40, 100).empty()); }

TEST(FinalScaling, FewRotationsGiveOneStepEach) {
  const auto s = flex_final_scaling(100, 20, 5);
  ASSERT_EQ(s.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(s[i].rotation, i + 1);
  EXPECT_EQ(s.back().candidate_count, 20u);
}
