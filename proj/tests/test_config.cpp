#include <gtest/gtest.h>

#include "catgrasp/config.hpp"

using namespace catgrasp;

TEST(Config, DefaultsRoundTrip) {
  const json j = config_to_json(Config{});
  const Config back = config_from_json(j);
  EXPECT_EQ(config_to_json(back), j);
}

TEST(Config, PartialFileKeepsDefaults) {
  const Config c = config_from_json(json::parse(R"({"seed": 42, "plan": {"n_direct": 5}})"));
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.plan.n_direct, 5u);
  EXPECT_EQ(c.plan.score_samples, PlanParams{}.score_samples);
  EXPECT_EQ(c.segmentation.eps, SegmentParams{}.eps);
}

TEST(Config, UnknownKeysAreErrors) {
  EXPECT_THROW(config_from_json(json::parse(R"({"sed": 1})")), ParseError);
  EXPECT_THROW(config_from_json(json::parse(R"({"plan": {"ndirect": 1}})")), ParseError);
  EXPECT_THROW(config_from_json(json::parse(R"({"plan": 3})")), ParseError);
  EXPECT_THROW(config_from_json(json::parse(R"([1, 2])")), ParseError);
}

TEST(Config, BadValuesAreErrors) {
  EXPECT_THROW(config_from_json(json::parse(R"({"plan": {"n_direct": -1}})")), ParseError);
  EXPECT_THROW(config_from_json(json::parse(R"({"plan": {"n_direct": "many"}})")), ParseError);
  EXPECT_THROW(config_from_json(json::parse(R"({"heatmap": {"aggregate": "max"}})")), ParseError);
  EXPECT_THROW(config_from_json(json::parse(R"({"canonical": {"axial_symmetry": 0}})")), ParseError);
  EXPECT_THROW(config_from_json(json::parse(R"({"scenes": {"count_min": 5, "count_max": 2}})")), ParseError);
  EXPECT_THROW(config_from_json(json::parse(R"({"segmentation": {"eps": 0}})")), ParseError);
}

TEST(Config, SymmetryGroupFilled) {
  const Config c = config_from_json(json::parse(R"({"canonical": {"axial_symmetry": 6}})"));
  ASSERT_EQ(c.canonical.symmetries.size(), 6u);
  EXPECT_TRUE(c.canonical.symmetries[0].isApprox(Mat3::Identity()));
  for (const Mat3& r : c.canonical.symmetries) {
    EXPECT_NEAR((r * Vec3::UnitZ() - Vec3::UnitZ()).norm(), 0.0, 1e-12);
    // Every element raised to the group order is the identity.
    Mat3 p = Mat3::Identity();
    for (int k = 0; k < 6; ++k) p = p * r;
    EXPECT_TRUE(p.isApprox(Mat3::Identity(), 1e-9));
  }
}

TEST(Config, SharedGraspParamsPropagate) {
  const Config c = config_from_json(json::parse(R"({"grasp": {"contact_eps": 0.004}, "plan": {"uniform_scale": true}})"));
  EXPECT_EQ(c.codebook.grasp.contact_eps, 0.004);
  EXPECT_EQ(c.proposals.grasp.contact_eps, 0.004);
  EXPECT_EQ(c.relevance.grasp.contact_eps, 0.004);
  EXPECT_TRUE(c.align.uniform_scale);
}
