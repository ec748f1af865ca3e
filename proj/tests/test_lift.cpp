#include <gtest/gtest.h>

#include <random>

#include "ovseg/lift.hpp"
#include "ovseg/pipeline.hpp"
#include "test_util.hpp"

namespace ovseg {
namespace {

// Five points in front of an identity camera at depth 1; the last two are
// occluded by the depth map.
struct Fixture {
  PosedFrame frame = test::pinhole_frame(10.0, 8.0, 16, 1.0f);
  PointCloud cloud;
  FrameCorrespondence corr;

  Fixture() {
    for (int i = 0; i < 5; ++i) {
      const double z = i < 3 ? 1.0 : 1.5;
      cloud.points.emplace_back(0.05 * i * z, -0.05 * i * z, z);
      cloud.colors.emplace_back(0.5, 0.5, 0.5);
    }
    corr = compute_frame_correspondence(cloud, frame, kDefaultOcclusionTolerance);
  }
};

TEST(Lift, AllOnesMaskOnThreeOfFiveVisible) {
  Fixture fx;
  MaskSet2D m(1, 16, 16, 2, 1);
  m.frame_id = "f0";
  for (auto& v : m.mask(0)) v = 1.0f;
  const auto lifted = lift_masks(m, fx.corr, "f0");
  ASSERT_EQ(lifted.num_points, 5u);
  EXPECT_EQ(lifted.visible, (std::vector<std::uint8_t>{1, 1, 1, 0, 0}));
  std::vector<float> values(lifted.mask(0).begin(), lifted.mask(0).end());
  EXPECT_EQ(values, (std::vector<float>{1, 1, 1, 0, 0}));
}

TEST(Lift, ReadsTheProjectedPixel) {
  PosedFrame frame = test::pinhole_frame(10.0, 8.0, 16, 1.0f);
  PointCloud cloud;
  // u = 10 * (-0.1) + 8 = 7, v = 10 * (-0.5) + 8 = 3.
  cloud.points = {Vec3(-0.1, -0.5, 1.0)};
  cloud.colors = {Vec3(0, 0, 0)};
  const auto corr = compute_frame_correspondence(cloud, frame, 0.02);

  MaskSet2D m(1, 16, 16, 2, 1);
  m.frame_id = "f0";
  std::mt19937 rng(2);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  std::vector<float> raw(256);
  for (auto& v : raw) v = uni(rng);
  auto blurred = gaussian_blur(raw, 16, 16, 1.0);
  blurred[3 * 16 + 7] = 0.42f;
  std::copy(blurred.begin(), blurred.end(), m.mask(0).begin());

  const auto lifted = lift_masks(m, corr, "f0");
  EXPECT_EQ(lifted.at(0, 0), 0.42f);
}

TEST(Lift, FrameMismatchFails) {
  Fixture fx;
  MaskSet2D m(1, 16, 16, 2, 1);
  m.frame_id = "f1";
  EXPECT_THROW(lift_masks(m, fx.corr, "f0"), Error);
  m.frame_id = "f0";
  EXPECT_THROW(lift_masks(m, fx.corr, "f1"), Error);
  MaskSet2D small(1, 8, 8, 2, 1);
  small.frame_id = "f0";
  EXPECT_THROW(lift_masks(small, fx.corr, "f0"), Error);
}

TEST(Lift, OracleMasksGiveOneHotMembership) {
  OracleSceneOptions o;
  o.spec = separated_scene_spec();
  o.spec.points_per_square_meter = 120.0;
  o.spec.cameras.count = 3;
  o.spec.cameras.width = 64;
  o.spec.cameras.height_px = 48;
  o.embedding_dim = 16;
  o.num_queries = 10;
  const auto d = build_oracle_scene(o);
  const auto g = scene_geometry(d);
  const auto& labels = *d.cloud.labels;
  for (std::size_t f = 0; f < d.frames.size(); ++f) {
    const auto& m = d.masksets[f];
    const auto lifted = lift_masks(m, g.corr.frames[f], m.frame_id);
    ASSERT_GT(g.corr.frames[f].num_visible(), 100u);
    for (int i = 0; i < m.num_masks; ++i) {
      if (m.is_padding(i)) continue;
      const auto gen = m.gen(i);
      const auto c = static_cast<std::size_t>(
          std::max_element(gen.begin(), gen.end()) - gen.begin());
      for (auto x : g.corr.frames[f].point_index) {
        ASSERT_EQ(lifted.at(i, x), labels[x] == c ? 1.0f : 0.0f)
            << "frame " << f << " mask " << i << " point " << x;
      }
    }
  }
}

TEST(Lift, InvisiblePointsAreZeroAndRangeIsPreserved) {
  auto o = test::small_oracle();
  o.noise.mask_blur = 1.5;
  const auto d = build_oracle_scene(o);
  const auto g = scene_geometry(d);
  for (std::size_t f = 0; f < d.frames.size(); ++f) {
    const auto lifted = lift_masks(d.masksets[f], g.corr.frames[f], d.frames[f].frame_id);
    for (int i = 0; i < lifted.num_masks; ++i) {
      for (std::size_t x = 0; x < lifted.num_points; ++x) {
        const float v = lifted.at(i, x);
        EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
        if (!lifted.visible[x]) EXPECT_EQ(v, 0.0f);
      }
    }
  }
}

TEST(Lift, MonotoneInTheTwoDimensionalMask) {
  auto o = test::small_oracle();
  o.spec.cameras.count = 1;
  o.noise.mask_blur = 1.0;
  const auto d = build_oracle_scene(o);
  const auto g = scene_geometry(d);
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  for (int trial = 0; trial < 5; ++trial) {
    MaskSet2D raised = d.masksets[0];
    for (auto& v : raised.masks) v = std::min(1.0f, v + uni(rng) * (1.0f - v));
    const auto a = lift_masks(d.masksets[0], g.corr.frames[0], raised.frame_id);
    const auto b = lift_masks(raised, g.corr.frames[0], raised.frame_id);
    for (std::size_t k = 0; k < a.values.size(); ++k) ASSERT_LE(a.values[k], b.values[k]);
  }
}

TEST(Lift, IdenticalGeometryAcrossFramesAgrees) {
  Fixture fx;
  PosedFrame other = fx.frame;
  other.frame_id = "f1";
  const auto corr1 = compute_frame_correspondence(fx.cloud, other, kDefaultOcclusionTolerance);
  MaskSet2D m0(2, 16, 16, 2, 1);
  m0.frame_id = "f0";
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  for (auto& v : m0.masks) v = uni(rng);
  MaskSet2D m1 = m0;
  m1.frame_id = "f1";
  const auto a = lift_masks(m0, fx.corr, "f0");
  const auto b = lift_masks(m1, corr1, "f1");
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.visible, b.visible);
}

}  // namespace
}  // namespace ovseg
