#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "ovseg/eval.hpp"

namespace ovseg {
namespace {

using Labels = std::vector<std::uint16_t>;

TEST(Confusion, HandCountedSixPoints) {
  const Labels gt = {0, 0, 0, 1, 1, 1};
  const Labels pred = {0, 1, 0, 1, 1, 0};
  const auto cm = confusion_matrix(pred, gt, 2);
  EXPECT_EQ(cm.at(0, 0), 2u);
  EXPECT_EQ(cm.at(0, 1), 1u);
  EXPECT_EQ(cm.at(1, 0), 1u);
  EXPECT_EQ(cm.at(1, 1), 2u);
  const auto r = miou(cm);
  EXPECT_DOUBLE_EQ(*r.per_class[0], 0.5);
  EXPECT_DOUBLE_EQ(*r.per_class[1], 0.5);
  EXPECT_DOUBLE_EQ(r.mean, 0.5);
}

TEST(Confusion, PerfectPredictionIsDiagonal) {
  const Labels gt = {0, 2, 1, 2, 3, 0};
  const auto cm = confusion_matrix(gt, gt, 4);
  for (int g = 0; g < 4; ++g) {
    for (int p = 0; p < 4; ++p) {
      if (g != p) EXPECT_EQ(cm.at(g, p), 0u);
    }
  }
  const auto r = miou(cm);
  EXPECT_EQ(r.mean, 1.0);
  for (const auto& v : r.per_class) EXPECT_EQ(*v, 1.0);
}

TEST(Confusion, AllIgnored) {
  const Labels gt(5, kIgnoreLabel);
  const Labels pred = {0, 1, 2, 0, 1};
  const auto cm = confusion_matrix(pred, gt, 3);
  EXPECT_EQ(cm.total(), 0u);
  EXPECT_EQ(cm.ignored, 5u);
  try {
    miou(cm);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no valid classes"), std::string::npos);
  }
}

TEST(Confusion, RejectsBadInput) {
  const Labels gt = {0, 3};
  const Labels pred = {0, 0};
  EXPECT_THROW(confusion_matrix(pred, gt, 3), Error);
  EXPECT_THROW(confusion_matrix(Labels{0}, gt, 3), Error);
  // Ignored ground truth skips the range check on the prediction.
  EXPECT_NO_THROW(confusion_matrix(Labels{9}, Labels{kIgnoreLabel}, 3));
}

TEST(Miou, AbsentClassIsExcluded) {
  const Labels gt = {0, 0, 2, 2};
  const Labels pred = {0, 0, 2, 0};
  const auto r = miou(confusion_matrix(pred, gt, 3));
  EXPECT_FALSE(r.per_class[1].has_value());
  EXPECT_DOUBLE_EQ(*r.per_class[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*r.per_class[2], 0.5);
  EXPECT_DOUBLE_EQ(r.mean, 0.5 * (2.0 / 3.0 + 0.5));
}

TEST(Grouped, Examples) {
  std::vector<std::optional<double>> iou = {0.8, 0.6, 0.4, 0.2};
  std::vector<Group> groups = {Group::kHead, Group::kHead, Group::kTail, Group::kTail};
  auto g = grouped_miou(iou, groups);
  EXPECT_NEAR(g.at(Group::kHead), 0.7, 1e-15);
  EXPECT_NEAR(g.at(Group::kTail), 0.3, 1e-15);

  std::vector<std::optional<double>> two = {1.0, 0.0};
  g = grouped_miou(two, std::vector<Group>{Group::kHead, Group::kTail});
  EXPECT_EQ(g.at(Group::kHead), 1.0);
  EXPECT_EQ(g.at(Group::kTail), 0.0);

  std::vector<std::optional<double>> missing = {0.5, std::nullopt};
  g = grouped_miou(missing, std::vector<Group>{Group::kHead, Group::kTail});
  EXPECT_EQ(g.count(Group::kTail), 0u);
}

// Independent count of per-class intersections and unions.
double brute_force_miou(const Labels& pred, const Labels& gt, int classes) {
  double sum = 0.0;
  int valid = 0;
  for (int c = 0; c < classes; ++c) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == kIgnoreLabel) continue;
      const bool a = gt[i] == c, b = pred[i] == c;
      inter += a && b;
      uni += a || b;
    }
    if (uni == 0) continue;
    sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++valid;
  }
  return sum / valid;
}

TEST(Miou, MatchesBruteForceAndProperties) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = std::uniform_int_distribution<int>(1, 8)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 1000)(rng);
    std::uniform_int_distribution<int> label(0, classes - 1);
    Labels gt(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = rng() % 10 == 0 ? kIgnoreLabel : static_cast<std::uint16_t>(label(rng));
      pred[i] = static_cast<std::uint16_t>(label(rng));
    }
    gt[0] = pred[0];
    const auto cm = confusion_matrix(pred, gt, classes);
    EXPECT_EQ(cm.total() + cm.ignored, n);
    const auto r = miou(cm);
    EXPECT_EQ(r.mean, brute_force_miou(pred, gt, classes));

    double lo = 1.0, hi = 0.0;
    for (const auto& v : r.per_class) {
      if (!v) continue;
      EXPECT_GE(*v, 0.0);
      EXPECT_LE(*v, 1.0);
      lo = std::min(lo, *v);
      hi = std::max(hi, *v);
    }
    EXPECT_GE(r.mean, lo - 1e-15);
    EXPECT_LE(r.mean, hi + 1e-15);

    // Relabeling both sides with one permutation keeps the mean.
    std::vector<std::uint16_t> perm(classes);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Labels gt2 = gt, pred2 = pred;
    for (std::size_t i = 0; i < n; ++i) {
      if (gt2[i] != kIgnoreLabel) gt2[i] = perm[gt2[i]];
      pred2[i] = perm[pred2[i]];
    }
    EXPECT_NEAR(miou(confusion_matrix(pred2, gt2, classes)).mean, r.mean, 1e-12);
  }
}

TEST(Report, JsonShape) {
  const Labels gt = {0, 0, 1, 1};
  const Labels pred = {0, 1, 1, 1};
  const auto r = miou(confusion_matrix(pred, gt, 3));
  CategoryTable t;
  t.names = {"floor", "wall", "shelf"};
  t.groups = {Group::kHead, Group::kHead, Group::kTail};
  t.prototypes = Eigen::MatrixXd::Identity(3, 3);
  const auto j = metrics_report(r, t, {10, 4, 4});
  EXPECT_EQ(j["classes"].size(), 3u);
  EXPECT_EQ(j["classes"][1]["name"], "wall");
  EXPECT_TRUE(j["classes"][2]["iou"].is_null());
  EXPECT_DOUBLE_EQ(j["miou"].get<double>(), r.mean);
  EXPECT_TRUE(j["groups"].contains("head"));
  EXPECT_FALSE(j["groups"].contains("tail"));
  EXPECT_EQ(j["coverage"]["total_points"], 10);
}

}  // namespace
}  // namespace ovseg
