#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <random>

#include "ovseg/masks2d.hpp"
#include "ovseg/pipeline.hpp"
#include "test_util.hpp"

namespace ovseg {
namespace {

MaskSet2D two_mask_set() {
  MaskSet2D m(2, 4, 4, 3, 2);
  m.frame_id = "f0";
  for (std::size_t p = 0; p < m.pixels(); ++p) {
    m.mask(0)[p] = p < 8 ? 1.0f : 0.0f;
    m.mask(1)[p] = 0.25f;
  }
  m.embedding(0)[0] = 1.0f;
  m.embedding(1)[2] = -1.0f;
  m.gen(0)[0] = 0.75f;
  m.gen(0)[1] = 0.25f;
  m.gen(1)[1] = 1.0f;
  return m;
}

void expect_validation_error(const std::function<void()>& fn, const std::string& what) {
  try {
    fn();
    FAIL() << "no error, expected '" << what << "'";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    EXPECT_NE(std::string(e.what()).find(what), std::string::npos) << e.what();
  }
}

TEST(MaskSetFile, HandBuiltLayout) {
  const auto bytes = encode_maskset(two_mask_set());
  ASSERT_EQ(bytes.size(), 4u + 6u * 4u + 4u * (2 * 16 + 2 * 3 + 2 * 2));
  EXPECT_EQ(std::string(bytes.data(), 4), "MSK2");
  std::uint32_t header[6];
  std::memcpy(header, bytes.data() + 4, sizeof header);
  EXPECT_EQ(header[0], 1u);  // version
  EXPECT_EQ(header[1], 2u);
  EXPECT_EQ(header[2], 4u);
  EXPECT_EQ(header[3], 4u);
  EXPECT_EQ(header[4], 3u);
  EXPECT_EQ(header[5], 2u);
  float first_gen;
  std::memcpy(&first_gen, bytes.data() + 28 + 4 * (32 + 6), 4);
  EXPECT_EQ(first_gen, 0.75f);
}

TEST(MaskSetFile, RoundTripIsBitExact) {
  const auto m = two_mask_set();
  const auto bytes = encode_maskset(m);
  const auto back = decode_maskset(bytes);
  EXPECT_EQ(back.num_masks, 2);
  EXPECT_EQ(back.masks, m.masks);
  EXPECT_EQ(back.embeddings, m.embeddings);
  EXPECT_EQ(back.gen_probs, m.gen_probs);

  const auto dir = test::temp_dir("msk");
  save_maskset((dir / "a.msk").string(), m);
  EXPECT_EQ(load_maskset((dir / "a.msk").string()).masks, m.masks);
}

TEST(MaskSetFile, OracleRoundTripIsBitExact) {
  auto o = test::small_oracle();
  o.noise = {1.0, 0.2, 0.3};
  const auto d = build_oracle_scene(o);
  for (const auto& m : d.masksets) {
    const auto back = decode_maskset(encode_maskset(m));
    EXPECT_EQ(back.masks, m.masks);
    EXPECT_EQ(back.embeddings, m.embeddings);
    EXPECT_EQ(back.gen_probs, m.gen_probs);
  }
}

TEST(MaskSetFile, TruncationAndBadMagic) {
  auto bytes = encode_maskset(two_mask_set());
  std::vector<char> cut(bytes.begin(), bytes.end() - 1);
  expect_validation_error([&] { decode_maskset(cut); }, "corrupt mask set");
  std::vector<char> header_only(bytes.begin(), bytes.begin() + 10);
  expect_validation_error([&] { decode_maskset(header_only); }, "corrupt mask set");
  bytes[3] = 'X';
  expect_validation_error([&] { decode_maskset(bytes); }, "not a mask-set file");
}

TEST(MaskSetFile, OutOfRangeValuesAreInvalidProbabilities) {
  auto m = two_mask_set();
  m.mask(1)[3] = 1.5f;
  expect_validation_error([&] { decode_maskset(encode_maskset(m)); }, "invalid probability");
  m = two_mask_set();
  m.mask(0)[0] = -0.01f;
  expect_validation_error([&] { m.validate(); }, "invalid probability");
  m = two_mask_set();
  m.gen(1)[0] = 0.5f;  // row sums to 1.5
  expect_validation_error([&] { m.validate(); }, "invalid probability");
  m = two_mask_set();
  m.mask(0)[0] = std::nanf("");
  expect_validation_error([&] { m.validate(); }, "invalid probability");
}

TEST(CategoryTableFile, RoundTrip) {
  CategoryTable t = make_category_table(default_scene_spec(), 16, 3);
  const auto dir = test::temp_dir("emb");
  save_category_table((dir / "t.emb").string(), t);
  const auto back = load_category_table((dir / "t.emb").string());
  EXPECT_EQ(back.names, t.names);
  EXPECT_EQ(back.groups, t.groups);
  EXPECT_TRUE(back.prototypes.isApprox(t.prototypes.cast<float>().cast<double>(), 0.0));
}

// ---------------------------------------------------------------------------

TEST(Oracle, ZeroNoiseReproducesGroundTruth) {
  auto o = test::small_oracle();
  const auto d = build_oracle_scene(o);
  for (std::size_t f = 0; f < d.frames.size(); ++f) {
    const auto gt = render_gt_masks(o.spec, d.frames[f]);
    const auto& m = d.masksets[f];
    EXPECT_NO_THROW(m.validate());
    int slot = 0;
    for (std::size_t c = 0; c < gt.size(); ++c) {
      bool present = false;
      for (auto b : gt[c]) present = present || b;
      if (!present) continue;
      ASSERT_LT(slot, m.num_masks);
      for (std::size_t p = 0; p < m.pixels(); ++p) {
        ASSERT_EQ(m.mask(slot)[p], static_cast<float>(gt[c][p]));
      }
      for (int k = 0; k < m.dim; ++k) {
        EXPECT_NEAR(m.embedding(slot)[k], d.table.prototypes(c, k), 1e-6);
      }
      for (std::size_t k = 0; k < gt.size(); ++k) {
        EXPECT_EQ(m.gen(slot)[k], k == c ? 1.0f : 0.0f);
      }
      ++slot;
    }
    for (; slot < m.num_masks; ++slot) {
      EXPECT_TRUE(m.is_padding(slot));
      for (float v : m.mask(slot)) EXPECT_EQ(v, 0.0f);
    }
  }
}

TEST(Oracle, FullConfusionGivesUniformRows) {
  auto o = test::small_oracle();
  o.spec.cameras.count = 1;
  o.noise.confusion = 1.0;
  const auto d = build_oracle_scene(o);
  const float u = 1.0f / static_cast<float>(d.table.size());
  for (int i = 0; i < d.masksets[0].num_masks; ++i) {
    for (float v : d.masksets[0].gen(i)) EXPECT_FLOAT_EQ(v, u);
  }
}

TEST(Oracle, ConfusionMixesOneHotWithUniform) {
  auto o = test::small_oracle();
  o.spec.cameras.count = 1;
  o.noise.confusion = 0.3;
  const auto d = build_oracle_scene(o);
  const auto& m = d.masksets[0];
  const double c = static_cast<double>(d.table.size());
  ASSERT_FALSE(m.is_padding(0));
  int hot = 0;
  for (float v : m.gen(0)) {
    if (std::abs(v - (0.7 + 0.3 / c)) < 1e-6) {
      ++hot;
    } else {
      EXPECT_NEAR(v, 0.3 / c, 1e-6);
    }
  }
  EXPECT_EQ(hot, 1);
}

TEST(Oracle, NoisyEmbeddingsStayUnitNorm) {
  auto o = test::small_oracle();
  o.spec.cameras.count = 2;
  o.noise.embedding_noise = 0.2;
  const auto d = build_oracle_scene(o);
  for (const auto& m : d.masksets) {
    const auto e = m.embedding_matrix();
    for (int i = 0; i < m.num_masks; ++i) {
      if (!m.is_padding(i)) EXPECT_NEAR(e.row(i).norm(), 1.0, 1e-6);
    }
  }
}

TEST(Blur, HalfPlaneEdgeStraddlesOneHalf) {
  const int w = 16, h = 8;
  std::vector<float> img(w * h);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) img[v * w + u] = u < 8 ? 1.0f : 0.0f;
  }
  const auto out = gaussian_blur(img, w, h, 0.5);
  for (int v = 0; v < h; ++v) {
    // The edge lies between columns 7 and 8.
    const double edge = 0.5 * (out[v * w + 7] + out[v * w + 8]);
    EXPECT_NEAR(edge, 0.5, 0.05);
    EXPECT_GT(out[v * w + 7], 0.5f);
    EXPECT_LT(out[v * w + 8], 0.5f);
    EXPECT_EQ(out[v * w + 0], 1.0f);
    EXPECT_EQ(out[v * w + 15], 0.0f);
  }
}

TEST(Blur, MatchesDirectTwoDimensionalConvolution) {
  const int w = 13, h = 9;
  const double sigma = 1.3;
  std::mt19937 rng(4);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  std::vector<float> img(w * h);
  for (auto& v : img) v = uni(rng);
  const auto out = gaussian_blur(img, w, h, sigma);

  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  double norm = 0.0;
  for (int a = -r; a <= r; ++a) {
    for (int b = -r; b <= r; ++b) norm += std::exp(-(a * a + b * b) / (2 * sigma * sigma));
  }
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      double acc = 0.0;
      for (int a = -r; a <= r; ++a) {
        for (int b = -r; b <= r; ++b) {
          const int uu = std::clamp(u + a, 0, w - 1);
          const int vv = std::clamp(v + b, 0, h - 1);
          acc += std::exp(-(a * a + b * b) / (2 * sigma * sigma)) * img[vv * w + uu];
        }
      }
      EXPECT_NEAR(out[v * w + u], acc / norm, 1e-5);
    }
  }
}

TEST(Blur, ZeroSigmaIsIdentity) {
  std::vector<float> img = {0.0f, 0.3f, 1.0f, 0.7f};
  EXPECT_EQ(gaussian_blur(img, 2, 2, 0.0), img);
}

// ---------------------------------------------------------------------------

TEST(Discriminative, TwoCategoryExample) {
  Eigen::MatrixXd e(1, 2), proto(2, 2);
  e << 1, 0;
  proto << 1, 0, 0, 1;
  const auto p = discriminative_probs(e, proto, 1.0);
  EXPECT_NEAR(p(0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(p(0, 0), 0.7311, 1e-4);
  EXPECT_NEAR(p(0, 1), 0.2689, 1e-4);
}

TEST(Discriminative, SharpAtDefaultTemperature) {
  Eigen::MatrixXd e(1, 2), proto(2, 2);
  e << 1, 0;
  proto << 1, 0, 0, 1;
  const auto p = discriminative_probs(e, proto, kDefaultTemperature);
  EXPECT_LT(p(0, 1), 1e-40);
}

TEST(Discriminative, ZeroEmbeddingIsUniform) {
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(1, 8);
  const auto p = discriminative_probs(e, make_prototypes(3, 8, 1).embeddings, 0.01);
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(p(0, c), 1.0 / 3.0);
}

TEST(Discriminative, DimensionMismatchFails) {
  EXPECT_THROW(discriminative_probs(Eigen::MatrixXd::Ones(1, 3), Eigen::MatrixXd::Ones(2, 4), 0.1),
               Error);
  EXPECT_THROW(discriminative_probs(Eigen::MatrixXd::Ones(1, 3), Eigen::MatrixXd::Ones(2, 3), 0.0),
               Error);
}

TEST(Discriminative, InvariantToPrototypeAndEmbeddingScale) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> uni(0.1, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd e = gaussian_rows(6, 8, rng());
    const Eigen::MatrixXd proto = gaussian_rows(5, 8, rng());
    Eigen::MatrixXd scaled = proto;
    for (int c = 0; c < 5; ++c) scaled.row(c) *= uni(rng);
    const auto a = discriminative_probs(e, proto, 0.2);
    const auto b = discriminative_probs(e * uni(rng), scaled, 0.2);
    EXPECT_TRUE(a.isApprox(b, 1e-10));
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-12);
  }
}

// ---------------------------------------------------------------------------

TEST(Ensemble, GeometricMeanExample) {
  Eigen::MatrixXd g(1, 2), d(1, 2);
  g << 0.25, 0.09;
  d << 1.0, 1.0;
  const auto r = ensemble_category_probs(g, d, 0.5);
  // Unnormalized sqrt(0.25 * 1) = 0.5 and sqrt(0.09 * 1) = 0.3.
  EXPECT_NEAR(r.probs(0, 0), 0.5 / 0.8, 1e-12);
  EXPECT_NEAR(r.probs(0, 1), 0.3 / 0.8, 1e-12);
  EXPECT_EQ(r.degenerate_rows, 0);
}

TEST(Ensemble, IdempotentOnEqualInputs) {
  const Eigen::MatrixXd p = discriminative_probs(gaussian_rows(7, 4, 1), gaussian_rows(3, 4, 2), 0.5);
  for (double alpha : {0.0, 0.3, 0.5, 1.0}) {
    EXPECT_TRUE(ensemble_category_probs(p, p, alpha).probs.isApprox(p, 1e-12));
  }
}

TEST(Ensemble, SymmetricAtHalfAndEndpointsSelectOneSide) {
  const Eigen::MatrixXd g = discriminative_probs(gaussian_rows(7, 4, 3), gaussian_rows(3, 4, 4), 0.5);
  const Eigen::MatrixXd d = discriminative_probs(gaussian_rows(7, 4, 5), gaussian_rows(3, 4, 6), 0.5);
  EXPECT_TRUE(ensemble_category_probs(g, d, 0.5).probs.isApprox(
      ensemble_category_probs(d, g, 0.5).probs, 1e-12));
  EXPECT_TRUE(ensemble_category_probs(g, d, 1.0).probs.isApprox(g, 1e-12));
  EXPECT_TRUE(ensemble_category_probs(g, d, 0.0).probs.isApprox(d, 1e-12));
}

TEST(Ensemble, VanishingRowsFallBackToUniform) {
  Eigen::MatrixXd g(2, 2), d(2, 2);
  g << 1, 0, 0.5, 0.5;
  d << 0, 1, 0.5, 0.5;
  const auto r = ensemble_category_probs(g, d, 0.5);
  EXPECT_EQ(r.degenerate_rows, 1);
  EXPECT_DOUBLE_EQ(r.probs(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(r.probs(1, 1), 0.5);
}

TEST(Ensemble, RejectsBadInputs) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Constant(1, 2, 0.5);
  EXPECT_THROW(ensemble_category_probs(g, g, 1.5), Error);
  EXPECT_THROW(ensemble_category_probs(g, Eigen::MatrixXd::Constant(1, 3, 0.3), 0.5), Error);
  EXPECT_THROW(ensemble_category_probs(g, Eigen::MatrixXd::Constant(1, 2, 1.2), 0.5), Error);
}

}  // namespace
}  // namespace ovseg
