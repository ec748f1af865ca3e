#pragma once

// The 2D branch as a data provider: probabilistic masks, mask embeddings and
// generative class probabilities per frame, plus the category ensemble that
// mixes generative and text-embedding (discriminative) probabilities.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ovseg/binary_io.hpp"
#include "ovseg/error.hpp"
#include "ovseg/synth.hpp"

namespace ovseg {

inline constexpr int kDefaultNumQueries = 100;
inline constexpr int kDefaultEmbeddingDim = 256;
inline constexpr double kDefaultTemperature = 0.01;

struct MaskSet2D {
  std::string frame_id;
  int num_masks = 0;
  int height = 0;
  int width = 0;
  int dim = 0;
  int num_categories = 0;
  std::vector<float> masks;       // N*H*W, mask-major, row-major
  std::vector<float> embeddings;  // N*D
  std::vector<float> gen_probs;   // N*C

  MaskSet2D() = default;
  MaskSet2D(int n, int h, int w, int d, int c)
      : num_masks(n), height(h), width(w), dim(d), num_categories(c),
        masks(static_cast<std::size_t>(n) * h * w, 0.0f),
        embeddings(static_cast<std::size_t>(n) * d, 0.0f),
        gen_probs(static_cast<std::size_t>(n) * c, 0.0f) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }

  std::span<float> mask(int i) { return {masks.data() + i * pixels(), pixels()}; }
  std::span<const float> mask(int i) const { return {masks.data() + i * pixels(), pixels()}; }
  float mask_at(int i, int u, int v) const {
    return masks[i * pixels() + static_cast<std::size_t>(v) * width + u];
  }

  std::span<float> embedding(int i) { return {embeddings.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)}; }
  std::span<const float> embedding(int i) const {
    return {embeddings.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<float> gen(int i) {
    return {gen_probs.data() + static_cast<std::size_t>(i) * num_categories, static_cast<std::size_t>(num_categories)};
  }
  std::span<const float> gen(int i) const {
    return {gen_probs.data() + static_cast<std::size_t>(i) * num_categories,
            static_cast<std::size_t>(num_categories)};
  }

  // Padding slots carry an all-zero embedding.
  bool is_padding(int i) const {
    for (float v : embedding(i)) {
      if (v != 0.0f) return false;
    }
    return true;
  }

  Eigen::MatrixXd embedding_matrix() const {
    Eigen::MatrixXd e(num_masks, dim);
    for (int i = 0; i < num_masks; ++i) {
      for (int k = 0; k < dim; ++k) e(i, k) = embeddings[static_cast<std::size_t>(i) * dim + k];
    }
    return e;
  }

  Eigen::MatrixXd generative_probs() const {
    Eigen::MatrixXd p(num_masks, num_categories);
    for (int i = 0; i < num_masks; ++i) {
      for (int c = 0; c < num_categories; ++c) {
        p(i, c) = gen_probs[static_cast<std::size_t>(i) * num_categories + c];
      }
    }
    return p;
  }

  void validate() const {
    const bool shapes = num_masks >= 0 && height > 0 && width > 0 && dim > 0 &&
                        num_categories > 0 &&
                        masks.size() == static_cast<std::size_t>(num_masks) * pixels() &&
                        embeddings.size() == static_cast<std::size_t>(num_masks) * dim &&
                        gen_probs.size() == static_cast<std::size_t>(num_masks) * num_categories;
    if (!shapes) fail("corrupt mask set");
    for (float v : masks) {
      if (!(v >= 0.0f && v <= 1.0f)) fail("invalid probability");
    }
    for (float v : embeddings) {
      if (!std::isfinite(v)) fail("corrupt mask set");
    }
    for (int i = 0; i < num_masks; ++i) {
      double sum = 0.0;
      for (float v : gen(i)) {
        if (!(v >= 0.0f && v <= 1.0f)) fail("invalid probability");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-5) fail("invalid probability");
    }
  }
};

// ---------------------------------------------------------------------------
// Mask-set file: "MSK2", version, N, H, W, D, C, then masks, embeddings and
// generative probabilities as float32.

inline constexpr std::uint32_t kMaskSetVersion = 1;

inline std::vector<char> encode_maskset(const MaskSet2D& m) {
  binary::Writer w;
  w.magic("MSK2");
  w.u32(kMaskSetVersion);
  for (int v : {m.num_masks, m.height, m.width, m.dim, m.num_categories}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.f32s(m.masks);
  w.f32s(m.embeddings);
  w.f32s(m.gen_probs);
  return w.buffer();
}

inline void save_maskset(const std::string& path, const MaskSet2D& m) {
  binary::Writer w;
  auto bytes = encode_maskset(m);
  w.bytes(std::string_view(bytes.data(), bytes.size()));
  w.save(path);
}

inline MaskSet2D decode_maskset(std::span<const char> data) {
  binary::Reader r(data, "corrupt mask set");
  if (!r.has_magic("MSK2")) fail("not a mask-set file");
  if (r.u32() != kMaskSetVersion) fail("corrupt mask set");
  const std::uint32_t n = r.u32(), h = r.u32(), w = r.u32(), d = r.u32(), c = r.u32();
  if (h == 0 || w == 0 || d == 0 || c == 0) fail("corrupt mask set");
  const std::uint64_t floats = std::uint64_t{n} * h * w + std::uint64_t{n} * d + std::uint64_t{n} * c;
  if (floats * 4 != r.remaining()) fail("corrupt mask set");
  MaskSet2D m(static_cast<int>(n), static_cast<int>(h), static_cast<int>(w), static_cast<int>(d),
              static_cast<int>(c));
  r.f32s(m.masks);
  r.f32s(m.embeddings);
  r.f32s(m.gen_probs);
  m.validate();
  return m;
}

inline MaskSet2D load_maskset(const std::string& path) {
  auto data = binary::read_file(path);
  return decode_maskset(data);
}

// ---------------------------------------------------------------------------
// Embedding table file: "EMB1", C, D, C length-prefixed names, C*D float32,
// C group codes.

inline void save_category_table(const std::string& path, const CategoryTable& t) {
  t.validate();
  binary::Writer w;
  w.magic("EMB1");
  w.u32(static_cast<std::uint32_t>(t.size()));
  w.u32(static_cast<std::uint32_t>(t.dim()));
  for (const auto& name : t.names) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
  }
  for (Eigen::Index i = 0; i < t.prototypes.rows(); ++i) {
    for (Eigen::Index k = 0; k < t.prototypes.cols(); ++k) {
      w.f32(static_cast<float>(t.prototypes(i, k)));
    }
  }
  for (auto g : t.groups) w.u8(static_cast<std::uint8_t>(g));
  w.save(path);
}

inline CategoryTable load_category_table(const std::string& path) {
  auto data = binary::read_file(path);
  binary::Reader r(data, "corrupt embedding table: " + path);
  if (!r.has_magic("EMB1")) fail("not an embedding table file: " + path);
  const std::uint32_t c = r.u32(), d = r.u32();
  CategoryTable t;
  for (std::uint32_t i = 0; i < c; ++i) t.names.push_back(r.bytes(r.u32()));
  t.prototypes.resize(c, d);
  for (std::uint32_t i = 0; i < c; ++i) {
    for (std::uint32_t k = 0; k < d; ++k) t.prototypes(i, k) = r.f32();
  }
  for (std::uint32_t i = 0; i < c; ++i) {
    const auto g = r.u8();
    if (g > 1) fail("corrupt embedding table: " + path);
    t.groups.push_back(static_cast<Group>(g));
  }
  if (r.remaining() != 0) fail("corrupt embedding table: " + path);
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Oracle provider

struct OracleNoise {
  double mask_blur = 0.0;        // Gaussian sigma, pixels
  double embedding_noise = 0.0;  // per-component sigma before renormalization
  double confusion = 0.0;        // mixing weight of the uniform distribution
};

// Separable sampled-Gaussian blur with radius ceil(3 sigma), replicated
// borders. sigma == 0 is the identity.
inline std::vector<float> gaussian_blur(std::span<const float> image, int width, int height,
                                        double sigma) {
  std::vector<float> out(image.begin(), image.end());
  if (sigma <= 0.0) return out;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (auto& k : kernel) k /= total;
  std::vector<double> tmp(image.size());
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int uu = std::clamp(u + k, 0, width - 1);
        acc += kernel[k + radius] * image[static_cast<std::size_t>(v) * width + uu];
      }
      tmp[static_cast<std::size_t>(v) * width + u] = acc;
    }
  }
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int vv = std::clamp(v + k, 0, height - 1);
        acc += kernel[k + radius] * tmp[static_cast<std::size_t>(vv) * width + u];
      }
      out[static_cast<std::size_t>(v) * width + u] =
          static_cast<float>(std::clamp(acc, 0.0, 1.0));
    }
  }
  return out;
}

// One mask per category visible in the frame's ground-truth rendering, in
// ascending category order, padded with empty slots up to num_queries.
inline MaskSet2D oracle_maskset(const SceneSpec& spec, const PosedFrame& frame,
                                const CategoryTable& table, const OracleNoise& noise,
                                std::uint64_t seed, int num_queries = kDefaultNumQueries) {
  require(noise.mask_blur >= 0 && noise.embedding_noise >= 0 && noise.confusion >= 0 &&
              noise.confusion <= 1,
          "oracle noise parameters must be non-negative");
  require(table.size() == spec.num_categories(), "oracle: category table does not match scene");
  const int c_count = static_cast<int>(table.size());
  const int dim = table.dim();
  MaskSet2D m(num_queries, frame.height(), frame.width(), dim, c_count);
  m.frame_id = frame.frame_id;

  const auto gt = render_gt_masks(spec, frame);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  int slot = 0;
  for (int c = 0; c < c_count && slot < num_queries; ++c) {
    bool present = false;
    for (auto b : gt[c]) present = present || b;
    if (!present) continue;
    std::vector<float> binary_mask(gt[c].begin(), gt[c].end());
    auto blurred = gaussian_blur(binary_mask, m.width, m.height, noise.mask_blur);
    std::copy(blurred.begin(), blurred.end(), m.mask(slot).begin());

    Eigen::VectorXd e = table.prototypes.row(c).transpose();
    if (noise.embedding_noise > 0.0) {
      for (int k = 0; k < dim; ++k) e[k] += noise.embedding_noise * normal(rng);
    }
    e.normalize();
    for (int k = 0; k < dim; ++k) m.embedding(slot)[k] = static_cast<float>(e[k]);

    for (int k = 0; k < c_count; ++k) {
      m.gen(slot)[k] = static_cast<float>((k == c ? 1.0 - noise.confusion : 0.0) +
                                          noise.confusion / c_count);
    }
    ++slot;
  }
  for (; slot < num_queries; ++slot) {
    for (auto& v : m.gen(slot)) v = 1.0f / static_cast<float>(c_count);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Category probabilities

// Softmax over cosine similarity to each prototype, divided by tau. Rows for
// zero embeddings are uniform.
inline Eigen::MatrixXd discriminative_probs(const Eigen::MatrixXd& embeddings,
                                            const Eigen::MatrixXd& prototypes, double tau) {
  require(tau > 0.0, "temperature must be positive");
  require(embeddings.cols() == prototypes.cols(),
          "embedding dimension does not match the category table");
  const Eigen::Index n = embeddings.rows();
  const Eigen::Index c = prototypes.rows();
  Eigen::VectorXd proto_norm = prototypes.rowwise().norm();
  Eigen::MatrixXd p(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double en = embeddings.row(i).norm();
    if (en == 0.0) {
      p.row(i).setConstant(1.0 / static_cast<double>(c));
      continue;
    }
    Eigen::VectorXd logits(c);
    for (Eigen::Index k = 0; k < c; ++k) {
      const double denom = en * proto_norm[k];
      logits[k] = denom > 0.0 ? embeddings.row(i).dot(prototypes.row(k)) / denom / tau : 0.0;
    }
    const double mx = logits.maxCoeff();
    Eigen::VectorXd ex = (logits.array() - mx).exp();
    p.row(i) = (ex / ex.sum()).transpose();
  }
  return p;
}

inline Eigen::MatrixXd discriminative_probs(const MaskSet2D& maskset, const CategoryTable& table,
                                            double tau = kDefaultTemperature) {
  require(maskset.dim == table.dim(), "embedding dimension does not match the category table");
  return discriminative_probs(maskset.embedding_matrix(), table.prototypes, tau);
}

struct CategoryProbs {
  Eigen::MatrixXd probs;  // N x C, rows sum to 1
  int degenerate_rows = 0;
};

// Weighted geometric mean p_gen^alpha * p_dis^(1-alpha), renormalized per row.
// Rows whose product vanishes everywhere fall back to uniform and are counted.
inline CategoryProbs ensemble_category_probs(const Eigen::MatrixXd& p_gen,
                                             const Eigen::MatrixXd& p_dis, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0,1]");
  require(p_gen.rows() == p_dis.rows() && p_gen.cols() == p_dis.cols(),
          "ensemble inputs differ in shape");
  require((p_gen.array() >= 0.0).all() && (p_gen.array() <= 1.0).all() &&
              (p_dis.array() >= 0.0).all() && (p_dis.array() <= 1.0).all(),
          "ensemble inputs must lie in [0,1]");
  CategoryProbs out;
  out.probs.resize(p_gen.rows(), p_gen.cols());
  for (Eigen::Index i = 0; i < p_gen.rows(); ++i) {
    double total = 0.0;
    for (Eigen::Index c = 0; c < p_gen.cols(); ++c) {
      const double q = std::pow(p_gen(i, c), alpha) * std::pow(p_dis(i, c), 1.0 - alpha);
      out.probs(i, c) = q;
      total += q;
    }
    if (total > 0.0) {
      out.probs.row(i) /= total;
    } else {
      out.probs.row(i).setConstant(1.0 / static_cast<double>(p_gen.cols()));
      ++out.degenerate_rows;
    }
  }
  return out;
}

}  // namespace ovseg
