#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ovseg/error.hpp"
#include "ovseg/synth.hpp"

namespace ovseg {

inline constexpr std::uint16_t kIgnoreLabel = 65535;

// Rows are ground truth, columns predictions.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::uint64_t> counts;
  std::uint64_t ignored = 0;

  explicit ConfusionMatrix(int c = 0)
      : num_classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}

  std::uint64_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt) * num_classes + pred];
  }
  std::uint64_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt) * num_classes + pred];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }
};

inline ConfusionMatrix confusion_matrix(std::span<const std::uint16_t> pred,
                                        std::span<const std::uint16_t> gt, int num_classes,
                                        std::uint16_t ignore_label = kIgnoreLabel) {
  require(num_classes >= 1, "confusion matrix needs at least one class");
  require(pred.size() == gt.size(), "prediction and ground truth differ in length");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_label) {
      ++cm.ignored;
      continue;
    }
    if (gt[i] >= num_classes || pred[i] >= num_classes) {
      fail("label out of range at index " + std::to_string(i));
    }
    ++cm.at(gt[i], pred[i]);
  }
  return cm;
}

struct IoUReport {
  std::vector<std::optional<double>> per_class;  // empty when the union is zero
  double mean = 0.0;
};

inline IoUReport miou(const ConfusionMatrix& cm) {
  IoUReport r;
  r.per_class.resize(cm.num_classes);
  double sum = 0.0;
  int valid = 0;
  for (int c = 0; c < cm.num_classes; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int k = 0; k < cm.num_classes; ++k) {
      if (k == c) continue;
      fp += cm.at(k, c);
      fn += cm.at(c, k);
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    r.per_class[c] = static_cast<double>(tp) / static_cast<double>(uni);
    sum += *r.per_class[c];
    ++valid;
  }
  if (valid == 0) fail("no valid classes");
  r.mean = sum / valid;
  return r;
}

// Mean IoU per group over classes with a defined IoU. Groups without any such
// class are absent from the result.
inline std::map<Group, double> grouped_miou(std::span<const std::optional<double>> per_class,
                                            std::span<const Group> groups) {
  require(groups.size() >= per_class.size(), "group assignment does not cover all classes");
  std::map<Group, std::pair<double, int>> acc;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (!per_class[c]) continue;
    auto& [s, n] = acc[groups[c]];
    s += *per_class[c];
    ++n;
  }
  std::map<Group, double> out;
  for (const auto& [g, sn] : acc) out[g] = sn.first / sn.second;
  return out;
}

struct CoverageStats {
  std::size_t total_points = 0;
  std::size_t evaluated_points = 0;
  std::size_t covered_points = 0;
};

inline nlohmann::json metrics_report(const IoUReport& r, const CategoryTable& table,
                                     const CoverageStats& cov) {
  nlohmann::json j;
  j["classes"] = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    nlohmann::json e;
    e["name"] = c < table.names.size() ? table.names[c] : std::to_string(c);
    e["iou"] = r.per_class[c] ? nlohmann::json(*r.per_class[c]) : nlohmann::json(nullptr);
    j["classes"].push_back(e);
  }
  j["miou"] = r.mean;
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& [g, v] : grouped_miou(r.per_class, table.groups)) groups[group_name(g)] = v;
  j["groups"] = groups;
  j["coverage"] = {{"total_points", cov.total_points},
                   {"evaluated_points", cov.evaluated_points},
                   {"covered_points", cov.covered_points}};
  return j;
}

}  // namespace ovseg
