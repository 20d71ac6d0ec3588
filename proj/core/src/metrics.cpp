#include "iclabel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "iclabel/error.hpp"

namespace iclabel::metrics {
namespace {

constexpr double kClamp = 1e-12;
constexpr double kAboveOne = 1.0 + 1e-9;

struct Preset {
  std::string_view name;
  std::array<double, kNumCategories> values;
};

constexpr std::array<Preset, 8> kPresets = {{
    {"iclabel_train_f1", {0.40, 0.18, 0.13, 0.33, 0.04, 0.10, 0.12}},
    {"iclabel_train_accuracy", {0.44, 0.18, 0.13, 0.33, 0.04, 0.13, 0.15}},
    {"iclabel_test_f1", {0.14, 0.29, 0.04, 0.03, 0.84, 0.05, 0.26}},
    {"iclabel_test_accuracy", {0.35, 0.30, 0.04, 0.03, 0.84, 0.05, 0.26}},
    {"iclabel_lite_train_f1", {0.39, 0.16, 0.18, 0.44, 0.05, 0.08, 0.11}},
    {"iclabel_lite_train_accuracy", {0.49, 0.16, 0.18, 0.44, 0.06, 0.08, 0.17}},
    {"iclabel_lite_test_f1", {0.05, 0.04, 0.06, 0.10, 0.42, 0.02, 0.29}},
    {"iclabel_lite_test_accuracy", {0.53, 0.17, 0.06, 0.10, 0.42, 0.15, 0.29}},
}};

std::vector<std::size_t> target_classes(std::span<const EvalPair> pairs) {
  std::vector<std::size_t> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(argmax(p.target));
  return out;
}

double criterion_value(Criterion c, const RocPoint& pt, double positives, double negatives) {
  const double tp = pt.tpr * positives;
  const double fp = pt.fpr * negatives;
  if (c == Criterion::accuracy) {
    const double tn = negatives - fp;
    return (tp + tn) / (positives + negatives);
  }
  const double precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
  return f1_score(pt.tpr, precision);
}

}  // namespace

EvalPair make_pair(const LabelVector& target, const LabelVector& prediction) {
  return {std::vector<double>(target.p.begin(), target.p.end()),
          std::vector<double>(prediction.p.begin(), prediction.p.end())};
}

std::size_t category_count(std::span<const EvalPair> pairs) {
  if (pairs.empty()) throw Error(Errc::empty_input, "no evaluation pairs");
  const std::size_t k = pairs.front().target.size();
  if (k < 2) throw Error(Errc::shape_mismatch, "labels need at least 2 categories");
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    if (pairs[n].target.size() != k || pairs[n].prediction.size() != k) {
      throw Error(Errc::shape_mismatch, "pair " + std::to_string(n) + " has " +
                                            std::to_string(pairs[n].target.size()) + "/" +
                                            std::to_string(pairs[n].prediction.size()) +
                                            " entries, expected " + std::to_string(k));
    }
  }
  return k;
}

BalancedAccuracy balanced_accuracy(std::span<const EvalPair> pairs) {
  const std::size_t k = category_count(pairs);
  std::vector<double> total(k, 0.0);
  std::vector<double> hit(k, 0.0);
  for (const auto& p : pairs) {
    const std::size_t t = argmax(p.target);
    total[t] += 1.0;
    if (argmax(p.prediction) == t) hit[t] += 1.0;
  }
  BalancedAccuracy out;
  out.recall.assign(k, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (total[i] == 0.0) {
      out.excluded.push_back(i);
      continue;
    }
    out.recall[i] = hit[i] / total[i];
    sum += out.recall[i];
    ++used;
  }
  out.value = sum / static_cast<double>(used);
  return out;
}

double cross_entropy(std::span<const EvalPair> pairs) {
  const std::size_t k = category_count(pairs);
  double total = 0.0;
  for (const auto& p : pairs) {
    for (std::size_t i = 0; i < k; ++i) {
      if (p.target[i] == 0.0) continue;
      total -= p.target[i] * std::log(std::max(p.prediction[i], kClamp));
    }
  }
  return total / static_cast<double>(pairs.size());
}

HardConfusion confusion_matrix(std::span<const EvalPair> pairs) {
  const auto k = static_cast<Eigen::Index>(category_count(pairs));
  HardConfusion out;
  out.counts = Eigen::MatrixXd::Zero(k, k);
  for (const auto& p : pairs) {
    out.counts(static_cast<Eigen::Index>(argmax(p.target)),
               static_cast<Eigen::Index>(argmax(p.prediction))) += 1.0;
  }
  out.normalized = Eigen::MatrixXd::Zero(k, k);
  out.empty_rows.assign(static_cast<std::size_t>(k), false);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double row = out.counts.row(i).sum();
    if (row == 0.0) {
      out.empty_rows[static_cast<std::size_t>(i)] = true;
      continue;
    }
    out.normalized.row(i) = out.counts.row(i) / row;
  }
  return out;
}

std::string_view to_string(AndMode mode) {
  switch (mode) {
    case AndMode::strong: return "strong";
    case AndMode::product: return "product";
    case AndMode::weak: return "weak";
  }
  return "unknown";
}

double soft_and(double x, double y, AndMode mode) {
  switch (mode) {
    case AndMode::strong: return std::max(0.0, x + y - 1.0);
    case AndMode::product: return x * y;
    case AndMode::weak: return std::min(x, y);
  }
  return 0.0;
}

Eigen::MatrixXd soft_confusion(std::span<const EvalPair> pairs, AndMode mode) {
  const std::size_t k = category_count(pairs);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k),
                                            static_cast<Eigen::Index>(k));
  for (const auto& p : pairs) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +=
            soft_and(p.target[i], p.prediction[j], mode);
      }
    }
  }
  return m;
}

double RocCurve::auc() const {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i - 1].fpr - points[i].fpr) * (points[i - 1].tpr + points[i].tpr) / 2.0;
  }
  return area;
}

RocCurve roc_curve(std::span<const EvalPair> pairs, std::size_t category) {
  const std::size_t k = category_count(pairs);
  if (category >= k) {
    throw Error(Errc::invalid_argument, "category " + std::to_string(category) + " out of range");
  }
  const auto classes = target_classes(pairs);

  // (score, is_positive), sorted descending by score.
  std::vector<std::pair<double, bool>> scored;
  scored.reserve(pairs.size());
  RocCurve curve;
  curve.category = category;
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    const bool positive = classes[n] == category;
    scored.emplace_back(pairs[n].prediction[category], positive);
    (positive ? curve.positives : curve.negatives) += 1;
  }
  if (curve.positives == 0) {
    throw Error(Errc::undefined_curve,
                "category " + std::to_string(category) + " has no positive examples");
  }
  if (curve.negatives == 0) {
    throw Error(Errc::undefined_curve,
                "category " + std::to_string(category) + " has no negative examples");
  }
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  const double pos = static_cast<double>(curve.positives);
  const double neg = static_cast<double>(curve.negatives);
  // Walk thresholds from high to low; at each distinct score every example with
  // an equal or higher score is detected.
  std::vector<RocPoint> descending;
  descending.push_back({kAboveOne, 0.0, 0.0});
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t n = 0;
  while (n < scored.size()) {
    const double score = scored[n].first;
    while (n < scored.size() && scored[n].first == score) {
      (scored[n].second ? tp : fp) += 1;
      ++n;
    }
    if (score > 0.0 && score <= 1.0) {
      descending.push_back({score, static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
    } else if (score > 1.0) {
      descending.back() = {kAboveOne, static_cast<double>(fp) / neg, static_cast<double>(tp) / pos};
    }
  }
  descending.push_back({0.0, 1.0, 1.0});
  curve.points.assign(descending.rbegin(), descending.rend());
  return curve;
}

std::array<SocPoint, 3> soc_points(std::span<const EvalPair> pairs, std::size_t category) {
  const std::size_t k = category_count(pairs);
  if (category >= k) {
    throw Error(Errc::invalid_argument, "category " + std::to_string(category) + " out of range");
  }
  std::vector<double> mass(k, 0.0);
  for (const auto& p : pairs) {
    for (std::size_t i = 0; i < k; ++i) mass[i] += p.target[i];
  }
  const double positive_mass = mass[category];
  double negative_mass = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (i != category) negative_mass += mass[i];
  }
  if (positive_mass <= 0.0) {
    throw Error(Errc::undefined_point,
                "category " + std::to_string(category) + " has no reference mass");
  }
  if (negative_mass <= 0.0) {
    throw Error(Errc::undefined_point,
                "category " + std::to_string(category) + " has no negative reference mass");
  }
  std::array<SocPoint, 3> out{};
  const auto c = static_cast<Eigen::Index>(category);
  for (std::size_t m = 0; m < kAndModes.size(); ++m) {
    const auto sc = soft_confusion(pairs, kAndModes[m]);
    const double off_column = sc.col(c).sum() - sc(c, c);
    out[m] = {off_column / negative_mass, sc(c, c) / positive_mass};
  }
  return out;
}

double f1_score(double recall, double precision) {
  if (recall + precision == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double f1_isometric_fpr(double f1, double tpr, double positives, double negatives) {
  return positives / negatives * (tpr * (2.0 / f1 - 1.0) - 1.0);
}

std::vector<SocPoint> f1_isometric(double f1, double positives, double negatives,
                                   std::size_t samples) {
  std::vector<SocPoint> out;
  if (samples < 2) return out;
  for (std::size_t s = 0; s < samples; ++s) {
    const double tpr = static_cast<double>(s) / static_cast<double>(samples - 1);
    const double fpr = f1_isometric_fpr(f1, tpr, positives, negatives);
    if (fpr < 0.0 || fpr > 1.0) continue;
    out.push_back({fpr, tpr});
  }
  return out;
}

std::string_view to_string(Criterion c) { return c == Criterion::f1 ? "f1" : "accuracy"; }

double optimal_threshold(std::span<const EvalPair> pairs, std::size_t category,
                         Criterion criterion) {
  const auto curve = roc_curve(pairs, category);
  const double pos = static_cast<double>(curve.positives);
  const double neg = static_cast<double>(curve.negatives);
  double best_value = -1.0;
  double best_theta = 0.0;
  for (const auto& pt : curve.points) {
    RocPoint at = pt;
    if (pt.threshold > 1.0) {
      // Clamped to 1, the top candidate detects scores equal to 1.
      double tp = 0.0;
      double fp = 0.0;
      for (const auto& p : pairs) {
        if (p.prediction[category] < 1.0) continue;
        (argmax(p.target) == category ? tp : fp) += 1.0;
      }
      at = {1.0, fp / neg, tp / pos};
    }
    const double value = criterion_value(criterion, at, pos, neg);
    if (value >= best_value) {
      best_value = value;
      best_theta = at.threshold;
    }
  }
  return best_theta;
}

ThresholdSet optimal_thresholds(std::span<const EvalPair> pairs, Criterion criterion) {
  const std::size_t k = category_count(pairs);
  ThresholdSet out;
  out.provenance = "max " + std::string(to_string(criterion)) + " over " +
                   std::to_string(pairs.size()) + " examples";
  for (std::size_t c = 0; c < k; ++c) out.thresholds.push_back(optimal_threshold(pairs, c, criterion));
  return out;
}

std::vector<std::size_t> detect_multilabel(std::span<const double> label,
                                           const ThresholdSet& thresholds) {
  if (label.size() != thresholds.thresholds.size()) {
    throw Error(Errc::shape_mismatch, "label has " + std::to_string(label.size()) +
                                          " entries but " +
                                          std::to_string(thresholds.thresholds.size()) +
                                          " thresholds were given");
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] >= thresholds.thresholds[i]) out.push_back(i);
  }
  return out;
}

ThresholdSet preset_thresholds(std::string_view name) {
  for (const auto& p : kPresets) {
    if (p.name == name) {
      return {std::vector<double>(p.values.begin(), p.values.end()), std::string(name)};
    }
  }
  throw Error(Errc::invalid_argument, "unknown threshold preset " + std::string(name));
}

std::vector<std::string_view> preset_names() {
  std::vector<std::string_view> out;
  for (const auto& p : kPresets) out.push_back(p.name);
  return out;
}

MergeScheme merge_scheme_from_count(int classes) {
  switch (classes) {
    case 7: return MergeScheme::none;
    case 5: return MergeScheme::five;
    case 2: return MergeScheme::two;
    default:
      throw Error(Errc::usage, "class count must be 7, 5 or 2, got " + std::to_string(classes));
  }
}

Grouping grouping_for(MergeScheme scheme) {
  switch (scheme) {
    case MergeScheme::none: return {{0}, {1}, {2}, {3}, {4}, {5}, {6}};
    case MergeScheme::five: return {{0}, {1}, {2}, {3}, {4, 5, 6}};
    case MergeScheme::two: return {{0}, {1, 2, 3, 4, 5, 6}};
  }
  return {};
}

std::vector<std::string> merged_names(MergeScheme scheme) {
  switch (scheme) {
    case MergeScheme::none: return {kCategoryKeys.begin(), kCategoryKeys.end()};
    case MergeScheme::five: return {"brain", "muscle", "eye", "heart", "other"};
    case MergeScheme::two: return {"brain", "other"};
  }
  return {};
}

std::vector<double> merge_classes(std::span<const double> label, const Grouping& groups) {
  std::vector<bool> used(label.size(), false);
  std::vector<double> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    double sum = 0.0;
    for (std::size_t i : g) {
      if (i >= label.size() || used[i]) {
        throw Error(Errc::invalid_argument, "merge grouping is not a partition of the labels");
      }
      used[i] = true;
      sum += label[i];
    }
    out.push_back(sum);
  }
  if (std::find(used.begin(), used.end(), false) != used.end()) {
    throw Error(Errc::invalid_argument, "merge grouping leaves categories unassigned");
  }
  return out;
}

std::vector<double> merge_classes(const LabelVector& label, MergeScheme scheme) {
  return merge_classes(std::span<const double>(label.p), grouping_for(scheme));
}

}  // namespace iclabel::metrics
