#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iclabel/labels.hpp"

// Evaluation of compositional predictions against compositional targets. All
// functions accept any category count K >= 2 so merged labels work unchanged.
namespace iclabel::metrics {

struct EvalPair {
  std::vector<double> target;
  std::vector<double> prediction;
};

EvalPair make_pair(const LabelVector& target, const LabelVector& prediction);

// Category count shared by every pair. Throws Errc::empty_input on no pairs and
// Errc::shape_mismatch when lengths differ.
std::size_t category_count(std::span<const EvalPair> pairs);

struct BalancedAccuracy {
  double value = 0.0;
  std::vector<double> recall;          // NaN for excluded categories
  std::vector<std::size_t> excluded;   // categories with no target examples
};

BalancedAccuracy balanced_accuracy(std::span<const EvalPair> pairs);

// Mean over examples of -sum_i t_i log p_i, with p clamped at 1e-12.
double cross_entropy(std::span<const EvalPair> pairs);

struct HardConfusion {
  Eigen::MatrixXd counts;
  Eigen::MatrixXd normalized;      // rows with no examples stay zero
  std::vector<bool> empty_rows;
};

HardConfusion confusion_matrix(std::span<const EvalPair> pairs);

enum class AndMode { strong, product, weak };
inline constexpr std::array<AndMode, 3> kAndModes = {AndMode::strong, AndMode::product,
                                                     AndMode::weak};
std::string_view to_string(AndMode mode);

// strong: max(0, x + y - 1); product: x y; weak: min(x, y).
double soft_and(double x, double y, AndMode mode);

// Entry (i, j) = sum_n soft_and(t_i, p_j).
Eigen::MatrixXd soft_confusion(std::span<const EvalPair> pairs, AndMode mode);

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

struct RocCurve {
  std::size_t category = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::vector<RocPoint> points;  // ascending threshold

  // Trapezoidal area.
  double auc() const;
};

// Thresholds: 0, every distinct predicted score, and one value above 1.
RocCurve roc_curve(std::span<const EvalPair> pairs, std::size_t category);

struct SocPoint {
  double fpr;
  double tpr;
};

// One point per soft-AND mode, in strong, product, weak order. Rates are
// normalized by reference (target) mass.
std::array<SocPoint, 3> soc_points(std::span<const EvalPair> pairs, std::size_t category);

// Harmonic mean of precision and recall; 0 when both are 0.
double f1_score(double recall, double precision);

// FPR on the F1 isometric through the given TPR, for a data set with
// `positives` and `negatives` examples. May fall outside [0, 1].
double f1_isometric_fpr(double f1, double tpr, double positives, double negatives);

// (fpr, tpr) polyline of the F1 isometric clipped to the unit square.
std::vector<SocPoint> f1_isometric(double f1, double positives, double negatives,
                                   std::size_t samples = 101);

enum class Criterion { f1, accuracy };
std::string_view to_string(Criterion c);

struct ThresholdSet {
  std::vector<double> thresholds;
  std::string provenance;
};

// The ROC candidate threshold in [0, 1] maximizing the criterion for one
// category. Ties go to the larger threshold.
double optimal_threshold(std::span<const EvalPair> pairs, std::size_t category, Criterion criterion);

// optimal_threshold for every category.
ThresholdSet optimal_thresholds(std::span<const EvalPair> pairs, Criterion criterion);

// Every category whose probability meets or exceeds its threshold.
std::vector<std::size_t> detect_multilabel(std::span<const double> label,
                                           const ThresholdSet& thresholds);

// Named threshold tables for the full 7-category classifier:
// iclabel_{train,test}_{f1,accuracy} and iclabel_lite_{train,test}_{f1,accuracy}.
ThresholdSet preset_thresholds(std::string_view name);
std::vector<std::string_view> preset_names();

// Category groups: output k is the sum of input entries in groups[k].
using Grouping = std::vector<std::vector<std::size_t>>;

enum class MergeScheme { none, five, two };

// Parses "7", "5" or "2".
MergeScheme merge_scheme_from_count(int classes);
Grouping grouping_for(MergeScheme scheme);
std::vector<std::string> merged_names(MergeScheme scheme);

std::vector<double> merge_classes(std::span<const double> label, const Grouping& groups);
std::vector<double> merge_classes(const LabelVector& label, MergeScheme scheme);

}  // namespace iclabel::metrics
