#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iclabel/crowdlabel.hpp"
#include "iclabel/error.hpp"
#include "iclabel/io.hpp"
#include "iclabel/metrics.hpp"
#include "iclabel/network.hpp"

// In-memory implementations of the command-line subcommands. Reports are
// returned as structs plus JSON/SVG renderers so they can be tested without I/O.
namespace iclabel::pipeline {

// Runs fn(0..n-1) on up to `workers` threads (0 = hardware concurrency).
// Exceptions are rethrown for the lowest failing index.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct ComponentFailure {
  std::string component_id;
  Errc code;
  std::string message;
};

struct ExtractResult {
  io::FeatureBundle bundle;                // successfully extracted components, input order
  std::vector<ComponentFailure> failures;  // input order
};

ExtractResult extract_features(const io::RecordingBundle& recording, std::size_t workers = 0);

struct ClassifyOptions {
  bool tta = true;
  metrics::MergeScheme merge = metrics::MergeScheme::none;
  std::optional<metrics::ThresholdSet> thresholds;  // applied to the 7-category output
};

struct ClassifiedComponent {
  std::string component_id;
  LabelVector label;                   // full 7-category output
  std::vector<double> probabilities;   // merged per options
  std::size_t top = 0;                 // argmax of probabilities
  std::vector<std::size_t> detected;   // filled when thresholds are given
};

struct ClassifyReport {
  std::vector<std::string> categories;  // merged column names
  bool tta = true;
  std::optional<metrics::ThresholdSet> thresholds;
  std::vector<ClassifiedComponent> components;
};

ClassifyReport classify_bundle(const nn::NetworkWeights& weights, const io::FeatureBundle& bundle,
                               const ClassifyOptions& options, std::size_t workers = 0);
std::string to_json(const ClassifyReport& report);
io::LabelTable to_label_table(const ClassifyReport& report);

// min(400, n / 5)
std::size_t default_holdout(std::size_t n);

struct Split {
  std::vector<LabeledFeatures> train;
  std::vector<LabeledFeatures> validation;
};

// Seeded shuffle, then the first `holdout` examples become the validation set.
Split holdout_split(std::span<const LabeledFeatures> data, std::size_t holdout, std::uint64_t seed);

struct AggregateOptions {
  crowd::DatasetMode mode = crowd::DatasetMode::training;
  crowd::GibbsConfig gibbs;
  std::size_t chains = 1;
  std::size_t min_components = 10;
};

struct AggregateResult {
  std::size_t submissions = 0;
  std::size_t votes = 0;
  std::size_t votes_kept = 0;
  std::vector<std::string> labelers_dropped;
  std::vector<crowd::CrowdResult> chains;  // chain c uses seed + c
};

// expand -> filter -> fit. Errc::empty_result when no labeler survives filtering.
AggregateResult aggregate(std::span<const crowd::Submission> submissions,
                          const AggregateOptions& options);
std::string to_json(const AggregateResult& result, const AggregateOptions& options);

struct RocSummary {
  std::size_t category = 0;
  std::optional<metrics::RocCurve> curve;  // empty when undefined
  std::string note;
  std::optional<std::array<metrics::SocPoint, 3>> soc;
  std::optional<double> threshold_f1;
  std::optional<double> threshold_accuracy;
};

struct EvaluationReport {
  std::vector<std::string> categories;
  std::size_t n = 0;
  metrics::BalancedAccuracy balanced;
  double cross_entropy = 0.0;
  metrics::HardConfusion confusion;
  std::array<Eigen::MatrixXd, 3> soft;  // strong, product, weak
  std::vector<RocSummary> per_category;
  std::vector<std::string> warnings;
};

// Pairs rows by component id; Errc::id_mismatch lists ids found on one side only.
std::vector<metrics::EvalPair> pair_tables(const io::LabelTable& targets,
                                           const io::LabelTable& predictions,
                                           metrics::MergeScheme merge);
EvaluationReport evaluate(const io::LabelTable& targets, const io::LabelTable& predictions,
                          metrics::MergeScheme merge);
std::string to_json(const EvaluationReport& report);
// ROC curves, SOC points and F1 isometrics (0.9, 0.8, 0.7, 0.6), one panel per category.
std::string to_svg(const EvaluationReport& report);

struct BenchEntry {
  std::string recording_id;
  std::size_t components = 0;
  std::vector<double> repetitions_s;  // total wall time of each repetition
  double total_s = 0.0;               // median repetition
  double per_component_s = 0.0;       // total_s / components
};

struct BenchSummary {
  double median = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct BenchReport {
  std::vector<BenchEntry> entries;
  BenchSummary per_component_s;
  double reference_ms = 170.0;
  double ceiling_s = 2.0;
  std::size_t repetitions = 0;
};

// Linear-interpolation percentile of an unsorted sample, q in [0, 1].
double percentile(std::vector<double> values, double q);

// Times in-memory extract + classify (with test-time averaging) per recording.
BenchReport bench(std::span<const io::RecordingBundle> recordings,
                  const nn::NetworkWeights& weights, std::size_t repetitions,
                  std::size_t workers = 1);
std::string to_json(const BenchReport& report);

}  // namespace iclabel::pipeline
