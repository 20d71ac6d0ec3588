#include "iclabel/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace iclabel::pipeline {
namespace {

using nlohmann::json;

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

json confusion_json(const crowd::ConfusionMatrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::string> category_keys() {
  return {kCategoryKeys.begin(), kCategoryKeys.end()};
}

}  // namespace

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::mutex next_mutex;
  std::size_t next = 0;
  auto run = [&] {
    for (;;) {
      std::size_t i = 0;
      {
        std::lock_guard lock(next_mutex);
        if (next >= n) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

ExtractResult extract_features(const io::RecordingBundle& recording, std::size_t workers) {
  const FeatureExtractor extractor(recording.recording);
  const std::size_t n = extractor.n_components();
  std::vector<std::optional<IcFeatures>> features(n);
  std::vector<std::optional<ComponentFailure>> failures(n);
  parallel_for(n, workers, [&](std::size_t c) {
    try {
      features[c] = extractor(c);
    } catch (const Error& e) {
      failures[c] = ComponentFailure{recording.component_ids[c], e.code(), e.what()};
    }
  });
  ExtractResult out;
  out.bundle.provenance = {recording.id, recording.recording.sample_rate,
                           recording.recording.n_channels()};
  for (std::size_t c = 0; c < n; ++c) {
    if (features[c]) {
      out.bundle.component_ids.push_back(recording.component_ids[c]);
      out.bundle.features.push_back(*features[c]);
    } else {
      out.failures.push_back(*failures[c]);
    }
  }
  return out;
}

ClassifyReport classify_bundle(const nn::NetworkWeights& weights, const io::FeatureBundle& bundle,
                               const ClassifyOptions& options, std::size_t workers) {
  weights.check_shapes();
  if (options.thresholds && options.thresholds->thresholds.size() != kNumCategories) {
    throw Error(Errc::shape_mismatch, "threshold set must have 7 entries");
  }
  ClassifyReport report;
  report.categories = metrics::merged_names(options.merge);
  report.tta = options.tta;
  report.thresholds = options.thresholds;
  report.components.resize(bundle.features.size());
  parallel_for(bundle.features.size(), workers, [&](std::size_t i) {
    auto& out = report.components[i];
    out.component_id = bundle.component_ids[i];
    out.label = options.tta ? nn::classify(weights, bundle.features[i])
                            : nn::forward(weights, bundle.features[i]);
    out.probabilities = metrics::merge_classes(out.label, options.merge);
    out.top = argmax(out.probabilities);
    if (options.thresholds) {
      out.detected = metrics::detect_multilabel(out.label.p, *options.thresholds);
    }
  });
  return report;
}

std::string to_json(const ClassifyReport& report) {
  json j;
  j["categories"] = report.categories;
  j["test_time_augmentation"] = report.tta;
  if (report.thresholds) {
    j["thresholds"] = {{"values", report.thresholds->thresholds},
                       {"provenance", report.thresholds->provenance}};
  }
  json comps = json::array();
  for (const auto& c : report.components) {
    json e;
    e["component_id"] = c.component_id;
    e["probabilities"] = c.probabilities;
    e["category"] = report.categories[c.top];
    e["confidence"] = c.probabilities[c.top];
    if (report.thresholds) {
      json det = json::array();
      for (std::size_t d : c.detected) det.push_back(kCategoryKeys[d]);
      e["detected"] = det;
    }
    comps.push_back(e);
  }
  j["components"] = comps;
  return j.dump(2) + "\n";
}

io::LabelTable to_label_table(const ClassifyReport& report) {
  io::LabelTable t;
  t.columns = report.categories;
  for (const auto& c : report.components) {
    t.component_ids.push_back(c.component_id);
    t.rows.push_back(c.probabilities);
  }
  return t;
}

std::size_t default_holdout(std::size_t n) { return std::min<std::size_t>(400, n / 5); }

Split holdout_split(std::span<const LabeledFeatures> data, std::size_t holdout, std::uint64_t seed) {
  if (holdout == 0 || holdout >= data.size()) {
    throw Error(Errc::configuration, "holdout of " + std::to_string(holdout) + " leaves no " +
                                         (holdout == 0 ? "validation" : "training") +
                                         " examples out of " + std::to_string(data.size()));
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Split s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < holdout ? s.validation : s.train).push_back(data[order[i]]);
  }
  return s;
}

AggregateResult aggregate(std::span<const crowd::Submission> submissions,
                          const AggregateOptions& options) {
  if (options.chains == 0) throw Error(Errc::configuration, "chain count must be positive");
  AggregateResult result;
  result.submissions = submissions.size();
  const auto votes = crowd::expand_submissions(submissions);
  result.votes = votes.size();
  const auto kept = crowd::filter_labelers(votes, options.min_components);
  result.votes_kept = kept.size();
  std::set<std::string> before, after;
  for (const auto& v : votes) before.insert(v.labeler_id);
  for (const auto& v : kept) after.insert(v.labeler_id);
  for (const auto& id : before) {
    if (!after.count(id)) result.labelers_dropped.push_back(id);
  }
  if (kept.empty()) {
    throw Error(Errc::empty_result,
                "no labeler submitted labels for at least " +
                    std::to_string(options.min_components) + " components; nothing to aggregate");
  }
  const auto priors = crowd::assign_priors(kept, options.mode);
  const auto class_prior = crowd::class_prior_for(options.mode);
  result.chains.resize(options.chains);
  parallel_for(options.chains, 0, [&](std::size_t c) {
    auto cfg = options.gibbs;
    cfg.seed = options.gibbs.seed + c;
    result.chains[c] = crowd::cllda_fit(kept, priors, class_prior, cfg);
  });
  return result;
}

std::string to_json(const AggregateResult& result, const AggregateOptions& options) {
  json j;
  j["prior_mode"] = crowd::to_string(options.mode);
  j["burn_in"] = options.gibbs.burn_in;
  j["sampling_epochs"] = options.gibbs.sampling_epochs;
  j["min_components"] = options.min_components;
  j["submissions"] = result.submissions;
  j["votes"] = result.votes;
  j["votes_kept"] = result.votes_kept;
  j["labelers_dropped"] = result.labelers_dropped;
  j["categories"] = category_keys();
  j["responses"] = std::vector<std::string>(crowd::kResponseKeys.begin(), crowd::kResponseKeys.end());
  json chains = json::array();
  for (const auto& r : result.chains) {
    json c;
    c["seed"] = r.seed;
    c["epochs"] = r.epochs;
    json labels = json::array();
    for (std::size_t i = 0; i < r.component_ids.size(); ++i) {
      labels.push_back({{"component_id", r.component_ids[i]},
                        {"label", r.labels[i].p},
                        {"category", kCategoryKeys[static_cast<std::size_t>(r.labels[i].argmax())]}});
    }
    c["labels"] = labels;
    json confusions = json::object();
    for (const auto& [id, m] : r.labeler_confusions) confusions[id] = confusion_json(m);
    c["labeler_confusions"] = confusions;
    chains.push_back(c);
  }
  j["chains"] = chains;
  return j.dump(2) + "\n";
}

std::vector<metrics::EvalPair> pair_tables(const io::LabelTable& targets,
                                           const io::LabelTable& predictions,
                                           metrics::MergeScheme merge) {
  const auto t = io::label_vectors(targets, "targets");
  const auto p = io::label_vectors(predictions, "predictions");
  std::map<std::string, std::size_t> pred_index;
  for (std::size_t i = 0; i < predictions.size(); ++i) pred_index.emplace(predictions.component_ids[i], i);
  std::set<std::string> target_ids(targets.component_ids.begin(), targets.component_ids.end());
  std::vector<std::string> problems;
  for (const auto& id : targets.component_ids) {
    if (!pred_index.count(id)) problems.push_back(id + " (no prediction)");
  }
  for (const auto& id : predictions.component_ids) {
    if (!target_ids.count(id)) problems.push_back(id + " (no target)");
  }
  if (!problems.empty()) {
    std::string msg = "component ids differ between targets and predictions:";
    for (std::size_t i = 0; i < problems.size() && i < 20; ++i) msg += " " + problems[i];
    if (problems.size() > 20) msg += " ...";
    throw Error(Errc::id_mismatch, msg);
  }
  std::vector<metrics::EvalPair> pairs;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    pairs.push_back({metrics::merge_classes(t[i], merge),
                     metrics::merge_classes(p[pred_index.at(targets.component_ids[i])], merge)});
  }
  return pairs;
}

EvaluationReport evaluate(const io::LabelTable& targets, const io::LabelTable& predictions,
                          metrics::MergeScheme merge) {
  const auto pairs = pair_tables(targets, predictions, merge);
  EvaluationReport r;
  r.categories = metrics::merged_names(merge);
  r.n = pairs.size();
  r.balanced = metrics::balanced_accuracy(pairs);
  for (std::size_t c : r.balanced.excluded) {
    r.warnings.push_back("category " + r.categories[c] +
                         " has no target examples and is excluded from balanced accuracy");
  }
  r.cross_entropy = metrics::cross_entropy(pairs);
  r.confusion = metrics::confusion_matrix(pairs);
  for (std::size_t m = 0; m < 3; ++m) r.soft[m] = metrics::soft_confusion(pairs, metrics::kAndModes[m]);
  for (std::size_t c = 0; c < r.categories.size(); ++c) {
    RocSummary s;
    s.category = c;
    try {
      s.curve = metrics::roc_curve(pairs, c);
      s.threshold_f1 = metrics::optimal_threshold(pairs, c, metrics::Criterion::f1);
      s.threshold_accuracy = metrics::optimal_threshold(pairs, c, metrics::Criterion::accuracy);
    } catch (const Error& e) {
      if (e.code() != Errc::undefined_curve) throw;
      s.note = e.what();
      r.warnings.push_back("ROC for " + r.categories[c] + " undefined: " + e.what());
    }
    try {
      s.soc = metrics::soc_points(pairs, c);
    } catch (const Error& e) {
      if (e.code() != Errc::undefined_point) throw;
      r.warnings.push_back("SOC for " + r.categories[c] + " undefined: " + e.what());
    }
    r.per_category.push_back(std::move(s));
  }
  return r;
}

std::string to_json(const EvaluationReport& r) {
  json j;
  j["categories"] = r.categories;
  j["n"] = r.n;
  j["balanced_accuracy"] = r.balanced.value;
  json recall = json::array();
  for (double v : r.balanced.recall) recall.push_back(std::isnan(v) ? json(nullptr) : json(v));
  j["recall"] = recall;
  j["cross_entropy"] = r.cross_entropy;
  j["cross_entropy_convention"] = "mean over examples of -sum_i t_i log p_i (p clamped at 1e-12)";
  j["confusion_matrix"] = {{"counts", matrix_json(r.confusion.counts)},
                           {"normalized", matrix_json(r.confusion.normalized)},
                           {"empty_rows", r.confusion.empty_rows}};
  json soft;
  for (std::size_t m = 0; m < 3; ++m) soft[std::string(to_string(metrics::kAndModes[m]))] = matrix_json(r.soft[m]);
  j["soft_confusion"] = soft;
  json per = json::array();
  for (const auto& s : r.per_category) {
    json e;
    e["category"] = r.categories[s.category];
    if (s.curve) {
      json pts = json::array();
      for (const auto& p : s.curve->points) pts.push_back({p.threshold, p.fpr, p.tpr});
      e["roc"] = {{"points", pts},
                  {"auc", s.curve->auc()},
                  {"positives", s.curve->positives},
                  {"negatives", s.curve->negatives}};
      e["threshold_f1"] = *s.threshold_f1;
      e["threshold_accuracy"] = *s.threshold_accuracy;
    } else {
      e["roc"] = nullptr;
      e["note"] = s.note;
    }
    if (s.soc) {
      json soc = json::object();
      for (std::size_t m = 0; m < 3; ++m) {
        soc[std::string(to_string(metrics::kAndModes[m]))] = {{"fpr", (*s.soc)[m].fpr},
                                                             {"tpr", (*s.soc)[m].tpr}};
      }
      e["soc"] = soc;
    } else {
      e["soc"] = nullptr;
    }
    per.push_back(e);
  }
  j["per_category"] = per;
  j["warnings"] = r.warnings;
  return j.dump(2) + "\n";
}

std::string to_svg(const EvaluationReport& r) {
  constexpr double panel = 220.0;
  constexpr double margin = 30.0;
  const std::size_t k = r.per_category.size();
  const std::size_t cols = std::min<std::size_t>(k, 4);
  const std::size_t rows = (k + cols - 1) / cols;
  std::ostringstream svg;
  svg.precision(5);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cols * (panel + margin) + margin
      << "\" height=\"" << rows * (panel + 2 * margin) + margin << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t c = 0; c < k; ++c) {
    const auto& s = r.per_category[c];
    const double x0 = margin + static_cast<double>(c % cols) * (panel + margin);
    const double y0 = margin + static_cast<double>(c / cols) * (panel + 2 * margin);
    auto px = [&](double fpr) { return x0 + fpr * panel; };
    auto py = [&](double tpr) { return y0 + (1.0 - tpr) * panel; };
    svg << "<g>\n<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << panel << "\" height=\""
        << panel << "\" fill=\"none\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << x0 << "\" y=\"" << y0 - 6 << "\">" << r.categories[s.category] << "</text>\n";
    if (s.curve) {
      const auto pos = static_cast<double>(s.curve->positives);
      const auto neg = static_cast<double>(s.curve->negatives);
      for (double f1 : {0.9, 0.8, 0.7, 0.6}) {
        const auto line = metrics::f1_isometric(f1, pos, neg);
        if (line.size() < 2) continue;
        svg << "<polyline fill=\"none\" stroke=\"#bbbbbb\" points=\"";
        for (const auto& p : line) svg << px(p.fpr) << ',' << py(p.tpr) << ' ';
        svg << "\"/>\n";
      }
      svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
      for (const auto& p : s.curve->points) svg << px(p.fpr) << ',' << py(p.tpr) << ' ';
      svg << "\"/>\n";
      svg << "<text x=\"" << x0 + 4 << "\" y=\"" << y0 + panel - 6 << "\">AUC "
          << s.curve->auc() << "</text>\n";
    } else {
      svg << "<text x=\"" << x0 + 4 << "\" y=\"" << y0 + panel / 2 << "\">undefined</text>\n";
    }
    if (s.soc) {
      svg << "<polyline fill=\"none\" stroke=\"#d62728\" points=\"";
      for (const auto& p : *s.soc) svg << px(p.fpr) << ',' << py(p.tpr) << ' ';
      svg << "\"/>\n";
      for (const auto& p : *s.soc) {
        svg << "<circle cx=\"" << px(p.fpr) << "\" cy=\"" << py(p.tpr)
            << "\" r=\"3\" fill=\"#d62728\"/>\n";
      }
    }
    svg << "<text x=\"" << x0 + panel / 2 - 10 << "\" y=\"" << y0 + panel + 14 << "\">FPR</text>\n";
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(Errc::empty_input, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

BenchReport bench(std::span<const io::RecordingBundle> recordings,
                  const nn::NetworkWeights& weights, std::size_t repetitions,
                  std::size_t workers) {
  if (recordings.empty()) throw Error(Errc::empty_input, "bench needs at least one recording");
  if (repetitions == 0) throw Error(Errc::configuration, "repetitions must be positive");
  weights.check_shapes();
  BenchReport report;
  report.repetitions = repetitions;
  std::vector<double> per_component;
  for (const auto& rec : recordings) {
    BenchEntry entry;
    entry.recording_id = rec.id;
    entry.components = rec.recording.n_components();
    for (std::size_t r = 0; r < repetitions; ++r) {
      const auto start = std::chrono::steady_clock::now();
      const auto extracted = extract_features(rec, workers);
      if (!extracted.failures.empty()) {
        const auto& f = extracted.failures.front();
        throw Error(f.code, rec.id + " component " + f.component_id + ": " + f.message);
      }
      const auto report_c = classify_bundle(weights, extracted.bundle, ClassifyOptions{}, workers);
      const auto stop = std::chrono::steady_clock::now();
      (void)report_c;
      entry.repetitions_s.push_back(std::chrono::duration<double>(stop - start).count());
    }
    entry.total_s = percentile(entry.repetitions_s, 0.5);
    entry.per_component_s = entry.total_s / static_cast<double>(entry.components);
    per_component.push_back(entry.per_component_s);
    report.entries.push_back(std::move(entry));
  }
  report.per_component_s = {percentile(per_component, 0.5), percentile(per_component, 0.25),
                            percentile(per_component, 0.75),
                            *std::min_element(per_component.begin(), per_component.end()),
                            *std::max_element(per_component.begin(), per_component.end())};
  return report;
}

std::string to_json(const BenchReport& r) {
  json j;
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"recording_id", e.recording_id},
                       {"components", e.components},
                       {"repetitions_s", e.repetitions_s},
                       {"total_s", e.total_s},
                       {"per_component_s", e.per_component_s}});
  }
  j["recordings"] = entries;
  j["repetitions"] = r.repetitions;
  j["per_component_s"] = {{"median", r.per_component_s.median},
                          {"p25", r.per_component_s.p25},
                          {"p75", r.per_component_s.p75},
                          {"min", r.per_component_s.min},
                          {"max", r.per_component_s.max}};
  j["reference_median_ms"] = r.reference_ms;
  j["median_vs_reference"] = r.per_component_s.median * 1000.0 / r.reference_ms;
  j["ceiling_s"] = r.ceiling_s;
  j["within_ceiling"] = r.per_component_s.max < r.ceiling_s;
  return j.dump(2) + "\n";
}

}  // namespace iclabel::pipeline
