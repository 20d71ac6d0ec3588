#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "iclabel/binary_format.hpp"
#include "iclabel/commands.hpp"
#include "iclabel/io.hpp"
#include "iclabel/network.hpp"
#include "iclabel/synthetic.hpp"

namespace fs = std::filesystem;
using namespace iclabel;

namespace {

// Writes to `path`, or stdout when path is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    io::write_file_atomic(path, text);
  }
}

metrics::ThresholdSet load_threshold_arg(const std::string& arg) {
  for (auto name : metrics::preset_names()) {
    if (name == arg) return metrics::preset_thresholds(arg);
  }
  if (!fs::exists(arg)) {
    std::string names;
    for (auto name : metrics::preset_names()) names += std::string(" ") + std::string(name);
    throw Error(Errc::usage, "--thresholds: '" + arg + "' is neither a file nor a preset (" +
                                 names.substr(1) + ")");
  }
  return io::read_thresholds(arg);
}

struct ExtractArgs {
  std::string bundle;
  std::string output;
  std::size_t workers = 0;
};

int run_extract(const ExtractArgs& a) {
  const auto rec = io::read_recording_bundle(a.bundle);
  const auto result = pipeline::extract_features(rec, a.workers);
  io::write_features(a.output, result.bundle);
  std::cerr << "extracted " << result.bundle.features.size() << " of "
            << rec.component_ids.size() << " components from " << rec.id << "\n";
  if (result.failures.empty()) return 0;
  for (const auto& f : result.failures) {
    std::cerr << "error: component " << f.component_id << ": " << to_string(f.code) << ": "
              << f.message << "\n";
  }
  return exit_code(result.failures.front().code);
}

struct ClassifyArgs {
  std::string weights;
  std::string features;
  bool tta = true;
  int classes = 7;
  std::string thresholds;
  std::string output;
  std::string csv;
  std::size_t workers = 0;
};

int run_classify(const ClassifyArgs& a) {
  pipeline::ClassifyOptions opt;
  opt.tta = a.tta;
  opt.merge = metrics::merge_scheme_from_count(a.classes);
  if (!a.thresholds.empty()) opt.thresholds = load_threshold_arg(a.thresholds);
  const auto weights = nn::load_weights(a.weights);
  const auto bundle = io::read_features(a.features);
  const auto report = pipeline::classify_bundle(weights, bundle, opt, a.workers);
  if (!a.csv.empty()) io::write_labels(a.csv, pipeline::to_label_table(report));
  emit(a.output, pipeline::to_json(report));
  return 0;
}

struct TrainArgs {
  std::vector<std::string> features;
  std::vector<std::string> labels;
  std::vector<std::string> validation_features;
  std::vector<std::string> validation_labels;
  std::size_t holdout = 0;
  bool holdout_set = false;
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t max_batches = 0;
  bool max_batches_set = false;
  std::string output;
  std::string log;
};

std::vector<LabeledFeatures> load_labeled(const std::vector<std::string>& feature_paths,
                                          const std::vector<std::string>& label_paths) {
  io::FeatureBundle merged;
  for (const auto& p : feature_paths) {
    auto b = io::read_features(p);
    merged.component_ids.insert(merged.component_ids.end(), b.component_ids.begin(),
                                b.component_ids.end());
    merged.features.insert(merged.features.end(), b.features.begin(), b.features.end());
  }
  merged.validate();
  io::LabelTable labels;
  for (const auto& p : label_paths) {
    auto t = io::read_labels(p);
    if (labels.columns.empty()) labels.columns = t.columns;
    labels.component_ids.insert(labels.component_ids.end(), t.component_ids.begin(),
                                t.component_ids.end());
    labels.rows.insert(labels.rows.end(), t.rows.begin(), t.rows.end());
  }
  return io::join_labels(merged, labels);
}

int run_train(const TrainArgs& a) {
  nn::TrainConfig cfg;
  if (!a.config.empty()) cfg = io::read_train_config(a.config);
  if (a.seed_set) cfg.seed = a.seed;
  if (a.max_batches_set) cfg.max_batches = a.max_batches;
  cfg.validate();
  if (a.validation_features.empty() != a.validation_labels.empty()) {
    throw Error(Errc::usage, "--validation-features and --validation-labels go together");
  }
  if (!a.validation_features.empty() && a.holdout_set) {
    throw Error(Errc::usage, "--holdout cannot be combined with an explicit validation set");
  }

  auto data = load_labeled(a.features, a.labels);
  std::vector<LabeledFeatures> train_set, validation_set;
  if (!a.validation_features.empty()) {
    train_set = std::move(data);
    validation_set = load_labeled(a.validation_features, a.validation_labels);
  } else {
    const std::size_t holdout = a.holdout_set ? a.holdout : pipeline::default_holdout(data.size());
    auto split = pipeline::holdout_split(data, holdout, cfg.seed);
    train_set = std::move(split.train);
    validation_set = std::move(split.validation);
  }
  std::cerr << "training on " << train_set.size() << " examples, validating on "
            << validation_set.size() << "\n";

  const auto result = nn::train(train_set, validation_set, cfg);
  nn::save_weights(result.weights, a.output);
  if (!a.log.empty()) {
    std::ostringstream log;
    nn::write_training_log(log, result.log);
    io::write_file_atomic(a.log, log.str());
  }
  std::cout << "stop_reason " << nn::to_string(result.stop_reason) << "\n"
            << "batches_run " << result.batches_run << "\n"
            << "best_batch " << result.best_batch << "\n"
            << "best_validation_loss " << io::format_double(result.best_validation_loss) << "\n";
  return 0;
}

struct AggregateArgs {
  std::string votes;
  std::string mode = "training";
  std::size_t burn_in = 200;
  std::size_t epochs = 800;
  std::uint64_t seed = 0;
  std::size_t chains = 1;
  std::size_t min_votes = 10;
  std::string output;
  std::string labels;
};

int run_aggregate(const AggregateArgs& a) {
  pipeline::AggregateOptions opt;
  opt.mode = a.mode == "test" ? crowd::DatasetMode::test : crowd::DatasetMode::training;
  opt.gibbs.burn_in = a.burn_in;
  opt.gibbs.sampling_epochs = a.epochs;
  opt.gibbs.seed = a.seed;
  opt.chains = a.chains;
  opt.min_components = a.min_votes;
  const auto submissions = io::read_votes(a.votes);
  const auto result = pipeline::aggregate(submissions, opt);
  if (!result.labelers_dropped.empty()) {
    std::cerr << "dropped " << result.labelers_dropped.size() << " labeler(s) with fewer than "
              << a.min_votes << " components\n";
  }
  if (!a.labels.empty()) {
    const auto& first = result.chains.front();
    io::write_labels(a.labels, io::make_label_table(first.component_ids, first.labels));
  }
  emit(a.output, pipeline::to_json(result, opt));
  return 0;
}

struct EvaluateArgs {
  std::string targets;
  std::string predictions;
  int classes = 7;
  std::string output;
  std::string svg;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto merge = metrics::merge_scheme_from_count(a.classes);
  const auto report =
      pipeline::evaluate(io::read_labels(a.targets), io::read_labels(a.predictions), merge);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  if (!a.svg.empty()) io::write_file_atomic(a.svg, pipeline::to_svg(report));
  emit(a.output, pipeline::to_json(report));
  return 0;
}

struct BenchArgs {
  std::vector<std::string> bundles;
  std::string weights;
  std::size_t repetitions = 3;
  std::size_t workers = 1;
  std::string output;
};

int run_bench(const BenchArgs& a) {
  std::vector<io::RecordingBundle> recordings;
  for (const auto& b : a.bundles) recordings.push_back(io::read_recording_bundle(b));
  const auto weights = a.weights.empty() ? nn::initialize_weights(0) : nn::load_weights(a.weights);
  const auto report = pipeline::bench(recordings, weights, a.repetitions, a.workers);
  const auto& s = report.per_component_s;
  std::cerr << "per-component median " << s.median * 1000.0 << " ms (p25 " << s.p25 * 1000.0
            << ", p75 " << s.p75 * 1000.0 << "); reference median " << report.reference_ms
            << " ms\n";
  emit(a.output, pipeline::to_json(report));
  if (s.max >= report.ceiling_s) {
    std::cerr << "error: slowest recording took " << s.max << " s per component, above the "
              << report.ceiling_s << " s ceiling\n";
    return 2;
  }
  return 0;
}

struct SynthArgs {
  std::string kind;
  std::string output;
  std::string labels;
  std::size_t channels = 32;
  std::size_t components = 16;
  double duration = 60.0;
  double rate = 256.0;
  std::vector<std::size_t> constant;
  std::size_t examples = 250;
  std::size_t categories = 3;
  std::string id;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  if (a.kind == "recording") {
    synth::RecordingParams p;
    p.n_channels = a.channels;
    p.n_components = a.components;
    p.duration_s = a.duration;
    p.sample_rate = a.rate;
    p.constant_components = a.constant;
    io::RecordingBundle b;
    b.id = a.id.empty() ? "synthetic-" + std::to_string(a.seed) : a.id;
    b.recording = synth::make_recording(p, a.seed);
    for (std::size_t k = 0; k < a.components; ++k) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "ic%03zu", k);
      b.component_ids.emplace_back(buf);
    }
    io::write_recording_bundle(a.output, b);
  } else if (a.kind == "toy") {
    if (a.labels.empty()) throw Error(Errc::usage, "synth toy needs --labels");
    const auto data = synth::separable_toy_set(a.examples, a.categories, a.seed);
    io::FeatureBundle bundle;
    bundle.provenance.recording_id = a.id.empty() ? "toy-" + std::to_string(a.seed) : a.id;
    std::vector<LabelVector> labels;
    for (std::size_t i = 0; i < data.size(); ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "toy%05zu", i);
      bundle.component_ids.emplace_back(buf);
      bundle.features.push_back(data[i].features);
      labels.push_back(data[i].label);
    }
    io::write_features(a.output, bundle);
    io::write_labels(a.labels, io::make_label_table(bundle.component_ids, labels));
  } else {
    nn::save_weights(nn::initialize_weights(a.seed), a.output);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Independent component classifier for EEG"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "iclabel 0.1.0");

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Compute features for every component of a recording bundle");
  extract->add_option("bundle", ex.bundle, "Recording manifest or its directory")->required();
  extract->add_option("-o,--output", ex.output, "Feature bundle to write")->required();
  extract->add_option("--workers", ex.workers, "Worker threads (0 = all cores)");

  ClassifyArgs cl;
  auto* classify = app.add_subcommand("classify", "Label components from a feature bundle");
  classify->add_option("weights", cl.weights, "Weights file")->required();
  classify->add_option("features", cl.features, "Feature bundle")->required();
  classify->add_flag("--tta,!--no-tta", cl.tta, "Average over mirrored and negated topographies (default on)");
  classify->add_option("--merge", cl.classes, "Report 7, 5 or 2 categories")->check(CLI::IsMember({7, 5, 2}));
  classify->add_option("--thresholds", cl.thresholds, "Threshold JSON file or preset name");
  classify->add_option("-o,--output", cl.output, "JSON report (default stdout)");
  classify->add_option("--csv", cl.csv, "Also write the probabilities as a label CSV");
  classify->add_option("--workers", cl.workers, "Worker threads (0 = all cores)");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Fit network weights to labeled features");
  train->add_option("features", tr.features, "Feature bundle(s)")->required();
  train->add_option("-l,--labels", tr.labels, "Label CSV(s) keyed by component id")->required();
  train->add_option("--validation-features", tr.validation_features, "Explicit validation feature bundle(s)");
  train->add_option("--validation-labels", tr.validation_labels, "Labels for the validation bundle(s)");
  auto* holdout = train->add_option("--holdout", tr.holdout, "Examples held out for validation (default min(400, n/5))");
  train->add_option("--config", tr.config, "key = value training configuration");
  auto* seed = train->add_option("--seed", tr.seed, "Overrides the config seed");
  auto* maxb = train->add_option("--max-batches", tr.max_batches, "Overrides max_batches");
  train->add_option("-o,--output", tr.output, "Weights file to write")->required();
  train->add_option("--log", tr.log, "Training log to write");

  AggregateArgs ag;
  auto* aggregate = app.add_subcommand("aggregate", "Combine crowd votes into compositional labels");
  aggregate->add_option("votes", ag.votes, "Vote CSV")->required();
  aggregate->add_option("--mode", ag.mode, "Prior set: training or test")->check(CLI::IsMember({"training", "test"}));
  aggregate->add_option("--burn-in", ag.burn_in, "Burn-in epochs");
  aggregate->add_option("--epochs", ag.epochs, "Sampling epochs");
  aggregate->add_option("--seed", ag.seed, "Sampler seed");
  aggregate->add_option("--chains", ag.chains, "Independent chains (chain c uses seed + c)");
  aggregate->add_option("--min-votes", ag.min_votes, "Minimum components per labeler");
  aggregate->add_option("-o,--output", ag.output, "JSON result (default stdout)");
  aggregate->add_option("--labels", ag.labels, "Also write chain 0 labels as CSV");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against targets");
  evaluate->add_option("targets", ev.targets, "Target label CSV")->required();
  evaluate->add_option("predictions", ev.predictions, "Predicted label CSV")->required();
  evaluate->add_option("--classes", ev.classes, "Evaluate on 7, 5 or 2 categories")->check(CLI::IsMember({7, 5, 2}));
  evaluate->add_option("-o,--output", ev.output, "JSON report (default stdout)");
  evaluate->add_option("--svg", ev.svg, "ROC/SOC plot to write");

  BenchArgs be;
  auto* benchmark = app.add_subcommand("bench", "Time extract + classify per component");
  benchmark->add_option("bundles", be.bundles, "Recording bundles")->required();
  benchmark->add_option("--weights", be.weights, "Weights file (default: seed-0 initialization)");
  benchmark->add_option("--repetitions", be.repetitions, "Timed repetitions per bundle");
  benchmark->add_option("--workers", be.workers, "Worker threads");
  benchmark->add_option("-o,--output", be.output, "JSON report (default stdout)");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Write synthetic inputs: a recording bundle, a toy labeled set, or initial weights");
  synth->add_option("kind", sy.kind, "recording, toy or weights")->required()->check(CLI::IsMember({"recording", "toy", "weights"}));
  synth->add_option("-o,--output", sy.output, "Bundle directory, feature file or weights file")->required();
  synth->add_option("--labels", sy.labels, "Label CSV for toy sets");
  synth->add_option("--channels", sy.channels);
  synth->add_option("--components", sy.components);
  synth->add_option("--duration", sy.duration, "Seconds");
  synth->add_option("--rate", sy.rate, "Sample rate in Hz");
  synth->add_option("--constant", sy.constant, "Component indices replaced by a constant");
  synth->add_option("--examples", sy.examples);
  synth->add_option("--categories", sy.categories);
  synth->add_option("--id", sy.id);
  synth->add_option("--seed", sy.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*extract) return run_extract(ex);
    if (*classify) return run_classify(cl);
    if (*train) {
      tr.holdout_set = holdout->count() > 0;
      tr.seed_set = seed->count() > 0;
      tr.max_batches_set = maxb->count() > 0;
      return run_train(tr);
    }
    if (*aggregate) return run_aggregate(ag);
    if (*evaluate) return run_evaluate(ev);
    if (*benchmark) return run_bench(be);
    if (*synth) return run_synth(sy);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
