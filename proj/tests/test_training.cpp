#include <gtest/gtest.h>

#include <sstream>

#include "iclabel/error.hpp"
#include "iclabel/network.hpp"
#include "iclabel/synthetic.hpp"

using namespace iclabel;
using namespace iclabel::nn;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.validation_interval = 2;
  cfg.max_batches = 6;
  cfg.seed = 3;
  return cfg;
}

struct ToyData {
  std::vector<LabeledFeatures> train;
  std::vector<LabeledFeatures> validation;
};

const ToyData& toy() {
  static const ToyData data = [] {
    ToyData d;
    d.train = synth::separable_toy_set(24, 3, 1);
    d.validation = synth::separable_toy_set(9, 3, 2);
    return d;
  }();
  return data;
}

template <typename F>
Errc error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no iclabel::Error thrown";
  return Errc::usage;
}

}  // namespace

TEST(TrainConfigValidation, RejectsBadFields) {
  auto check = [](auto mutate, const char* field) {
    TrainConfig cfg;
    mutate(cfg);
    try {
      cfg.validate();
      ADD_FAILURE() << field;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::configuration);
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  check([](TrainConfig& c) { c.learning_rate = 0; }, "learning_rate");
  check([](TrainConfig& c) { c.adam_beta1 = 1.0; }, "adam_beta1");
  check([](TrainConfig& c) { c.adam_beta2 = -0.1; }, "adam_beta2");
  check([](TrainConfig& c) { c.gradient_clip = 0; }, "gradient_clip");
  check([](TrainConfig& c) { c.batch_size = 0; }, "batch_size");
  check([](TrainConfig& c) { c.early_stop_window = 0; }, "early_stop_window");
  check([](TrainConfig& c) { c.validation_interval = 0; }, "validation_interval");
  check([](TrainConfig& c) { c.class_weights[4] = 0; }, "class_weights");
  check([](TrainConfig& c) { c.input_noise_sigma = -1; }, "input_noise_sigma");
  EXPECT_NO_THROW(TrainConfig{}.validate());
  const TrainConfig d;
  EXPECT_EQ(d.learning_rate, 0.0003);
  EXPECT_EQ(d.adam_beta1, 0.5);
  EXPECT_EQ(d.adam_beta2, 0.999);
  EXPECT_EQ(d.gradient_clip, 20.0);
  EXPECT_EQ(d.batch_size, 128u);
  EXPECT_EQ(d.early_stop_window, 5000u);
  EXPECT_EQ(d.validation_interval, 100u);
  EXPECT_EQ(d.class_weights, kBrainWeighted);
  EXPECT_EQ(d.input_noise_sigma, 0.05);
}

TEST(Train, ConfigErrorsBeforeCompute) {
  auto cfg = small_config();
  cfg.batch_size = 0;
  EXPECT_EQ(error_code_of([&] { (void)train(toy().train, toy().validation, cfg); }),
            Errc::configuration);
  const std::vector<LabeledFeatures> none;
  EXPECT_EQ(error_code_of([&] { (void)train(none, toy().validation, small_config()); }),
            Errc::empty_dataset);
  EXPECT_EQ(error_code_of([&] { (void)train(toy().train, none, small_config()); }),
            Errc::empty_dataset);
}

TEST(Train, DeterministicPerSeed) {
  const auto a = train(toy().train, toy().validation, small_config());
  const auto b = train(toy().train, toy().validation, small_config());
  EXPECT_EQ(serialize_weights(a.weights), serialize_weights(b.weights));
  EXPECT_EQ(a.best_validation_loss, b.best_validation_loss);
  auto other = small_config();
  other.seed = 4;
  const auto c = train(toy().train, toy().validation, other);
  EXPECT_NE(serialize_weights(a.weights), serialize_weights(c.weights));
}

TEST(Train, BestCheckpointAndLog) {
  double final_loss = 0.0;
  NetworkWeights final_weights;
  const auto r = train(toy().train, toy().validation, small_config(),
                       [&](const ValidationRecord& rec, const NetworkWeights& w) {
                         final_loss = rec.validation_loss;
                         final_weights = w;
                         return true;
                       });
  EXPECT_EQ(r.stop_reason, StopReason::max_batches);
  EXPECT_EQ(r.batches_run, 6u);
  ASSERT_EQ(r.log.size(), 4u);  // batches 0, 2, 4, 6
  EXPECT_EQ(r.log.front().batch, 0u);
  EXPECT_EQ(r.log.back().batch, 6u);
  EXPECT_LE(r.best_validation_loss, final_loss);
  EXPECT_NEAR(validation_loss(r.weights, toy().validation, kBrainWeighted), r.best_validation_loss,
              1e-12);
  EXPECT_NEAR(validation_loss(final_weights, toy().validation, kBrainWeighted), final_loss, 1e-12);
  std::ostringstream log;
  write_training_log(log, r.log);
  EXPECT_EQ(log.str().rfind("# batch train_loss validation_loss\n", 0), 0u);
  std::istringstream lines(log.str());
  std::string header;
  std::getline(lines, header);
  std::size_t batch;
  double train_loss, val_loss;
  std::size_t rows = 0;
  while (lines >> batch >> train_loss >> val_loss) {
    EXPECT_NEAR(val_loss, r.log[rows].validation_loss, 1e-8 * std::max(1.0, val_loss));
    ++rows;
  }
  EXPECT_EQ(rows, r.log.size());
}

TEST(Train, EarlyStopWithoutImprovement) {
  auto cfg = small_config();
  cfg.learning_rate = 1e-30;  // updates vanish below float resolution
  cfg.early_stop_window = 4;
  cfg.max_batches = 100;
  const auto r = train(toy().train, toy().validation, cfg);
  EXPECT_EQ(r.stop_reason, StopReason::early_stop);
  EXPECT_EQ(r.best_batch, 0u);
  EXPECT_EQ(r.batches_run, 4u);
  EXPECT_EQ(r.weights, initialize_weights(cfg.seed));
}

TEST(Train, ObserverStops) {
  std::size_t calls = 0;
  const auto r = train(toy().train, toy().validation, small_config(),
                       [&](const ValidationRecord&, const NetworkWeights&) { return ++calls < 2; });
  EXPECT_EQ(r.stop_reason, StopReason::observer);
  EXPECT_EQ(r.batches_run, 2u);
}

TEST(Train, DivergenceIsReported) {
  auto cfg = small_config();
  cfg.learning_rate = 1e30;
  try {
    (void)train(toy().train, toy().validation, cfg);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::divergence) << e.what();
    EXPECT_EQ(exit_code(e.code()), 3);
  }
}

TEST(Train, ValidationLossAgreesWithForward) {
  const auto w = initialize_weights(5);
  double total = 0.0;
  for (const auto& ex : toy().validation) {
    total += weighted_cross_entropy(forward(w, ex.features), ex.label, kBrainWeighted);
  }
  EXPECT_NEAR(validation_loss(w, toy().validation, kBrainWeighted),
              total / static_cast<double>(toy().validation.size()), 1e-6);
}
