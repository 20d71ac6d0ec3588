#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "iclabel/binary_format.hpp"
#include "iclabel/error.hpp"
#include "iclabel/network.hpp"

namespace iclabel::nn {
namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw Error(Errc::configuration, "train config: " + field + " " + what);
}

void add_input_noise(IcFeatures& f, double sigma, std::mt19937_64& rng) {
  if (sigma == 0.0) return;
  std::normal_distribution<double> noise(0.0, sigma);
  for (std::size_t k = 0; k < kTopoPixels; ++k) {
    if (f.topo.mask[k]) f.topo.pixels[k] += noise(rng);
  }
  for (double& v : f.psd) v += noise(rng);
  for (double& v : f.autocorr) v += noise(rng);
}

}  // namespace

void TrainConfig::validate() const {
  auto finite_positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  require(finite_positive(learning_rate), "learning_rate", "must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1", "must lie in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2", "must lie in [0, 1)");
  require(finite_positive(adam_epsilon), "adam_epsilon", "must be positive");
  require(finite_positive(gradient_clip), "gradient_clip", "must be positive");
  require(batch_size > 0, "batch_size", "must be positive");
  require(early_stop_window > 0, "early_stop_window", "must be positive");
  require(validation_interval > 0, "validation_interval", "must be positive");
  require(max_batches > 0, "max_batches", "must be positive");
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    require(finite_positive(class_weights[i]), "class_weights",
            "must be strictly positive (entry " + std::to_string(i) + ")");
  }
  require(std::isfinite(input_noise_sigma) && input_noise_sigma >= 0.0, "input_noise_sigma",
          "must be non-negative");
}

double global_norm(const NetworkWeights& gradients) {
  double total = 0.0;
  for (const auto& l : gradients.layers) {
    for (float v : l.kernel) total += static_cast<double>(v) * v;
    for (float v : l.bias) total += static_cast<double>(v) * v;
  }
  return std::sqrt(total);
}

double adam_step(NetworkWeights& weights, NetworkWeights gradients, AdamState& state,
                 const TrainConfig& config) {
  gradients.check_shapes();
  if (!gradients.all_finite()) {
    throw Error(Errc::non_finite_gradient, "non-finite gradient rejected at step " +
                                               std::to_string(state.step + 1));
  }
  const double norm = global_norm(gradients);
  const double scale = norm > config.gradient_clip ? config.gradient_clip / norm : 1.0;

  ++state.step;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double step = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(b1, step);
  const double c2 = 1.0 - std::pow(b2, step);

  for (std::size_t l = 0; l < kNumLayers; ++l) {
    auto update = [&](ParamVector<float>& w, const ParamVector<float>& g, ParamVector<float>& m,
                      ParamVector<float>& v) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = scale * g[i];
        const double mi = b1 * m[i] + (1.0 - b1) * gi;
        const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        const double delta =
            config.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + config.adam_epsilon);
        w[i] = static_cast<float>(w[i] - delta);
      }
    };
    update(weights.layers[l].kernel, gradients.layers[l].kernel,
           state.first_moment.layers[l].kernel, state.second_moment.layers[l].kernel);
    update(weights.layers[l].bias, gradients.layers[l].bias, state.first_moment.layers[l].bias,
           state.second_moment.layers[l].bias);
  }
  return norm;
}

BatchSampler::BatchSampler(std::span<const LabeledFeatures> dataset) {
  if (dataset.empty()) throw Error(Errc::empty_dataset, "cannot sample from an empty dataset");
  std::array<std::vector<std::size_t>, kNumCategories> by_category;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_category[static_cast<std::size_t>(dataset[i].label.argmax())].push_back(i);
  }
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    if (by_category[c].empty()) continue;
    present_.push_back(static_cast<Category>(c));
    members_.push_back(std::move(by_category[c]));
  }
}

std::vector<std::size_t> BatchSampler::sample(std::size_t batch_size, std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> pick_class(0, members_.size() - 1);
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto& pool = members_[pick_class(rng)];
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    out.push_back(pool[pick(rng)]);
  }
  return out;
}

std::vector<std::size_t> sample_batch(std::span<const LabeledFeatures> dataset,
                                      std::size_t batch_size, std::mt19937_64& rng) {
  return BatchSampler(dataset).sample(batch_size, rng);
}

double validation_loss(const NetworkWeights& weights, std::span<const LabeledFeatures> dataset,
                       const ClassWeights& class_weights) {
  if (dataset.empty()) throw Error(Errc::empty_dataset, "validation set is empty");
  constexpr std::size_t chunk = 64;
  double total = 0.0;
  std::vector<IcFeatures> inputs;
  for (std::size_t start = 0; start < dataset.size(); start += chunk) {
    const std::size_t end = std::min(dataset.size(), start + chunk);
    inputs.clear();
    for (std::size_t i = start; i < end; ++i) inputs.push_back(dataset[i].features);
    const auto preds = forward_batch(weights, std::span<const IcFeatures>(inputs));
    for (std::size_t i = start; i < end; ++i) {
      total += weighted_cross_entropy(preds[i - start], dataset[i].label, class_weights);
    }
  }
  return total / static_cast<double>(dataset.size());
}

TrainResult train(std::span<const LabeledFeatures> train_set,
                  std::span<const LabeledFeatures> validation_set, const TrainConfig& config,
                  const TrainObserver& observer) {
  config.validate();
  if (train_set.empty()) throw Error(Errc::empty_dataset, "training set is empty");
  if (validation_set.empty()) throw Error(Errc::empty_dataset, "validation set is empty");

  std::vector<LabeledFeatures> expanded;
  expanded.reserve(train_set.size() * 4);
  for (const auto& ex : train_set) {
    for (auto& variant : augment(ex.features, ex.label)) expanded.push_back(std::move(variant));
  }
  const BatchSampler sampler(expanded);

  std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                    static_cast<std::uint32_t>(config.seed >> 32), std::uint32_t{0x1c1abe1}};
  std::mt19937_64 rng(seq);

  TrainResult result;
  NetworkWeights weights = initialize_weights(config.seed);
  AdamState state;

  auto evaluate = [&](std::size_t batch) {
    double loss = 0.0;
    try {
      loss = validation_loss(weights, validation_set, config.class_weights);
    } catch (const Error& e) {
      if (e.code() != Errc::numeric_instability) throw;
      throw Error(Errc::divergence, "training diverged at batch " + std::to_string(batch) + ": " +
                                        e.what());
    }
    if (!std::isfinite(loss)) {
      throw Error(Errc::divergence, "validation loss became non-finite at batch " +
                                        std::to_string(batch) + " (last finite best " +
                                        std::to_string(result.best_validation_loss) + " at batch " +
                                        std::to_string(result.best_batch) + ")");
    }
    ValidationRecord rec;
    rec.batch = batch;
    rec.validation_loss = loss;
    if (result.log.empty() || loss < result.best_validation_loss) {
      rec.improved = true;
      result.best_validation_loss = loss;
      result.best_batch = batch;
      result.weights = weights;
    }
    return rec;
  };

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  auto record = [&](std::size_t batch) {
    auto rec = evaluate(batch);
    rec.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    loss_sum = 0.0;
    loss_count = 0;
    result.log.push_back(rec);
    return observer ? observer(rec, weights) : true;
  };

  if (!record(0)) {
    result.stop_reason = StopReason::observer;
    return result;
  }

  std::vector<IcFeatures> inputs(config.batch_size);
  std::vector<LabelVector> targets(config.batch_size);
  std::size_t batch = 0;
  result.stop_reason = StopReason::max_batches;
  while (batch < config.max_batches) {
    const auto picks = sampler.sample(config.batch_size, rng);
    for (std::size_t i = 0; i < picks.size(); ++i) {
      inputs[i] = expanded[picks[i]].features;
      add_input_noise(inputs[i], config.input_noise_sigma, rng);
      targets[i] = expanded[picks[i]].label;
    }
    double step_loss = 0.0;
    try {
      auto grads = backward(weights, std::span<const IcFeatures>(inputs),
                            std::span<const LabelVector>(targets), config.class_weights);
      step_loss = grads.loss;
      adam_step(weights, std::move(grads.params), state, config);
    } catch (const Error& e) {
      if (e.code() != Errc::numeric_instability && e.code() != Errc::non_finite_gradient) throw;
      throw Error(Errc::divergence, "training diverged at batch " + std::to_string(batch + 1) +
                                        ": " + e.what());
    }
    loss_sum += step_loss;
    ++loss_count;
    ++batch;

    const bool last = batch == config.max_batches;
    if (batch % config.validation_interval == 0 || last) {
      if (!record(batch)) {
        result.stop_reason = StopReason::observer;
        break;
      }
      if (batch - result.best_batch >= config.early_stop_window) {
        result.stop_reason = StopReason::early_stop;
        break;
      }
    }
  }
  result.batches_run = batch;
  return result;
}

void write_training_log(std::ostream& out, std::span<const ValidationRecord> log) {
  out << "# batch train_loss validation_loss\n";
  for (const auto& r : log) {
    std::ostringstream line;
    line.precision(9);
    line << r.batch << ' ' << r.train_loss << ' ' << r.validation_loss << '\n';
    out << line.str();
  }
}

std::string_view to_string(StopReason reason) {
  switch (reason) {
    case StopReason::early_stop: return "early_stop";
    case StopReason::max_batches: return "max_batches";
    case StopReason::observer: return "observer";
  }
  return "unknown";
}

std::string serialize_weights(const NetworkWeights& weights) {
  weights.check_shapes();
  if (!weights.all_finite()) {
    throw Error(Errc::invalid_argument, "refusing to save weights containing NaN or Inf");
  }
  io::ByteWriter w;
  w.magic(io::kWeightsMagic);
  w.u32(io::kFormatVersion);
  w.u32(static_cast<std::uint32_t>(kNumLayers));
  for (const auto& l : weights.layers) {
    w.u32(static_cast<std::uint32_t>(l.name.size()));
    w.bytes(l.name);
    w.u32(static_cast<std::uint32_t>(l.shape.size()));
    for (auto d : l.shape) w.u32(d);
    for (float v : l.kernel) w.f32(v);
    for (float v : l.bias) w.f32(v);
  }
  return w.take();
}

NetworkWeights deserialize_weights(std::string_view bytes, const std::string& context) {
  io::ByteReader r(bytes, context);
  r.expect_magic(io::kWeightsMagic);
  const auto version = r.u32();
  if (version != io::kFormatVersion) {
    throw Error(Errc::format, context + ": unsupported weights version " + std::to_string(version));
  }
  const auto count = r.u32();
  if (count != kNumLayers) {
    throw Error(Errc::shape_mismatch, context + ": expected " + std::to_string(kNumLayers) +
                                          " layers, file has " + std::to_string(count));
  }
  const auto& arch = architecture();
  NetworkWeights w;
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    auto& l = w.layers[i];
    const auto name_len = r.u32();
    l.name = std::string(r.bytes(name_len));
    const auto rank = r.u32();
    if (rank > 8) {
      throw Error(Errc::shape_mismatch, context + ": layer " + l.name + " has rank " +
                                            std::to_string(rank));
    }
    l.shape.resize(rank);
    for (auto& d : l.shape) d = r.u32();
    if (l.name != arch[i].name || l.shape != arch[i].kernel_shape()) {
      std::string dims;
      for (auto d : l.shape) dims += (dims.empty() ? "" : "x") + std::to_string(d);
      throw Error(Errc::shape_mismatch, context + ": layer " + std::to_string(i) + " is " +
                                            l.name + " [" + dims + "], expected " +
                                            std::string(arch[i].name));
    }
    l.kernel.resize(arch[i].kernel_size());
    for (float& v : l.kernel) v = r.f32();
    l.bias.resize(arch[i].filters);
    for (float& v : l.bias) v = r.f32();
  }
  r.expect_end();
  if (!w.all_finite()) throw Error(Errc::format, context + ": weights contain NaN or Inf");
  return w;
}

void save_weights(const NetworkWeights& weights, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_weights(weights));
}

NetworkWeights load_weights(const std::filesystem::path& path) {
  return deserialize_weights(io::read_file(path), path.string());
}

}  // namespace iclabel::nn
