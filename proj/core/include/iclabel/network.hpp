#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iclabel/features.hpp"
#include "iclabel/labels.hpp"

// Convolutional IC classifier: one subnetwork per feature set (scalp map, PSD,
// autocorrelation), channel concatenation, and a final 7-way softmax layer.
namespace iclabel::nn {

enum class LayerKind { conv2d, conv1d };
enum class Padding { same, valid };
enum class Activation { leaky_relu, softmax };

inline constexpr double kLeakySlope = 0.2;
inline constexpr std::size_t kNumLayers = 10;
// 512 scalp-map channels plus one channel each for PSD and autocorrelation.
inline constexpr std::size_t kFusedChannels = 514;
inline constexpr std::size_t kFusedSide = 4;

struct LayerSpec {
  std::string_view name;
  LayerKind kind;
  std::size_t in_channels;
  std::size_t filters;
  std::size_t kernel;  // side length (2-D) or length (1-D)
  std::size_t stride;
  Padding padding;
  Activation activation;

  // (filters, k, k, in) for 2-D kernels, (filters, k, in) for 1-D.
  std::vector<std::uint32_t> kernel_shape() const;
  std::size_t kernel_size() const;
  std::size_t fan_in() const { return kernel_size() / filters; }
};

enum Layer : std::size_t { topo1, topo2, topo3, psd1, psd2, psd3, acf1, acf2, acf3, final_layer };

const std::array<LayerSpec, kNumLayers>& architecture();

// Output length of a strided convolution along one axis.
std::size_t conv_output_length(std::size_t input, std::size_t kernel, std::size_t stride,
                               Padding padding);

// Parameter storage aligned like Eigen's own buffers, so vectorized kernels
// take the same path (and round the same way) wherever the heap puts them.
template <typename T>
using ParamVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct LayerParams {
  std::string name;
  std::vector<std::uint32_t> shape;
  ParamVector<T> kernel;
  ParamVector<T> bias;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <typename T>
struct BasicWeights {
  std::array<LayerParams<T>, kNumLayers> layers;

  // All-zero parameters with the canonical shapes.
  static BasicWeights zeros();

  template <typename U>
  BasicWeights<U> cast() const {
    BasicWeights<U> out;
    for (std::size_t i = 0; i < kNumLayers; ++i) {
      const auto& src = layers[i];
      auto& dst = out.layers[i];
      dst.name = src.name;
      dst.shape = src.shape;
      dst.kernel.assign(src.kernel.begin(), src.kernel.end());
      dst.bias.assign(src.bias.begin(), src.bias.end());
    }
    return out;
  }

  std::size_t parameter_count() const;
  bool all_finite() const;
  // Throws Errc::shape_mismatch when names or shapes disagree with architecture().
  void check_shapes() const;

  friend bool operator==(const BasicWeights&, const BasicWeights&) = default;
};

using NetworkWeights = BasicWeights<float>;

// Truncated normal (2 sigma), sigma = sqrt(2 / fan_in); zero biases.
NetworkWeights initialize_weights(std::uint64_t seed);

using ClassWeights = std::array<double, kNumCategories>;
inline constexpr ClassWeights kUnitClassWeights = {1, 1, 1, 1, 1, 1, 1};
inline constexpr ClassWeights kBrainWeighted = {2, 1, 1, 1, 1, 1, 1};

struct TensorShape {
  std::string layer;
  std::vector<std::size_t> dims;  // spatial dims then channels

  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

template <typename T>
std::vector<LabelVector> forward_batch(const BasicWeights<T>& weights,
                                       std::span<const IcFeatures> batch);

LabelVector forward(const NetworkWeights& weights, const IcFeatures& features);

// Sign of every leaky-ReLU pre-activation in the batch, layer by layer.
template <typename T>
std::vector<bool> activation_signs(const BasicWeights<T>& weights,
                                   std::span<const IcFeatures> batch);


// Output shape of every layer plus the fused tensor, in evaluation order.
std::vector<TensorShape> trace_shapes(const NetworkWeights& weights, const IcFeatures& features);

// Mean of forward() over the scalp-map symmetry orbit. The four outputs are
// summed in a canonical order so the result is identical for every orbit member.
LabelVector classify(const NetworkWeights& weights, const IcFeatures& features);

// -sum_i w_i t_i log p_i with p clamped at 1e-12.
double weighted_cross_entropy(const LabelVector& prediction, const LabelVector& target,
                              const ClassWeights& weights);

template <typename T>
struct Gradients {
  BasicWeights<T> params;
  double loss = 0.0;               // mean weighted cross entropy over the batch
  std::vector<IcFeatures> inputs;  // filled only when requested
};

// Gradient of the batch-mean weighted cross entropy.
template <typename T>
Gradients<T> backward(const BasicWeights<T>& weights, std::span<const IcFeatures> batch,
                      std::span<const LabelVector> targets, const ClassWeights& class_weights,
                      bool input_gradients = false);

struct TrainConfig {
  double learning_rate = 0.0003;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double gradient_clip = 20.0;
  std::size_t batch_size = 128;
  std::size_t early_stop_window = 5000;
  std::size_t validation_interval = 100;
  std::size_t max_batches = 20000;
  ClassWeights class_weights = kBrainWeighted;
  double input_noise_sigma = 0.05;
  std::uint64_t seed = 0;

  // Throws Errc::configuration naming the offending field.
  void validate() const;
};

struct AdamState {
  NetworkWeights first_moment = NetworkWeights::zeros();
  NetworkWeights second_moment = NetworkWeights::zeros();
  std::uint64_t step = 0;
};

// Global L2 norm over every parameter gradient.
double global_norm(const NetworkWeights& gradients);

// Clips the gradients to config.gradient_clip (global norm), then applies one
// bias-corrected Adam update. Returns the pre-clip norm. Non-finite gradients
// throw Errc::non_finite_gradient and leave weights and state untouched.
double adam_step(NetworkWeights& weights, NetworkWeights gradients, AdamState& state,
                 const TrainConfig& config);

// Class-balanced sampler: pick a present category uniformly, then one of its
// examples (by label argmax) uniformly with replacement.
class BatchSampler {
 public:
  explicit BatchSampler(std::span<const LabeledFeatures> dataset);

  std::vector<std::size_t> sample(std::size_t batch_size, std::mt19937_64& rng) const;
  const std::vector<Category>& present_categories() const { return present_; }

 private:
  std::vector<Category> present_;
  std::vector<std::vector<std::size_t>> members_;
};

std::vector<std::size_t> sample_batch(std::span<const LabeledFeatures> dataset,
                                      std::size_t batch_size, std::mt19937_64& rng);

double validation_loss(const NetworkWeights& weights, std::span<const LabeledFeatures> dataset,
                       const ClassWeights& class_weights);

struct ValidationRecord {
  std::size_t batch = 0;
  double train_loss = 0.0;  // mean batch loss since the previous record
  double validation_loss = 0.0;
  bool improved = false;
};

enum class StopReason { early_stop, max_batches, observer };

struct TrainResult {
  NetworkWeights weights;  // best validation checkpoint
  double best_validation_loss = 0.0;
  std::size_t best_batch = 0;
  std::size_t batches_run = 0;
  StopReason stop_reason = StopReason::max_batches;
  std::vector<ValidationRecord> log;
};

// Called after every validation pass with the current (not best) weights.
// Returning false ends training; the best checkpoint is still returned.
using TrainObserver = std::function<bool(const ValidationRecord&, const NetworkWeights&)>;

TrainResult train(std::span<const LabeledFeatures> train_set,
                  std::span<const LabeledFeatures> validation_set, const TrainConfig& config,
                  const TrainObserver& observer = {});

// One "batch train_loss validation_loss" line per record.
void write_training_log(std::ostream& out, std::span<const ValidationRecord> log);
std::string_view to_string(StopReason reason);

std::string serialize_weights(const NetworkWeights& weights);
NetworkWeights deserialize_weights(std::string_view bytes, const std::string& context = "weights");
void save_weights(const NetworkWeights& weights, const std::filesystem::path& path);
NetworkWeights load_weights(const std::filesystem::path& path);

}  // namespace iclabel::nn
