#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "iclabel/features.hpp"

// Seeded synthetic inputs for demos, tests and benchmarks.
namespace iclabel::synth {

// Roughly even electrode layout over the upper head (Fibonacci spiral, unit
// sphere, z >= -0.3).
std::vector<Eigen::Vector3d> spiral_montage(std::size_t n_channels);

struct RecordingParams {
  std::size_t n_channels = 32;
  std::size_t n_components = 16;
  double sample_rate = 256.0;
  double duration_s = 60.0;
  // Components whose activity is replaced by a constant (degenerate input).
  std::vector<std::size_t> constant_components;
};

// Component k is generated with the source character of category k mod 7
// (alpha rhythm, broadband EMG, slow ocular drift, cardiac spikes, 60 Hz line,
// white noise, pink noise), mixed through smooth random scalp patterns.
Recording make_recording(const RecordingParams& params, std::uint64_t seed);

// Linearly separable toy features over the first `n_categories` categories:
// each category has its own midline scalp blob, PSD peak and ACF period.
// Labels are one-hot; categories are assigned round-robin.
std::vector<LabeledFeatures> separable_toy_set(std::size_t n_examples, std::size_t n_categories,
                                               std::uint64_t seed);

}  // namespace iclabel::synth
