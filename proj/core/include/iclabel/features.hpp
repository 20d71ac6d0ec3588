#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "iclabel/labels.hpp"

namespace iclabel {

inline constexpr std::size_t kTopoSide = 32;
inline constexpr std::size_t kTopoPixels = kTopoSide * kTopoSide;
inline constexpr std::size_t kPsdBins = 100;
inline constexpr std::size_t kAutocorrLags = 100;
// Peak absolute value of every normalized feature set.
inline constexpr double kFeatureScale = 0.99;

// Raw per-recording inputs. Electrode positions are head-centered with +x toward
// the subject's right, +y anterior and +z toward the vertex.
struct Recording {
  Eigen::MatrixXd channel_data;        // channels x samples, microvolts
  double sample_rate = 0.0;            // Hz
  std::vector<Eigen::Vector3d> electrode_positions;
  Eigen::MatrixXd mixing_matrix;       // channels x components
  Eigen::MatrixXd component_activity;  // components x samples

  std::size_t n_channels() const { return static_cast<std::size_t>(channel_data.rows()); }
  std::size_t n_samples() const { return static_cast<std::size_t>(channel_data.cols()); }
  std::size_t n_components() const { return static_cast<std::size_t>(mixing_matrix.cols()); }

  // Throws Errc::invalid_recording (or degenerate_montage / invalid_rate) when
  // the shapes or electrode geometry are inconsistent.
  void validate() const;
};

// 32x32 image, row-major. Row 0 is the anterior edge, column 0 the subject's left.
struct ScalpTopography {
  std::array<double, kTopoPixels> pixels{};
  std::array<std::uint8_t, kTopoPixels> mask{};

  double& at(std::size_t row, std::size_t col) { return pixels[row * kTopoSide + col]; }
  double at(std::size_t row, std::size_t col) const { return pixels[row * kTopoSide + col]; }
  bool inside(std::size_t row, std::size_t col) const { return mask[row * kTopoSide + col] != 0; }

  friend bool operator==(const ScalpTopography&, const ScalpTopography&) = default;
};

struct IcFeatures {
  ScalpTopography topo;
  std::array<double, kPsdBins> psd{};
  std::array<double, kAutocorrLags> autocorr{};

  friend bool operator==(const IcFeatures&, const IcFeatures&) = default;
};

struct LabeledFeatures {
  IcFeatures features;
  LabelVector label;
};

// Plane coordinates of a grid pixel center, both in [-1, 1].
Eigen::Vector2d pixel_center(std::size_t row, std::size_t col);

// Head-disk mask shared by every topography.
const std::array<std::uint8_t, kTopoPixels>& head_mask();

// Azimuthal equidistant projection about the vertex: the equator maps to the unit
// circle. The input need not be unit length.
Eigen::Vector2d azimuthal_equidistant(const Eigen::Vector3d& position);

// Subtracts the across-channel mean at every sample (column).
Eigen::MatrixXd common_average_reference(const Eigen::MatrixXd& data);

// Thin-plate-spline interpolation from electrode projections onto the head grid.
// The system is factored once, so one interpolator can render every component
// of a recording.
class TopographyInterpolator {
 public:
  explicit TopographyInterpolator(std::span<const Eigen::Vector3d> positions);

  ScalpTopography operator()(std::span<const double> projection) const;

  std::size_t n_electrodes() const { return points_.size(); }
  std::span<const Eigen::Vector2d> projected_points() const { return points_; }

  // Value of the interpolant at an arbitrary plane location.
  double evaluate(std::span<const double> projection, const Eigen::Vector2d& at) const;

 private:
  Eigen::VectorXd coefficients(std::span<const double> projection) const;

  std::vector<Eigen::Vector2d> points_;
  Eigen::MatrixXd solve_;        // (n+3) x n: maps electrode values to spline coefficients
  Eigen::MatrixXd pixel_weights_;  // in-mask pixels x n
  std::vector<std::size_t> inside_pixels_;
};

ScalpTopography scalp_topography(std::span<const double> projection,
                                 std::span<const Eigen::Vector3d> positions);

// Median-across-windows Welch estimate in dB at 1..100 Hz. 1 s Hamming windows,
// 50% overlap.
std::array<double, kPsdBins> median_welch_psd(std::span<const double> activity, double sample_rate);

// Biased autocorrelation on a 1 s lag grid (101 lags), scaled so lag 0 is 0.99,
// with lag 0 dropped.
std::array<double, kAutocorrLags> autocorrelation(std::span<const double> activity,
                                                  double sample_rate);

// Scales topo and psd to a peak absolute value of 0.99. Autocorrelation passes through.
IcFeatures normalize_features(IcFeatures raw);

ScalpTopography mirrored(const ScalpTopography& topo);
ScalpTopography negated(const ScalpTopography& topo);

// The four-element symmetry orbit: identity, mirror, negation, mirror+negation.
std::array<IcFeatures, 4> symmetry_orbit(const IcFeatures& features);
std::array<LabeledFeatures, 4> augment(const IcFeatures& features, const LabelVector& label);

// Computes normalized features for every component of a recording, sharing the
// re-referenced scalp maps and the interpolator across components.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(const Recording& recording);

  IcFeatures operator()(std::size_t component) const;
  std::size_t n_components() const { return static_cast<std::size_t>(scalp_maps_.cols()); }

 private:
  const Recording& recording_;
  Eigen::MatrixXd scalp_maps_;  // common-average-referenced mixing matrix
  TopographyInterpolator interpolator_;
};

}  // namespace iclabel
