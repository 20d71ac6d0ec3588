#include "iclabel/features.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <string>

#include "iclabel/error.hpp"

namespace iclabel {
namespace {

constexpr double kDbFloor = 1e-12;

double tps_kernel(double r) { return r > 0.0 ? r * r * std::log(r) : 0.0; }

// FFTW planning is not thread-safe; execution on distinct buffers is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }

  std::span<double> input() { return {in_, n_}; }

  // Squared magnitudes of bins 0..n/2.
  void power(std::vector<double>& out) {
    fftw_execute(plan_);
    out.resize(n_ / 2 + 1);
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    }
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

double median_inplace(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

template <std::size_t N>
void scale_to_peak(std::array<double, N>& values) {
  double peak = 0.0;
  for (double v : values) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) return;
  const double s = kFeatureScale / peak;
  for (double& v : values) v *= s;
}

}  // namespace

void Recording::validate() const {
  if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) {
    throw Error(Errc::invalid_rate, "sample rate must be positive, got " + std::to_string(sample_rate));
  }
  if (n_channels() < 2) throw Error(Errc::degenerate_montage, "recording needs at least 2 channels");
  if (n_samples() < 1) throw Error(Errc::invalid_recording, "recording has no samples");
  if (n_components() < 1) throw Error(Errc::invalid_recording, "recording has no components");
  if (electrode_positions.size() != n_channels()) {
    throw Error(Errc::invalid_recording,
                "expected " + std::to_string(n_channels()) + " electrode positions, got " +
                    std::to_string(electrode_positions.size()));
  }
  if (static_cast<std::size_t>(mixing_matrix.rows()) != n_channels() ||
      static_cast<std::size_t>(component_activity.rows()) != n_components() ||
      static_cast<std::size_t>(component_activity.cols()) != n_samples()) {
    throw Error(Errc::invalid_recording,
                "mixing matrix x component activity does not match the channel data shape");
  }
  for (std::size_t i = 0; i < electrode_positions.size(); ++i) {
    const double r = electrode_positions[i].norm();
    if (!(r >= 0.8 && r <= 1.2)) {
      throw Error(Errc::invalid_recording,
                  "electrode " + std::to_string(i) + " lies off the unit sphere (norm " +
                      std::to_string(r) + ")");
    }
  }
}

Eigen::Vector2d pixel_center(std::size_t row, std::size_t col) {
  const double side = static_cast<double>(kTopoSide - 1);
  return {(2.0 * static_cast<double>(col) - side) / side,
          (side - 2.0 * static_cast<double>(row)) / side};
}

const std::array<std::uint8_t, kTopoPixels>& head_mask() {
  static const auto mask = [] {
    std::array<std::uint8_t, kTopoPixels> m{};
    for (std::size_t r = 0; r < kTopoSide; ++r) {
      for (std::size_t c = 0; c < kTopoSide; ++c) {
        m[r * kTopoSide + c] = pixel_center(r, c).squaredNorm() <= 1.0 ? 1 : 0;
      }
    }
    return m;
  }();
  return mask;
}

Eigen::Vector2d azimuthal_equidistant(const Eigen::Vector3d& position) {
  const double norm = position.norm();
  if (!(norm > 0.0)) throw Error(Errc::invalid_argument, "electrode position at the origin");
  const Eigen::Vector3d u = position / norm;
  const double theta = std::acos(std::clamp(u.z(), -1.0, 1.0));
  const double radius = theta / (std::numbers::pi / 2.0);
  const double planar = std::hypot(u.x(), u.y());
  if (planar == 0.0) return {0.0, 0.0};
  return {radius * u.x() / planar, radius * u.y() / planar};
}

Eigen::MatrixXd common_average_reference(const Eigen::MatrixXd& data) {
  if (data.rows() < 2) {
    throw Error(Errc::degenerate_montage, "common average reference needs at least 2 channels");
  }
  Eigen::MatrixXd out = data;
  out.rowwise() -= data.colwise().mean();
  return out;
}

TopographyInterpolator::TopographyInterpolator(std::span<const Eigen::Vector3d> positions) {
  const std::size_t n = positions.size();
  if (n < 3) {
    throw Error(Errc::interpolation_rank,
                "scalp interpolation needs at least 3 electrodes, got " + std::to_string(n));
  }
  points_.reserve(n);
  for (const auto& p : positions) points_.push_back(azimuthal_equidistant(p));

  double extent = 0.0;
  for (const auto& p : points_) extent = std::max(extent, p.norm());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if ((points_[i] - points_[j]).norm() <= 1e-9 * std::max(extent, 1.0)) {
        throw Error(Errc::interpolation_rank, "electrodes " + std::to_string(i) + " and " +
                                                  std::to_string(j) + " project to the same point");
      }
    }
  }

  Eigen::MatrixXd affine(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    affine.row(static_cast<Eigen::Index>(i)) << 1.0, points_[i].x(), points_[i].y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(affine);
  const auto sv = svd.singularValues();
  if (sv(2) <= 1e-9 * sv(0)) {
    throw Error(Errc::interpolation_rank, "electrode projections are collinear");
  }

  const auto ni = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(ni + 3, ni + 3);
  for (Eigen::Index i = 0; i < ni; ++i) {
    for (Eigen::Index j = 0; j < ni; ++j) {
      system(i, j) = tps_kernel((points_[static_cast<std::size_t>(i)] -
                                 points_[static_cast<std::size_t>(j)]).norm());
    }
  }
  system.topRightCorner(ni, 3) = affine;
  system.bottomLeftCorner(3, ni) = affine.transpose();

  Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
  if (!lu.isInvertible()) throw Error(Errc::interpolation_rank, "spline system is singular");
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(ni + 3, ni);
  rhs.topRows(ni).setIdentity();
  solve_ = lu.solve(rhs);

  const auto& mask = head_mask();
  for (std::size_t k = 0; k < kTopoPixels; ++k) {
    if (mask[k]) inside_pixels_.push_back(k);
  }
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(inside_pixels_.size()), ni + 3);
  for (std::size_t row = 0; row < inside_pixels_.size(); ++row) {
    const std::size_t k = inside_pixels_[row];
    const Eigen::Vector2d at = pixel_center(k / kTopoSide, k % kTopoSide);
    const auto r = static_cast<Eigen::Index>(row);
    for (Eigen::Index j = 0; j < ni; ++j) {
      basis(r, j) = tps_kernel((at - points_[static_cast<std::size_t>(j)]).norm());
    }
    basis(r, ni) = 1.0;
    basis(r, ni + 1) = at.x();
    basis(r, ni + 2) = at.y();
  }
  pixel_weights_ = basis * solve_;
}

namespace {
void check_projection(std::size_t got, std::size_t electrodes) {
  if (got != electrodes) {
    throw Error(Errc::shape_mismatch, "projection has " + std::to_string(got) + " entries for " +
                                          std::to_string(electrodes) + " electrodes");
  }
}
}  // namespace

Eigen::VectorXd TopographyInterpolator::coefficients(std::span<const double> projection) const {
  check_projection(projection.size(), points_.size());
  const Eigen::Map<const Eigen::VectorXd> v(projection.data(),
                                            static_cast<Eigen::Index>(projection.size()));
  return solve_ * v;
}

ScalpTopography TopographyInterpolator::operator()(std::span<const double> projection) const {
  check_projection(projection.size(), points_.size());
  const Eigen::Map<const Eigen::VectorXd> v(projection.data(),
                                            static_cast<Eigen::Index>(projection.size()));
  const Eigen::VectorXd inside = pixel_weights_ * v;
  ScalpTopography topo;
  topo.mask = head_mask();
  for (std::size_t row = 0; row < inside_pixels_.size(); ++row) {
    topo.pixels[inside_pixels_[row]] = inside(static_cast<Eigen::Index>(row));
  }
  return topo;
}

double TopographyInterpolator::evaluate(std::span<const double> projection,
                                        const Eigen::Vector2d& at) const {
  const Eigen::VectorXd coef = coefficients(projection);
  const auto n = static_cast<Eigen::Index>(points_.size());
  double value = coef(n) + coef(n + 1) * at.x() + coef(n + 2) * at.y();
  for (Eigen::Index j = 0; j < n; ++j) {
    value += coef(j) * tps_kernel((at - points_[static_cast<std::size_t>(j)]).norm());
  }
  return value;
}

ScalpTopography scalp_topography(std::span<const double> projection,
                                 std::span<const Eigen::Vector3d> positions) {
  return TopographyInterpolator(positions)(projection);
}

std::array<double, kPsdBins> median_welch_psd(std::span<const double> activity,
                                              double sample_rate) {
  if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) {
    throw Error(Errc::invalid_rate, "sample rate must be positive");
  }
  const auto window = static_cast<std::size_t>(std::lround(sample_rate));
  const double bin_hz = sample_rate / static_cast<double>(window);
  const std::size_t nyquist_bin = window / 2;
  if (window < 2 || static_cast<double>(nyquist_bin) * bin_hz < 1.0) {
    throw Error(Errc::invalid_rate, "sample rate too low to resolve 1 Hz");
  }
  if (activity.size() < window) {
    throw Error(Errc::insufficient_data, "need at least " + std::to_string(window) +
                                             " samples for one analysis window, got " +
                                             std::to_string(activity.size()));
  }
  const std::size_t hop = std::max<std::size_t>(window / 2, 1);
  const std::size_t n_windows = 1 + (activity.size() - window) / hop;

  std::vector<double> taper(window);
  double taper_energy = 0.0;
  for (std::size_t k = 0; k < window; ++k) {
    taper[k] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) /
                                      static_cast<double>(window - 1));
    taper_energy += taper[k] * taper[k];
  }
  const double scale = 1.0 / (sample_rate * taper_energy);

  // per_bin[k] collects bin k across windows
  std::vector<std::vector<double>> per_bin(nyquist_bin + 1, std::vector<double>(n_windows));
  RealFft fft(window);
  std::vector<double> power;
  for (std::size_t w = 0; w < n_windows; ++w) {
    auto in = fft.input();
    const std::size_t start = w * hop;
    for (std::size_t k = 0; k < window; ++k) in[k] = activity[start + k] * taper[k];
    fft.power(power);
    for (std::size_t k = 0; k <= nyquist_bin; ++k) {
      const bool edge = k == 0 || (window % 2 == 0 && k == nyquist_bin);
      per_bin[k][w] = power[k] * scale * (edge ? 1.0 : 2.0);
    }
  }

  std::vector<double> db(nyquist_bin + 1);
  for (std::size_t k = 0; k <= nyquist_bin; ++k) {
    db[k] = 10.0 * std::log10(median_inplace(per_bin[k]) + kDbFloor);
  }

  std::array<double, kPsdBins> out{};
  const double top_hz = static_cast<double>(nyquist_bin) * bin_hz;
  double last_valid = db[1 < db.size() ? 1 : 0];
  for (std::size_t f = 1; f <= kPsdBins; ++f) {
    const double hz = static_cast<double>(f);
    if (hz > top_hz + 1e-9) {
      out[f - 1] = last_valid;
      continue;
    }
    const double pos = std::min(hz / bin_hz, static_cast<double>(nyquist_bin));
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, nyquist_bin);
    const double frac = pos - static_cast<double>(lo);
    out[f - 1] = frac == 0.0 ? db[lo] : db[lo] + frac * (db[hi] - db[lo]);
    last_valid = out[f - 1];
  }
  return out;
}

std::array<double, kAutocorrLags> autocorrelation(std::span<const double> activity,
                                                  double sample_rate) {
  if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) {
    throw Error(Errc::invalid_rate, "sample rate must be positive");
  }
  const std::size_t n = activity.size();
  if (static_cast<double>(n) < 2.0 * sample_rate) {
    throw Error(Errc::insufficient_data, "autocorrelation needs at least 2 s of samples");
  }
  const auto max_lag = static_cast<std::size_t>(std::ceil(sample_rate));

  double mean = 0.0;
  double raw_power = 0.0;
  for (double x : activity) {
    mean += x;
    raw_power += x * x;
  }
  mean /= static_cast<double>(n);
  raw_power /= static_cast<double>(n);

  std::vector<double> centered(n);
  for (std::size_t t = 0; t < n; ++t) centered[t] = activity[t] - mean;

  std::vector<double> r(max_lag + 1);
  for (std::size_t k = 0; k <= max_lag; ++k) {
    double acc = 0.0;
    for (std::size_t t = 0; t + k < n; ++t) acc += centered[t] * centered[t + k];
    r[k] = acc / static_cast<double>(n);
  }
  if (!(r[0] > 1e-12 * raw_power) || !std::isfinite(r[0])) {
    throw Error(Errc::undefined_autocorrelation, "signal has zero variance");
  }

  std::array<double, kAutocorrLags> out{};
  for (std::size_t j = 1; j <= kAutocorrLags; ++j) {
    const double lag = static_cast<double>(j) * sample_rate / static_cast<double>(kAutocorrLags);
    const auto lo = std::min(static_cast<std::size_t>(std::floor(lag)), max_lag);
    const std::size_t hi = std::min(lo + 1, max_lag);
    const double frac = std::clamp(lag - static_cast<double>(lo), 0.0, 1.0);
    const double value = r[lo] + frac * (r[hi] - r[lo]);
    out[j - 1] = kFeatureScale * value / r[0];
  }
  return out;
}

IcFeatures normalize_features(IcFeatures raw) {
  double peak = 0.0;
  for (std::size_t k = 0; k < kTopoPixels; ++k) {
    if (!raw.topo.mask[k]) raw.topo.pixels[k] = 0.0;
    peak = std::max(peak, std::abs(raw.topo.pixels[k]));
  }
  if (peak > 0.0) {
    const double s = kFeatureScale / peak;
    for (double& v : raw.topo.pixels) v *= s;
  }
  scale_to_peak(raw.psd);
  return raw;
}

ScalpTopography mirrored(const ScalpTopography& topo) {
  ScalpTopography out;
  for (std::size_t r = 0; r < kTopoSide; ++r) {
    for (std::size_t c = 0; c < kTopoSide; ++c) {
      out.pixels[r * kTopoSide + c] = topo.pixels[r * kTopoSide + (kTopoSide - 1 - c)];
      out.mask[r * kTopoSide + c] = topo.mask[r * kTopoSide + (kTopoSide - 1 - c)];
    }
  }
  return out;
}

ScalpTopography negated(const ScalpTopography& topo) {
  ScalpTopography out = topo;
  for (double& v : out.pixels) v = -v;
  return out;
}

std::array<IcFeatures, 4> symmetry_orbit(const IcFeatures& features) {
  std::array<IcFeatures, 4> orbit{features, features, features, features};
  orbit[1].topo = mirrored(features.topo);
  orbit[2].topo = negated(features.topo);
  orbit[3].topo = negated(orbit[1].topo);
  return orbit;
}

std::array<LabeledFeatures, 4> augment(const IcFeatures& features, const LabelVector& label) {
  const auto orbit = symmetry_orbit(features);
  return {LabeledFeatures{orbit[0], label}, LabeledFeatures{orbit[1], label},
          LabeledFeatures{orbit[2], label}, LabeledFeatures{orbit[3], label}};
}

FeatureExtractor::FeatureExtractor(const Recording& recording)
    : recording_(recording),
      scalp_maps_((recording.validate(), common_average_reference(recording.mixing_matrix))),
      interpolator_(recording.electrode_positions) {}

IcFeatures FeatureExtractor::operator()(std::size_t component) const {
  const auto c = static_cast<Eigen::Index>(component);
  const Eigen::VectorXd projection = scalp_maps_.col(c);
  const Eigen::VectorXd activity = recording_.component_activity.row(c).transpose();
  const std::span<const double> series(activity.data(), static_cast<std::size_t>(activity.size()));

  IcFeatures raw;
  raw.topo = interpolator_(std::span<const double>(projection.data(),
                                                   static_cast<std::size_t>(projection.size())));
  raw.psd = median_welch_psd(series, recording_.sample_rate);
  raw.autocorr = autocorrelation(series, recording_.sample_rate);
  return normalize_features(raw);
}

}  // namespace iclabel
