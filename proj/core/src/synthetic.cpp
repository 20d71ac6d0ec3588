#include "iclabel/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "iclabel/error.hpp"

namespace iclabel::synth {
namespace {

constexpr double kPi = std::numbers::pi;

Eigen::VectorXd source(std::size_t kind, std::size_t n, double fs, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd x(static_cast<Eigen::Index>(n));
  const double phase = 2.0 * kPi * unit(rng);
  auto t = [fs](std::size_t i) { return static_cast<double>(i) / fs; };
  switch (kind % kNumCategories) {
    case 0: {  // alpha rhythm with slow amplitude modulation
      const double f = 9.0 + 2.0 * unit(rng);
      for (std::size_t i = 0; i < n; ++i) {
        const double env = 1.0 + 0.5 * std::sin(2.0 * kPi * 0.2 * t(i) + phase);
        x[static_cast<Eigen::Index>(i)] = env * std::sin(2.0 * kPi * f * t(i)) + 0.3 * normal(rng);
      }
      break;
    }
    case 1: {  // differenced white noise: energy rising with frequency
      double prev = normal(rng);
      for (std::size_t i = 0; i < n; ++i) {
        const double cur = normal(rng);
        x[static_cast<Eigen::Index>(i)] = cur - prev;
        prev = cur;
      }
      break;
    }
    case 2: {  // leaky random walk: slow drift
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        v = 0.995 * v + normal(rng);
        x[static_cast<Eigen::Index>(i)] = v;
      }
      break;
    }
    case 3: {  // cardiac-like spike train near 1.1 Hz
      const double period = fs / (1.0 + 0.2 * unit(rng));
      for (std::size_t i = 0; i < n; ++i) {
        const double pos = std::fmod(static_cast<double>(i), period);
        x[static_cast<Eigen::Index>(i)] = std::exp(-pos * pos / (2.0 * 4.0)) * 5.0 + 0.1 * normal(rng);
      }
      break;
    }
    case 4: {  // mains interference
      for (std::size_t i = 0; i < n; ++i) {
        x[static_cast<Eigen::Index>(i)] = std::sin(2.0 * kPi * 60.0 * t(i) + phase) + 0.05 * normal(rng);
      }
      break;
    }
    case 5: {  // white noise
      for (std::size_t i = 0; i < n; ++i) x[static_cast<Eigen::Index>(i)] = normal(rng);
      break;
    }
    default: {  // pink-ish noise from a sum of one-pole filters
      double a = 0.0, b = 0.0, c = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = normal(rng);
        a = 0.99 * a + w * 0.1;
        b = 0.9 * b + w * 0.3;
        c = 0.5 * c + w * 0.6;
        x[static_cast<Eigen::Index>(i)] = a + b + c;
      }
      break;
    }
  }
  return x;
}

}  // namespace

std::vector<Eigen::Vector3d> spiral_montage(std::size_t n_channels) {
  std::vector<Eigen::Vector3d> out;
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  const double z_min = -0.3;
  for (std::size_t i = 0; i < n_channels; ++i) {
    const double frac = (static_cast<double>(i) + 0.5) / static_cast<double>(n_channels);
    const double z = 1.0 - frac * (1.0 - z_min);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double az = golden * static_cast<double>(i);
    out.emplace_back(r * std::cos(az), r * std::sin(az), z);
  }
  return out;
}

Recording make_recording(const RecordingParams& params, std::uint64_t seed) {
  if (params.n_channels < 3 || params.n_components == 0 || params.sample_rate <= 0.0 ||
      params.duration_s <= 0.0) {
    throw Error(Errc::invalid_argument, "synthetic recording parameters out of range");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Recording rec;
  rec.sample_rate = params.sample_rate;
  rec.electrode_positions = spiral_montage(params.n_channels);
  const auto n = static_cast<std::size_t>(std::llround(params.duration_s * params.sample_rate));
  const auto nc = static_cast<Eigen::Index>(params.n_channels);
  const auto nk = static_cast<Eigen::Index>(params.n_components);

  rec.mixing_matrix.resize(nc, nk);
  rec.component_activity.resize(nk, static_cast<Eigen::Index>(n));
  for (Eigen::Index k = 0; k < nk; ++k) {
    Eigen::Vector3d center(normal(rng), normal(rng), std::abs(normal(rng)) + 0.3);
    center.normalize();
    const double width = 0.2 + 0.3 * std::abs(normal(rng));
    const double sign = normal(rng) < 0 ? -1.0 : 1.0;
    for (Eigen::Index c = 0; c < nc; ++c) {
      const double d2 = (rec.electrode_positions[static_cast<std::size_t>(c)] - center).squaredNorm();
      rec.mixing_matrix(c, k) = sign * std::exp(-d2 / width) + 0.05 * normal(rng);
    }
    rec.component_activity.row(k) =
        source(static_cast<std::size_t>(k), n, params.sample_rate, rng).transpose();
  }
  for (std::size_t k : params.constant_components) {
    if (k < params.n_components) rec.component_activity.row(static_cast<Eigen::Index>(k)).setConstant(1.5);
  }
  rec.channel_data = rec.mixing_matrix * rec.component_activity;
  return rec;
}

std::vector<LabeledFeatures> separable_toy_set(std::size_t n_examples, std::size_t n_categories,
                                               std::uint64_t seed) {
  if (n_categories < 2 || n_categories > kNumCategories) {
    throw Error(Errc::invalid_argument, "toy set needs 2..7 categories");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto& mask = head_mask();

  std::vector<LabeledFeatures> out;
  out.reserve(n_examples);
  for (std::size_t e = 0; e < n_examples; ++e) {
    const std::size_t cat = e % n_categories;
    const double pos = static_cast<double>(cat) / static_cast<double>(n_categories - 1);
    IcFeatures f;
    f.topo.mask = mask;

    // Midline blob moving from anterior to posterior with the category.
    const double cy = 0.6 - 1.2 * pos + 0.08 * normal(rng);
    const double cx = 0.08 * normal(rng);
    const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < kTopoSide; ++r) {
      for (std::size_t c = 0; c < kTopoSide; ++c) {
        const std::size_t k = r * kTopoSide + c;
        if (!mask[k]) continue;
        const auto p = pixel_center(r, c);
        const double d2 = (p.x() - cx) * (p.x() - cx) + (p.y() - cy) * (p.y() - cy);
        f.topo.pixels[k] = sign * std::exp(-d2 / 0.15) + 0.05 * normal(rng);
      }
    }

    const double peak = 8.0 + 30.0 * pos + 2.0 * normal(rng);
    for (std::size_t b = 0; b < kPsdBins; ++b) {
      const double hz = static_cast<double>(b + 1);
      f.psd[b] = -10.0 * std::log10(hz) + 12.0 * std::exp(-(hz - peak) * (hz - peak) / 8.0) +
                 0.3 * normal(rng);
    }

    const double period = 0.05 + 0.2 * pos;
    for (std::size_t j = 0; j < kAutocorrLags; ++j) {
      const double lag = static_cast<double>(j + 1) / 100.0;
      f.autocorr[j] = kFeatureScale * std::exp(-lag / 0.5) * std::cos(2.0 * kPi * lag / period) +
                      0.02 * normal(rng);
    }

    out.push_back({normalize_features(f), LabelVector::one_hot(static_cast<Category>(cat))});
  }
  return out;
}

}  // namespace iclabel::synth
