#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <random>

#include "iclabel/error.hpp"
#include "iclabel/features.hpp"
#include "iclabel/synthetic.hpp"
#include "psd_oracle.hpp"
#include "test_support.hpp"

using namespace iclabel;
using iclabel::testing::dft_welch;
using iclabel::testing::sine;
using iclabel::testing::white;

namespace {

double biased_acf(const std::vector<double>& x, std::size_t lag) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double acc = 0.0;
  for (std::size_t t = 0; t + lag < x.size(); ++t) acc += (x[t] - mean) * (x[t + lag] - mean);
  return acc / static_cast<double>(x.size());
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

TEST(CommonAverage, Examples) {
  Eigen::MatrixXd d(2, 2);
  d << 1, 2, 3, 4;
  Eigen::MatrixXd expected(2, 2);
  expected << -1, -1, 1, 1;
  EXPECT_EQ(common_average_reference(d), expected);
  EXPECT_EQ(common_average_reference(expected), expected);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.0, 10.0);
  Eigen::MatrixXd r(8, 1024);
  for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = normal(rng);
  const auto car = common_average_reference(r);
  EXPECT_LT(car.colwise().sum().cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(error_code_of([] { (void)common_average_reference(Eigen::MatrixXd::Ones(1, 4)); }),
            Errc::degenerate_montage);
}

TEST(Topography, MaskGeometry) {
  const auto& mask = head_mask();
  std::size_t inside = 0;
  for (std::size_t k = 0; k < kTopoPixels; ++k) inside += mask[k];
  // Grid nodes sit at linspace(-1, 1, 32); the unit disk spans 15.5 node spacings.
  std::size_t expected = 0;
  for (std::size_t r = 0; r < kTopoSide; ++r) {
    for (std::size_t c = 0; c < kTopoSide; ++c) {
      const double y = -1.0 + 2.0 * static_cast<double>(r) / (kTopoSide - 1);
      const double x = -1.0 + 2.0 * static_cast<double>(c) / (kTopoSide - 1);
      expected += std::hypot(x, y) <= 1.0;
    }
  }
  EXPECT_EQ(inside, expected);
  EXPECT_NEAR(static_cast<double>(inside) / kTopoPixels, M_PI * 15.5 * 15.5 / kTopoPixels, 0.03);
  EXPECT_FALSE(mask[0]);
  EXPECT_TRUE(mask[16 * kTopoSide + 16]);
  // Mask is left-right symmetric.
  for (std::size_t r = 0; r < kTopoSide; ++r) {
    for (std::size_t c = 0; c < kTopoSide; ++c) {
      EXPECT_EQ(mask[r * kTopoSide + c], mask[r * kTopoSide + (kTopoSide - 1 - c)]);
    }
  }
}

TEST(Topography, AzimuthalProjection) {
  EXPECT_LT(azimuthal_equidistant({0, 0, 1}).norm(), 1e-15);
  EXPECT_NEAR(azimuthal_equidistant({1, 0, 0}).norm(), 1.0, 1e-12);
  EXPECT_NEAR(azimuthal_equidistant({0, -1, 0}).y(), -1.0, 1e-12);
  const Eigen::Vector3d p(std::sin(M_PI / 6), 0, std::cos(M_PI / 6));
  EXPECT_NEAR(azimuthal_equidistant(p).x(), 1.0 / 3.0, 1e-12);
  // radius is independent of the input norm
  EXPECT_NEAR(azimuthal_equidistant(1.1 * p).x(), 1.0 / 3.0, 1e-12);
}

TEST(Topography, ConstantAndLinearity) {
  const auto pos = synth::spiral_montage(32);
  const std::vector<double> c(32, 2.5);
  const auto topo = scalp_topography(c, pos);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> proj(32), neg(32);
  for (std::size_t i = 0; i < 32; ++i) {
    proj[i] = normal(rng);
    neg[i] = -proj[i];
  }
  const auto a = scalp_topography(proj, pos);
  const auto b = scalp_topography(neg, pos);
  for (std::size_t k = 0; k < kTopoPixels; ++k) {
    if (topo.mask[k]) {
      EXPECT_NEAR(topo.pixels[k], 2.5, 1e-9);
    } else {
      EXPECT_EQ(topo.pixels[k], 0.0);
      EXPECT_EQ(a.pixels[k], 0.0);
    }
    EXPECT_NEAR(a.pixels[k], -b.pixels[k], 1e-12);
  }
}

TEST(Topography, InterpolatesElectrodeValues) {
  const auto pos = synth::spiral_montage(24);
  TopographyInterpolator interp(pos);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> proj(24);
  for (auto& v : proj) v = normal(rng);
  const auto pts = interp.projected_points();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_NEAR(interp.evaluate(proj, pts[i]), proj[i], 1e-8) << "electrode " << i;
  }
}

TEST(Topography, SingleElectrodePeakAtNearestPixel) {
  const auto pos = synth::spiral_montage(32);
  TopographyInterpolator interp(pos);
  const auto pts = interp.projected_points();
  for (std::size_t e : {0u, 5u, 11u}) {
    std::vector<double> proj(32, 0.0);
    proj[e] = 1.0;
    const auto topo = interp(proj);
    std::size_t best = 0;
    for (std::size_t k = 0; k < kTopoPixels; ++k) {
      if (topo.mask[k] && topo.pixels[k] > topo.pixels[best]) best = k;
    }
    // brute-force nearest in-mask pixel to the electrode's projection
    std::size_t nearest = 0;
    double nearest_d = 1e9;
    for (std::size_t r = 0; r < kTopoSide; ++r) {
      for (std::size_t c = 0; c < kTopoSide; ++c) {
        if (!topo.inside(r, c)) continue;
        const double d = (pixel_center(r, c) - pts[e]).norm();
        if (d < nearest_d) {
          nearest_d = d;
          nearest = r * kTopoSide + c;
        }
      }
    }
    const double dr = std::abs(static_cast<double>(best / kTopoSide) -
                               static_cast<double>(nearest / kTopoSide));
    const double dc = std::abs(static_cast<double>(best % kTopoSide) -
                               static_cast<double>(nearest % kTopoSide));
    EXPECT_LE(std::max(dr, dc), 1.0) << "electrode " << e;
  }
}

TEST(Topography, DegenerateMontage) {
  std::vector<Eigen::Vector3d> same(4, Eigen::Vector3d(0, 0, 1));
  EXPECT_EQ(error_code_of([&] { TopographyInterpolator t(same); }), Errc::interpolation_rank);
  std::vector<Eigen::Vector3d> two = {{1, 0, 0}, {0, 1, 0}};
  EXPECT_NE(exit_code(error_code_of([&] { TopographyInterpolator t(two); })), 0);
}

TEST(Psd, MatchesDftOracle) {
  for (double fs : {256.0, 250.0, 128.0, 101.0}) {
    auto x = white(static_cast<std::size_t>(fs * 6.3), 7);
    const auto s = sine(17.0, fs, 6.3, 3.0);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += s[i];
    const auto got = median_welch_psd(x, fs);
    const auto want = dft_welch(x, fs, true);
    for (std::size_t f = 0; f < 100; ++f) EXPECT_NEAR(got[f], want[f], 1e-8) << fs << " Hz bin " << f;
  }
}

TEST(Psd, SinePeak) {
  const auto x = sine(10.0, 256.0, 10.0);
  const auto psd = median_welch_psd(x, 256.0);
  EXPECT_EQ(std::max_element(psd.begin(), psd.end()) - psd.begin(), 9);
  const auto oracle = dft_welch(x, 256.0, true);
  EXPECT_EQ(std::max_element(oracle.begin(), oracle.end()) - oracle.begin(), 9);
}

TEST(Psd, AboveNyquistRepeatsLastBin) {
  const auto x = white(128 * 10, 3);
  const auto psd = median_welch_psd(x, 128.0);
  for (std::size_t f = 64; f < 100; ++f) EXPECT_EQ(psd[f], psd[63]);
}

TEST(Psd, MedianStabilizesWhiteNoise) {
  // Spread of log power across bins shrinks as more windows enter the median.
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto x = white(256 * 60, 100 + seed);
    const std::vector<double> two(x.begin(), x.begin() + 256 + 128);
    auto spread = [](const std::array<double, 100>& p) {
      const double m = std::accumulate(p.begin(), p.end(), 0.0) / 100.0;
      double s = 0.0;
      for (double v : p) s += (v - m) * (v - m);
      return std::sqrt(s / 99.0);
    };
    if (spread(median_welch_psd(x, 256.0)) < spread(median_welch_psd(two, 256.0))) ++wins;
  }
  EXPECT_EQ(wins, 50);
}

TEST(Psd, RobustToBurst) {
  const double fs = 256.0;
  // At 30 s (59 windows) a single extra rank moves the median of a noise bin
  // by up to 2 dB; at 120 s the rank spacing stays well under 1 dB.
  const auto clean = sine(10.0, fs, 120.0);
  auto noisy = clean;
  auto noise = white(clean.size(), 5);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    noisy[i] += 0.01 * noise[i];
  }
  auto burst = noisy;
  for (std::size_t i = 0; i < 256; ++i) burst[20 * 128 + i] *= 1000.0;
  const auto a = median_welch_psd(noisy, fs);
  const auto b = median_welch_psd(burst, fs);
  const auto ma = dft_welch(noisy, fs, false);
  const auto mb = dft_welch(burst, fs, false);
  double median_shift = 0.0, mean_shift = 1e9;
  for (std::size_t f = 0; f < 100; ++f) {
    if (f + 1 >= 8 && f + 1 <= 12) continue;  // peak neighbourhood
    median_shift = std::max(median_shift, std::abs(a[f] - b[f]));
    mean_shift = std::min(mean_shift, std::abs(ma[f] - mb[f]));
  }
  EXPECT_LT(median_shift, 1.0);
  EXPECT_GT(mean_shift, 10.0);
}

TEST(Psd, Errors) {
  EXPECT_EQ(error_code_of([] { (void)median_welch_psd(std::vector<double>(100, 1.0), 256.0); }),
            Errc::insufficient_data);
  EXPECT_EQ(error_code_of([] { (void)median_welch_psd(std::vector<double>(100, 1.0), 0.0); }),
            Errc::invalid_rate);
}

TEST(Autocorr, MatchesDirectSum) {
  const double fs = 200.0;
  auto x = white(static_cast<std::size_t>(fs * 5), 11);
  const auto s = sine(7.0, fs, 5.0, 2.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += s[i];
  const auto got = autocorrelation(x, fs);
  const double r0 = biased_acf(x, 0);
  for (std::size_t j = 1; j <= 100; ++j) {
    const double lag = static_cast<double>(j) * fs / 100.0;
    const auto lo = static_cast<std::size_t>(std::floor(lag));
    const double frac = lag - static_cast<double>(lo);
    const double hi_v = frac > 0 ? biased_acf(x, lo + 1) : 0.0;
    const double r = (1 - frac) * biased_acf(x, lo) + frac * hi_v;
    EXPECT_NEAR(got[j - 1], 0.99 * r / r0, 1e-12) << "lag " << j;
  }
  // lag 0 of the same scaling is 0.99 by construction
  EXPECT_DOUBLE_EQ(0.99 * r0 / r0, 0.99);
}

TEST(Autocorr, WhiteNoiseNearZero) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto acf = autocorrelation(white(256 * 30, 40 + seed), 256.0);
    for (double v : acf) EXPECT_LT(std::abs(v), 0.1);
  }
}

TEST(Autocorr, SineIsCosine) {
  const auto acf = autocorrelation(sine(5.0, 256.0, 60.0), 256.0);
  double worst = 0.0;
  for (std::size_t j = 1; j <= 100; ++j) {
    const double lag = static_cast<double>(j) / 100.0;
    worst = std::max(worst, std::abs(acf[j - 1] - 0.99 * std::cos(2.0 * M_PI * 5.0 * lag)));
  }
  EXPECT_LT(worst, 0.05);
}

TEST(Autocorr, Errors) {
  EXPECT_EQ(error_code_of([] { (void)autocorrelation(std::vector<double>(600, 3.0), 256.0); }),
            Errc::undefined_autocorrelation);
  EXPECT_EQ(error_code_of([] { (void)autocorrelation(white(300, 1), 256.0); }),
            Errc::insufficient_data);
}

TEST(Normalize, Scaling) {
  IcFeatures f;
  f.topo.mask = head_mask();
  f.topo.pixels[16 * kTopoSide + 16] = -3.3;
  f.topo.pixels[16 * kTopoSide + 10] = 1.1;
  f.topo.pixels[0] = 100.0;  // outside the mask, must be dropped
  f.psd[3] = -20.0;
  f.psd[5] = 10.0;
  f.autocorr[0] = 0.5;
  const auto n = normalize_features(f);
  EXPECT_NEAR(n.topo.pixels[16 * kTopoSide + 16], -0.99, 1e-15);
  EXPECT_NEAR(n.topo.pixels[16 * kTopoSide + 10], 0.33, 1e-15);
  EXPECT_EQ(n.topo.pixels[0], 0.0);
  EXPECT_NEAR(n.psd[3], -0.99, 1e-15);
  EXPECT_EQ(n.autocorr[0], 0.5);
  const auto again = normalize_features(n);
  for (std::size_t k = 0; k < kPsdBins; ++k) EXPECT_NEAR(again.psd[k], n.psd[k], 1e-12);

  IcFeatures zero;
  zero.topo.mask = head_mask();
  const auto z = normalize_features(zero);
  EXPECT_EQ(z, zero);
}

TEST(Symmetry, MirrorAndNegate) {
  std::mt19937_64 rng(5);
  const auto f = iclabel::testing::random_features(rng);
  EXPECT_EQ(mirrored(mirrored(f.topo)), f.topo);
  EXPECT_EQ(negated(negated(f.topo)), f.topo);
  const auto m = mirrored(f.topo);
  EXPECT_EQ(m.at(3, 10), f.topo.at(3, kTopoSide - 1 - 10));
  EXPECT_EQ(m.mask, f.topo.mask);

  const auto out = augment(f, LabelVector::one_hot(Category::eye));
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0].features, f);
  for (const auto& o : out) {
    EXPECT_EQ(o.label, LabelVector::one_hot(Category::eye));
    EXPECT_EQ(o.features.psd, f.psd);
    EXPECT_EQ(o.features.autocorr, f.autocorr);
  }
  std::array<ScalpTopography, 4> expected = {f.topo, mirrored(f.topo), negated(f.topo),
                                             negated(mirrored(f.topo))};
  for (const auto& e : expected) {
    EXPECT_TRUE(std::any_of(out.begin(), out.end(), [&](const auto& o) { return o.features.topo == e; }));
  }
}

TEST(Symmetry, SymmetricTopoDuplicates) {
  IcFeatures f;
  f.topo.mask = head_mask();
  for (std::size_t r = 0; r < kTopoSide; ++r) {
    for (std::size_t c = 0; c < kTopoSide; ++c) {
      if (f.topo.inside(r, c)) f.topo.at(r, c) = std::abs(pixel_center(r, c).x()) + 0.1 * static_cast<double>(r);
    }
  }
  const auto orbit = symmetry_orbit(f);
  EXPECT_EQ(orbit[0], f);
  EXPECT_EQ(orbit[1], orbit[0]);
}

TEST(Recording, Validate) {
  synth::RecordingParams p;
  p.n_channels = 4;
  p.n_components = 2;
  p.duration_s = 3;
  auto rec = synth::make_recording(p, 0);
  EXPECT_NO_THROW(rec.validate());
  auto bad = rec;
  bad.electrode_positions[1] *= 1.5;
  EXPECT_EQ(error_code_of([&] { bad.validate(); }), Errc::invalid_recording);
  bad = rec;
  bad.sample_rate = 0.0;
  EXPECT_EQ(error_code_of([&] { bad.validate(); }), Errc::invalid_rate);
  bad = rec;
  bad.component_activity.conservativeResize(2, 10);
  EXPECT_EQ(error_code_of([&] { bad.validate(); }), Errc::invalid_recording);
}

TEST(Extractor, ShapesDeterminismAndErrors) {
  synth::RecordingParams p;
  p.n_channels = 8;
  p.n_components = 8;
  p.duration_s = 10;
  p.constant_components = {3};
  const auto rec = synth::make_recording(p, 21);
  FeatureExtractor fx(rec);
  ASSERT_EQ(fx.n_components(), 8u);
  for (std::size_t c = 0; c < 8; ++c) {
    if (c == 3) {
      EXPECT_EQ(error_code_of([&] { (void)fx(c); }), Errc::undefined_autocorrelation);
      continue;
    }
    const auto f = fx(c);
    EXPECT_EQ(f, fx(c));
    double peak = 0.0;
    for (std::size_t k = 0; k < kTopoPixels; ++k) {
      EXPECT_EQ(f.topo.mask[k], head_mask()[k]);
      if (!f.topo.mask[k]) {
        EXPECT_EQ(f.topo.pixels[k], 0.0);
      }
      peak = std::max(peak, std::abs(f.topo.pixels[k]));
    }
    EXPECT_NEAR(peak, 0.99, 1e-12);
    double psd_peak = 0.0;
    for (double v : f.psd) psd_peak = std::max(psd_peak, std::abs(v));
    EXPECT_NEAR(psd_peak, 0.99, 1e-12);
    for (double v : f.autocorr) EXPECT_LE(std::abs(v), 0.99 + 1e-12);
  }
  auto short_params = p;
  short_params.duration_s = 1.5;
  short_params.constant_components.clear();
  const auto short_rec = synth::make_recording(short_params, 1);
  FeatureExtractor sx(short_rec);
  EXPECT_EQ(error_code_of([&] { (void)sx(0); }), Errc::insufficient_data);
}

TEST(Extractor, CommonAverageIsApplied) {
  // Adding the same offset to every channel's map does not change the topography.
  synth::RecordingParams p;
  p.n_channels = 10;
  p.n_components = 2;
  p.duration_s = 4;
  auto rec = synth::make_recording(p, 8);
  const auto a = FeatureExtractor(rec)(0);
  rec.mixing_matrix.col(0).array() += 5.0;
  rec.channel_data = rec.mixing_matrix * rec.component_activity;
  const auto b = FeatureExtractor(rec)(0);
  for (std::size_t k = 0; k < kTopoPixels; ++k) EXPECT_NEAR(a.topo.pixels[k], b.topo.pixels[k], 1e-9);
}
