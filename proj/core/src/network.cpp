#include "iclabel/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "iclabel/error.hpp"

namespace iclabel::nn {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

constexpr std::size_t kPsdOut = 13;  // 100 -> 50 -> 25 -> 13

struct ConvGeometry {
  std::size_t in_h, in_w, in_c;
  std::size_t out_h, out_w, out_c;
  std::size_t k_h, k_w, stride;
  std::size_t pad_top, pad_left;

  std::size_t positions() const { return out_h * out_w; }
  std::size_t patch() const { return k_h * k_w * in_c; }
};

std::size_t leading_pad(std::size_t in, std::size_t out, std::size_t k, std::size_t s) {
  const std::ptrdiff_t total =
      static_cast<std::ptrdiff_t>((out - 1) * s + k) - static_cast<std::ptrdiff_t>(in);
  return total > 0 ? static_cast<std::size_t>(total) / 2 : 0;
}

ConvGeometry make_geometry(const LayerSpec& spec, std::size_t in_h, std::size_t in_w) {
  ConvGeometry g{};
  g.in_h = in_h;
  g.in_w = in_w;
  g.in_c = spec.in_channels;
  g.out_c = spec.filters;
  g.stride = spec.stride;
  g.k_w = spec.kernel;
  g.out_w = conv_output_length(in_w, spec.kernel, spec.stride, spec.padding);
  g.pad_left = spec.padding == Padding::same ? leading_pad(in_w, g.out_w, g.k_w, g.stride) : 0;
  if (spec.kind == LayerKind::conv2d) {
    g.k_h = spec.kernel;
    g.out_h = conv_output_length(in_h, spec.kernel, spec.stride, spec.padding);
    g.pad_top = spec.padding == Padding::same ? leading_pad(in_h, g.out_h, g.k_h, g.stride) : 0;
  } else {
    g.k_h = 1;
    g.out_h = 1;
    g.pad_top = 0;
  }
  return g;
}

const std::array<ConvGeometry, kNumLayers>& geometries() {
  static const auto geo = [] {
    const auto& arch = architecture();
    std::array<ConvGeometry, kNumLayers> g{};
    g[topo1] = make_geometry(arch[topo1], kTopoSide, kTopoSide);
    g[topo2] = make_geometry(arch[topo2], g[topo1].out_h, g[topo1].out_w);
    g[topo3] = make_geometry(arch[topo3], g[topo2].out_h, g[topo2].out_w);
    g[psd1] = make_geometry(arch[psd1], 1, kPsdBins);
    g[psd2] = make_geometry(arch[psd2], 1, g[psd1].out_w);
    g[psd3] = make_geometry(arch[psd3], 1, g[psd2].out_w);
    g[acf1] = make_geometry(arch[acf1], 1, kAutocorrLags);
    g[acf2] = make_geometry(arch[acf2], 1, g[acf1].out_w);
    g[acf3] = make_geometry(arch[acf3], 1, g[acf2].out_w);
    g[final_layer] = make_geometry(arch[final_layer], kFusedSide, kFusedSide);
    return g;
  }();
  return geo;
}

template <typename T>
void im2col(const Mat<T>& input, std::size_t batch, const ConvGeometry& g, Mat<T>& cols) {
  const auto rows = static_cast<Eigen::Index>(batch * g.positions());
  cols.setZero(rows, static_cast<Eigen::Index>(g.patch()));
  const T* src = input.data();
  T* dst = cols.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        T* row = dst + ((b * g.out_h + oy) * g.out_w + ox) * g.patch();
        for (std::size_t ky = 0; ky < g.k_h; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t kx = 0; kx < g.k_w; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            const T* from =
                src + ((b * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                       static_cast<std::size_t>(ix)) * g.in_c;
            std::copy_n(from, g.in_c, row + (ky * g.k_w + kx) * g.in_c);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const Mat<T>& cols, std::size_t batch, const ConvGeometry& g, Mat<T>& input) {
  input.setZero(static_cast<Eigen::Index>(batch * g.in_h * g.in_w),
                static_cast<Eigen::Index>(g.in_c));
  const T* src = cols.data();
  T* dst = input.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const T* row = src + ((b * g.out_h + oy) * g.out_w + ox) * g.patch();
        for (std::size_t ky = 0; ky < g.k_h; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t kx = 0; kx < g.k_w; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            T* to = dst + ((b * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                           static_cast<std::size_t>(ix)) * g.in_c;
            const T* from = row + (ky * g.k_w + kx) * g.in_c;
            for (std::size_t c = 0; c < g.in_c; ++c) to[c] += from[c];
          }
        }
      }
    }
  }
}

template <typename T>
struct LayerCache {
  Mat<T> cols;
  Mat<T> out;  // post-activation
};

template <typename T>
struct Pass {
  std::size_t batch = 0;
  std::array<LayerCache<T>, kNumLayers> layers;
  Mat<T> fused;
};

template <typename T>
void check_finite(const Mat<T>& m, std::string_view layer) {
  if (!m.allFinite()) {
    throw Error(Errc::numeric_instability,
                "non-finite activations in layer " + std::string(layer));
  }
}

template <typename T>
void conv_forward(const LayerParams<T>& p, const LayerSpec& spec, const ConvGeometry& g,
                  const Mat<T>& input, std::size_t batch, LayerCache<T>& cache) {
  im2col(input, batch, g, cache.cols);
  const Eigen::Map<const Mat<T>> kernel(p.kernel.data(), static_cast<Eigen::Index>(g.out_c),
                                        static_cast<Eigen::Index>(g.patch()));
  const Eigen::Map<const RowVec<T>> bias(p.bias.data(), static_cast<Eigen::Index>(g.out_c));
  cache.out.resize(cache.cols.rows(), static_cast<Eigen::Index>(g.out_c));
  cache.out.noalias() = cache.cols * kernel.transpose();
  cache.out.rowwise() += bias;
  if (spec.activation == Activation::leaky_relu) {
    const T slope = static_cast<T>(kLeakySlope);
    cache.out = cache.out.unaryExpr([slope](T z) { return z > T(0) ? z : slope * z; });
  }
  check_finite(cache.out, spec.name);
}

// d_out holds dL/d(activation) on entry and is overwritten with dL/d(pre-activation).
template <typename T>
void conv_backward(const LayerParams<T>& p, const LayerSpec& spec, const ConvGeometry& g,
                   const LayerCache<T>& cache, Mat<T>& d_out, std::size_t batch,
                   LayerParams<T>& grad, Mat<T>* d_input) {
  if (spec.activation == Activation::leaky_relu) {
    const T slope = static_cast<T>(kLeakySlope);
    d_out.array() *= cache.out.unaryExpr([slope](T a) { return a > T(0) ? T(1) : slope; }).array();
  }
  Eigen::Map<Mat<T>> d_kernel(grad.kernel.data(), static_cast<Eigen::Index>(g.out_c),
                              static_cast<Eigen::Index>(g.patch()));
  d_kernel.noalias() = d_out.transpose() * cache.cols;
  Eigen::Map<RowVec<T>> d_bias(grad.bias.data(), static_cast<Eigen::Index>(g.out_c));
  d_bias = d_out.colwise().sum();
  if (d_input != nullptr) {
    const Eigen::Map<const Mat<T>> kernel(p.kernel.data(), static_cast<Eigen::Index>(g.out_c),
                                          static_cast<Eigen::Index>(g.patch()));
    Mat<T> d_cols = d_out * kernel;
    col2im(d_cols, batch, g, *d_input);
  }
}

template <typename T>
Pass<T> run_forward(const BasicWeights<T>& w, std::span<const IcFeatures> batch) {
  w.check_shapes();
  const auto& arch = architecture();
  const auto& geo = geometries();
  const std::size_t n = batch.size();

  Mat<T> topo(static_cast<Eigen::Index>(n * kTopoPixels), 1);
  Mat<T> psd(static_cast<Eigen::Index>(n * kPsdBins), 1);
  Mat<T> acf(static_cast<Eigen::Index>(n * kAutocorrLags), 1);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < kTopoPixels; ++k) {
      topo(static_cast<Eigen::Index>(b * kTopoPixels + k), 0) =
          static_cast<T>(batch[b].topo.pixels[k]);
    }
    for (std::size_t k = 0; k < kPsdBins; ++k) {
      psd(static_cast<Eigen::Index>(b * kPsdBins + k), 0) = static_cast<T>(batch[b].psd[k]);
      acf(static_cast<Eigen::Index>(b * kAutocorrLags + k), 0) =
          static_cast<T>(batch[b].autocorr[k]);
    }
  }
  check_finite(topo, "input");
  check_finite(psd, "input");
  check_finite(acf, "input");

  Pass<T> pass;
  pass.batch = n;
  auto run = [&](std::size_t layer, const Mat<T>& in) {
    conv_forward(w.layers[layer], arch[layer], geo[layer], in, n, pass.layers[layer]);
  };
  run(topo1, topo);
  run(topo2, pass.layers[topo1].out);
  run(topo3, pass.layers[topo2].out);
  run(psd1, psd);
  run(psd2, pass.layers[psd1].out);
  run(psd3, pass.layers[psd2].out);
  run(acf1, acf);
  run(acf2, pass.layers[acf1].out);
  run(acf3, pass.layers[acf2].out);

  // Each 13-long branch output is zero-padded to 16 and laid out as a 4x4 channel.
  constexpr std::size_t cells = kFusedSide * kFusedSide;
  pass.fused.setZero(static_cast<Eigen::Index>(n * cells), static_cast<Eigen::Index>(kFusedChannels));
  pass.fused.leftCols(512) = pass.layers[topo3].out;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < kPsdOut; ++i) {
      const auto row = static_cast<Eigen::Index>(b * cells + i);
      pass.fused(row, 512) = pass.layers[psd3].out(static_cast<Eigen::Index>(b * kPsdOut + i), 0);
      pass.fused(row, 513) = pass.layers[acf3].out(static_cast<Eigen::Index>(b * kPsdOut + i), 0);
    }
  }
  run(final_layer, pass.fused);
  return pass;
}

std::array<double, kNumCategories> log_softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - top);
  const double log_total = std::log(total) + top;
  std::array<double, kNumCategories> out{};
  for (std::size_t i = 0; i < kNumCategories; ++i) out[i] = logits[i] - log_total;
  return out;
}

template <typename T>
std::array<double, kNumCategories> logits_of(const Pass<T>& pass, std::size_t b) {
  std::array<double, kNumCategories> z{};
  const auto& out = pass.layers[final_layer].out;
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    z[i] = static_cast<double>(out(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)));
  }
  return z;
}

LabelVector softmax(std::span<const double> logits) {
  const auto logp = log_softmax(logits);
  LabelVector v;
  double total = 0.0;
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    v.p[i] = std::exp(logp[i]);
    total += v.p[i];
  }
  for (double& x : v.p) x /= total;
  return v;
}

template <typename T>
void fill_input_gradient(const Mat<T>& d_topo, const Mat<T>& d_psd, const Mat<T>& d_acf,
                         std::size_t n, std::vector<IcFeatures>& out) {
  out.assign(n, IcFeatures{});
  for (std::size_t b = 0; b < n; ++b) {
    out[b].topo.mask = head_mask();
    for (std::size_t k = 0; k < kTopoPixels; ++k) {
      out[b].topo.pixels[k] =
          static_cast<double>(d_topo(static_cast<Eigen::Index>(b * kTopoPixels + k), 0));
    }
    for (std::size_t k = 0; k < kPsdBins; ++k) {
      out[b].psd[k] = static_cast<double>(d_psd(static_cast<Eigen::Index>(b * kPsdBins + k), 0));
      out[b].autocorr[k] =
          static_cast<double>(d_acf(static_cast<Eigen::Index>(b * kAutocorrLags + k), 0));
    }
  }
}

}  // namespace

std::vector<std::uint32_t> LayerSpec::kernel_shape() const {
  const auto f = static_cast<std::uint32_t>(filters);
  const auto k = static_cast<std::uint32_t>(kernel);
  const auto c = static_cast<std::uint32_t>(in_channels);
  if (kind == LayerKind::conv2d) return {f, k, k, c};
  return {f, k, c};
}

std::size_t LayerSpec::kernel_size() const {
  const std::size_t spatial = kind == LayerKind::conv2d ? kernel * kernel : kernel;
  return filters * spatial * in_channels;
}

const std::array<LayerSpec, kNumLayers>& architecture() {
  using enum LayerKind;
  static const std::array<LayerSpec, kNumLayers> layers = {{
      {"topo1", conv2d, 1, 128, 4, 2, Padding::same, Activation::leaky_relu},
      {"topo2", conv2d, 128, 256, 4, 2, Padding::same, Activation::leaky_relu},
      {"topo3", conv2d, 256, 512, 4, 2, Padding::same, Activation::leaky_relu},
      {"psd1", conv1d, 1, 128, 3, 2, Padding::same, Activation::leaky_relu},
      {"psd2", conv1d, 128, 256, 3, 2, Padding::same, Activation::leaky_relu},
      {"psd3", conv1d, 256, 1, 3, 2, Padding::same, Activation::leaky_relu},
      {"acf1", conv1d, 1, 128, 3, 2, Padding::same, Activation::leaky_relu},
      {"acf2", conv1d, 128, 256, 3, 2, Padding::same, Activation::leaky_relu},
      {"acf3", conv1d, 256, 1, 3, 2, Padding::same, Activation::leaky_relu},
      {"final", conv2d, kFusedChannels, kNumCategories, 4, 2, Padding::valid,
       Activation::softmax},
  }};
  return layers;
}

std::size_t conv_output_length(std::size_t input, std::size_t kernel, std::size_t stride,
                               Padding padding) {
  if (padding == Padding::same) return (input + stride - 1) / stride;
  if (input < kernel) return 0;
  return (input - kernel) / stride + 1;
}

template <typename T>
BasicWeights<T> BasicWeights<T>::zeros() {
  BasicWeights<T> w;
  const auto& arch = architecture();
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    w.layers[i].name = std::string(arch[i].name);
    w.layers[i].shape = arch[i].kernel_shape();
    w.layers[i].kernel.assign(arch[i].kernel_size(), T(0));
    w.layers[i].bias.assign(arch[i].filters, T(0));
  }
  return w;
}

template <typename T>
std::size_t BasicWeights<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& l : layers) total += l.kernel.size() + l.bias.size();
  return total;
}

template <typename T>
bool BasicWeights<T>::all_finite() const {
  for (const auto& l : layers) {
    for (T v : l.kernel) {
      if (!std::isfinite(v)) return false;
    }
    for (T v : l.bias) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename T>
void BasicWeights<T>::check_shapes() const {
  const auto& arch = architecture();
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    const auto& l = layers[i];
    if (l.name != arch[i].name || l.shape != arch[i].kernel_shape() ||
        l.kernel.size() != arch[i].kernel_size() || l.bias.size() != arch[i].filters) {
      throw Error(Errc::shape_mismatch, "layer " + std::to_string(i) + " (" + l.name +
                                            ") does not match the expected " +
                                            std::string(arch[i].name) + " shape");
    }
  }
}

template struct BasicWeights<float>;
template struct BasicWeights<double>;

NetworkWeights initialize_weights(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NetworkWeights w = NetworkWeights::zeros();
  const auto& arch = architecture();
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    const double sigma = std::sqrt(2.0 / static_cast<double>(arch[i].fan_in()));
    std::normal_distribution<double> normal(0.0, sigma);
    for (float& v : w.layers[i].kernel) {
      double x = normal(rng);
      while (std::abs(x) > 2.0 * sigma) x = normal(rng);
      v = static_cast<float>(x);
    }
  }
  return w;
}

template <typename T>
std::vector<LabelVector> forward_batch(const BasicWeights<T>& weights,
                                       std::span<const IcFeatures> batch) {
  if (batch.empty()) return {};
  const auto pass = run_forward(weights, batch);
  std::vector<LabelVector> out;
  out.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) out.push_back(softmax(logits_of(pass, b)));
  return out;
}

template std::vector<LabelVector> forward_batch(const BasicWeights<float>&,
                                                std::span<const IcFeatures>);
template std::vector<LabelVector> forward_batch(const BasicWeights<double>&,
                                                std::span<const IcFeatures>);

template <typename T>
std::vector<bool> activation_signs(const BasicWeights<T>& weights,
                                   std::span<const IcFeatures> batch) {
  std::vector<bool> signs;
  if (batch.empty()) return signs;
  const auto pass = run_forward(weights, batch);
  for (std::size_t layer = 0; layer < kNumLayers; ++layer) {
    if (architecture()[layer].activation != Activation::leaky_relu) continue;
    const auto& out = pass.layers[layer].out;
    for (Eigen::Index i = 0; i < out.size(); ++i) signs.push_back(out.data()[i] > T(0));
  }
  return signs;
}

template std::vector<bool> activation_signs(const BasicWeights<float>&,
                                            std::span<const IcFeatures>);
template std::vector<bool> activation_signs(const BasicWeights<double>&,
                                            std::span<const IcFeatures>);

LabelVector forward(const NetworkWeights& weights, const IcFeatures& features) {
  return forward_batch(weights, std::span<const IcFeatures>(&features, 1)).front();
}

std::vector<TensorShape> trace_shapes(const NetworkWeights& weights, const IcFeatures& features) {
  const auto pass = run_forward(weights, std::span<const IcFeatures>(&features, 1));
  const auto& arch = architecture();
  const auto& geo = geometries();
  std::vector<TensorShape> shapes;
  auto dims_of = [&](std::size_t layer) {
    const auto rows = static_cast<std::size_t>(pass.layers[layer].out.rows());
    const auto channels = static_cast<std::size_t>(pass.layers[layer].out.cols());
    if (arch[layer].kind == LayerKind::conv1d) return std::vector<std::size_t>{rows, channels};
    // rows = out_h * out_w for a single example
    const std::size_t w = geo[layer].out_w;
    return std::vector<std::size_t>{rows / w, w, channels};
  };
  for (std::size_t layer : {topo1, topo2, topo3, psd1, psd2, psd3, acf1, acf2, acf3}) {
    shapes.push_back({std::string(arch[layer].name), dims_of(layer)});
  }
  shapes.push_back({"fused", {kFusedSide, kFusedSide,
                              static_cast<std::size_t>(pass.fused.cols())}});
  shapes.push_back({"final", {static_cast<std::size_t>(pass.layers[final_layer].out.cols())}});
  return shapes;
}

LabelVector classify(const NetworkWeights& weights, const IcFeatures& features) {
  const auto orbit = symmetry_orbit(features);
  std::array<LabelVector, 4> outputs;
  for (std::size_t i = 0; i < orbit.size(); ++i) outputs[i] = forward(weights, orbit[i]);
  std::sort(outputs.begin(), outputs.end(),
            [](const LabelVector& a, const LabelVector& b) { return a.p < b.p; });
  LabelVector mean;
  for (const auto& o : outputs) {
    for (std::size_t i = 0; i < kNumCategories; ++i) mean.p[i] += o.p[i];
  }
  for (double& x : mean.p) x /= static_cast<double>(outputs.size());
  return mean;
}

double weighted_cross_entropy(const LabelVector& prediction, const LabelVector& target,
                              const ClassWeights& weights) {
  double loss = 0.0;
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    if (target.p[i] == 0.0 || weights[i] == 0.0) continue;
    loss -= weights[i] * target.p[i] * std::log(std::max(prediction.p[i], 1e-12));
  }
  return loss;
}

template <typename T>
Gradients<T> backward(const BasicWeights<T>& weights, std::span<const IcFeatures> batch,
                      std::span<const LabelVector> targets, const ClassWeights& class_weights,
                      bool input_gradients) {
  if (batch.size() != targets.size()) {
    throw Error(Errc::shape_mismatch, "batch and target counts differ");
  }
  if (batch.empty()) throw Error(Errc::empty_dataset, "backward called on an empty batch");
  auto pass = run_forward(weights, batch);
  const auto& arch = architecture();
  const auto& geo = geometries();
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  Gradients<T> g;
  g.params = BasicWeights<T>::zeros();

  Mat<T> d_logits(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kNumCategories));
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const auto logp = log_softmax(logits_of(pass, b));
    double mass = 0.0;
    for (std::size_t i = 0; i < kNumCategories; ++i) {
      const double wt = class_weights[i] * targets[b].p[i];
      mass += wt;
      if (wt != 0.0) loss -= wt * logp[i];
    }
    for (std::size_t i = 0; i < kNumCategories; ++i) {
      const double d = std::exp(logp[i]) * mass - class_weights[i] * targets[b].p[i];
      d_logits(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)) =
          static_cast<T>(d * inv_n);
    }
  }
  g.loss = loss * inv_n;

  auto back = [&](std::size_t layer, Mat<T>& d_out, Mat<T>* d_in) {
    conv_backward(weights.layers[layer], arch[layer], geo[layer], pass.layers[layer], d_out, n,
                  g.params.layers[layer], d_in);
  };

  Mat<T> d_fused;
  back(final_layer, d_logits, &d_fused);

  constexpr std::size_t cells = kFusedSide * kFusedSide;
  Mat<T> d_topo3 = d_fused.leftCols(512);
  Mat<T> d_psd3(static_cast<Eigen::Index>(n * kPsdOut), 1);
  Mat<T> d_acf3(static_cast<Eigen::Index>(n * kPsdOut), 1);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < kPsdOut; ++i) {
      const auto row = static_cast<Eigen::Index>(b * cells + i);
      d_psd3(static_cast<Eigen::Index>(b * kPsdOut + i), 0) = d_fused(row, 512);
      d_acf3(static_cast<Eigen::Index>(b * kPsdOut + i), 0) = d_fused(row, 513);
    }
  }

  Mat<T> d_topo2, d_topo1, d_topo_in;
  back(topo3, d_topo3, &d_topo2);
  back(topo2, d_topo2, &d_topo1);
  back(topo1, d_topo1, input_gradients ? &d_topo_in : nullptr);

  Mat<T> d_psd2, d_psd1, d_psd_in;
  back(psd3, d_psd3, &d_psd2);
  back(psd2, d_psd2, &d_psd1);
  back(psd1, d_psd1, input_gradients ? &d_psd_in : nullptr);

  Mat<T> d_acf2, d_acf1, d_acf_in;
  back(acf3, d_acf3, &d_acf2);
  back(acf2, d_acf2, &d_acf1);
  back(acf1, d_acf1, input_gradients ? &d_acf_in : nullptr);

  if (input_gradients) fill_input_gradient(d_topo_in, d_psd_in, d_acf_in, n, g.inputs);
  return g;
}

template Gradients<float> backward(const BasicWeights<float>&, std::span<const IcFeatures>,
                                   std::span<const LabelVector>, const ClassWeights&, bool);
template Gradients<double> backward(const BasicWeights<double>&, std::span<const IcFeatures>,
                                    std::span<const LabelVector>, const ClassWeights&, bool);

}  // namespace iclabel::nn
