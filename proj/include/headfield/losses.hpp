#pragma once

// Training and fitting objectives plus image-quality metrics.
//
// Image tensors are [3,H,W] in [0,1]; masks are [H,W] with entries in {0,1}.
// The photometric and perceptual terms are means over active elements;
// the latent anchor term is an unnormalised weighted squared distance.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "headfield/latent.hpp"
#include "headfield/nn.hpp"

namespace headfield {

struct LossWeights {
  double w_id = 0.001;
  double w_exp = 0.1;
  double w_alb = 0.001;
  double w_ill = 0.001;

  void validate() const {
    if (w_id < 0 || w_exp < 0 || w_alb < 0 || w_ill < 0) throw ParameterError("loss weights must be non-negative");
  }
};

template <class T>
Tensor<T> photometric_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask) {
  if (pred.shape() != gt.shape() || pred.rank() != 3) {
    throw DimensionError("photometric_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(gt.shape()));
  }
  if (mask.rank() != 2 || mask.dim(0) != pred.dim(1) || mask.dim(1) != pred.dim(2)) {
    throw DimensionError("photometric_loss: mask " + shape_string(mask.shape()) + " does not match image " +
                         shape_string(pred.shape()));
  }
  double active = 0;
  for (T m : mask.values()) active += static_cast<double>(m);
  if (active == 0) return mul(sum(pred), Tensor<T>::scalar(T(0)));
  const auto masked = mul(sub(pred, gt), mask);
  return scale(squared_norm(masked), static_cast<T>(1.0 / (active * static_cast<double>(pred.dim(0)))));
}

// ---------------------------------------------------------------------------
// Perceptual feature extractor: fixed layers, each producing one level.

template <class T>
class PerceptualExtractor {
 public:
  struct Layer {
    Tensor<T> weight;  // [D,C,K,K]; undefined for an identity layer
    Tensor<T> bias;    // [D]
    int stride = 2;
    int padding = 2;
    double leaky_slope = 0.2;
  };

  PerceptualExtractor() = default;
  explicit PerceptualExtractor(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  /// Strided 5x5 convolutions + leaky ReLU with fixed random weights.
  static PerceptualExtractor seeded(std::uint64_t seed, const std::vector<int>& channels = {3, 8, 16, 32, 32}) {
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
      const int cin = channels[i], cout = channels[i + 1], k = 5;
      const double bound = std::sqrt(6.0 / (1.04 * cin * k * k));
      std::uniform_real_distribution<double> dist(-bound, bound);
      std::vector<T> w(static_cast<std::size_t>(cout) * cin * k * k);
      for (auto& v : w) v = static_cast<T>(dist(rng));
      layers.push_back({Tensor<T>::from({cout, cin, k, k}, std::move(w)), Tensor<T>::zeros({cout}), 2, 2, 0.2});
    }
    return PerceptualExtractor(std::move(layers));
  }

  /// A single level that returns the image itself.
  static PerceptualExtractor identity() { return PerceptualExtractor(std::vector<Layer>{Layer{}}); }

  /// Activations of every level.
  std::vector<Tensor<T>> features(const Tensor<T>& image) const {
    std::vector<Tensor<T>> out;
    Tensor<T> x = image;
    for (const auto& l : layers_) {
      if (l.weight.defined()) x = leaky_relu(conv2d(x, l.weight, l.bias, l.stride, l.padding), static_cast<T>(l.leaky_slope));
      out.push_back(x);
    }
    return out;
  }

  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t levels() const { return layers_.size(); }

  NamedTensors<T> named_tensors() const {
    NamedTensors<T> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!layers_[i].weight.defined()) continue;
      out.emplace_back("extractor." + std::to_string(i) + ".weight", layers_[i].weight);
      out.emplace_back("extractor." + std::to_string(i) + ".bias", layers_[i].bias);
    }
    return out;
  }

 private:
  std::vector<Layer> layers_;
};

/// sum over levels of mean squared activation differences.
template <class T>
Tensor<T> perceptual_loss(const Tensor<T>& pred, const Tensor<T>& gt, const PerceptualExtractor<T>& extractor) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError("perceptual_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(gt.shape()));
  }
  std::vector<Tensor<T>> target_features;
  {
    NoGradGuard guard;
    target_features = extractor.features(gt.detach());
  }
  const auto pred_features = extractor.features(pred);
  Tensor<T> total;
  for (std::size_t i = 0; i < pred_features.size(); ++i) {
    const auto term = mean(mul(sub(pred_features[i], target_features[i]), sub(pred_features[i], target_features[i])));
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) return Tensor<T>::scalar(T(0));
  return total;
}

/// sum_a w_a ||z_a - z_a^0||^2
template <class T>
Tensor<T> disentangled_loss(const LatentState<T>& codes, const LatentState<T>& init, const LossWeights& weights) {
  weights.validate();
  check_dims(codes, init.dims());
  const double w[] = {weights.w_id, weights.w_exp, weights.w_alb, weights.w_ill};
  Tensor<T> total;
  for (int i = 0; i < 4; ++i) {
    const auto a = kAttributes[i];
    const auto term = scale(squared_norm(sub(codes[a], init[a].detach())), static_cast<T>(w[i]));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <class T>
struct LossTerms {
  Tensor<T> total;
  double data = 0;
  double perceptual = 0;
  double disentangled = 0;
  bool has_perceptual = true;
  bool has_disentangled = true;
};

/// L = L_data + L_per + L_dis. A null extractor drops L_per.
template <class T>
LossTerms<T> total_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask, const PerceptualExtractor<T>* extractor,
                        const LatentState<T>& codes, const LatentState<T>& init, const LossWeights& weights) {
  LossTerms<T> out;
  const auto data = photometric_loss(pred, gt, mask);
  out.data = static_cast<double>(data.item());
  Tensor<T> total = data;
  out.has_perceptual = extractor != nullptr;
  if (extractor) {
    const auto per = perceptual_loss(pred, gt, *extractor);
    out.perceptual = static_cast<double>(per.item());
    total = add(total, per);
  }
  const auto dis = disentangled_loss(codes, init, weights);
  out.disentangled = static_cast<double>(dis.item());
  out.total = add(total, dis);
  return out;
}

/// L_fit = L_data + L_per.
template <class T>
LossTerms<T> fitting_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask, const PerceptualExtractor<T>* extractor) {
  LossTerms<T> out;
  out.has_disentangled = false;
  const auto data = photometric_loss(pred, gt, mask);
  out.data = static_cast<double>(data.item());
  out.total = data;
  out.has_perceptual = extractor != nullptr;
  if (extractor) {
    const auto per = perceptual_loss(pred, gt, *extractor);
    out.perceptual = static_cast<double>(per.item());
    out.total = add(out.total, per);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics (plain arithmetic, no graph).

struct ImageMetrics {
  double l1 = 0;
  double psnr = 0;
  double ssim = 0;
};

inline constexpr double kPsnrCap = 100.0;

inline double psnr_from_mse(double mse) {
  if (mse < 1e-10) return kPsnrCap;
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  double total = 0;
  for (int i = 0; i < size; ++i) {
    const double x = i - (size - 1) / 2.0;
    g[i] = std::exp(-x * x / (2 * sigma * sigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Separable "valid" filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int ho = h - k + 1, wo = w - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ho) * w), out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = 0; i < k; ++i) acc += g[i] * img[(y + i) * w + x];
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0;
      for (int i = 0; i < k; ++i) acc += g[i] * tmp[y * w + x + i];
      out[y * wo + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM over channels: 11x11 Gaussian window (sigma 1.5), k1 = 0.01,
/// k2 = 0.03, data range 1, valid windows only. Images smaller than the
/// window use a window clipped to the image size.
inline double ssim(std::span<const double> a, std::span<const double> b, int channels, int h, int w) {
  const int size = std::min({11, h, w});
  const auto g = detail::gaussian_window(size, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  std::size_t count = 0;
  const auto plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    std::vector<double> x(a.begin() + c * plane, a.begin() + (c + 1) * plane);
    std::vector<double> y(b.begin() + c * plane, b.begin() + (c + 1) * plane);
    std::vector<double> xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, h, w, g), my = detail::filter_valid(y, h, w, g);
    const auto sxx = detail::filter_valid(xx, h, w, g), syy = detail::filter_valid(yy, h, w, g);
    const auto sxy = detail::filter_valid(xy, h, w, g);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
      total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

template <class T>
ImageMetrics metrics(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape() || pred.rank() != 3) {
    throw DimensionError("metrics: prediction " + shape_string(pred.shape()) + " vs target " + shape_string(gt.shape()));
  }
  const auto& p = pred.values();
  const auto& g = gt.values();
  std::vector<double> a(p.begin(), p.end()), b(g.begin(), g.end());
  double l1 = 0, se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    l1 += std::abs(d);
    se += d * d;
  }
  const double n = static_cast<double>(a.size());
  return {l1 / n, psnr_from_mse(se / n), ssim(a, b, static_cast<int>(pred.dim(0)), static_cast<int>(pred.dim(1)),
                                             static_cast<int>(pred.dim(2)))};
}

/// Metrics restricted to the head: both images multiplied by the mask.
template <class T>
ImageMetrics masked_metrics(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask) {
  NoGradGuard guard;
  return metrics(mul(pred.detach(), mask), mul(gt.detach(), mask));
}

}  // namespace headfield
