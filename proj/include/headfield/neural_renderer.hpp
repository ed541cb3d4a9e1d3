#pragma once

// 2D neural rendering: feature map [C0, h, w] -> image [3, h*2^S, w*2^S].
//
// Each stage upsamples with
//   Y = blur(pixel_shuffle(repeat(X, 4) + beta(X), 2))
// followed by 1x1 convolutions. Every learned layer is 1x1; the only
// spatial mixing is the fixed blur and the fixed bilinear upsampling of the
// running RGB sum.

#include <random>
#include <string>
#include <vector>

#include "headfield/nn.hpp"
#include "headfield/volume.hpp"

namespace headfield {

/// Layer kinds, for the structural audit of spatial mixing.
enum class LayerKind { conv1x1, leaky_relu, repeat, pixel_shuffle, fixed_blur, fixed_bilinear, sigmoid };

struct LayerRecord {
  LayerKind kind;
  std::string name;
  int kernel_extent;  // spatial footprint; 1 for per-pixel layers
  bool learnable;
};

/// Normalised binomial [1,3,3,1]/8 taps; the 2D kernel is their outer product (sums to 1).
template <class T>
std::vector<T> binomial_blur_taps() {
  return {T(1) / T(8), T(3) / T(8), T(3) / T(8), T(1) / T(8)};
}

template <class T>
std::vector<T> delta_taps() {
  return {T(0), T(1), T(0), T(0)};
}

/// Offset of the blur window: out[y] = sum_k taps[k] in[y + k - 1].
inline constexpr std::int64_t kBlurOrigin = 1;

template <class T>
struct UpsampleLayer {
  Linear<T> beta_hidden;  // D -> D
  Linear<T> beta_out;     // D -> 4D
  std::vector<T> blur_taps = binomial_blur_taps<T>();
  double leaky_slope = 0.2;

  UpsampleLayer() = default;
  UpsampleLayer(std::int64_t channels, std::mt19937_64& rng, double slope)
      : beta_hidden(channels, channels, rng), beta_out(channels, 4 * channels, rng, 0.1), leaky_slope(slope) {}

  std::int64_t channels() const { return beta_hidden.in_features(); }

  /// [D,H,W] -> [D,2H,2W]
  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() != 3 || x.dim(0) != channels()) {
      throw DimensionError("upsample: expected " + std::to_string(channels()) + " channels, got " + shape_string(x.shape()));
    }
    const auto residual = beta_out.conv(leaky_relu(beta_hidden.conv(x), static_cast<T>(leaky_slope)));
    const auto shuffled = pixel_shuffle(add(repeat_channels(x, 4), residual), 2);
    return separable_filter(shuffled, blur_taps, kBlurOrigin);
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    beta_hidden.collect(prefix + ".beta_hidden", out);
    beta_out.collect(prefix + ".beta_out", out);
  }
};

template <class T>
Tensor<T> upsample(const Tensor<T>& x, const UpsampleLayer<T>& layer) {
  return layer(x);
}

struct NeuralRendererConfig {
  std::vector<int> channels = {256, 128, 64, 32};  // base channels, then one entry per stage
  double leaky_slope = 0.2;

  int stages() const { return static_cast<int>(channels.size()) - 1; }
};

template <class T>
class NeuralRenderer {
 public:
  struct Stage {
    UpsampleLayer<T> upsample;
    Linear<T> conv;    // C_k -> C_k
    Linear<T> reduce;  // C_k -> C_{k+1}
    Linear<T> rgb;     // C_{k+1} -> 3
  };

  NeuralRenderer() = default;

  NeuralRenderer(const NeuralRendererConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.channels.size() < 1) throw ConfigurationError("renderer channel plan is empty");
    for (int c : cfg.channels)
      if (c < 1) throw ConfigurationError("renderer channel counts must be positive");
    std::mt19937_64 rng(seed);
    base_rgb_ = Linear<T>(cfg.channels[0], 3, rng);
    for (int k = 0; k < cfg.stages(); ++k) {
      const auto cin = cfg.channels[k], cout = cfg.channels[k + 1];
      Stage s{UpsampleLayer<T>(cin, rng, cfg.leaky_slope), Linear<T>(cin, cin, rng), Linear<T>(cin, cout, rng),
              Linear<T>(cout, 3, rng)};
      stages_.push_back(std::move(s));
    }
  }

  const NeuralRendererConfig& config() const { return cfg_; }
  int upscale_factor() const { return 1 << cfg_.stages(); }

  /// Replaces the blur of every upsampling layer (test hook).
  void set_blur_taps(const std::vector<T>& taps) {
    for (auto& s : stages_) s.upsample.blur_taps = taps;
  }

  Tensor<T> render(const Tensor<T>& features) const {
    if (features.rank() != 3 || features.dim(0) != cfg_.channels[0]) {
      throw ConfigurationError("renderer expects " + std::to_string(cfg_.channels[0]) + " feature channels, got " +
                               shape_string(features.shape()));
    }
    const auto slope = static_cast<T>(cfg_.leaky_slope);
    Tensor<T> x = features;
    Tensor<T> rgb = base_rgb_.conv(x);
    for (const auto& s : stages_) {
      x = s.upsample(x);
      x = leaky_relu(s.conv.conv(x), slope);
      x = leaky_relu(s.reduce.conv(x), slope);
      rgb = add(bilinear_upsample2x(rgb), s.rgb.conv(x));
    }
    return sigmoid(rgb);
  }

  NamedTensors<T> named_parameters() const {
    NamedTensors<T> out;
    base_rgb_.collect("renderer.rgb.base", out);
    for (std::size_t k = 0; k < stages_.size(); ++k) {
      const auto p = "renderer.stage." + std::to_string(k);
      stages_[k].upsample.collect(p + ".upsample", out);
      stages_[k].conv.collect(p + ".conv", out);
      stages_[k].reduce.collect(p + ".reduce", out);
      stages_[k].rgb.collect(p + ".rgb", out);
    }
    return out;
  }

  /// Every layer the forward pass applies, in order.
  std::vector<LayerRecord> layer_audit() const {
    std::vector<LayerRecord> out;
    out.push_back({LayerKind::conv1x1, "rgb.base", 1, true});
    for (std::size_t k = 0; k < stages_.size(); ++k) {
      const auto p = "stage." + std::to_string(k);
      out.push_back({LayerKind::conv1x1, p + ".beta_hidden", 1, true});
      out.push_back({LayerKind::leaky_relu, p + ".beta_act", 1, false});
      out.push_back({LayerKind::conv1x1, p + ".beta_out", 1, true});
      out.push_back({LayerKind::repeat, p + ".repeat", 1, false});
      out.push_back({LayerKind::pixel_shuffle, p + ".shuffle", 1, false});
      out.push_back({LayerKind::fixed_blur, p + ".blur", static_cast<int>(stages_[k].upsample.blur_taps.size()), false});
      out.push_back({LayerKind::conv1x1, p + ".conv", 1, true});
      out.push_back({LayerKind::leaky_relu, p + ".conv_act", 1, false});
      out.push_back({LayerKind::conv1x1, p + ".reduce", 1, true});
      out.push_back({LayerKind::leaky_relu, p + ".reduce_act", 1, false});
      out.push_back({LayerKind::fixed_bilinear, p + ".rgb_upsample", 2, false});
      out.push_back({LayerKind::conv1x1, p + ".rgb", 1, true});
    }
    out.push_back({LayerKind::sigmoid, "output", 1, false});
    return out;
  }

  std::vector<Stage>& stages() { return stages_; }
  const std::vector<Stage>& stages() const { return stages_; }

 private:
  NeuralRendererConfig cfg_;
  Linear<T> base_rgb_;
  std::vector<Stage> stages_;
};

template <class T>
Tensor<T> neural_render(const FeatureMap<T>& map, const NeuralRenderer<T>& net) {
  return net.render(map.features);
}

}  // namespace headfield
