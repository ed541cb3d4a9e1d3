#pragma once

// Latent-conditioned neural field: (gamma(x), z_id, z_exp) -> density, and
// (trunk feature, z_alb, z_ill) -> feature vector. There is no input for the
// viewing direction.

#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "headfield/camera.hpp"
#include "headfield/latent.hpp"
#include "headfield/nn.hpp"

namespace headfield {

struct PositionalEncodingConfig {
  int octaves = 10;
  bool include_identity = true;

  int encoded_dim() const { return 3 * (2 * octaves + (include_identity ? 1 : 0)); }
};

/// [M,3] -> [M, 3(2L+1)]: [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x)].
template <class T>
Tensor<T> positional_encode(const Tensor<T>& x, const PositionalEncodingConfig& cfg) {
  if (x.rank() != 2 || x.dim(1) != 3) throw DimensionError("positional_encode expects [M,3], got " + shape_string(x.shape()));
  std::vector<Tensor<T>> parts;
  if (cfg.include_identity) parts.push_back(x);
  for (int k = 0; k < cfg.octaves; ++k) {
    const auto scaled = scale(x, static_cast<T>(std::ldexp(std::numbers::pi, k)));
    parts.push_back(sin(scaled));
    parts.push_back(cos(scaled));
  }
  return concat_last(parts);
}

struct FieldConfig {
  PositionalEncodingConfig encoding;
  LatentDims dims;
  int trunk_width = 256;
  int trunk_depth = 6;
  int skip_layer = 3;  // this layer re-reads the full trunk input; 0 disables
  int feature_dim = 256;
  double leaky_slope = 0.2;

  /// encoded position + z_id + z_exp
  int trunk_input_dim() const { return encoding.encoded_dim() + dims.id + dims.exp; }
};

template <class T>
struct FieldSample {
  Tensor<T> sigma;    // [N,S], >= 0
  Tensor<T> feature;  // [N,S,F]
};

/// A linear layer over [per-point rows | shared code] evaluated as
/// rows * W_rows^T + W_code * code + b. Equal to one linear layer on the
/// row-wise concatenation, without materialising the broadcast code.
template <class T>
struct SplitLinear {
  Tensor<T> weight_rows;
  Tensor<T> weight_code;
  Tensor<T> bias;

  SplitLinear() = default;
  SplitLinear(std::int64_t rows_in, std::int64_t code_in, std::int64_t out, std::mt19937_64& rng) {
    Linear<T> full(rows_in + code_in, out, rng);
    const auto& w = full.weight.values();
    std::vector<T> wr(static_cast<std::size_t>(out * rows_in)), wc(static_cast<std::size_t>(out * code_in));
    for (std::int64_t o = 0; o < out; ++o) {
      for (std::int64_t i = 0; i < rows_in; ++i) wr[o * rows_in + i] = w[o * (rows_in + code_in) + i];
      for (std::int64_t i = 0; i < code_in; ++i) wc[o * code_in + i] = w[o * (rows_in + code_in) + rows_in + i];
    }
    weight_rows = Tensor<T>::from({out, rows_in}, std::move(wr), true);
    if (code_in > 0) weight_code = Tensor<T>::from({out, code_in}, std::move(wc), true);
    bias = full.bias;
  }

  Tensor<T> operator()(const Tensor<T>& rows, const Tensor<T>& code) const {
    const auto out = weight_rows.dim(0);
    const auto shared = linear(reshape(code, {1, code.numel()}), weight_code, Tensor<T>::zeros({out}));
    return add(linear(rows, weight_rows, bias), reshape(shared, {out}));
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".weight_rows", weight_rows);
    out.emplace_back(prefix + ".weight_code", weight_code);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <class T>
Tensor<T> concat_vectors(const std::vector<Tensor<T>>& parts) {
  std::vector<Tensor<T>> rows;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    rows.push_back(reshape(p, {1, p.numel()}));
    total += p.numel();
  }
  return reshape(concat_last(rows), {total});
}

template <class T>
class FieldNetwork {
 public:
  FieldNetwork() = default;

  FieldNetwork(const FieldConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.trunk_depth < 1 || cfg.trunk_width < 1 || cfg.feature_dim < 1) {
      throw ConfigurationError("field network needs positive depth, width and feature size");
    }
    if (cfg.skip_layer < 0 || cfg.skip_layer >= cfg.trunk_depth) throw ConfigurationError("skip layer out of range");
    std::mt19937_64 rng(seed);
    const auto w = cfg.trunk_width;
    const auto enc = cfg.encoding.encoded_dim();
    const auto z = cfg.dims.id + cfg.dims.exp;
    for (int layer = 0; layer < cfg.trunk_depth; ++layer) {
      if (layer == 0) {
        trunk_.emplace_back(enc, z, w, rng);
      } else if (layer == cfg.skip_layer) {
        trunk_.emplace_back(w + enc, z, w, rng);
      } else {
        trunk_.emplace_back(w, 0, w, rng);
      }
    }
    density_ = Linear<T>(w, 1, rng);
    feature_hidden_ = SplitLinear<T>(w, cfg.dims.alb + cfg.dims.ill, w, rng);
    feature_out_ = Linear<T>(w, cfg.feature_dim, rng);
  }

  const FieldConfig& config() const { return cfg_; }

  /// Per-point evaluation on positions [M,3]: sigma [M], feature [M,F].
  std::pair<Tensor<T>, Tensor<T>> evaluate_points(const Tensor<T>& positions, const LatentState<T>& codes) const {
    check_dims(codes, cfg_.dims);
    const auto m = positions.dim(0);
    const auto slope = static_cast<T>(cfg_.leaky_slope);
    const auto encoded = positional_encode(positions, cfg_.encoding);
    const auto geometry_code = concat_vectors<T>({codes.z_id, codes.z_exp});
    Tensor<T> h;
    for (int layer = 0; layer < cfg_.trunk_depth; ++layer) {
      const auto& lin = trunk_[layer];
      Tensor<T> pre;
      if (layer == 0) {
        pre = lin(encoded, geometry_code);
      } else if (layer == cfg_.skip_layer) {
        pre = lin(concat_last<T>({h, encoded}), geometry_code);
      } else {
        pre = linear(h, lin.weight_rows, lin.bias);
      }
      h = leaky_relu(pre, slope);
    }
    auto sigma = reshape(softplus(density_(h)), {m});
    const auto appearance_code = concat_vectors<T>({codes.z_alb, codes.z_ill});
    auto feature = feature_out_(leaky_relu(feature_hidden_(h, appearance_code), slope));
    return {std::move(sigma), std::move(feature)};
  }

  FieldSample<T> evaluate(const SamplePoints<T>& pts, const LatentState<T>& codes) const {
    const auto n = pts.positions.dim(0), s = pts.positions.dim(1);
    auto [sigma, feature] = evaluate_points(reshape(pts.positions, {n * s, 3}), codes);
    return {reshape(sigma, {n, s}), reshape(feature, {n, s, cfg_.feature_dim})};
  }

  NamedTensors<T> named_parameters() const {
    NamedTensors<T> out;
    for (std::size_t i = 0; i < trunk_.size(); ++i) {
      const auto prefix = "field.trunk." + std::to_string(i);
      if (trunk_[i].weight_code.defined()) {
        trunk_[i].collect(prefix, out);
      } else {
        out.emplace_back(prefix + ".weight", trunk_[i].weight_rows);
        out.emplace_back(prefix + ".bias", trunk_[i].bias);
      }
    }
    density_.collect("field.density", out);
    feature_hidden_.collect("field.feature_hidden", out);
    feature_out_.collect("field.feature_out", out);
    return out;
  }

 private:
  FieldConfig cfg_;
  std::vector<SplitLinear<T>> trunk_;  // weight_code undefined on plain layers
  Linear<T> density_;
  SplitLinear<T> feature_hidden_;
  Linear<T> feature_out_;
};

template <class T>
FieldSample<T> evaluate_field(const FieldNetwork<T>& net, const SamplePoints<T>& pts, const LatentState<T>& codes) {
  return net.evaluate(pts, codes);
}

}  // namespace headfield
