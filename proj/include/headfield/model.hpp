#pragma once

// Field network + neural renderer, and the full image formation path.

#include <cstdint>
#include <string>

#include "headfield/camera.hpp"
#include "headfield/config.hpp"
#include "headfield/field.hpp"
#include "headfield/neural_renderer.hpp"
#include "headfield/volume.hpp"

namespace headfield {

template <class T>
class Model {
 public:
  Model() = default;

  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    field_ = FieldNetwork<T>(cfg_.field_config(), cfg_.seed);
    renderer_ = NeuralRenderer<T>(cfg_.renderer_config(), cfg_.seed ^ 0x9e3779b97f4a7c15ull);
  }

  const ModelConfig& config() const { return cfg_; }
  const FieldNetwork<T>& field() const { return field_; }
  const NeuralRenderer<T>& renderer() const { return renderer_; }
  NeuralRenderer<T>& renderer() { return renderer_; }

  NamedTensors<T> named_parameters() const {
    auto out = field_.named_parameters();
    for (auto& p : renderer_.named_parameters()) out.push_back(std::move(p));
    return out;
  }

  std::uint64_t parameter_checksum() const { return checksum(named_parameters()); }

  void set_requires_grad(bool on) const {
    for (auto& [name, t] : named_parameters()) const_cast<Tensor<T>&>(t).set_requires_grad(on);
  }

 private:
  ModelConfig cfg_;
  FieldNetwork<T> field_;
  NeuralRenderer<T> renderer_;
};

struct RenderOptions {
  SamplingMode mode = SamplingMode::uniform;
  std::uint64_t seed = 0;  // stratified jitter only
};

template <class T>
struct RenderOutput {
  Tensor<T> image;  // [3,H,W]
  FeatureMap<T> features;
};

/// I = R(z_id, z_exp, z_alb, z_ill, P).
template <class T>
RenderOutput<T> render_full(const Model<T>& model, const LatentState<T>& codes, const Camera& camera,
                            const RenderOptions& opts = {}) {
  const auto& cfg = model.config();
  if (camera.width != cfg.output_size || camera.height != cfg.output_size) {
    throw ConfigurationError("camera is " + std::to_string(camera.width) + "x" + std::to_string(camera.height) +
                             " but the model renders " + std::to_string(cfg.output_size) + "x" +
                             std::to_string(cfg.output_size));
  }
  const auto rays = generate_rays<T>(camera, cfg.feature_grid, cfg.feature_grid, cfg.sphere_radius);
  const auto points = sample_along_rays(rays, cfg.samples_per_ray, opts.mode, opts.seed);
  const auto field = model.field().evaluate(points, codes);
  const auto weights = compute_weights(field.sigma, points.deltas);
  auto features = render_features(weights, field.feature, cfg.feature_grid, cfg.feature_grid);
  auto image = model.renderer().render(features.features);
  return {std::move(image), std::move(features)};
}

/// Inference render without graph recording.
template <class T>
Tensor<T> render_image(const Model<T>& model, const LatentState<T>& codes, const Camera& camera) {
  NoGradGuard guard;
  return render_full(model, codes, camera).image;
}

}  // namespace headfield
