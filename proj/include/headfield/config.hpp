#pragma once

// Model and training configuration, JSON (de)serialisation and presets.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "headfield/field.hpp"
#include "headfield/losses.hpp"
#include "headfield/neural_renderer.hpp"

namespace headfield {

struct ModelConfig {
  LatentDims dims;
  int encoding_octaves = 10;
  int trunk_width = 256;
  int trunk_depth = 6;
  int skip_layer = 3;
  int feature_dim = 256;
  int feature_grid = 32;
  int output_size = 256;
  std::vector<int> renderer_channels = {256, 128, 64, 32};
  double leaky_slope = 0.2;
  int samples_per_ray = 64;
  double sphere_radius = 1.0;
  std::uint64_t seed = 0;

  FieldConfig field_config() const {
    FieldConfig f;
    f.encoding.octaves = encoding_octaves;
    f.dims = dims;
    f.trunk_width = trunk_width;
    f.trunk_depth = trunk_depth;
    f.skip_layer = skip_layer;
    f.feature_dim = feature_dim;
    f.leaky_slope = leaky_slope;
    return f;
  }

  NeuralRendererConfig renderer_config() const { return {renderer_channels, leaky_slope}; }

  void validate() const {
    if (renderer_channels.empty() || renderer_channels.front() != feature_dim) {
      throw ConfigurationError("renderer channel plan must start with feature_dim=" + std::to_string(feature_dim));
    }
    const int stages = static_cast<int>(renderer_channels.size()) - 1;
    if (feature_grid <= 0 || (feature_grid << stages) != output_size) {
      throw ConfigurationError("feature_grid * 2^stages must equal output_size (" + std::to_string(feature_grid) +
                               " * 2^" + std::to_string(stages) + " != " + std::to_string(output_size) + ")");
    }
    if (samples_per_ray < 2) throw ConfigurationError("samples_per_ray must be >= 2");
    if (!(sphere_radius > 0)) throw ConfigurationError("sphere_radius must be positive");
    if (dims.id < 1 || dims.exp < 1 || dims.alb < 1 || dims.ill < 1) throw ConfigurationError("latent dims must be positive");
  }
};

struct PerceptualConfig {
  std::uint64_t seed = 7;
  std::vector<int> channels = {3, 8, 16, 32, 32};
  std::string weights_file;  // optional extractor container; overrides the seeded pyramid
};

struct TrainConfig {
  ModelConfig model;
  std::string preset = "paper";
  int steps = 2000;
  double lr_network = 1e-4;
  double lr_latent = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch = 1;
  std::uint64_t seed = 0;
  std::string precision = "f32";
  LossWeights loss_weights;
  bool use_perceptual = true;
  bool stratified = true;
  double init_sigma = 0.1;
  int log_every = 10;
  int eval_every = 100;
  PerceptualConfig perceptual;

  void validate() const {
    model.validate();
    if (!(lr_network >= 0) || !(lr_latent >= 0)) throw ConfigurationError("learning rates must be non-negative");
    if (batch < 1) throw ConfigurationError("batch must be >= 1");
    if (steps < 0) throw ConfigurationError("steps must be >= 0");
    if (precision != "f32" && precision != "f64") throw ConfigurationError("precision must be f32 or f64");
    loss_weights.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON. Reading starts from the defaults (or a preset) and overrides only the
// keys present, so partial config files are valid.

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"latent_dims", {{"id", m.dims.id}, {"exp", m.dims.exp}, {"alb", m.dims.alb}, {"ill", m.dims.ill}}},
          {"encoding_octaves", m.encoding_octaves},
          {"trunk_width", m.trunk_width},
          {"trunk_depth", m.trunk_depth},
          {"skip_layer", m.skip_layer},
          {"feature_dim", m.feature_dim},
          {"feature_grid", m.feature_grid},
          {"output_size", m.output_size},
          {"renderer_channels", m.renderer_channels},
          {"leaky_slope", m.leaky_slope},
          {"samples_per_ray", m.samples_per_ray},
          {"sphere_radius", m.sphere_radius},
          {"seed", m.seed}};
}

namespace detail {
template <class V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigurationError(std::string("config key '") + key + "': " + ex.what());
  }
}
}  // namespace detail

inline void merge_json(const nlohmann::json& j, ModelConfig& m) {
  if (j.contains("latent_dims")) {
    const auto& d = j["latent_dims"];
    detail::read_key(d, "id", m.dims.id);
    detail::read_key(d, "exp", m.dims.exp);
    detail::read_key(d, "alb", m.dims.alb);
    detail::read_key(d, "ill", m.dims.ill);
  }
  detail::read_key(j, "encoding_octaves", m.encoding_octaves);
  detail::read_key(j, "trunk_width", m.trunk_width);
  detail::read_key(j, "trunk_depth", m.trunk_depth);
  detail::read_key(j, "skip_layer", m.skip_layer);
  detail::read_key(j, "feature_dim", m.feature_dim);
  detail::read_key(j, "feature_grid", m.feature_grid);
  detail::read_key(j, "output_size", m.output_size);
  detail::read_key(j, "renderer_channels", m.renderer_channels);
  detail::read_key(j, "leaky_slope", m.leaky_slope);
  detail::read_key(j, "samples_per_ray", m.samples_per_ray);
  detail::read_key(j, "sphere_radius", m.sphere_radius);
  detail::read_key(j, "seed", m.seed);
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"model", to_json(c.model)},
          {"preset", c.preset},
          {"steps", c.steps},
          {"lr_network", c.lr_network},
          {"lr_latent", c.lr_latent},
          {"adam", {{"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}}},
          {"batch", c.batch},
          {"seed", c.seed},
          {"precision", c.precision},
          {"loss_weights",
           {{"w_id", c.loss_weights.w_id}, {"w_exp", c.loss_weights.w_exp}, {"w_alb", c.loss_weights.w_alb},
            {"w_ill", c.loss_weights.w_ill}}},
          {"use_perceptual", c.use_perceptual},
          {"stratified", c.stratified},
          {"init_sigma", c.init_sigma},
          {"log_every", c.log_every},
          {"eval_every", c.eval_every},
          {"perceptual",
           {{"seed", c.perceptual.seed}, {"channels", c.perceptual.channels}, {"weights_file", c.perceptual.weights_file}}}};
}

inline void merge_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigurationError("config document must be an object");
  if (j.contains("model")) merge_json(j["model"], c.model);
  detail::read_key(j, "preset", c.preset);
  detail::read_key(j, "steps", c.steps);
  detail::read_key(j, "lr_network", c.lr_network);
  detail::read_key(j, "lr_latent", c.lr_latent);
  if (j.contains("adam")) {
    detail::read_key(j["adam"], "beta1", c.beta1);
    detail::read_key(j["adam"], "beta2", c.beta2);
    detail::read_key(j["adam"], "eps", c.eps);
  }
  detail::read_key(j, "batch", c.batch);
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "precision", c.precision);
  if (j.contains("loss_weights")) {
    detail::read_key(j["loss_weights"], "w_id", c.loss_weights.w_id);
    detail::read_key(j["loss_weights"], "w_exp", c.loss_weights.w_exp);
    detail::read_key(j["loss_weights"], "w_alb", c.loss_weights.w_alb);
    detail::read_key(j["loss_weights"], "w_ill", c.loss_weights.w_ill);
  }
  detail::read_key(j, "use_perceptual", c.use_perceptual);
  detail::read_key(j, "stratified", c.stratified);
  detail::read_key(j, "init_sigma", c.init_sigma);
  detail::read_key(j, "log_every", c.log_every);
  detail::read_key(j, "eval_every", c.eval_every);
  if (j.contains("perceptual")) {
    detail::read_key(j["perceptual"], "seed", c.perceptual.seed);
    detail::read_key(j["perceptual"], "channels", c.perceptual.channels);
    detail::read_key(j["perceptual"], "weights_file", c.perceptual.weights_file);
  }
}

// ---------------------------------------------------------------------------
// Presets.
//
//   paper          full-size model (latent dims 100/79/100/27, 32x32x256 features, 256x256 output)
//   desk           64x64 output, 16x16x64 features, 4x128 trunk
//   micro          4x4 grid, 4 samples, 8 features; for gradient checks
//   no_perceptual  desk without the perceptual term
//   vanilla_compare  desk; logs that the vanilla baseline comparison is not built

inline ModelConfig desk_model() {
  ModelConfig m;
  m.dims = {16, 8, 16, 8};
  m.encoding_octaves = 6;
  m.trunk_width = 128;
  m.trunk_depth = 4;
  m.skip_layer = 2;
  m.feature_dim = 64;
  m.feature_grid = 16;
  m.output_size = 64;
  m.renderer_channels = {64, 32, 16};
  return m;
}

inline ModelConfig micro_model() {
  ModelConfig m;
  m.dims = {3, 2, 3, 2};
  m.encoding_octaves = 2;
  m.trunk_width = 8;
  m.trunk_depth = 2;
  m.skip_layer = 1;
  m.feature_dim = 8;
  m.feature_grid = 4;
  m.output_size = 8;
  m.renderer_channels = {8, 4};
  m.samples_per_ray = 4;
  return m;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"paper", "desk", "micro", "no_perceptual", "vanilla_compare"};
  return names;
}

inline TrainConfig preset_config(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  if (name == "paper") return c;
  if (name == "desk" || name == "no_perceptual" || name == "vanilla_compare") {
    c.model = desk_model();
    c.lr_network = 5e-4;
    c.lr_latent = 1e-3;
    c.use_perceptual = name != "no_perceptual";
    return c;
  }
  if (name == "micro") {
    c.model = micro_model();
    c.steps = 50;
    return c;
  }
  throw ConfigurationError("unknown preset '" + name + "'");
}

/// Preset named in the document (default "paper") with the document's keys applied.
inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c = preset_config(j.is_object() && j.contains("preset") ? j["preset"].get<std::string>() : "paper");
  merge_json(j, c);
  return c;
}

inline std::uint64_t config_hash(const TrainConfig& c) {
  const auto text = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace headfield
