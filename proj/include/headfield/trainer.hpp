#pragma once

// Training (network + shared latent codes), fitting (codes only) and
// checkpoint save/load.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "headfield/checkpoint.hpp"
#include "headfield/config.hpp"
#include "headfield/dataset.hpp"
#include "headfield/losses.hpp"
#include "headfield/model.hpp"
#include "headfield/optim.hpp"

namespace headfield {

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0;
  double data = 0;
  double perceptual = 0;
  double disentangled = 0;
  bool has_perceptual = true;
  std::optional<double> psnr;  // held-out view, on evaluation steps
};

inline nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j = {{"step", r.step}, {"loss", r.loss}, {"l_data", r.data}, {"l_dis", r.disentangled}};
  if (r.has_perceptual) j["l_per"] = r.perceptual;
  if (r.psnr) j["psnr"] = *r.psnr;
  return j;
}

template <class T>
struct HeldOutView {
  Tensor<T> image;
  Tensor<T> mask;
  Camera camera;
  FrameKey key;
};

/// Extractor for the configured perceptual term: the seeded pyramid, or the
/// layers stored in `weights_file` (tensors "extractor.<i>.weight|bias").
template <class T>
PerceptualExtractor<T> make_extractor(const PerceptualConfig& cfg) {
  if (cfg.weights_file.empty()) return PerceptualExtractor<T>::seeded(cfg.seed, cfg.channels);
  const auto c = load_container<T>(cfg.weights_file);
  std::vector<typename PerceptualExtractor<T>::Layer> layers;
  for (int i = 0;; ++i) {
    const auto w = "extractor." + std::to_string(i) + ".weight";
    if (!c.tensors.count(w)) break;
    layers.push_back({c.at(w), c.at("extractor." + std::to_string(i) + ".bias"), c.header.value("stride", 2),
                      c.header.value("padding", 2), c.header.value("leaky_slope", 0.2)});
  }
  if (layers.empty()) throw ConfigurationError("extractor file " + cfg.weights_file + " has no layers");
  return PerceptualExtractor<T>(std::move(layers));
}

template <class T>
LatentRegistry<T> make_registry(const TrainConfig& cfg, const std::vector<FrameRecord<T>>& frames) {
  LatentInit init;
  init.sigma = cfg.init_sigma;
  init.seed = cfg.seed + 1;
  return LatentRegistry<T>::create(frame_keys(frames), cfg.model.dims, init);
}

/// Named presets "subject/expression/lighting" for every code combination
/// available in the registry (detached copies).
template <class T>
std::map<std::string, LatentState<T>> registry_presets(const LatentRegistry<T>& reg) {
  std::map<std::string, LatentState<T>> out;
  for (const auto& [subject, id] : reg.table(Attribute::id)) {
    for (const auto& [exp_key, exp] : reg.table(Attribute::exp)) {
      if (exp_key.rfind(subject + "/", 0) != 0) continue;
      for (const auto& [light, ill] : reg.table(Attribute::ill)) {
        const auto& alb = reg.table(Attribute::alb).at(subject);
        out[exp_key + "/" + light] = LatentState<T>{id.code.detach(), exp.code.detach(), alb.code.detach(), ill.code.detach()};
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint.

template <class T>
struct LoadedCheckpoint {
  TrainConfig config;
  Model<T> model;
  LatentRegistry<T> registry;
  std::int64_t step = 0;
  nlohmann::json header;
  Container<T> container;
};

inline std::string checkpoint_precision(const std::filesystem::path& path) {
  const auto header = read_container_header(read_file(path));
  if (header.value("kind", "") != "checkpoint") throw IoError(path.string() + " is not a checkpoint");
  return header.value("dtype", "f32");
}

template <class T>
LoadedCheckpoint<T> decode_checkpoint(std::string_view bytes) {
  LoadedCheckpoint<T> out;
  out.container = decode_container<T>(bytes);
  out.header = out.container.header;
  if (out.header.value("kind", "") != "checkpoint") throw IoError("container is not a checkpoint");
  if (out.header.value("dtype", "") != dtype_name(dtype_of<T>())) {
    throw ConfigurationError(std::string("checkpoint precision is ") + out.header.value("dtype", "?") + ", requested " +
                             dtype_name(dtype_of<T>()));
  }
  out.config = config_from_json(out.header.at("config"));
  out.config.validate();
  out.step = out.header.at("step").template get<std::int64_t>();
  out.model = Model<T>(out.config.model);
  NamedTensors<T> stored;
  for (const auto& [name, _] : out.model.named_parameters()) stored.emplace_back(name, out.container.at(name));
  assign_parameters(out.model.named_parameters(), stored);
  out.registry.set_dims(out.config.model.dims);
  const auto& keys = out.header.at("latent_keys");
  for (auto a : kAttributes) {
    const std::string attr = attribute_key(a);
    for (const auto& k : keys.at(attr)) {
      const auto key = k.template get<std::string>();
      auto code = out.container.at("latent." + attr + "." + key).clone_leaf(true);
      const auto& init = out.container.at("latent_init." + attr + "." + key).values();
      out.registry.table(a)[key] = {code, std::vector<T>(init.begin(), init.end())};
    }
  }
  return out;
}

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(read_file(path));
}

// ---------------------------------------------------------------------------
// Training.

template <class T>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, std::vector<FrameRecord<T>> frames, LatentRegistry<T> registry)
      : cfg_(cfg), frames_(std::move(frames)), registry_(std::move(registry)) {
    cfg_.validate();
    if (frames_.empty()) throw ManifestError("training needs at least one frame");
    for (const auto& f : frames_) {
      if (f.image.dim(1) != cfg_.model.output_size || f.image.dim(2) != cfg_.model.output_size) {
        throw ConfigurationError("frame " + f.image_path + " is " + std::to_string(f.image.dim(2)) + "x" +
                                 std::to_string(f.image.dim(1)) + " but output_size is " +
                                 std::to_string(cfg_.model.output_size));
      }
      (void)registry_.state_for(f.key);
    }
    model_ = Model<T>(cfg_.model);
    adam_ = Adam<T>(AdamHyper{cfg_.beta1, cfg_.beta2, cfg_.eps});
    rng_.seed(cfg_.seed);
    if (cfg_.use_perceptual) extractor_ = make_extractor<T>(cfg_.perceptual);
  }

  Trainer(const TrainConfig& cfg, std::vector<FrameRecord<T>> frames)
      : Trainer(cfg, frames, make_registry(cfg, frames)) {}

  /// Continues from a checkpoint written by save(); the run is bit-identical to
  /// one that was never interrupted.
  static Trainer resume(const std::filesystem::path& checkpoint, std::vector<FrameRecord<T>> frames) {
    auto loaded = load_checkpoint<T>(checkpoint);
    Trainer t(loaded.config, std::move(frames), std::move(loaded.registry));
    assign_parameters(t.model_.named_parameters(), loaded.model.named_parameters());
    t.step_ = loaded.step;
    std::istringstream rng_text(loaded.header.at("rng").template get<std::string>());
    rng_text >> t.rng_;
    t.order_ = loaded.header.at("order").template get<std::vector<std::size_t>>();
    t.cursor_ = loaded.header.at("cursor").template get<std::size_t>();
    for (const auto& [name, count] : loaded.header.at("adam_steps").items()) {
      auto& slot = t.adam_.slots()[name];
      slot.step = count.template get<std::int64_t>();
      slot.m = loaded.container.at("adam.m." + name);
      slot.v = loaded.container.at("adam.v." + name);
    }
    return t;
  }

  void set_held_out(HeldOutView<T> view) { held_out_ = std::move(view); }

  const TrainConfig& config() const { return cfg_; }
  const Model<T>& model() const { return model_; }
  const LatentRegistry<T>& registry() const { return registry_; }
  const Adam<T>& optimizer() const { return adam_; }
  std::int64_t steps_done() const { return step_; }
  const std::vector<FrameRecord<T>>& frames() const { return frames_; }
  const PerceptualExtractor<T>* extractor() const { return cfg_.use_perceptual ? &extractor_ : nullptr; }

  /// Frame indices of the next batch (epoch-shuffled, without replacement within an epoch).
  std::vector<std::size_t> next_batch() {
    std::vector<std::size_t> batch;
    for (int b = 0; b < cfg_.batch; ++b) {
      if (cursor_ >= order_.size()) {
        order_.resize(frames_.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      batch.push_back(order_[cursor_++]);
    }
    return batch;
  }

  /// Forward + backward over the given frames, accumulating gradients into the
  /// network and the codes they share. Returns summed loss components.
  StepRecord accumulate(const std::vector<std::size_t>& batch) {
    StepRecord rec;
    rec.step = step_ + 1;
    rec.has_perceptual = cfg_.use_perceptual;
    for (auto idx : batch) {
      const auto& f = frames_.at(idx);
      const auto codes = registry_.state_for(f.key);
      const auto init = registry_.initial_for(f.key);
      RenderOptions opts{cfg_.stratified ? SamplingMode::stratified : SamplingMode::uniform, rng_()};
      const auto pred = render_full(model_, codes, f.camera, opts).image;
      auto terms = total_loss(pred, f.image, f.mask, extractor(), codes, init, cfg_.loss_weights);
      terms.total.backward();
      rec.loss += static_cast<double>(terms.total.item());
      rec.data += terms.data;
      rec.perceptual += terms.perceptual;
      rec.disentangled += terms.disentangled;
    }
    return rec;
  }

  /// One optimisation step.
  StepRecord step() {
    StepRecord rec;
    try {
      rec = accumulate(next_batch());
    } catch (const DomainError& e) {
      rec.step = step_ + 1;
      rec.loss = std::numeric_limits<double>::quiet_NaN();
      throw NumericError(std::string(e.what()) + ": " + diagnostic(rec).dump());
    }
    check_finite(rec);
    for (auto& [name, p] : model_.named_parameters()) adam_.update(name, p, cfg_.lr_network);
    for (auto& [name, p] : registry_.named_codes()) adam_.update(name, p, cfg_.lr_latent);
    zero_grad();
    ++step_;
    if (held_out_ && cfg_.eval_every > 0 && step_ % cfg_.eval_every == 0) rec.psnr = evaluate_held_out();
    return rec;
  }

  /// Runs `steps` steps; `sink` sees every log_every-th record, every record
  /// with a PSNR, and the last one.
  void run(int steps, const std::function<void(const StepRecord&)>& sink = {}) {
    for (int i = 0; i < steps; ++i) {
      const auto rec = step();
      const bool log = cfg_.log_every > 0 && rec.step % cfg_.log_every == 0;
      if (sink && (log || rec.psnr || i + 1 == steps)) sink(rec);
    }
  }

  double evaluate_held_out() const {
    if (!held_out_) throw ConfigurationError("no held-out view configured");
    const auto codes = registry_.state_for(held_out_->key);
    const auto img = render_image(model_, codes, held_out_->camera);
    return masked_metrics(img, held_out_->image, held_out_->mask).psnr;
  }

  void zero_grad() {
    for (auto& [name, p] : model_.named_parameters()) const_cast<Tensor<T>&>(p).zero_grad();
    for (auto& [name, p] : registry_.named_codes()) const_cast<Tensor<T>&>(p).zero_grad();
  }

  std::string encode_checkpoint() const {
    std::ostringstream rng_text;
    rng_text << rng_;
    nlohmann::json keys, adam_steps = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor<T>>> tensors = model_.named_parameters();
    for (auto a : kAttributes) {
      const std::string attr = attribute_key(a);
      keys[attr] = nlohmann::json::array();
      for (const auto& [k, e] : registry_.table(a)) {
        keys[attr].push_back(k);
        tensors.emplace_back("latent." + attr + "." + k, e.code);
        tensors.emplace_back("latent_init." + attr + "." + k,
                             Tensor<T>::from({static_cast<std::int64_t>(e.initial.size())}, e.initial));
      }
    }
    for (const auto& [name, slot] : adam_.slots()) {
      adam_steps[name] = slot.step;
      tensors.emplace_back("adam.m." + name, slot.m);
      tensors.emplace_back("adam.v." + name, slot.v);
    }
    nlohmann::json header = {{"kind", "checkpoint"},
                             {"config", to_json(cfg_)},
                             {"step", step_},
                             {"rng", rng_text.str()},
                             {"order", order_},
                             {"cursor", cursor_},
                             {"latent_keys", keys},
                             {"adam_steps", adam_steps},
                             {"network_checksum", model_.parameter_checksum()}};
    return encode_container(std::move(header), tensors);
  }

  void save(const std::filesystem::path& path) const { write_file_atomic(path, encode_checkpoint()); }

 private:
  static double grad_norm(const Tensor<T>& t) {
    if (!t.has_grad()) return 0.0;
    double s = 0;
    for (T g : t.grad()) s += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(s);
  }

  nlohmann::json diagnostic(const StepRecord& rec) const {
    nlohmann::json grads = nlohmann::json::object();
    for (const auto& [name, p] : model_.named_parameters()) grads[name] = grad_norm(p);
    for (const auto& [name, p] : registry_.named_codes())
      if (p.has_grad()) grads[name] = grad_norm(p);
    return {{"step", rec.step},          {"loss", rec.loss},
            {"l_data", rec.data},        {"l_per", rec.perceptual},
            {"l_dis", rec.disentangled}, {"grad_norms", grads}};
  }

  void check_finite(const StepRecord& rec) const {
    bool finite = std::isfinite(rec.loss);
    for (const auto& [name, p] : model_.named_parameters()) finite = finite && std::isfinite(grad_norm(p));
    for (const auto& [name, p] : registry_.named_codes()) finite = finite && std::isfinite(grad_norm(p));
    if (!finite) throw NumericError("non-finite loss or gradient: " + diagnostic(rec).dump());
  }

  TrainConfig cfg_;
  std::vector<FrameRecord<T>> frames_;
  LatentRegistry<T> registry_;
  Model<T> model_;
  Adam<T> adam_;
  std::mt19937_64 rng_;
  PerceptualExtractor<T> extractor_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::int64_t step_ = 0;
  std::optional<HeldOutView<T>> held_out_;
};

// ---------------------------------------------------------------------------
// Fitting: codes only, network frozen.

struct FitConfig {
  int iterations = 300;
  double lr = 0.02;
  bool use_perceptual = true;
  AdamHyper adam;
};

template <class T>
struct FitResult {
  LatentState<T> codes;
  ImageMetrics metrics;
  double final_loss = 0;
  std::vector<double> history;
  std::uint64_t checksum_before = 0;
  std::uint64_t checksum_after = 0;
};

namespace detail {
// Clears requires_grad on every network parameter for the guard's lifetime.
template <class T>
class FreezeGuard {
 public:
  explicit FreezeGuard(const Model<T>& m) : model_(m) { model_.set_requires_grad(false); }
  ~FreezeGuard() { model_.set_requires_grad(true); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  const Model<T>& model_;
};
}  // namespace detail

/// argmin over codes of L_data + L_per, starting from `start` (zeros if null).
template <class T>
FitResult<T> fit(const Model<T>& model, const PerceptualExtractor<T>* extractor, const Tensor<T>& image,
                 const Tensor<T>& mask, const Camera& camera, const FitConfig& cfg, const LatentState<T>* start = nullptr) {
  const int size = model.config().output_size;
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != size || image.dim(2) != size) {
    throw ConfigurationError("fit target " + shape_string(image.shape()) + " does not match the model resolution " +
                             std::to_string(size) + "x" + std::to_string(size));
  }
  if (cfg.iterations < 0) throw ParameterError("fit iterations must be >= 0");
  FitResult<T> out;
  out.checksum_before = model.parameter_checksum();
  out.codes = start ? start->clone(true) : LatentState<T>::zeros(model.config().dims, true);
  check_dims(out.codes, model.config().dims);
  {
    detail::FreezeGuard<T> freeze(model);
    Adam<T> adam(cfg.adam);
    for (int it = 0; it < cfg.iterations; ++it) {
      const auto pred = render_full(model, out.codes, camera).image;
      auto terms = fitting_loss(pred, image, mask, cfg.use_perceptual ? extractor : nullptr);
      terms.total.backward();
      const double loss = static_cast<double>(terms.total.item());
      if (!std::isfinite(loss)) throw NumericError("fit: non-finite loss at iteration " + std::to_string(it));
      out.history.push_back(loss);
      for (auto a : kAttributes) {
        adam.update(attribute_key(a), out.codes[a], cfg.lr);
        out.codes[a].zero_grad();
      }
    }
  }
  out.checksum_after = model.parameter_checksum();
  NoGradGuard guard;
  const auto pred = render_full(model, out.codes, camera).image;
  out.final_loss = static_cast<double>(fitting_loss(pred, image, mask, cfg.use_perceptual ? extractor : nullptr).total.item());
  out.metrics = masked_metrics(pred, image, mask);
  for (auto a : kAttributes) out.codes[a] = out.codes[a].detach();
  return out;
}

}  // namespace headfield
