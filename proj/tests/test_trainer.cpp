#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "headfield/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace headfield;
namespace fs = std::filesystem;
using headfield::testing::random_values;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("headfield_trainer_" + name);
  fs::remove_all(dir);
  return dir;
}

template <class T>
std::vector<FrameRecord<T>> micro_frames(const std::string& name, int views = 2, int expressions = 1) {
  DatasetSpec s;
  s.subjects = 1;
  s.expressions = expressions;
  s.lightings = 1;
  s.views = views;
  s.resolution = 8;
  s.samples = 32;
  const auto dir = fresh_dir(name);
  auto frames = load_dataset<T>(generate_dataset(s, dir));
  fs::remove_all(dir);
  return frames;
}

TrainConfig micro_config() {
  auto cfg = preset_config("micro");
  cfg.use_perceptual = false;
  cfg.log_every = 1;
  return cfg;
}

template <class T>
std::vector<T> copy_grad(const Tensor<T>& t) {
  return {t.grad().begin(), t.grad().end()};
}

}  // namespace

TEST(RenderFull, ShapeAndDeterminism) {
  const Model<float> model(micro_model());
  const auto codes = LatentState<float>::zeros(micro_model().dims);
  const auto cam = dataset_camera(view_angles(1, 4), 8);
  const auto a = render_image(model, codes, cam);
  const auto b = render_image(model, codes, cam);
  EXPECT_EQ(a.shape(), (Shape{3, 8, 8}));
  EXPECT_EQ(a.values(), b.values());
  EXPECT_THROW(render_image(model, codes, dataset_camera(view_angles(1, 4), 16)), ConfigurationError);
}

TEST(RenderFull, ZeroDensityGivesConstantImage) {
  const Model<double> model(micro_model());
  for (auto& [name, t] : model.named_parameters()) {
    if (name.rfind("field.density", 0) != 0) continue;
    const bool bias = name.find("bias") != std::string::npos;
    for (auto& v : const_cast<Tensor<double>&>(t).mutable_data()) v = bias ? -60.0 : 0.0;
  }
  std::mt19937_64 rng(1);
  const auto d = micro_model().dims;
  const LatentState<double> codes{Tensor<double>::from({d.id}, random_values(d.id, rng)),
                                  Tensor<double>::from({d.exp}, random_values(d.exp, rng)),
                                  Tensor<double>::from({d.alb}, random_values(d.alb, rng)),
                                  Tensor<double>::from({d.ill}, random_values(d.ill, rng))};
  const auto img = render_image(model, codes, dataset_camera(view_angles(2, 4), 8));
  for (int c = 0; c < 3; ++c) {
    const auto begin = img.values().begin() + c * 64;
    const auto [lo, hi] = std::minmax_element(begin, begin + 64);
    EXPECT_LT(*hi - *lo, 1e-6);
  }
}

TEST(EndToEnd, LossGradientWrtAllCodes) {
  const auto cfg = micro_model();
  const Model<float> m32(cfg);
  const Model<double> m64(cfg);
  const auto cam = dataset_camera(view_angles(0, 4), cfg.output_size);
  std::mt19937_64 rng(2);
  const auto gt = random_values(3 * 8 * 8, rng, 0, 1);
  const auto init = random_values(10, rng, -0.5, 0.5);
  auto f = [&](const auto& in) {
    using T = typename std::decay_t<decltype(in)>::value_type::value_type;
    const Model<T>* model;
    if constexpr (std::is_same_v<T, float>) model = &m32; else model = &m64;
    static const auto ext = PerceptualExtractor<T>::seeded(7);
    const LatentState<T> codes{in[0], in[1], in[2], in[3]};
    const LatentState<T> z0{Tensor<T>::from({3}, std::vector<T>(init.begin(), init.begin() + 3)),
                            Tensor<T>::from({2}, std::vector<T>(init.begin() + 3, init.begin() + 5)),
                            Tensor<T>::from({3}, std::vector<T>(init.begin() + 5, init.begin() + 8)),
                            Tensor<T>::from({2}, std::vector<T>(init.begin() + 8, init.end()))};
    const auto pred = render_full(*model, codes, cam).image;
    return total_loss(pred, Tensor<T>::from({3, 8, 8}, std::vector<T>(gt.begin(), gt.end())),
                      Tensor<T>::full({8, 8}, T(1)), &ext, codes, z0, LossWeights{})
        .total;
  };
  headfield::testing::ScalarFn<float> f32 = f;
  headfield::testing::ScalarFn<double> f64 = f;
  const std::vector<Shape> shapes = {{3}, {2}, {3}, {2}};
  const std::vector<std::vector<double>> point = {random_values(3, rng, -1, 1), random_values(2, rng, -1, 1),
                                                  random_values(3, rng, -1, 1), random_values(2, rng, -1, 1)};
  EXPECT_LT(headfield::testing::gradient_error<float>(f32, f64, shapes, point, 1e-5), 1e-3);
  EXPECT_LT(headfield::testing::gradient_error<double>(f64, f64, shapes, point, 1e-5), 1e-5);
}

TEST(Trainer, ZeroLearningRateLeavesEverythingUnchanged) {
  auto cfg = micro_config();
  cfg.lr_network = 0;
  cfg.lr_latent = 0;
  Trainer<float> t(cfg, micro_frames<float>("lr0"));
  const auto network = t.model().parameter_checksum();
  const auto codes = checksum(t.registry().named_codes());
  t.run(4);
  EXPECT_EQ(t.model().parameter_checksum(), network);
  EXPECT_EQ(checksum(t.registry().named_codes()), codes);
}

TEST(Trainer, SharedIdUpdateEqualsSummedGradientUpdate) {
  auto cfg = micro_config();
  cfg.stratified = false;
  cfg.batch = 2;
  Trainer<double> t(cfg, micro_frames<double>("shared", 2));
  ASSERT_EQ(t.registry().count(Attribute::id), 1u);
  const auto id = t.registry().state_for(t.frames()[0].key).z_id;
  const auto start = std::vector<double>(id.values().begin(), id.values().end());

  t.accumulate({0});
  const auto ga = copy_grad(id);
  t.zero_grad();
  t.accumulate({1});
  const auto gb = copy_grad(id);
  t.zero_grad();
  t.accumulate({0, 1});
  const auto joint = copy_grad(id);
  t.zero_grad();
  std::vector<double> summed(ga.size());
  for (std::size_t i = 0; i < ga.size(); ++i) summed[i] = ga[i] + gb[i];
  EXPECT_LT(headfield::testing::relative_error(joint, summed), 1e-12);

  // First Adam step from the summed gradient.
  t.step();
  for (std::size_t i = 0; i < start.size(); ++i) {
    const double g = summed[i];
    const double m = (1 - cfg.beta1) * g / (1 - cfg.beta1);
    const double v = (1 - cfg.beta2) * g * g / (1 - cfg.beta2);
    const double expected = start[i] - cfg.lr_latent * m / (std::sqrt(v) + cfg.eps);
    EXPECT_NEAR(id[static_cast<std::int64_t>(i)], expected, 1e-12);
  }
}

TEST(Trainer, SingleFrameOverfitReducesDataLoss) {
  auto cfg = micro_config();
  cfg.model.trunk_width = 32;
  cfg.model.feature_dim = 16;
  cfg.model.renderer_channels = {16, 8};
  cfg.model.samples_per_ray = 16;
  cfg.lr_network = 3e-3;
  cfg.lr_latent = 1e-2;
  Trainer<float> t(cfg, micro_frames<float>("overfit", 1));
  double first = 0, last = 0;
  t.run(500, [&](const StepRecord& r) {
    if (r.step == 1) first = r.data;
    last = r.data;
  });
  EXPECT_LT(last * 10, first) << first << " -> " << last;
}

TEST(Trainer, NonFiniteLossRaisesWithDump) {
  // NaN in the renderer reaches the loss; NaN in the field is caught at the density.
  for (const std::string prefix : {"renderer.rgb.base.bias", "field.trunk.0.bias"}) {
    Trainer<float> t(micro_config(), micro_frames<float>("nan", 1));
    for (auto& [name, p] : t.model().named_parameters())
      if (name == prefix) const_cast<Tensor<float>&>(p).mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    try {
      t.step();
      FAIL() << "expected NumericError for " << prefix;
    } catch (const NumericError& e) {
      const std::string what = e.what();
      EXPECT_NE(what.find("grad_norms"), std::string::npos) << what;
      EXPECT_NE(what.find("\"step\":1"), std::string::npos) << what;
    }
  }
}

TEST(Trainer, PresetLogsAndHashes) {
  auto with = preset_config("desk");
  auto without = preset_config("no_perceptual");
  EXPECT_NE(config_hash(with), config_hash(without));
  EXPECT_NE(config_hash(without), config_hash(preset_config("vanilla_compare")));
  for (bool perceptual : {true, false}) {
    auto cfg = micro_config();
    cfg.use_perceptual = perceptual;
    Trainer<float> t(cfg, micro_frames<float>("presets", 1));
    std::vector<nlohmann::json> log;
    t.run(2, [&](const StepRecord& r) { log.push_back(to_json(r)); });
    ASSERT_EQ(log.size(), 2u);
    for (const auto& line : log) EXPECT_EQ(line.contains("l_per"), perceptual) << line.dump();
  }
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const auto dir = fresh_dir("ckpt");
  fs::create_directories(dir);
  auto frames = micro_frames<float>("ckpt_data", 2);
  Trainer<float> t(micro_config(), frames);
  t.run(3);
  t.save(dir / "a.hnrf");
  const auto bytes = read_file(dir / "a.hnrf");
  const auto resumed = Trainer<float>::resume(dir / "a.hnrf", frames);
  EXPECT_EQ(resumed.encode_checkpoint(), bytes);
  EXPECT_EQ(checkpoint_precision(dir / "a.hnrf"), "f32");
  EXPECT_THROW(load_checkpoint<double>(dir / "a.hnrf"), ConfigurationError);
  fs::remove_all(dir);
}

TEST(Checkpoint, ResumeIsBitExact) {
  const auto dir = fresh_dir("resume");
  fs::create_directories(dir);
  auto frames = micro_frames<float>("resume_data", 3);
  auto cfg = micro_config();
  cfg.batch = 2;
  Trainer<float> straight(cfg, frames);
  straight.run(7);
  Trainer<float> first(cfg, frames);
  first.run(4);
  first.save(dir / "mid.hnrf");
  auto second = Trainer<float>::resume(dir / "mid.hnrf", frames);
  second.run(3);
  EXPECT_EQ(second.steps_done(), 7);
  EXPECT_EQ(second.encode_checkpoint(), straight.encode_checkpoint());
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptContainerRejected) {
  Trainer<float> t(micro_config(), micro_frames<float>("corrupt_ckpt", 1));
  auto bytes = t.encode_checkpoint();
  EXPECT_THROW(decode_checkpoint<float>(bytes.substr(0, bytes.size() - 5)), IoError);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint<float>(bytes), IoError);
}

TEST(Fit, ZeroIterationsReturnsStart) {
  const Model<float> model(micro_model());
  const auto frames = micro_frames<float>("fit0", 1);
  std::mt19937_64 rng(3);
  const auto d = micro_model().dims;
  const LatentState<float> start{Tensor<float>::from({d.id}, std::vector<float>{0.1f, -0.2f, 0.3f}),
                                 Tensor<float>::from({d.exp}, std::vector<float>{0.5f, 0.0f}),
                                 Tensor<float>::zeros({d.alb}), Tensor<float>::full({d.ill}, 0.25f)};
  FitConfig fc;
  fc.iterations = 0;
  const auto r = fit(model, static_cast<const PerceptualExtractor<float>*>(nullptr), frames[0].image, frames[0].mask,
                     frames[0].camera, fc, &start);
  for (auto a : kAttributes) EXPECT_EQ(r.codes[a].values(), start[a].values());
  const auto zero = fit(model, static_cast<const PerceptualExtractor<float>*>(nullptr), frames[0].image,
                        frames[0].mask, frames[0].camera, fc);
  for (auto a : kAttributes)
    for (float v : zero.codes[a].values()) EXPECT_EQ(v, 0.0f);
}

TEST(Fit, NetworkFrozenAndCodesMove) {
  const Model<float> model(micro_model());
  const auto frames = micro_frames<float>("fit_frozen", 1);
  const auto before = model.parameter_checksum();
  FitConfig fc;
  fc.iterations = 20;
  const auto ext = PerceptualExtractor<float>::seeded(7);
  const auto r = fit(model, &ext, frames[0].image, frames[0].mask, frames[0].camera, fc);
  EXPECT_EQ(r.checksum_before, before);
  EXPECT_EQ(r.checksum_after, before);
  EXPECT_EQ(model.parameter_checksum(), before);
  EXPECT_EQ(r.history.size(), 20u);
  EXPECT_LT(r.history.back(), r.history.front());
  for (const auto& [name, t] : model.named_parameters()) EXPECT_TRUE(t.requires_grad()) << name;
}

TEST(Fit, ResolutionMismatchIsConfigurationError) {
  const Model<float> model(micro_model());
  EXPECT_THROW(fit(model, static_cast<const PerceptualExtractor<float>*>(nullptr), Tensor<float>::zeros({3, 16, 16}),
                   Tensor<float>::zeros({16, 16}), dataset_camera(view_angles(0, 4), 16), FitConfig{}),
               ConfigurationError);
}

TEST(Config, JsonRoundTripAndOverrides) {
  const auto cfg = preset_config("desk");
  const auto back = config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  const auto partial = config_from_json(nlohmann::json{{"preset", "micro"}, {"steps", 7}, {"model", {{"seed", 9}}}});
  EXPECT_EQ(partial.steps, 7);
  EXPECT_EQ(partial.model.seed, 9u);
  EXPECT_EQ(partial.model.feature_grid, 4);
  EXPECT_THROW(config_from_json(nlohmann::json{{"steps", "many"}}), ConfigurationError);
  EXPECT_THROW(preset_config("nope"), ConfigurationError);
  auto bad = cfg;
  bad.model.output_size = 100;
  EXPECT_THROW(bad.validate(), ConfigurationError);
}
