// Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
// if any fails.
//
//   acceptance [--work DIR] [--reuse] [--only N,...]
//
// --reuse keeps desk checkpoints from an earlier run in DIR instead of
// retraining them.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <thread>

#include "headfield/headfield.hpp"
#include "support/gradcheck.hpp"
#include "support/op_catalog.hpp"

using namespace headfield;
namespace fs = std::filesystem;
namespace hft = headfield::testing;
using hft::make_tensor;
using hft::random_values;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

struct Report {
  int failed = 0;
  void line(int n, const std::string& name, bool ok, const std::string& detail) {
    if (!ok) ++failed;
    std::cout << (ok ? "PASS " : "FAIL ") << std::setw(2) << n << "  " << name << "  " << detail << std::endl;
  }
};

template <class T, class U>
Tensor<T> cast(const Tensor<U>& t) {
  return Tensor<T>::from(t.shape(), std::vector<T>(t.values().begin(), t.values().end()));
}

// ---------------------------------------------------------------------------
// 1. gradient suite

template <class G>
std::pair<double, double> worst_pair(G g, const std::vector<Shape>& shapes, const std::vector<std::vector<double>>& point,
                                     double step = 1e-6) {
  hft::ScalarFn<float> f32 = g;
  hft::ScalarFn<double> f64 = g;
  return {hft::gradient_error<double>(f64, f64, shapes, point, step), hft::gradient_error<float>(f32, f64, shapes, point, step)};
}

void gradient_suite(Report& rep) {
  const auto t0 = Clock::now();
  double w64 = 0, w32 = 0;
  std::string worst_name;
  auto note = [&](const std::string& name, std::pair<double, double> e) {
    if (e.first > w64 || e.second > w32) worst_name = name;
    w64 = std::max(w64, e.first);
    w32 = std::max(w32, e.second);
  };
  for (const auto& op : hft::op_catalog()) {
    for (int seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(5000 + seed);
      const auto point = hft::draw_inputs(op, rng);
      note(op.name, {hft::gradient_error<double>(op.f64, op.f64, op.shapes, point),
                     hft::gradient_error<float>(op.f32, op.f64, op.shapes, point)});
    }
  }

  std::mt19937_64 rng(17);
  // positional encoding
  note("positional_encode", worst_pair([](const auto& in) { return hft::project(positional_encode(in[0], {4, true})); },
                                       {{4, 3}}, {random_values(12, rng, -1, 1)}));
  // quadrature weights and alpha w.r.t. density
  {
    const auto delta = random_values(12, rng, 0.05, 0.3);
    note("compute_weights", worst_pair(
                                [delta](const auto& in) {
                                  using T = hft::elem_t<decltype(in)>;
                                  const auto d = Tensor<T>::from({2, 6}, std::vector<T>(delta.begin(), delta.end()));
                                  const auto w = compute_weights(in[0], d);
                                  return add(hft::project(w.w), sum(w.alpha));
                                },
                                {{2, 6}}, {random_values(12, rng, 0.0, 3.0)}));
  }
  // feature compositing w.r.t. features
  {
    const auto sigma = random_values(4 * 5, rng, 0.0, 3.0);
    note("render_features", worst_pair(
                                [sigma](const auto& in) {
                                  using T = hft::elem_t<decltype(in)>;
                                  const auto w = compute_weights(Tensor<T>::from({4, 5}, std::vector<T>(sigma.begin(), sigma.end())),
                                                                 Tensor<T>::full({4, 5}, T(0.2)));
                                  return hft::project(render_features(w, in[0], 2, 2).features);
                                },
                                {{4, 5, 3}}, {random_values(60, rng)}));
  }
  // field network w.r.t. all four codes
  {
    FieldConfig fc;
    fc.encoding.octaves = 3;
    fc.dims = {5, 4, 3, 2};
    fc.trunk_width = 16;
    fc.trunk_depth = 3;
    fc.skip_layer = 1;
    fc.feature_dim = 6;
    const FieldNetwork<float> n32(fc, 5);
    const FieldNetwork<double> n64(fc, 5);
    const auto pts = random_values(8 * 3, rng, -1, 1);
    note("field", worst_pair(
                      [&](const auto& in) {
                        using T = hft::elem_t<decltype(in)>;
                        const FieldNetwork<T>* net;
                        if constexpr (std::is_same_v<T, float>) net = &n32; else net = &n64;
                        const LatentState<T> codes{in[0], in[1], in[2], in[3]};
                        const auto [sigma, feature] =
                            net->evaluate_points(Tensor<T>::from({8, 3}, std::vector<T>(pts.begin(), pts.end())), codes);
                        return add(hft::project(sigma), hft::project(feature));
                      },
                      {{5}, {4}, {3}, {2}},
                      {random_values(5, rng, -1, 1), random_values(4, rng, -1, 1), random_values(3, rng, -1, 1),
                       random_values(2, rng, -1, 1)}));
  }
  // 2D renderer w.r.t. its input feature map
  {
    const NeuralRendererConfig cfg{{4, 3}, 0.2};
    const NeuralRenderer<float> r32(cfg, 12);
    const NeuralRenderer<double> r64(cfg, 12);
    note("neural_renderer", worst_pair(
                                [&](const auto& in) {
                                  using T = hft::elem_t<decltype(in)>;
                                  if constexpr (std::is_same_v<T, float>) return hft::project(r32.render(in[0]));
                                  else return hft::project(r64.render(in[0]));
                                },
                                {{4, 3, 3}}, {random_values(36, rng, -1, 1)}));
  }
  // end to end: total loss of a micro model w.r.t. the four codes
  {
    const auto cfg = micro_model();
    const Model<float> m32(cfg);
    const Model<double> m64(cfg);
    const auto cam = dataset_camera(view_angles(0, 4), cfg.output_size);
    const auto gt = random_values(3 * 8 * 8, rng, 0, 1);
    const auto init = random_values(10, rng, -0.5, 0.5);
    const auto e32 = PerceptualExtractor<float>::seeded(7);
    const auto e64 = PerceptualExtractor<double>::seeded(7);
    auto f = [&](const auto& in) {
      using T = hft::elem_t<decltype(in)>;
      const Model<T>* model;
      const PerceptualExtractor<T>* ext;
      if constexpr (std::is_same_v<T, float>) { model = &m32; ext = &e32; } else { model = &m64; ext = &e64; }
      const LatentState<T> codes{in[0], in[1], in[2], in[3]};
      const LatentState<T> z0{Tensor<T>::from({3}, std::vector<T>(init.begin(), init.begin() + 3)),
                              Tensor<T>::from({2}, std::vector<T>(init.begin() + 3, init.begin() + 5)),
                              Tensor<T>::from({3}, std::vector<T>(init.begin() + 5, init.begin() + 8)),
                              Tensor<T>::from({2}, std::vector<T>(init.begin() + 8, init.end()))};
      const auto pred = render_full(*model, codes, cam).image;
      return total_loss(pred, Tensor<T>::from({3, 8, 8}, std::vector<T>(gt.begin(), gt.end())), Tensor<T>::full({8, 8}, T(1)),
                        ext, codes, z0, LossWeights{})
          .total;
    };
    note("end_to_end", worst_pair(f, {{3}, {2}, {3}, {2}},
                                  {random_values(3, rng, -1, 1), random_values(2, rng, -1, 1), random_values(3, rng, -1, 1),
                                   random_values(2, rng, -1, 1)},
                                  1e-5));
  }
  const double secs = seconds_since(t0);
  rep.line(1, "gradient-suite", w64 < 1e-5 && w32 < 1e-3 && secs < 120,
           "rel64 " + fmt(w64) + " (<1e-5) rel32 " + fmt(w32) + " (<1e-3) worst " + worst_name + " time " + fmt(secs) + "s (<120)");
}

// ---------------------------------------------------------------------------
// 2. quadrature

void quadrature(Report& rep) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> rays(1, 4), samples(2, 32);
  double tele = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rays(rng), s = samples(rng);
    const auto w = compute_weights(make_tensor<double>({n, s}, random_values(n * s, rng, 0.0, 10.0), false),
                                   make_tensor<double>({n, s}, random_values(n * s, rng, 0.0, 0.2), false));
    for (int r = 0; r < n; ++r) {
      double total = w.transmittance_final[r];
      for (int i = 0; i < s; ++i) total += w.w[r * s + i];
      tele = std::max(tele, std::abs(total - 1.0));
    }
  }
  double analytic = 0;
  for (double sigma : {0.1, 0.7, 2.0, 9.0})
    for (double len : {0.3, 1.0, 2.0})
      for (int s : {2, 5, 64}) {
        const auto w = compute_weights(Tensor<double>::full({1, s}, sigma), Tensor<double>::full({1, s}, len / s));
        analytic = std::max(analytic, std::abs(w.alpha[0] - (1 - std::exp(-sigma * len))));
      }
  double loop = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto sigma = random_values(15, rng, 0.0, 5.0), delta = random_values(15, rng, 0.0, 0.5);
    const auto w = compute_weights(make_tensor<double>({3, 5}, sigma, false), make_tensor<double>({3, 5}, delta, false));
    for (int r = 0; r < 3; ++r) {
      double acc = 0;
      for (int i = 0; i < 5; ++i) {
        const double tau = sigma[r * 5 + i] * delta[r * 5 + i];
        loop = std::max(loop, std::abs(w.w[r * 5 + i] - std::exp(-acc) * (1 - std::exp(-tau))));
        acc += tau;
      }
      loop = std::max(loop, std::abs(w.transmittance_final[r] - std::exp(-acc)));
    }
  }
  rep.line(2, "quadrature", tele <= 1e-12 && analytic <= 1e-12 && loop <= 1e-12,
           "telescoping " + fmt(tele) + " analytic-alpha " + fmt(analytic) + " loop-oracle " + fmt(loop) + " (all <=1e-12)");
}

// ---------------------------------------------------------------------------
// 3. upsampler

template <class T>
void zero_beta(UpsampleLayer<T>& layer) {
  for (auto* t : {&layer.beta_out.weight, &layer.beta_out.bias})
    for (auto& v : t->mutable_data()) v = T(0);
}

void upsampler(Report& rep) {
  std::mt19937_64 rng(31);
  UpsampleLayer<float> layer(4, rng, 0.2);
  zero_beta(layer);
  layer.blur_taps = delta_taps<float>();
  const auto x = make_tensor<float>({4, 5, 7}, random_values(140, rng), false);
  const auto y = upsample(x, layer);
  bool nearest = y.shape() == Shape{4, 10, 14};
  for (int c = 0; c < 4 && nearest; ++c)
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 14; ++j) nearest = nearest && y[(c * 10 + i) * 14 + j] == x[(c * 5 + i / 2) * 7 + j / 2];

  UpsampleLayer<float> blur(3, rng, 0.2);
  zero_beta(blur);
  std::vector<double> v;
  for (double c : {0.25, -1.5, 3.0}) v.insert(v.end(), 36, c);
  const auto yc = upsample(make_tensor<float>({3, 6, 6}, v, false), blur);
  double constant = 0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 144; ++i) constant = std::max(constant, std::abs(double(yc[c * 144 + i]) - v[c * 36]));

  NeuralRenderer<double> net({{6, 6, 4, 4}, 0.2}, 9);
  const int h = 12, w = 12, f = 8;
  const auto base = random_values(6 * h * (w + 1), rng);
  std::vector<double> a(6 * h * w), b(6 * h * w);
  for (int c = 0; c < 6; ++c)
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        a[(c * h + yy) * w + xx] = base[(c * h + yy) * (w + 1) + xx];
        b[(c * h + yy) * w + xx] = base[(c * h + yy) * (w + 1) + xx + 1];
      }
  const auto ya = net.render(make_tensor<double>({6, h, w}, a, false));
  const auto yb = net.render(make_tensor<double>({6, h, w}, b, false));
  const int H = h * f, W = w * f, margin = 3 * f;
  double shift = 0;
  for (int c = 0; c < 3; ++c)
    for (int yy = margin; yy < H - margin; ++yy)
      for (int xx = margin; xx < W - margin - f; ++xx)
        shift = std::max(shift, std::abs(yb[(c * H + yy) * W + xx] - ya[(c * H + yy) * W + xx + f]));
  rep.line(3, "upsampler", nearest && constant <= 1e-7 && shift < 1e-5,
           std::string("nearest-neighbour ") + (nearest ? "bit-exact" : "differs") + " constant " + fmt(constant) +
               " (<=1e-7) translation " + fmt(shift) + " (<1e-5)");
}

// ---------------------------------------------------------------------------
// 4. structural disentanglement

void disentanglement(Report& rep) {
  const auto cfg = desk_model();
  const FieldNetwork<float> net(cfg.field_config(), 41);
  std::mt19937_64 rng(42);
  auto codes = [&] {
    const auto d = cfg.dims;
    return LatentState<float>{make_tensor<float>({d.id}, random_values(d.id, rng, -0.5, 0.5), false),
                              make_tensor<float>({d.exp}, random_values(d.exp, rng, -0.5, 0.5), false),
                              make_tensor<float>({d.alb}, random_values(d.alb, rng, -0.5, 0.5), false),
                              make_tensor<float>({d.ill}, random_values(d.ill, rng, -0.5, 0.5), false)};
  };
  const auto pts = make_tensor<float>({256, 3}, random_values(768, rng, -1, 1), false);
  const auto a = codes();
  bool sigma_same = true;
  const auto base = net.evaluate_points(pts, a).first;
  for (int trial = 0; trial < 5; ++trial) {
    auto b = a.clone();
    const auto other = codes();
    b.z_alb = other.z_alb;
    b.z_ill = other.z_ill;
    sigma_same = sigma_same && net.evaluate_points(pts, b).first.values() == base.values();
  }

  const auto ra = sample_along_rays(generate_rays<float>(orbit_camera(0.0, 0.0, 3.0, 16, 16, 20.0), 8, 8), 6,
                                    SamplingMode::uniform);
  const auto rb = sample_along_rays(generate_rays<float>(orbit_camera(1.1, -0.4, 2.5, 16, 16, 20.0), 8, 8), 6,
                                    SamplingMode::stratified, 5);
  const SamplePoints<float> moved{ra.positions, rb.deltas, rb.t_values};
  const auto fa = net.evaluate(ra, a), fb = net.evaluate(moved, a);
  const bool direction_free = fa.sigma.values() == fb.sigma.values() && fa.feature.values() == fb.feature.values();

  const NeuralRenderer<float> renderer(cfg.renderer_config(), 43);
  bool audit = true;
  std::string mixing;
  for (const auto& layer : renderer.layer_audit()) {
    if (layer.learnable) audit = audit && layer.kernel_extent == 1 && layer.kind == LayerKind::conv1x1;
    if (layer.kernel_extent > 1) {
      audit = audit && !layer.learnable && (layer.kind == LayerKind::fixed_blur || layer.kind == LayerKind::fixed_bilinear);
      mixing += (mixing.empty() ? "" : ",") + layer.name;
    }
  }
  rep.line(4, "structural-disentanglement", sigma_same && direction_free && audit,
           std::string("sigma vs alb/ill ") + (sigma_same ? "bit-identical" : "differs") + ", ray direction " +
               (direction_free ? "ignored" : "used") + ", spatial mixing only in [" + mixing + "]" + (audit ? "" : " (audit failed)"));
}

// ---------------------------------------------------------------------------
// 5, 6, 7, 10, 11, 12, 13 share desk-scale models.

struct DeskRun {
  fs::path checkpoint;
  double seconds = 0;
  int steps = 0;
  double train_psnr = 0;
  double held_out_psnr = 0;         // full image
  double held_out_masked_psnr = 0;  // inside the ground-truth mask, as the trainer reports it
  bool logged_l_per = false;
};

struct Desk {
  fs::path work;
  bool reuse = false;
  std::vector<FrameRecord<float>> frames;
  Camera novel_camera;
  Tensor<float> novel_image, novel_mask;

  void prepare() {
    DatasetSpec s;
    s.subjects = 1;
    s.expressions = 1;
    s.lightings = 1;
    s.views = 8;
    s.resolution = 64;
    frames = load_dataset<float>(generate_dataset(s, work / "data"));
    // Midpoint between two neighbouring training views.
    const auto a = view_angles(1, 8), b = view_angles(2, 8);
    novel_camera = dataset_camera(ViewAngles{0.5 * (a.yaw + b.yaw), 0.5 * (a.pitch + b.pitch)}, 64);
    const auto gt = render_ground_truth(ProceduralHead(frames[0].factors), novel_camera, 128);
    novel_image = cast<float>(gt.image);
    novel_mask = cast<float>(gt.mask);
  }

  double train_psnr(const Model<float>& model, const LatentRegistry<float>& reg) const {
    double acc = 0;
    for (const auto& f : frames) acc += metrics(render_image(model, reg.state_for(f.key), f.camera), f.image).psnr;
    return acc / static_cast<double>(frames.size());
  }

  DeskRun run(const std::string& preset) {
    DeskRun r;
    r.checkpoint = work / (preset + ".ckpt");
    const auto info = work / (preset + ".json");
    if (reuse && fs::exists(r.checkpoint) && fs::exists(info)) {
      const auto j = nlohmann::json::parse(read_file(info));
      r.seconds = j["seconds"];
      r.steps = j["steps"];
      r.logged_l_per = j["logged_l_per"];
    } else {
      auto cfg = preset_config(preset);
      cfg.steps = 2000;
      cfg.eval_every = 0;
      Trainer<float> trainer(cfg, frames);
      const auto t0 = Clock::now();
      trainer.run(cfg.steps, [&](const StepRecord& rec) { r.logged_l_per = r.logged_l_per || to_json(rec).contains("l_per"); });
      r.seconds = seconds_since(t0);
      r.steps = static_cast<int>(trainer.steps_done());
      trainer.save(r.checkpoint);
      write_file_atomic(info, nlohmann::json{{"seconds", r.seconds}, {"steps", r.steps}, {"logged_l_per", r.logged_l_per}}.dump());
    }
    const auto ckpt = load_checkpoint<float>(r.checkpoint);
    r.train_psnr = train_psnr(ckpt.model, ckpt.registry);
    const auto img = render_image(ckpt.model, ckpt.registry.state_for(frames[0].key), novel_camera);
    r.held_out_psnr = metrics(img, novel_image).psnr;
    r.held_out_masked_psnr = masked_metrics(img, novel_image, novel_mask).psnr;
    return r;
  }
};

void overfit(Report& rep, const DeskRun& r) {
  rep.line(5, "desk-overfit", r.train_psnr >= 28 && r.steps <= 2000 && r.seconds <= 45 * 60,
           "train PSNR " + fmt(r.train_psnr, 4) + " dB (>=28) after " + std::to_string(r.steps) + " steps in " +
               fmt(r.seconds / 60, 3) + " min (<=45, " + std::to_string(std::thread::hardware_concurrency()) + " cores)");
}

void novel_view(Report& rep, const DeskRun& r) {
  rep.line(6, "novel-view", r.held_out_psnr >= 22,
           "midpoint view PSNR vs analytic ground truth " + fmt(r.held_out_psnr, 4) + " dB (>=22), masked " +
               fmt(r.held_out_masked_psnr, 4) + " dB");
}

void self_reconstruction(Report& rep, const Desk& desk, const DeskRun& r) {
  const auto ckpt = load_checkpoint<float>(r.checkpoint);
  const auto known = ckpt.registry.state_for(desk.frames[0].key).clone();
  const auto target = render_image(ckpt.model, known, desk.novel_camera);
  const auto mask = Tensor<float>::full({64, 64}, 1.0f);
  const auto ext = make_extractor<float>(ckpt.config.perceptual);
  const auto before = ckpt.model.parameter_checksum();
  const auto t0 = Clock::now();
  const auto fitted = fit(ckpt.model, &ext, target, mask, desk.novel_camera, FitConfig{});
  const double secs = seconds_since(t0);
  const bool frozen = fitted.checksum_after == before && ckpt.model.parameter_checksum() == before;
  const double photometric = photometric_loss(render_image(ckpt.model, fitted.codes, desk.novel_camera), target, mask).item();
  rep.line(7, "fit-self-reconstruction", fitted.metrics.psnr >= 35 && frozen && secs <= 600,
           "PSNR " + fmt(fitted.metrics.psnr, 4) + " dB (>=35) photometric " + fmt(photometric) + " network checksum " +
               (frozen ? "unchanged" : "CHANGED") + " time " + fmt(secs) + "s (<=600)");
}

// ---------------------------------------------------------------------------
// 8, 9, 10

void disentangled_arithmetic(Report& rep) {
  const LatentDims d{6, 5, 4, 3};
  const auto init = LatentState<double>::zeros(d);
  const LossWeights w;
  std::string detail;
  bool ok = disentangled_loss(init, init, w).item() == 0.0;
  for (auto a : kAttributes) {
    for (int k = 0; k < 3; ++k) {
      auto codes = init.clone();
      codes[a].mutable_data()[k] = (k % 2 ? -1.0 : 1.0);
      const double got = disentangled_loss(codes, init, w).item();
      const double expected = a == Attribute::exp ? 0.1 : 0.001;
      ok = ok && got == expected;
      if (k == 0) detail += std::string(detail.empty() ? "" : " ") + attribute_key(a) + " " + fmt(got, 6);
    }
  }
  rep.line(8, "disentangled-loss-arithmetic", ok, detail + " (exp 0.1, others 0.001)");
}

void latent_sharing(Report& rep) {
  DatasetSpec s;
  s.subjects = 1;
  s.expressions = 2;
  s.lightings = 1;
  s.views = 2;
  s.resolution = 8;
  s.samples = 32;
  const auto dir = fs::temp_directory_path() / "headfield_acceptance_sharing";
  fs::remove_all(dir);
  auto frames = load_dataset<double>(generate_dataset(s, dir));
  fs::remove_all(dir);
  auto cfg = preset_config("micro");
  cfg.stratified = false;
  cfg.batch = static_cast<int>(frames.size());
  Trainer<double> t(cfg, frames);
  const auto id = t.registry().state_for(t.frames()[0].key).z_id;
  std::vector<double> summed(static_cast<std::size_t>(id.numel()), 0.0);
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    t.accumulate({i});
    for (std::size_t k = 0; k < summed.size(); ++k) summed[k] += id.grad()[k];
    t.zero_grad();
    all.push_back(i);
  }
  t.accumulate(all);
  const std::vector<double> joint(id.grad().begin(), id.grad().end());
  const double err = hft::relative_error(joint, summed);
  rep.line(9, "latent-sharing", err < 1e-5 && t.registry().count(Attribute::id) == 1,
           "shared id gradient over " + std::to_string(frames.size()) + " frames rel err " + fmt(err) + " (<1e-5)");
}

void transfer_determinism(Report& rep, const Desk& desk, const DeskRun& r) {
  const auto ckpt = load_checkpoint<float>(r.checkpoint);
  const auto target = ckpt.registry.state_for(desk.frames[0].key);
  const auto d = ckpt.config.model.dims;
  std::mt19937_64 rng(101);
  std::vector<LatentState<float>> sources;
  for (int i = 0; i < 3; ++i)
    sources.push_back({make_tensor<float>({d.id}, random_values(d.id, rng, -0.3, 0.3), false),
                       make_tensor<float>({d.exp}, random_values(d.exp, rng, -0.3, 0.3), false),
                       make_tensor<float>({d.alb}, random_values(d.alb, rng, -0.3, 0.3), false),
                       make_tensor<float>({d.ill}, random_values(d.ill, rng, -0.3, 0.3), false)});
  const auto out = transfer_expression(target, sources);
  bool same = out.size() == sources.size();
  for (std::size_t i = 0; i < out.size() && same; ++i) {
    const LatentState<float> manual{target.z_id.detach(), sources[i].z_exp.detach(), target.z_alb.detach(), target.z_ill.detach()};
    const auto cam = desk.frames[i].camera;
    same = encode_png(to_image8(render_image(ckpt.model, out[i], cam))) ==
           encode_png(to_image8(render_image(ckpt.model, manual, cam)));
  }
  rep.line(10, "transfer-determinism", same,
           std::to_string(out.size()) + " transferred frames " + (same ? "byte-identical" : "differ") + " to manual states");
}

void ablation(Report& rep, const DeskRun& with, const DeskRun& without) {
  const bool ok = without.steps == 2000 && !without.logged_l_per && with.logged_l_per &&
                  with.held_out_masked_psnr >= without.held_out_masked_psnr - 1.0;
  rep.line(11, "no-perceptual-ablation", ok,
           std::string("no_perceptual log ") + (without.logged_l_per ? "has" : "omits") + " l_per; held-out masked PSNR with " +
               fmt(with.held_out_masked_psnr, 4) + " dB vs without " + fmt(without.held_out_masked_psnr, 4) +
               " dB (with >= without - 1); full image " + fmt(with.held_out_psnr, 4) + " vs " + fmt(without.held_out_psnr, 4));
}

// ---------------------------------------------------------------------------
// 12, 13

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void bench(Report& rep, const fs::path& work, const DeskRun& r) {
  nlohmann::json runs = nlohmann::json::array();
  bool ok = true;
  for (int i = 0; i < 2; ++i) {
    const auto out = work / ("bench" + std::to_string(i) + ".json");
    const auto log = work / ("bench" + std::to_string(i) + ".txt");
    const int code = shell("'" HEADFIELD_CLI "' bench --checkpoint '" + r.checkpoint.string() + "' --frames 10 --out '" +
                           out.string() + "' > '" + log.string() + "'");
    const auto printed = read_file(log);
    ok = ok && code == 0 && printed.find("ms/frame") != std::string::npos;
    if (code == 0) runs.push_back(nlohmann::json::parse(read_file(out)));
  }
  ok = ok && runs.size() == 2 && runs[0]["frame_hash"] == runs[1]["frame_hash"] && runs[0]["deterministic"].get<bool>();
  const double ms = runs.empty() ? 0 : runs[0]["render"]["mean_ms"].get<double>();
  ok = ok && ms < 1000;
  rep.line(12, "bench", ok,
           "frame hash " + (runs.size() == 2 ? runs[0]["frame_hash"].get<std::string>() + " / " + runs[1]["frame_hash"].get<std::string>()
                                            : std::string("missing")) +
               ", desk render " + fmt(ms, 4) + " ms/frame (<1000)");
}

std::string post(unsigned short port, const std::string& body) {
  namespace net = boost::asio;
  namespace http = boost::beast::http;
  net::io_context io;
  net::ip::tcp::socket socket(io);
  socket.connect({net::ip::make_address("127.0.0.1"), port});
  http::request<http::string_body> req{http::verb::post, "/render", 11};
  req.set(http::field::host, "localhost");
  req.set(http::field::content_type, "application/json");
  req.body() = body;
  req.prepare_payload();
  http::write(socket, req);
  boost::beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(socket, buf, res);
  boost::beast::error_code ec;
  socket.shutdown(net::ip::tcp::socket::shutdown_both, ec);
  return std::to_string(res.result_int()) + ":" + res.body();
}

void service(Report& rep, const DeskRun& r) {
  std::ostringstream log;
  ServiceCore<float>::Options o;
  o.log = &log;
  ServiceCore<float> core(load_checkpoint<float>(r.checkpoint), o);
  Server<float> server(core, parse_bind("127.0.0.1:0"));
  server.start();
  const std::string body = R"({"preset":"s0/e0/l0","pose":{"yaw":0.3,"pitch":-0.1}})";
  std::vector<std::string> results(32);
  std::vector<std::thread> clients;
  for (int i = 0; i < 32; ++i)
    clients.emplace_back([&, i] {
      try {
        results[i] = post(server.port(), body);
      } catch (const std::exception& e) {
        results[i] = std::string("error:") + e.what();
      }
    });
  for (auto& c : clients) c.join();
  server.stop();
  const auto distinct = std::set<std::string>(results.begin(), results.end()).size();
  const bool ok = distinct == 1 && results[0].rfind("200:", 0) == 0;
  rep.line(13, "service-concurrency", ok,
           "32 concurrent /render requests, " + std::to_string(distinct) + " distinct bod" + (distinct == 1 ? "y" : "ies") +
               ", status " + results[0].substr(0, results[0].find(':')));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"headfield acceptance"};
  std::string work = (fs::temp_directory_path() / "headfield_acceptance").string();
  bool reuse = false;
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory");
  app.add_flag("--reuse", reuse, "Reuse desk checkpoints found in the scratch directory");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  auto want = [&](std::initializer_list<int> ns) {
    if (only.empty()) return true;
    for (int n : ns)
      if (std::find(only.begin(), only.end(), n) != only.end()) return true;
    return false;
  };

  Report rep;
  const auto wrap = [&](int n, const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      rep.line(n, name, false, std::string("threw: ") + e.what());
    }
  };
  std::optional<Desk> desk;
  std::optional<DeskRun> with;
  const auto trained = [&]() -> const DeskRun& {
    if (!with) {
      desk.emplace();
      desk->work = work;
      desk->reuse = reuse;
      if (!reuse) fs::remove_all(work);
      fs::create_directories(work);
      desk->prepare();
      with = desk->run("desk");
    }
    return *with;
  };

  if (want({1})) wrap(1, "gradient-suite", [&] { gradient_suite(rep); });
  if (want({2})) wrap(2, "quadrature", [&] { quadrature(rep); });
  if (want({3})) wrap(3, "upsampler", [&] { upsampler(rep); });
  if (want({4})) wrap(4, "structural-disentanglement", [&] { disentanglement(rep); });
  if (want({5})) wrap(5, "desk-overfit", [&] { overfit(rep, trained()); });
  if (want({6})) wrap(6, "novel-view", [&] { novel_view(rep, trained()); });
  if (want({7})) wrap(7, "fit-self-reconstruction", [&] {
    const auto& w = trained();
    self_reconstruction(rep, *desk, w);
  });
  if (want({8})) wrap(8, "disentangled-loss-arithmetic", [&] { disentangled_arithmetic(rep); });
  if (want({9})) wrap(9, "latent-sharing", [&] { latent_sharing(rep); });
  if (want({10})) wrap(10, "transfer-determinism", [&] {
    const auto& w = trained();
    transfer_determinism(rep, *desk, w);
  });
  if (want({11})) wrap(11, "no-perceptual-ablation", [&] {
    const auto& w = trained();
    ablation(rep, w, desk->run("no_perceptual"));
  });
  if (want({12})) wrap(12, "bench", [&] { bench(rep, work, trained()); });
  if (want({13})) wrap(13, "service-concurrency", [&] { service(rep, trained()); });
  std::cout << (rep.failed ? "FAILED " + std::to_string(rep.failed) : std::string("ALL PASSED")) << std::endl;
  return rep.failed ? 1 : 0;
}
