// headfield command-line tool.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>

#include "headfield/service.hpp"

using namespace headfield;
namespace fs = std::filesystem;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numeric = 3 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::configuration:
    case ErrorKind::parameter: return usage;
    case ErrorKind::numeric:
    case ErrorKind::domain: return numeric;
    default: return data;
  }
}

void report(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(path.string() + ": " + e.what());
  }
}

/// Resolved settings of a run, written next to its output.
void write_snapshot(const fs::path& output, const std::string& command, nlohmann::json settings) {
  settings["command"] = command;
  auto path = output;
  if (fs::is_directory(output)) path = output / "run.json";
  else path += ".run.json";
  write_file_atomic(path, settings.dump(2) + "\n");
}

// "a.b.c=value"; value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigurationError("override '" + assignment + "' is not key=value");
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(assignment.substr(eq + 1));
  } catch (const nlohmann::json::exception&) {
    value = assignment.substr(eq + 1);
  }
  nlohmann::json* node = &doc;
  std::stringstream path(assignment.substr(0, eq));
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  (*node)[parts.back()] = value;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Shared render options (render, sweep, transfer, bench).

struct PoseArgs {
  double yaw = 0, pitch = 0;
  std::optional<double> distance;
  int size = 0;

  void add(CLI::App* app) {
    app->add_option("--yaw", yaw, "Camera yaw (radians)");
    app->add_option("--pitch", pitch, "Camera pitch (radians)");
    app->add_option("--distance", distance, "Camera distance from the origin");
    app->add_option("--size", size, "Output size (must divide the trained resolution)");
  }

  nlohmann::json request() const {
    nlohmann::json pose = {{"yaw", yaw}, {"pitch", pitch}};
    if (distance) pose["distance"] = *distance;
    nlohmann::json r = {{"pose", pose}};
    if (size > 0) r["size"] = size;
    return r;
  }
};

/// Request errors from the shared parser surface as parameter errors.
template <class T>
RenderRequest<T> parse_or_throw(const ServiceCore<T>& core, const nlohmann::json& doc) {
  try {
    return core.parse_render(doc);
  } catch (const RequestError& e) {
    throw ParameterError((e.field().empty() ? "" : e.field() + ": ") + e.what());
  }
}

template <class T>
std::unique_ptr<ServiceCore<T>> open_core(const fs::path& checkpoint, int quality = 100) {
  typename ServiceCore<T>::Options o;
  o.quality = quality;
  return std::make_unique<ServiceCore<T>>(load_checkpoint<T>(checkpoint), o);
}

template <class F>
int dispatch(const fs::path& checkpoint, F&& f) {
  const auto precision = checkpoint_precision(checkpoint);
  if (precision == "f64") return f(double{});
  return f(float{});
}

// ---------------------------------------------------------------------------
// synth-data

struct SynthArgs {
  DatasetSpec spec;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  const auto manifest = generate_dataset(a.spec, a.out);
  write_snapshot(a.out, "synth-data",
                 {{"subjects", a.spec.subjects}, {"expressions", a.spec.expressions}, {"lightings", a.spec.lightings},
                  {"views", a.spec.views}, {"resolution", a.spec.resolution}, {"seed", a.spec.seed},
                  {"samples", a.spec.samples}});
  std::cout << manifest.string() << "\n";
  return ok;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data, out, config, preset, log, resume, precision;
  std::optional<int> steps, batch, hold_out, log_every, eval_every;
  std::optional<double> lr_network, lr_latent;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  int save_every = 0;
  bool no_perceptual = false;
};

TrainConfig resolve_train_config(const TrainArgs& a) {
  nlohmann::json doc = a.config.empty() ? nlohmann::json::object() : read_json(a.config);
  if (!doc.is_object()) throw ConfigurationError("config file must hold an object");
  if (!a.preset.empty()) doc["preset"] = a.preset;
  for (const auto& s : a.sets) apply_override(doc, s);
  auto cfg = config_from_json(doc);
  if (a.steps) cfg.steps = *a.steps;
  if (a.batch) cfg.batch = *a.batch;
  if (a.lr_network) cfg.lr_network = *a.lr_network;
  if (a.lr_latent) cfg.lr_latent = *a.lr_latent;
  if (a.seed) cfg.seed = *a.seed;
  if (a.log_every) cfg.log_every = *a.log_every;
  if (a.eval_every) cfg.eval_every = *a.eval_every;
  if (!a.precision.empty()) cfg.precision = a.precision;
  if (a.no_perceptual) cfg.use_perceptual = false;
  cfg.validate();
  return cfg;
}

template <class T>
int train_with(const TrainArgs& a, const TrainConfig& cfg) {
  auto frames = load_dataset<T>(a.data);
  if (frames.empty()) throw ManifestError("dataset " + a.data + " has no frames");
  std::optional<HeldOutView<T>> held;
  if (a.hold_out) {
    const auto k = static_cast<std::size_t>(*a.hold_out);
    if (k >= frames.size()) throw ParameterError("--hold-out index out of range");
    held = HeldOutView<T>{frames[k].image, frames[k].mask, frames[k].camera, frames[k].key};
    frames.erase(frames.begin() + static_cast<std::ptrdiff_t>(k));
  }
  auto trainer = a.resume.empty() ? Trainer<T>(cfg, frames) : Trainer<T>::resume(a.resume, frames);
  if (held) trainer.set_held_out(*held);
  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open log " + log_path);
  write_snapshot(a.out, "train", {{"config", to_json(trainer.config())}, {"config_hash", std::to_string(config_hash(trainer.config()))},
                                  {"data", a.data}, {"resume", a.resume}, {"log", log_path}});
  if (trainer.config().preset == "vanilla_compare") {
    log << nlohmann::json{{"note", "vanilla baseline comparison is not built; training the desk model"}}.dump() << "\n";
  }
  const int remaining = std::max<int>(0, trainer.config().steps - static_cast<int>(trainer.steps_done()));
  const int chunk = a.save_every > 0 ? a.save_every : std::max(remaining, 1);
  for (int done = 0; done < remaining; done += chunk) {
    trainer.run(std::min(chunk, remaining - done), [&](const StepRecord& r) { log << to_json(r).dump() << "\n" << std::flush; });
    trainer.save(a.out);
  }
  if (remaining == 0) trainer.save(a.out);
  std::cout << nlohmann::json{{"checkpoint", a.out}, {"steps", trainer.steps_done()}, {"log", log_path}}.dump() << "\n";
  return ok;
}

int run_train(const TrainArgs& a) {
  const auto cfg = resolve_train_config(a);
  if (!a.resume.empty() && checkpoint_precision(a.resume) != cfg.precision) {
    throw ConfigurationError("--resume checkpoint precision differs from the configured precision");
  }
  return cfg.precision == "f64" ? train_with<double>(a, cfg) : train_with<float>(a, cfg);
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string checkpoint, image, mask, camera, out;
  PoseArgs pose;
  FitConfig fit;
  bool no_perceptual = false;
};

template <class T>
int fit_with(const FitArgs& a) {
  const auto ckpt = load_checkpoint<T>(a.checkpoint);
  const auto& m = ckpt.config.model;
  const auto image = from_image8<T>(decode_png(read_file(a.image)));
  Tensor<T> mask = Tensor<T>::full({image.dim(1), image.dim(2)}, T(1));
  if (!a.mask.empty()) {
    const auto raw = from_image8<T>(decode_png(read_file(a.mask)), true);
    std::vector<T> v(raw.values().begin(), raw.values().end());
    for (auto& x : v) x = x > T(0.5) ? T(1) : T(0);
    mask = Tensor<T>::from(raw.shape(), std::move(v));
  }
  Camera cam;
  if (!a.camera.empty()) {
    cam = camera_from_json(read_json(a.camera));
  } else {
    const double d = a.pose.distance.value_or(orbit_distance(m.sphere_radius));
    cam = orbit_camera(a.pose.yaw, a.pose.pitch, d, static_cast<int>(image.dim(2)), static_cast<int>(image.dim(1)),
                       default_focal(static_cast<int>(image.dim(2))));
  }
  FitConfig fc = a.fit;
  fc.use_perceptual = !a.no_perceptual && ckpt.config.use_perceptual;
  const auto ext = make_extractor<T>(ckpt.config.perceptual);
  const auto r = fit(ckpt.model, &ext, image, mask, cam, fc);
  nlohmann::json out = {{"latents", to_json(r.codes)},
                        {"metrics", {{"l1", r.metrics.l1}, {"psnr", r.metrics.psnr}, {"ssim", r.metrics.ssim}}},
                        {"final_loss", r.final_loss},
                        {"iterations", fc.iterations},
                        {"network_checksum", hex(r.checksum_after)}};
  write_file_atomic(a.out, out.dump(2) + "\n");
  write_snapshot(a.out, "fit", {{"checkpoint", a.checkpoint}, {"image", a.image}, {"mask", a.mask}, {"camera", camera_to_json(cam)},
                                {"iterations", fc.iterations}, {"lr", fc.lr}, {"use_perceptual", fc.use_perceptual}});
  std::cout << out["metrics"].dump() << "\n";
  return ok;
}

// ---------------------------------------------------------------------------
// render / sweep / transfer

struct RenderArgs {
  std::string checkpoint, out, latents, preset;
  std::vector<std::string> edits;  // attribute:preset:t
  PoseArgs pose;
};

nlohmann::json latents_request(const std::string& latents_file, const std::string& preset) {
  nlohmann::json r;
  if (!latents_file.empty()) {
    auto doc = read_json(latents_file);
    r["latents"] = doc.contains("latents") ? doc["latents"] : doc;  // fit output or a bare document
  } else if (!preset.empty()) {
    r["preset"] = preset;
  } else {
    throw ParameterError("give --latents or --preset");
  }
  return r;
}

nlohmann::json parse_edit(const std::string& text) {
  const auto a = text.find(':'), b = text.rfind(':');
  if (a == std::string::npos || a == b) throw ParameterError("edit '" + text + "' is not attribute:preset:t");
  double t = 0;
  try {
    t = std::stod(text.substr(b + 1));
  } catch (const std::exception&) {
    throw ParameterError("edit '" + text + "' has a non-numeric t");
  }
  return {{"attribute", text.substr(0, a)}, {"preset", text.substr(a + 1, b - a - 1)}, {"t", t}};
}

int run_render(const RenderArgs& a) {
  return dispatch(a.checkpoint, [&](auto tag) {
    using T = decltype(tag);
    auto core = open_core<T>(a.checkpoint);
    auto doc = a.pose.request();
    doc.update(latents_request(a.latents, a.preset));
    for (const auto& e : a.edits) doc["edits"].push_back(parse_edit(e));
    write_file_atomic(a.out, core->render_png(parse_or_throw(*core, doc)));
    write_snapshot(a.out, "render", {{"checkpoint", a.checkpoint}, {"request", doc}});
    std::cout << a.out << "\n";
    return int{ok};
  });
}

struct SweepArgs {
  std::string checkpoint, out, a, b, attribute = "exp";
  int steps = 5;
  double yaw_from = -0.6, yaw_to = 0.6;
  PoseArgs pose;
};

/// Horizontal strip of equally sized RGB images.
Image8 strip(const std::vector<Image8>& images) {
  Image8 s;
  s.height = images.front().height;
  s.channels = 3;
  s.width = 0;
  for (const auto& im : images) s.width += im.width;
  s.pixels.resize(static_cast<std::size_t>(s.width) * s.height * 3);
  int x0 = 0;
  for (const auto& im : images) {
    for (int y = 0; y < im.height; ++y)
      std::copy_n(im.pixels.begin() + static_cast<std::ptrdiff_t>(y) * im.width * 3, im.width * 3,
                  s.pixels.begin() + (static_cast<std::ptrdiff_t>(y) * s.width + x0) * 3);
    x0 += im.width;
  }
  return s;
}

int run_sweep(const SweepArgs& a) {
  if (a.steps < 2) throw ParameterError("--steps must be >= 2");
  return dispatch(a.checkpoint, [&](auto tag) {
    using T = decltype(tag);
    auto core = open_core<T>(a.checkpoint);
    fs::create_directories(a.out);
    std::vector<Image8> frames;
    nlohmann::json requests = nlohmann::json::array();
    for (int k = 0; k < a.steps; ++k) {
      const double t = static_cast<double>(k) / (a.steps - 1);
      auto doc = a.pose.request();
      doc["preset"] = a.a;
      if (a.attribute == "pose") {
        doc["pose"]["yaw"] = a.yaw_from + t * (a.yaw_to - a.yaw_from);
      } else {
        if (a.b.empty()) throw ParameterError("--b is required for attribute sweeps");
        doc["edits"] = {{{"attribute", a.attribute}, {"preset", a.b}, {"t", t}}};
      }
      const auto png = core->render_png(parse_or_throw(*core, doc));
      char name[32];
      std::snprintf(name, sizeof name, "frame_%03d.png", k);
      write_file_atomic(fs::path(a.out) / name, png);
      frames.push_back(decode_png(png));
      requests.push_back(doc);
    }
    write_file_atomic(fs::path(a.out) / "strip.png", encode_png(strip(frames)));
    write_snapshot(a.out, "sweep", {{"checkpoint", a.checkpoint}, {"requests", requests}});
    std::cout << nlohmann::json{{"frames", a.steps}, {"dir", a.out}}.dump() << "\n";
    return int{ok};
  });
}

struct TransferArgs {
  std::string checkpoint, target, expressions, out;
  PoseArgs pose;
};

int run_transfer(const TransferArgs& a) {
  return dispatch(a.checkpoint, [&](auto tag) {
    using T = decltype(tag);
    auto core = open_core<T>(a.checkpoint);
    auto seq = read_json(a.expressions);
    if (seq.is_object() && seq.contains("expressions")) seq = seq["expressions"];
    const nlohmann::json body = {{"target", a.target}, {"expressions", seq}};
    const auto reply = core->handle("POST", "/transfer", body.dump());
    if (reply.status != 200) {
      const auto e = nlohmann::json::parse(reply.body)["error"];
      throw ParameterError(e.value("field", "") + ": " + e.value("message", "transfer failed"));
    }
    const auto states = nlohmann::json::parse(reply.body)["states"];
    fs::create_directories(a.out);
    for (std::size_t k = 0; k < states.size(); ++k) {
      auto doc = a.pose.request();
      doc["latents"] = states[k];
      char name[32];
      std::snprintf(name, sizeof name, "frame_%03zu.png", k);
      write_file_atomic(fs::path(a.out) / name, core->render_png(parse_or_throw(*core, doc)));
    }
    write_file_atomic(fs::path(a.out) / "states.json", states.dump(2) + "\n");
    write_snapshot(a.out, "transfer", {{"checkpoint", a.checkpoint}, {"target", a.target}, {"expressions", seq}, {"pose", a.pose.request()}});
    std::cout << nlohmann::json{{"frames", states.size()}, {"dir", a.out}}.dump() << "\n";
    return int{ok};
  });
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string checkpoint, preset, out;
  int frames = 100;
  bool live = false;
  PoseArgs pose;
};

nlohmann::json timing_summary(std::vector<double> ms) {
  std::sort(ms.begin(), ms.end());
  const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  const std::size_t n = ms.size();
  const double median = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  return {{"mean_ms", mean}, {"median_ms", median}, {"min_ms", ms.front()}, {"max_ms", ms.back()}, {"fps", 1000.0 / mean}};
}

int run_bench(const BenchArgs& a) {
  if (a.frames < 1) throw ParameterError("--frames must be >= 1");
  return dispatch(a.checkpoint, [&](auto tag) {
    using T = decltype(tag);
    auto core = open_core<T>(a.checkpoint);
    auto doc = a.pose.request();
    doc["preset"] = a.preset.empty() ? core->presets().begin()->first : a.preset;
    const auto req = parse_or_throw(*core, doc);
    std::vector<double> ms;
    std::string first;
    bool identical = true;
    for (int i = 0; i < a.frames; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto png = core->render_png(req);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      if (i == 0) first = png;
      identical = identical && png == first;
    }
    nlohmann::json report = {{"frames", a.frames}, {"render", timing_summary(ms)}, {"frame_hash", hex(fnv1a(first))},
                             {"deterministic", identical}, {"resolution", core->model_config().output_size}};
    if (a.live) {
      // Round trips over /live on a loopback server.
      Server<T> server(*core, parse_bind("127.0.0.1:0"));
      server.start();
      namespace net = boost::asio;
      net::io_context io;
      boost::beast::websocket::stream<net::ip::tcp::socket> ws(io);
      ws.next_layer().connect({net::ip::make_address("127.0.0.1"), server.port()});
      ws.handshake("localhost", "/live");
      std::vector<double> rt;
      for (int i = 0; i < a.frames; ++i) {
        auto msg = doc;
        msg["seq"] = i;
        const auto t0 = std::chrono::steady_clock::now();
        ws.text(true);
        ws.write(net::buffer(msg.dump()));
        boost::beast::flat_buffer buf;
        ws.read(buf);
        rt.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      }
      ws.close(boost::beast::websocket::close_code::normal);
      server.stop();
      report["live"] = timing_summary(rt);
    }
    const auto summary = report["render"];
    std::cout << "frames " << a.frames << "  mean " << summary["mean_ms"].get<double>() << " ms/frame  median "
              << summary["median_ms"].get<double>() << " ms/frame  fps " << summary["fps"].get<double>() << "\n";
    if (report.contains("live")) {
      std::cout << "live round trip  mean " << report["live"]["mean_ms"].get<double>() << " ms  median "
                << report["live"]["median_ms"].get<double>() << " ms\n";
    }
    std::cout << "frame_hash " << report["frame_hash"].get<std::string>() << (identical ? "" : " (frames differ)") << "\n";
    if (!a.out.empty()) {
      write_file_atomic(a.out, report.dump(2) + "\n");
      write_snapshot(a.out, "bench", {{"checkpoint", a.checkpoint}, {"request", doc}, {"frames", a.frames}});
    }
    return identical ? int{ok} : int{numeric};
  });
}

// ---------------------------------------------------------------------------
// serve

struct ServeArgs {
  std::string checkpoint, bind;
  int quality = 100;
  int workers = 0;
};

std::atomic<bool> g_stop{false};

int run_serve(ServeArgs a) {
  if (a.checkpoint.empty())
    if (const char* env = std::getenv("HEADFIELD_CHECKPOINT")) a.checkpoint = env;
  if (a.bind.empty()) {
    const char* env = std::getenv("HEADFIELD_BIND");
    a.bind = env ? env : "127.0.0.1:8080";
  }
  if (a.checkpoint.empty()) throw ConfigurationError("--checkpoint or HEADFIELD_CHECKPOINT is required");
  if (a.quality < 1 || a.quality > 100) throw ConfigurationError("--quality must be in [1,100]");
  const auto bind = parse_bind(a.bind);
  return dispatch(a.checkpoint, [&](auto tag) {
    using T = decltype(tag);
    typename ServiceCore<T>::Options o;
    o.quality = a.quality;
    if (a.workers > 0) o.workers = a.workers;
    ServiceCore<T> core(load_checkpoint<T>(a.checkpoint), o);
    Server<T> server(core, bind);
    server.start();
    std::cerr << nlohmann::json{{"listening", bind.host + ":" + std::to_string(server.port())},
                                {"checkpoint", a.checkpoint},
                                {"workers", o.workers},
                                {"quality", a.quality}}
                     .dump()
              << std::endl;
    std::signal(SIGINT, [](int) { g_stop = true; });
    std::signal(SIGTERM, [](int) { g_stop = true; });
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    return int{ok};
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"headfield: latent-conditioned neural head field"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Generate a procedural multi-view head dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--subjects", synth.spec.subjects);
  s->add_option("--expressions", synth.spec.expressions);
  s->add_option("--lightings", synth.spec.lightings);
  s->add_option("--views", synth.spec.views);
  s->add_option("--resolution", synth.spec.resolution);
  s->add_option("--samples", synth.spec.samples, "Ground-truth samples per ray");
  s->add_option("--seed", synth.spec.seed);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train network and latent codes");
  t->add_option("--data", train.data, "Dataset manifest")->required();
  t->add_option("--out", train.out, "Checkpoint path")->required();
  t->add_option("--config", train.config, "Config file (JSON)");
  t->add_option("--preset", train.preset, "Preset: paper, desk, micro, no_perceptual, vanilla_compare");
  t->add_option("--set", train.sets, "Override a config key, e.g. model.seed=3");
  t->add_option("--steps", train.steps);
  t->add_option("--batch", train.batch);
  t->add_option("--lr-network", train.lr_network);
  t->add_option("--lr-latent", train.lr_latent);
  t->add_option("--seed", train.seed);
  t->add_option("--precision", train.precision)->check(CLI::IsMember({"f32", "f64"}));
  t->add_option("--log", train.log, "Metric log (default <out>.log.jsonl)");
  t->add_option("--log-every", train.log_every);
  t->add_option("--eval-every", train.eval_every);
  t->add_option("--hold-out", train.hold_out, "Frame index kept out of training for PSNR evaluation");
  t->add_option("--save-every", train.save_every, "Checkpoint every N steps");
  t->add_option("--resume", train.resume, "Continue from a checkpoint");
  t->add_flag("--no-perceptual", train.no_perceptual);

  FitArgs fit_args;
  auto* f = app.add_subcommand("fit", "Fit latent codes to an image with the network frozen");
  f->add_option("--checkpoint", fit_args.checkpoint)->required();
  f->add_option("--image", fit_args.image, "Target PNG")->required();
  f->add_option("--mask", fit_args.mask, "Mask PNG (default: whole image)");
  f->add_option("--camera", fit_args.camera, "Camera JSON (as in the dataset manifest)");
  f->add_option("--out", fit_args.out, "Output latent document")->required();
  f->add_option("--iterations", fit_args.fit.iterations);
  f->add_option("--lr", fit_args.fit.lr);
  f->add_flag("--no-perceptual", fit_args.no_perceptual);
  fit_args.pose.add(f);

  RenderArgs render;
  auto* r = app.add_subcommand("render", "Render one image");
  r->add_option("--checkpoint", render.checkpoint)->required();
  r->add_option("--out", render.out, "Output PNG")->required();
  r->add_option("--latents", render.latents, "Latent document");
  r->add_option("--preset", render.preset, "Preset subject/expression/lighting");
  r->add_option("--edit", render.edits, "attribute:preset:t interpolation, repeatable");
  render.pose.add(r);

  SweepArgs sweep;
  auto* w = app.add_subcommand("sweep", "Attribute interpolation or pose sweep as an image strip");
  w->add_option("--checkpoint", sweep.checkpoint)->required();
  w->add_option("--out", sweep.out, "Output directory")->required();
  w->add_option("--a", sweep.a, "Start preset")->required();
  w->add_option("--b", sweep.b, "End preset (attribute sweeps)");
  w->add_option("--attribute", sweep.attribute, "id, exp, alb, ill or pose");
  w->add_option("--steps", sweep.steps);
  w->add_option("--yaw-from", sweep.yaw_from);
  w->add_option("--yaw-to", sweep.yaw_to);
  sweep.pose.add(w);

  TransferArgs transfer;
  auto* x = app.add_subcommand("transfer", "Drive a target with an expression sequence");
  x->add_option("--checkpoint", transfer.checkpoint)->required();
  x->add_option("--target", transfer.target, "Target preset")->required();
  x->add_option("--expressions", transfer.expressions, "JSON array of presets or {\"z_exp\": [...]}")->required();
  x->add_option("--out", transfer.out, "Output directory")->required();
  transfer.pose.add(x);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Timed render loop");
  b->add_option("--checkpoint", bench.checkpoint)->required();
  b->add_option("--frames", bench.frames);
  b->add_option("--preset", bench.preset);
  b->add_option("--out", bench.out, "Write the report as JSON");
  b->add_flag("--live", bench.live, "Also time /live round trips on a loopback server");
  bench.pose.add(b);

  ServeArgs serve;
  auto* v = app.add_subcommand("serve", "Run the render service");
  v->add_option("--checkpoint", serve.checkpoint, "Checkpoint (or HEADFIELD_CHECKPOINT)");
  v->add_option("--bind", serve.bind, "ADDR:PORT (or HEADFIELD_BIND)");
  v->add_option("--quality", serve.quality, "/live encoding: 100 = PNG, lower = JPEG quality");
  v->add_option("--workers", serve.workers, "Concurrent renders (default: CPU count)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n";
    report("usage", e.what());
    return usage;
  }

  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(train);
    if (*f) return dispatch(fit_args.checkpoint, [&](auto tag) { return fit_with<decltype(tag)>(fit_args); });
    if (*r) return run_render(render);
    if (*w) return run_sweep(sweep);
    if (*x) return run_transfer(transfer);
    if (*b) return run_bench(bench);
    if (*v) return run_serve(serve);
  } catch (const Error& e) {
    report(to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report("internal", e.what());
    return data;
  }
  return usage;
}
