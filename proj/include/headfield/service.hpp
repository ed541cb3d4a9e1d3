#pragma once

// Render service: HTTP endpoints and the /live WebSocket stream over one port.
//
//   GET  /model/info     dims, resolution, preset list
//   POST /render         RenderRequest -> PNG
//   POST /interpolate    {"a","b","attribute","t"} -> latent document
//   POST /transfer       {"target","expressions":[preset | {"z_exp":[...]}]} -> {"states":[...]}
//   WS   /live           text RenderRequest with "seq" -> binary [u64 seq LE][image bytes]
//
// Errors are {"error":{"status","field","message"}}; 500s carry only an "id"
// that is also written to the log.

#include <jpeglib.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "headfield/dataset.hpp"
#include "headfield/image_io.hpp"
#include "headfield/trainer.hpp"

namespace headfield {

// ---------------------------------------------------------------------------
// Encoding.

/// Baseline JPEG of an RGB image.
inline std::string encode_jpeg(const Image8& img, int quality) {
  if (img.channels != 3) throw ParameterError("jpeg encoding needs an RGB image");
  jpeg_compress_struct cinfo{};
  jpeg_error_mgr jerr{};
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, std::clamp(quality, 1, 100), TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPLE*>(img.pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * img.width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::string out(reinterpret_cast<const char*>(buffer), size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

/// Box-filter downsampling of a [3,H,W] image by an integer factor.
template <class T>
Tensor<T> downsample(const Tensor<T>& img, int factor) {
  if (factor == 1) return img;
  const int c = static_cast<int>(img.dim(0)), h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
  const int ho = h / factor, wo = w / factor;
  std::vector<T> out(static_cast<std::size_t>(c) * ho * wo);
  const auto& v = img.values();
  const double norm = 1.0 / (factor * factor);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        double acc = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += v[(ch * h + y * factor + dy) * w + x * factor + dx];
        out[(ch * ho + y) * wo + x] = static_cast<T>(acc * norm);
      }
  return Tensor<T>::from({c, ho, wo}, std::move(out));
}

// ---------------------------------------------------------------------------
// Requests.

/// A request the client got wrong: 400 (malformed) or 422 (dimension mismatch).
class RequestError : public std::runtime_error {
 public:
  RequestError(int status, std::string field, const std::string& message)
      : std::runtime_error(message), status_(status), field_(std::move(field)) {}
  int status() const { return status_; }
  const std::string& field() const { return field_; }

 private:
  int status_;
  std::string field_;
};

struct BindAddress {
  std::string host;
  unsigned short port = 0;
};

/// "ADDR:PORT"; the address may be bracketed IPv6.
inline BindAddress parse_bind(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw ConfigurationError("bind address '" + text + "' is not ADDR:PORT");
  }
  BindAddress b;
  b.host = text.substr(0, colon);
  if (b.host.size() > 2 && b.host.front() == '[' && b.host.back() == ']') b.host = b.host.substr(1, b.host.size() - 2);
  const auto port_text = text.substr(colon + 1);
  std::size_t used = 0;
  long port = -1;
  try {
    port = std::stol(port_text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != port_text.size() || port < 0 || port > 65535) throw ConfigurationError("bad port in '" + text + "'");
  b.port = static_cast<unsigned short>(port);
  return b;
}

template <class T>
struct RenderRequest {
  LatentState<T> codes;
  Camera camera;  // at the trained resolution
  int size = 0;
  std::optional<std::int64_t> seq;
  std::optional<int> quality;
};

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

inline HttpReply error_reply(int status, const std::string& field, const std::string& message) {
  nlohmann::json e = {{"status", status}, {"message", message}};
  if (!field.empty()) e["field"] = field;
  return {status, "application/json", nlohmann::json{{"error", e}}.dump()};
}

/// Counting semaphore bounding concurrent renders.
class RenderSlots {
 public:
  explicit RenderSlots(int n) : free_(std::max(1, n)) {}

  class Lease {
   public:
    explicit Lease(RenderSlots& s) : s_(s) { s_.acquire(); }
    ~Lease() { s_.release(); }
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;

   private:
    RenderSlots& s_;
  };

 private:
  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      ++free_;
    }
    cv_.notify_one();
  }

  std::mutex mu_;
  std::condition_variable cv_;
  int free_;
};

// ---------------------------------------------------------------------------
// Request handling, independent of the transport.

template <class T>
class ServiceCore {
 public:
  struct Options {
    int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    int quality = 100;  // /live: 100 sends PNG, lower sends JPEG at that quality
    std::ostream* log = &std::cerr;
  };

  ServiceCore(LoadedCheckpoint<T> checkpoint, Options opts)
      : ckpt_(std::move(checkpoint)), opts_(opts), slots_(opts.workers), presets_(registry_presets(ckpt_.registry)) {
    ckpt_.model.set_requires_grad(false);
    std::random_device rd;
    id_rng_.seed((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
  }

  explicit ServiceCore(LoadedCheckpoint<T> checkpoint) : ServiceCore(std::move(checkpoint), Options{}) {}

  const ModelConfig& model_config() const { return ckpt_.config.model; }
  const std::map<std::string, LatentState<T>>& presets() const { return presets_; }
  int quality() const { return opts_.quality; }

  nlohmann::json info() const {
    const auto& m = model_config();
    std::vector<std::string> names;
    for (const auto& [k, _] : presets_) names.push_back(k);
    return {{"dims", {{"z_id", m.dims.id}, {"z_exp", m.dims.exp}, {"z_alb", m.dims.alb}, {"z_ill", m.dims.ill}}},
            {"resolution", m.output_size},
            {"sphere_radius", m.sphere_radius},
            {"default_distance", orbit_distance(m.sphere_radius)},
            {"presets", names},
            {"precision", dtype_name(dtype_of<T>())},
            {"step", ckpt_.step},
            {"config_hash", std::to_string(config_hash(ckpt_.config))}};
  }

  /// Routes one HTTP request.
  HttpReply handle(const std::string& method, const std::string& target, const std::string& body) {
    try {
      if (target == "/model/info") {
        if (method != "GET") return error_reply(405, "", "use GET for /model/info");
        return {200, "application/json", info().dump()};
      }
      if (target == "/render" || target == "/interpolate" || target == "/transfer") {
        if (method != "POST") return error_reply(405, "", "use POST for " + target);
        const auto doc = parse_body(body);
        if (target == "/render") return {200, "image/png", render_png(parse_render(doc))};
        if (target == "/interpolate") return {200, "application/json", interpolate_doc(doc).dump()};
        return {200, "application/json", transfer_doc(doc).dump()};
      }
      return error_reply(404, "", "no endpoint " + target);
    } catch (const RequestError& e) {
      return error_reply(e.status(), e.field(), e.what());
    } catch (const std::exception& e) {
      return internal_error(target, e.what());
    }
  }

  /// One /live message. Returns the binary frame, or a JSON text reply on error.
  struct LiveReply {
    bool binary = true;
    std::string payload;
  };

  LiveReply live(const std::string& message) {
    std::optional<std::int64_t> seq;
    try {
      const auto doc = parse_body(message);
      if (doc.contains("seq") && doc["seq"].is_number_integer()) seq = doc["seq"].get<std::int64_t>();
      auto req = parse_render(doc);
      if (!seq) throw RequestError(400, "seq", "live requests need an integer seq");
      const int q = req.quality.value_or(opts_.quality);
      auto image = render(req);
      std::string out(8, '\0');
      const auto s = static_cast<std::uint64_t>(*seq);
      for (int i = 0; i < 8; ++i) out[i] = static_cast<char>((s >> (8 * i)) & 0xff);
      out += q >= 100 ? encode_png(to_image8(image)) : encode_jpeg(to_image8(image), q);
      return {true, std::move(out)};
    } catch (const RequestError& e) {
      nlohmann::json j = {{"error", {{"status", e.status()}, {"field", e.field()}, {"message", e.what()}}}};
      if (seq) j["seq"] = *seq;
      return {false, j.dump()};
    } catch (const std::exception& e) {
      nlohmann::json j = nlohmann::json::parse(internal_error("/live", e.what()).body);
      if (seq) j["seq"] = *seq;
      return {false, j.dump()};
    }
  }

  /// Parses a render request document (throws RequestError).
  RenderRequest<T> parse_render(const nlohmann::json& doc) const {
    const auto& m = model_config();
    RenderRequest<T> req;
    if (doc.contains("seq")) {
      if (!doc["seq"].is_number_integer()) throw RequestError(400, "seq", "seq must be an integer");
      req.seq = doc["seq"].get<std::int64_t>();
    }
    if (doc.contains("quality")) {
      if (!doc["quality"].is_number_integer()) throw RequestError(400, "quality", "quality must be an integer");
      const int q = doc["quality"].get<int>();
      if (q < 1 || q > 100) throw RequestError(400, "quality", "quality must be in [1,100]");
      req.quality = q;
    }
    req.codes = request_codes(doc);
    req.size = m.output_size;
    if (doc.contains("size")) {
      if (!doc["size"].is_number_integer()) throw RequestError(400, "size", "size must be an integer");
      req.size = doc["size"].get<int>();
      if (req.size < 1 || req.size > m.output_size || m.output_size % req.size != 0) {
        throw RequestError(400, "size", "size must divide the trained resolution " + std::to_string(m.output_size));
      }
    }
    req.camera = request_camera(doc);
    return req;
  }

  /// Image at the requested size.
  Tensor<T> render(const RenderRequest<T>& req) {
    Tensor<T> full;
    {
      RenderSlots::Lease lease(slots_);
      full = render_image(ckpt_.model, req.codes, req.camera);
    }
    return downsample(full, model_config().output_size / req.size);
  }

  std::string render_png(const RenderRequest<T>& req) { return encode_png(to_image8(render(req))); }

  /// Codes of a named preset (throws RequestError 400 for an unknown name).
  const LatentState<T>& preset(const std::string& name, const std::string& field) const {
    auto it = presets_.find(name);
    if (it == presets_.end()) throw RequestError(400, field, "unknown preset '" + name + "'");
    return it->second;
  }

 private:
  static nlohmann::json parse_body(const std::string& body) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw RequestError(400, "", std::string("body is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw RequestError(400, "", "body must be a JSON object");
    return doc;
  }

  static double number(const nlohmann::json& doc, const std::string& key, const std::string& field, double fallback) {
    if (!doc.contains(key)) return fallback;
    if (!doc[key].is_number()) throw RequestError(400, field, field + " must be a number");
    const double v = doc[key].get<double>();
    if (!std::isfinite(v)) throw RequestError(400, field, field + " must be finite");
    return v;
  }

  static std::string string_field(const nlohmann::json& doc, const std::string& key) {
    if (!doc.contains(key) || !doc[key].is_string()) throw RequestError(400, key, key + " must be a string");
    return doc[key].get<std::string>();
  }

  static Attribute attribute_field(const nlohmann::json& doc, const std::string& field) {
    if (!doc.contains("attribute") || !doc["attribute"].is_string()) {
      throw RequestError(400, field, field + " must be one of id, exp, alb, ill");
    }
    try {
      return parse_attribute(doc["attribute"].get<std::string>());
    } catch (const ParameterError& e) {
      throw RequestError(400, field, e.what());
    }
  }

  static double t_field(const nlohmann::json& doc, const std::string& field) {
    if (!doc.contains("t")) throw RequestError(400, field, field + " is required");
    const double t = number(doc, "t", field, 0.0);
    if (t < 0.0 || t > 1.0) throw RequestError(400, field, field + " must lie in [0,1]");
    return t;
  }

  /// Latent document with structural checks (400) then dimension checks (422).
  LatentState<T> latent_field(const nlohmann::json& doc, const std::string& field) const {
    if (!doc.is_object()) throw RequestError(400, field, field + " must be an object");
    for (auto a : kAttributes) {
      const std::string key = attribute_key(a);
      if (!doc.contains(key) || !doc[key].is_array() || doc[key].empty()) {
        throw RequestError(400, field + "." + key, field + "." + key + " must be a non-empty array of numbers");
      }
      for (const auto& v : doc[key])
        if (!v.is_number()) throw RequestError(400, field + "." + key, field + "." + key + " must contain only numbers");
    }
    auto state = latent_from_json<T>(doc);
    try {
      check_dims(state, model_config().dims);
    } catch (const ParameterError& e) {
      throw RequestError(422, field, e.what());
    }
    return state;
  }

  LatentState<T> request_codes(const nlohmann::json& doc) const {
    const bool has_latents = doc.contains("latents"), has_preset = doc.contains("preset");
    if (has_latents == has_preset) throw RequestError(400, "latents", "give exactly one of latents or preset");
    LatentState<T> codes = has_latents ? latent_field(doc["latents"], "latents")
                                       : preset(string_field(doc, "preset"), "preset").clone();
    if (doc.contains("edits")) {
      if (!doc["edits"].is_array()) throw RequestError(400, "edits", "edits must be an array");
      for (std::size_t i = 0; i < doc["edits"].size(); ++i) {
        const auto& e = doc["edits"][i];
        const std::string f = "edits[" + std::to_string(i) + "]";
        if (!e.is_object()) throw RequestError(400, f, f + " must be an object");
        const auto attr = attribute_field(e, f + ".attribute");
        const double t = t_field(e, f + ".t");
        if (!e.contains("preset") || !e["preset"].is_string()) throw RequestError(400, f + ".preset", f + ".preset must be a string");
        codes = interpolate(codes, preset(e["preset"].get<std::string>(), f + ".preset"), attr, t);
      }
    }
    return codes;
  }

  Camera request_camera(const nlohmann::json& doc) const {
    const auto& m = model_config();
    const int res = m.output_size;
    if (doc.contains("extrinsics")) {
      const auto& e = doc["extrinsics"];
      if (!e.is_array() || e.size() != 16) throw RequestError(400, "extrinsics", "extrinsics must be 16 numbers, row-major");
      std::array<double, 16> v{};
      for (int i = 0; i < 16; ++i) {
        if (!e[i].is_number()) throw RequestError(400, "extrinsics", "extrinsics must be 16 numbers, row-major");
        v[i] = e[i].get<double>();
      }
      Camera cam = dataset_camera(ViewAngles{}, res, m.sphere_radius);
      cam.extrinsics = Camera::extrinsics_from_row_major(v);
      try {
        cam.validate();
      } catch (const Error& err) {
        throw RequestError(400, "extrinsics", err.what());
      }
      if (!(cam.center().norm() > m.sphere_radius)) {
        throw RequestError(400, "extrinsics", "camera centre must lie outside the bounding sphere");
      }
      return cam;
    }
    nlohmann::json pose = doc.contains("pose") ? doc["pose"] : nlohmann::json::object();
    if (!pose.is_object()) throw RequestError(400, "pose", "pose must be an object");
    const double yaw = number(pose, "yaw", "pose.yaw", 0.0);
    const double pitch = number(pose, "pitch", "pose.pitch", 0.0);
    const double distance = number(pose, "distance", "pose.distance", orbit_distance(m.sphere_radius));
    if (!(distance > m.sphere_radius)) {
      throw RequestError(400, "pose.distance", "pose.distance must exceed the sphere radius " + std::to_string(m.sphere_radius));
    }
    if (std::abs(pitch) >= 1.5707) throw RequestError(400, "pose.pitch", "pose.pitch must be inside (-pi/2, pi/2)");
    return orbit_camera(yaw, pitch, distance, res, res, default_focal(res));
  }

  nlohmann::json interpolate_doc(const nlohmann::json& doc) const {
    const auto& a = preset(string_field(doc, "a"), "a");
    const auto& b = preset(string_field(doc, "b"), "b");
    return to_json(interpolate(a, b, attribute_field(doc, "attribute"), t_field(doc, "t")));
  }

  nlohmann::json transfer_doc(const nlohmann::json& doc) const {
    const auto& target = preset(string_field(doc, "target"), "target");
    if (!doc.contains("expressions") || !doc["expressions"].is_array()) {
      throw RequestError(400, "expressions", "expressions must be an array");
    }
    std::vector<LatentState<T>> sources;
    for (std::size_t i = 0; i < doc["expressions"].size(); ++i) {
      const auto& e = doc["expressions"][i];
      const std::string f = "expressions[" + std::to_string(i) + "]";
      if (e.is_string()) {
        sources.push_back(preset(e.get<std::string>(), f));
        continue;
      }
      if (!e.is_object() || !e.contains("z_exp") || !e["z_exp"].is_array() || e["z_exp"].empty()) {
        throw RequestError(400, f, f + " must be a preset name or an object with a z_exp array");
      }
      std::vector<T> v;
      for (const auto& x : e["z_exp"]) {
        if (!x.is_number()) throw RequestError(400, f + ".z_exp", f + ".z_exp must contain only numbers");
        v.push_back(static_cast<T>(x.get<double>()));
      }
      if (static_cast<int>(v.size()) != model_config().dims.exp) {
        throw RequestError(422, f + ".z_exp",
                           "z_exp has dimension " + std::to_string(v.size()) + ", expected " + std::to_string(model_config().dims.exp));
      }
      LatentState<T> s = target.clone();
      const auto n = static_cast<std::int64_t>(v.size());
      s.z_exp = Tensor<T>::from({n}, std::move(v));
      sources.push_back(std::move(s));
    }
    nlohmann::json states = nlohmann::json::array();
    for (const auto& s : transfer_expression(target, sources)) states.push_back(to_json(s));
    return {{"states", states}};
  }

  HttpReply internal_error(const std::string& target, const std::string& detail) {
    char id[17];
    {
      std::lock_guard lock(log_mu_);
      std::snprintf(id, sizeof id, "%016llx", static_cast<unsigned long long>(id_rng_()));
      if (opts_.log) *opts_.log << "error " << id << " " << target << ": " << detail << std::endl;
    }
    return {500, "application/json", nlohmann::json{{"error", {{"status", 500}, {"id", id}}}}.dump()};
  }

  LoadedCheckpoint<T> ckpt_;
  Options opts_;
  RenderSlots slots_;
  std::map<std::string, LatentState<T>> presets_;
  std::mutex log_mu_;
  std::mt19937_64 id_rng_;
};

// ---------------------------------------------------------------------------
// Transport.

template <class T>
class Server {
 public:
  Server(ServiceCore<T>& core, const BindAddress& bind) : core_(core), acceptor_(io_) {
    namespace net = boost::asio;
    boost::system::error_code ec;
    const auto address = net::ip::make_address(bind.host, ec);
    if (ec) throw ConfigurationError("bad bind address '" + bind.host + "': " + ec.message());
    const net::ip::tcp::endpoint ep(address, bind.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep, ec);
    if (ec) throw IoError("cannot bind " + bind.host + ":" + std::to_string(bind.port) + ": " + ec.message());
    acceptor_.listen(net::socket_base::max_listen_connections);
  }

  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  /// Accepts connections on a background thread.
  void start() {
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  /// Blocks until stop() is called from elsewhere.
  void run() {
    start();
    std::unique_lock lock(mu_);
    stopped_cv_.wait(lock, [&] { return stopping_; });
  }

  void stop() {
    {
      std::lock_guard lock(mu_);
      if (stopping_ && !accept_thread_.joinable()) return;
      stopping_ = true;
      boost::system::error_code ec;
      for (auto& s : sockets_) {
        s->shutdown(boost::asio::ip::tcp::socket::shutdown_both, ec);
        s->close(ec);
      }
    }
    // A blocking accept() is not interrupted by close(); wake it with a connection.
    if (accept_thread_.joinable()) {
      boost::system::error_code ec;
      auto ep = acceptor_.local_endpoint(ec);
      if (!ec) {
        if (ep.address().is_unspecified()) {
          ep.address(ep.address().is_v6() ? boost::asio::ip::address(boost::asio::ip::address_v6::loopback())
                                          : boost::asio::ip::address(boost::asio::ip::address_v4::loopback()));
        }
        Socket poke(io_);
        poke.connect(ep, ec);
      }
    }
    stopped_cv_.notify_all();
    if (accept_thread_.joinable()) accept_thread_.join();
    {
      boost::system::error_code ec;
      acceptor_.close(ec);
    }
    std::vector<Session> sessions;
    {
      std::lock_guard lock(mu_);
      sessions.swap(sessions_);
    }
    for (auto& s : sessions) s.thread.join();
  }

 private:
  using Socket = boost::asio::ip::tcp::socket;

  struct Session {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };

  void accept_loop() {
    for (;;) {
      auto socket = std::make_shared<Socket>(io_);
      boost::system::error_code ec;
      acceptor_.accept(*socket, ec);
      std::lock_guard lock(mu_);
      if (stopping_) {
        socket->close(ec);
        return;
      }
      if (ec) continue;
      reap_finished();
      sockets_.push_back(socket);
      auto done = std::make_shared<std::atomic<bool>>(false);
      sessions_.push_back({std::thread([this, socket, done] {
                             session(*socket);
                             std::lock_guard l(mu_);
                             sockets_.erase(std::remove(sockets_.begin(), sockets_.end(), socket), sockets_.end());
                             done->store(true);
                           }),
                           done});
    }
  }

  // Joins sessions whose thread has finished; called with mu_ held.
  void reap_finished() {
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (it->done->load()) {
        it->thread.join();
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void session(Socket& socket) {
    namespace beast = boost::beast;
    namespace http = beast::http;
    beast::flat_buffer buffer;
    for (;;) {
      http::request_parser<http::string_body> parser;
      parser.body_limit(4u << 20);
      boost::system::error_code ec;
      http::read(socket, buffer, parser, ec);
      if (ec) return;
      auto req = parser.release();
      if (beast::websocket::is_upgrade(req)) {
        if (req.target() == "/live") live_session(socket, std::move(req));
        return;
      }
      const auto reply = core_.handle(std::string(req.method_string()), std::string(req.target()), req.body());
      http::response<http::string_body> res{static_cast<http::status>(reply.status), req.version()};
      res.set(http::field::server, "headfield");
      res.set(http::field::content_type, reply.content_type);
      res.set(http::field::access_control_allow_origin, "*");
      res.keep_alive(req.keep_alive());
      res.body() = reply.body;
      res.prepare_payload();
      http::write(socket, res, ec);
      if (ec || !res.keep_alive()) break;
    }
    boost::system::error_code ec;
    socket.shutdown(Socket::shutdown_send, ec);
  }

  // Latest request wins: messages already waiting on the socket replace the
  // one just read before rendering.
  void live_session(Socket& socket, boost::beast::http::request<boost::beast::http::string_body> req) {
    namespace beast = boost::beast;
    beast::websocket::stream<Socket&> ws(socket);
    boost::system::error_code ec;
    ws.accept(req, ec);
    if (ec) return;
    for (;;) {
      beast::flat_buffer buf;
      ws.read(buf, ec);
      if (ec) return;
      std::string message = beast::buffers_to_string(buf.data());
      while (socket.available(ec) > 0 && !ec) {
        beast::flat_buffer next;
        ws.read(next, ec);
        if (ec) return;
        message = beast::buffers_to_string(next.data());
      }
      const auto reply = core_.live(message);
      ws.binary(reply.binary);
      ws.write(boost::asio::buffer(reply.payload), ec);
      if (ec) return;
    }
  }

  ServiceCore<T>& core_;
  boost::asio::io_context io_;
  boost::asio::ip::tcp::acceptor acceptor_;
  std::thread accept_thread_;
  std::mutex mu_;
  std::condition_variable stopped_cv_;
  bool stopping_ = false;
  std::vector<std::shared_ptr<Socket>> sockets_;
  std::vector<Session> sessions_;
};

}  // namespace headfield
