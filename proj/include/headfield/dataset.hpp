#pragma once

// Synthetic multi-view head dataset.
//
// A ProceduralHead is an analytic volume: a sum of anisotropic Gaussian
// density blobs under an ellipsoidal falloff that vanishes outside the unit
// sphere. Blob centres and extents are affine in the identity and expression
// factors; colour is a positional cosine palette driven by the albedo
// factor, multiplied by a Lambert-style shading term whose overall strength is
// set by the illumination factor. Ground truth goes through the same
// quadrature code as the model (compute_weights / weighted_sum) in 64-bit.

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "headfield/camera.hpp"
#include "headfield/image_io.hpp"
#include "headfield/latent.hpp"
#include "headfield/volume.hpp"

namespace headfield {

inline constexpr int kIdFactors = 4;
inline constexpr int kExpFactors = 3;
inline constexpr int kAlbFactors = 3;
inline constexpr int kIllFactors = 2;

struct HeadFactors {
  std::array<double, kIdFactors> id{};
  std::array<double, kExpFactors> exp{};
  std::array<double, kAlbFactors> alb{};
  std::array<double, kIllFactors> ill{};

  bool operator==(const HeadFactors&) const = default;
};

class ProceduralHead {
 public:
  struct Blob {
    Eigen::Vector3d center;
    Eigen::Vector3d extent;
  };

  static constexpr double kAmplitude = 40.0;
  static constexpr double kFalloffRadius = 0.95;

  explicit ProceduralHead(const HeadFactors& f) : factors_(f) {
    const auto& g = f.id;
    const auto& e = f.exp;
    auto blob = [this](Eigen::Vector3d c, Eigen::Vector3d s) { blobs_.push_back({c, s}); };
    // cranium and face mass
    blob({0.0, 0.10, -0.05}, {0.50 * (1 + 0.08 * g[0]), 0.56 * (1 + 0.08 * g[1]), 0.52 * (1 + 0.08 * g[2])});
    blob({0.0, -0.22 + 0.03 * g[3], 0.10}, {0.36 * (1 + 0.08 * g[3]), 0.28, 0.36});
    // nose
    blob({0.0, -0.02, 0.50 + 0.04 * g[0]}, {0.07, 0.13 * (1 + 0.1 * g[1]), 0.10});
    // brows
    blob({-0.20, 0.20 + 0.05 * e[0], 0.42}, {0.13, 0.045, 0.07});
    blob({0.20, 0.20 + 0.05 * e[0], 0.42}, {0.13, 0.045, 0.07});
    // mouth
    blob({0.0, -0.32 - 0.04 * e[1], 0.40}, {0.15 * (1 + 0.2 * e[2]), 0.045 * (1 + 0.3 * e[1]), 0.07});
    // ears
    blob({-0.58 - 0.03 * g[2], 0.0, -0.02}, {0.06, 0.15, 0.09});
    blob({0.58 + 0.03 * g[2], 0.0, -0.02}, {0.06, 0.15, 0.09});
  }

  const HeadFactors& factors() const { return factors_; }
  const std::vector<Blob>& blobs() const { return blobs_; }

  double density(const Eigen::Vector3d& x) const {
    const double falloff = 1.0 - x.squaredNorm() / (kFalloffRadius * kFalloffRadius);
    if (falloff <= 0) return 0.0;
    return kAmplitude * falloff * blob_sum(x);
  }

  /// Unshaded colour at x.
  Eigen::Vector3d palette(const Eigen::Vector3d& x) const {
    static const Eigen::Vector3d freq[3] = {{0.9, 0.5, 0.3}, {0.4, 1.1, 0.2}, {0.3, 0.6, 1.0}};
    static const double base_phase[3] = {0.3, 1.7, 3.1};
    Eigen::Vector3d c;
    for (int ch = 0; ch < 3; ++ch) {
      const double phase = base_phase[ch] + 0.9 * factors_.alb[ch];
      c[ch] = 0.45 + 0.28 * std::cos(2 * std::numbers::pi * freq[ch].dot(x) + phase);
    }
    return c;
  }

  /// Overall light strength, affine in the illumination factor.
  double light_scale() const { return 1.0 + 0.15 * factors_.ill[0] + 0.08 * factors_.ill[1]; }

  /// Lambert-style shading from the density gradient (outward normal).
  double shading(const Eigen::Vector3d& x) const {
    static const Eigen::Vector3d light = Eigen::Vector3d(0.3, 0.5, 1.0).normalized();
    const Eigen::Vector3d grad = blob_gradient(x);
    const double n = grad.norm();
    const double lambert = n > 1e-12 ? std::max(0.0, -grad.dot(light) / n) : 0.0;
    return light_scale() * (0.55 + 0.45 * lambert);
  }

  Eigen::Vector3d radiance(const Eigen::Vector3d& x) const { return palette(x) * shading(x); }

 private:
  double blob_sum(const Eigen::Vector3d& x) const {
    double total = 0;
    for (const auto& b : blobs_) total += std::exp(-0.5 * ((x - b.center).array() / b.extent.array()).square().sum());
    return total;
  }

  Eigen::Vector3d blob_gradient(const Eigen::Vector3d& x) const {
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    for (const auto& b : blobs_) {
      const Eigen::Array3d u = (x - b.center).array() / b.extent.array();
      const double v = std::exp(-0.5 * u.square().sum());
      g -= (v * u / b.extent.array()).matrix();
    }
    return g;
  }

  HeadFactors factors_;
  std::vector<Blob> blobs_;
};

struct GroundTruthRender {
  Tensor<double> image;  // [3,H,W]
  Tensor<double> alpha;  // [H,W]
  Tensor<double> mask;   // [H,W], alpha > 0.5
};

/// Renders at full camera resolution, `samples` uniform samples per ray.
inline GroundTruthRender render_ground_truth(const ProceduralHead& head, const Camera& camera, int samples = 128,
                                             double sphere_radius = 1.0) {
  NoGradGuard guard;
  const auto rays = generate_rays<double>(camera, camera.width, camera.height, sphere_radius);
  const auto pts = sample_along_rays(rays, samples, SamplingMode::uniform);
  const auto n = rays.size();
  const auto& pos = pts.positions.values();
  std::vector<double> sigma(static_cast<std::size_t>(n * samples)), rgb(static_cast<std::size_t>(n * samples * 3));
  for (std::int64_t r = 0; r < n; ++r) {
    if (!rays.hit_mask[r]) continue;
    for (int i = 0; i < samples; ++i) {
      const auto k = r * samples + i;
      const Eigen::Vector3d x(pos[3 * k], pos[3 * k + 1], pos[3 * k + 2]);
      sigma[k] = head.density(x);
      if (sigma[k] > 0) {
        const auto c = head.radiance(x);
        for (int ch = 0; ch < 3; ++ch) rgb[3 * k + ch] = c[ch];
      }
    }
  }
  const auto weights = compute_weights(Tensor<double>::from({n, samples}, std::move(sigma)), pts.deltas);
  const auto fmap = render_features(weights, Tensor<double>::from({n, samples, 3}, std::move(rgb)), camera.width, camera.height);
  std::vector<double> mask(fmap.alpha.values().size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = fmap.alpha.values()[i] > 0.5 ? 1.0 : 0.0;
  return {fmap.features, fmap.alpha, Tensor<double>::from(fmap.alpha.shape(), std::move(mask))};
}

// ---------------------------------------------------------------------------
// Dataset layout.

struct DatasetSpec {
  int subjects = 3;
  int expressions = 4;
  int lightings = 2;
  int views = 8;
  int resolution = 64;
  std::uint64_t seed = 0;
  int samples = 128;
  double sphere_radius = 1.0;

  void validate() const {
    if (subjects < 1 || expressions < 1 || lightings < 1 || views < 1) {
      throw ParameterError("dataset counts must all be >= 1");
    }
    if (resolution < 4) throw ParameterError("dataset resolution must be >= 4");
  }
};

/// Focal length framing the bounding sphere at the standard orbit distance.
inline double default_focal(int resolution) { return 0.5 * resolution / std::tan(0.36); }

inline double orbit_distance(double sphere_radius) { return 3.0 * sphere_radius; }

struct ViewAngles {
  double yaw = 0;
  double pitch = 0;
};

/// Views on a yaw/pitch grid: two pitch rows when views >= 4.
inline ViewAngles view_angles(int view, int views) {
  const int rows = views >= 4 ? 2 : 1;
  const int cols = (views + rows - 1) / rows;
  const int row = view / cols, col = view % cols;
  ViewAngles a;
  a.yaw = cols > 1 ? -0.6 + 1.2 * col / (cols - 1) : 0.0;
  a.pitch = rows > 1 ? (row == 0 ? -0.2 : 0.2) : 0.0;
  return a;
}

inline Camera dataset_camera(const ViewAngles& a, int resolution, double sphere_radius = 1.0) {
  return orbit_camera(a.yaw, a.pitch, orbit_distance(sphere_radius), resolution, resolution, default_focal(resolution));
}

template <class T>
struct FrameRecord {
  Tensor<T> image;  // [3,H,W]
  Tensor<T> mask;   // [H,W]
  Camera camera;
  FrameKey key;
  HeadFactors factors;
  int view = 0;
  std::string image_path;
  std::string mask_path;
};

/// Ground-truth factors for the whole grid, deterministic in the seed.
struct FactorTable {
  std::vector<std::array<double, kIdFactors>> id;     // per subject
  std::vector<std::array<double, kAlbFactors>> alb;   // per subject
  std::vector<std::array<double, kExpFactors>> exp;   // per expression
  std::vector<std::array<double, kIllFactors>> ill;   // per lighting
};

inline FactorTable draw_factors(const DatasetSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  FactorTable t;
  auto fill = [&](auto& arr) {
    for (auto& v : arr) v = u(rng);
  };
  t.id.resize(spec.subjects);
  t.alb.resize(spec.subjects);
  t.exp.resize(spec.expressions);
  t.ill.resize(spec.lightings);
  for (int s = 0; s < spec.subjects; ++s) {
    fill(t.id[s]);
    fill(t.alb[s]);
  }
  for (auto& e : t.exp) fill(e);
  for (auto& l : t.ill) fill(l);
  return t;
}

namespace detail {

template <std::size_t N>
nlohmann::json array_json(const std::array<double, N>& a) {
  return std::vector<double>(a.begin(), a.end());
}

template <std::size_t N>
std::array<double, N> json_array(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != N) throw ManifestError(std::string("malformed factor array '") + what + "'");
  std::array<double, N> a{};
  for (std::size_t i = 0; i < N; ++i) a[i] = j[i].get<double>();
  return a;
}

}  // namespace detail

inline nlohmann::json camera_to_json(const Camera& c) {
  const auto e = c.extrinsics_row_major();
  return {{"extrinsics", std::vector<double>(e.begin(), e.end())},
          {"intrinsics", {c.intrinsics.fx, c.intrinsics.fy, c.intrinsics.cx, c.intrinsics.cy}},
          {"size", {c.width, c.height}}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
  try {
    Camera c;
    const auto e = j.at("extrinsics").get<std::vector<double>>();
    const auto k = j.at("intrinsics").get<std::vector<double>>();
    const auto s = j.at("size").get<std::vector<int>>();
    if (e.size() != 16 || k.size() != 4 || s.size() != 2) throw ManifestError("camera arrays have wrong lengths");
    std::array<double, 16> m{};
    std::copy(e.begin(), e.end(), m.begin());
    c.extrinsics = Camera::extrinsics_from_row_major(m);
    c.intrinsics = {k[0], k[1], k[2], k[3]};
    c.width = s[0];
    c.height = s[1];
    return c;
  } catch (const nlohmann::json::exception& ex) {
    throw ManifestError(std::string("malformed camera: ") + ex.what());
  }
}

inline nlohmann::json factors_to_json(const HeadFactors& f) {
  return {{"id", detail::array_json(f.id)},
          {"exp", detail::array_json(f.exp)},
          {"alb", detail::array_json(f.alb)},
          {"ill", detail::array_json(f.ill)}};
}

inline HeadFactors factors_from_json(const nlohmann::json& j) {
  HeadFactors f;
  f.id = detail::json_array<kIdFactors>(j.at("id"), "id");
  f.exp = detail::json_array<kExpFactors>(j.at("exp"), "exp");
  f.alb = detail::json_array<kAlbFactors>(j.at("alb"), "alb");
  f.ill = detail::json_array<kIllFactors>(j.at("ill"), "ill");
  return f;
}

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kManifestFormat = "headfield-dataset";

/// Writes images, masks and manifest.json under `dir`. Returns the manifest path.
inline std::filesystem::path generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  const auto table = draw_factors(spec);
  std::error_code ec;
  std::filesystem::create_directories(dir / "frames", ec);
  if (ec) throw IoError("cannot create " + (dir / "frames").string() + ": " + ec.message());

  nlohmann::json frames = nlohmann::json::array();
  int index = 0;
  for (int s = 0; s < spec.subjects; ++s)
    for (int e = 0; e < spec.expressions; ++e) {
      HeadFactors f;
      f.id = table.id[s];
      f.alb = table.alb[s];
      f.exp = table.exp[e];
      for (int l = 0; l < spec.lightings; ++l) {
        f.ill = table.ill[l];
        const ProceduralHead head(f);
        for (int v = 0; v < spec.views; ++v, ++index) {
          const auto cam = dataset_camera(view_angles(v, spec.views), spec.resolution, spec.sphere_radius);
          const auto gt = render_ground_truth(head, cam, spec.samples, spec.sphere_radius);
          char stem[32];
          std::snprintf(stem, sizeof stem, "frames/f%05d", index);
          const std::string image_rel = std::string(stem) + ".png";
          const std::string mask_rel = std::string(stem) + "_mask.png";
          const auto image_bytes = encode_png(to_image8(gt.image));
          const auto mask_bytes = encode_png(to_image8(gt.mask));
          write_file_atomic(dir / image_rel, image_bytes);
          write_file_atomic(dir / mask_rel, mask_bytes);
          frames.push_back({{"index", index},
                            {"subject", "s" + std::to_string(s)},
                            {"expression", "e" + std::to_string(e)},
                            {"lighting", "l" + std::to_string(l)},
                            {"view", v},
                            {"image", image_rel},
                            {"mask", mask_rel},
                            {"image_crc32", crc32_hex(image_bytes)},
                            {"mask_crc32", crc32_hex(mask_bytes)},
                            {"camera", camera_to_json(cam)},
                            {"factors", factors_to_json(f)}});
        }
      }
    }
  nlohmann::json manifest = {{"format", kManifestFormat},
                             {"version", 1},
                             {"resolution", spec.resolution},
                             {"seed", spec.seed},
                             {"subjects", spec.subjects},
                             {"expressions", spec.expressions},
                             {"lightings", spec.lightings},
                             {"views", spec.views},
                             {"samples_per_ray", spec.samples},
                             {"sphere_radius", spec.sphere_radius},
                             {"frames", frames}};
  const auto path = dir / kManifestName;
  write_file_atomic(path, manifest.dump(2) + "\n");
  return path;
}

/// Loads every frame listed by the manifest, in manifest order.
template <class T>
std::vector<FrameRecord<T>> load_dataset(const std::filesystem::path& manifest_path) {
  const auto text = read_file(manifest_path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ManifestError("malformed manifest " + manifest_path.string() + ": " + ex.what());
  }
  if (!manifest.is_object() || manifest.value("format", "") != kManifestFormat || !manifest.contains("frames") ||
      !manifest["frames"].is_array()) {
    throw ManifestError("malformed manifest " + manifest_path.string() + ": not a headfield dataset");
  }
  const auto root = manifest_path.parent_path();
  std::vector<FrameRecord<T>> out;
  for (const auto& fj : manifest["frames"]) {
    FrameRecord<T> rec;
    std::string image_crc, mask_crc;
    try {
      rec.key = {fj.at("subject").get<std::string>(), fj.at("expression").get<std::string>(),
                 fj.at("lighting").get<std::string>()};
      rec.view = fj.at("view").get<int>();
      rec.image_path = fj.at("image").get<std::string>();
      rec.mask_path = fj.at("mask").get<std::string>();
      image_crc = fj.at("image_crc32").get<std::string>();
      mask_crc = fj.at("mask_crc32").get<std::string>();
      rec.factors = factors_from_json(fj.at("factors"));
    } catch (const nlohmann::json::exception& ex) {
      throw ManifestError("malformed manifest frame entry: " + std::string(ex.what()));
    }
    rec.camera = camera_from_json(fj.at("camera"));
    const auto image_bytes = read_file(root / rec.image_path);
    const auto mask_bytes = read_file(root / rec.mask_path);
    if (crc32_hex(image_bytes) != image_crc) throw ChecksumError("checksum mismatch for " + (root / rec.image_path).string());
    if (crc32_hex(mask_bytes) != mask_crc) throw ChecksumError("checksum mismatch for " + (root / rec.mask_path).string());
    const auto img8 = decode_png(image_bytes);
    const auto mask8 = decode_png(mask_bytes);
    if (img8.channels != 3 || mask8.channels != 1 || img8.width != rec.camera.width || img8.height != rec.camera.height ||
        mask8.width != img8.width || mask8.height != img8.height) {
      throw ManifestError("image/mask size does not match camera for " + rec.image_path);
    }
    rec.image = from_image8<T>(img8);
    rec.mask = from_image8<T>(mask8, true);
    for (T m : rec.mask.values())
      if (m != T(0) && m != T(1)) throw ManifestError("mask " + rec.mask_path + " is not binary");
    out.push_back(std::move(rec));
  }
  return out;
}

template <class T>
std::vector<FrameKey> frame_keys(const std::vector<FrameRecord<T>>& frames) {
  std::vector<FrameKey> keys;
  for (const auto& f : frames) keys.push_back(f.key);
  return keys;
}

}  // namespace headfield
