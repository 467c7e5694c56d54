/*
 * Copyright 2026 The BevGraph Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "bevgraph/scene_sim.h"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "bevgraph/errors.h"
#include "bevgraph/json_util.h"
#include "bevgraph/rng.h"

namespace bevgraph {

namespace {

constexpr const char* kDatasetSchema = "bevgraph.dataset/2";
constexpr double kPi = std::numbers::pi;
constexpr double kDepthRef = 15.0;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double normal(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

std::array<BevPoint, 4> footprint(const GroundPose& p) {
  const double s = std::sin(p.yaw), c = std::cos(p.yaw);
  std::array<BevPoint, 4> out;
  int k = 0;
  for (double a : {-0.5 * p.length, 0.5 * p.length}) {
    for (double b : {-0.5 * p.width, 0.5 * p.width}) {
      out[k++] = {p.x + a * s + b * c, p.z + a * c - b * s};
    }
  }
  std::swap(out[2], out[3]);  // perimeter order
  return out;
}

// Separating-axis test on two oriented rectangles.
bool footprints_overlap(const GroundPose& p, const GroundPose& q) {
  const auto a = footprint(p);
  const auto b = footprint(q);
  for (const auto* poly : {&a, &b}) {
    for (int e = 0; e < 4; ++e) {
      const BevPoint& u = (*poly)[e];
      const BevPoint& v = (*poly)[(e + 1) % 4];
      const double nx = -(v.z - u.z), nz = v.x - u.x;
      double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
      for (const BevPoint& pt : a) {
        const double d = pt.x * nx + pt.z * nz;
        amin = std::min(amin, d);
        amax = std::max(amax, d);
      }
      for (const BevPoint& pt : b) {
        const double d = pt.x * nx + pt.z * nz;
        bmin = std::min(bmin, d);
        bmax = std::max(bmax, d);
      }
      if (amax < bmin || bmax < amin) return false;
    }
  }
  return true;
}

bool fully_inside(const ImageBox& b, const CameraModel& cam) {
  return b.u_min >= 0.0 && b.v_min >= 0.0 && b.u_max <= cam.width && b.v_max <= cam.height &&
         b.u_max - b.u_min >= 1.0 && b.v_max - b.v_min >= 1.0;
}

FeatureTuple box_states(const ImageBox& box, const CameraModel& cam, int scanline_dim) {
  FeatureTuple f;
  f.bbox_geom = box_geometry_features(box, cam);
  f.scanline = scanline_features(box, cam, scanline_dim);
  return f;
}

}  // namespace

std::string to_string(DepthCueMode m) {
  switch (m) {
    case DepthCueMode::kFull:
      return "full";
    case DepthCueMode::kGeometryOnly:
      return "geometry_only";
    case DepthCueMode::kNone:
      return "none";
  }
  return "full";
}

DepthCueMode depth_cue_from_string(const std::string& s) {
  if (s == "full") return DepthCueMode::kFull;
  if (s == "geometry_only") return DepthCueMode::kGeometryOnly;
  if (s == "none") return DepthCueMode::kNone;
  throw ConfigError("unknown depth_cue_mode '" + s + "' (expected full, geometry_only or none)");
}

void SimConfig::validate() const {
  if (min_objects < 1 || max_objects < min_objects)
    throw ConfigError("sim: need 1 <= min_objects <= max_objects");
  if (!(min_depth > 1.0) || !(max_depth <= 50.0) || !(min_depth < max_depth))
    throw ConfigError("sim: depth range must satisfy 1 < min_depth < max_depth <= 50");
  if (!(lateral_range > 0.0)) throw ConfigError("sim: lateral_range must be positive");
  if (classes.empty()) throw ConfigError("sim: need at least one class");
  for (const ObjectClass& c : classes) {
    if (!(c.length > 0.0 && c.width > 0.0 && c.height > 0.0))
      throw ConfigError("sim: class '" + c.name + "' needs positive dimensions");
  }
  if (dim_noise < 0.0 || appearance_noise < 0.0 || depth_cue_noise < 0.0 || edge_cue_noise < 0.0 ||
      jitter_px < 0.0 || principal_jitter_u < 0.0 || principal_jitter_v < 0.0 ||
      cluster_depth_spread < 0.0)
    throw ConfigError("sim: noise levels must be non-negative");
  if (!(camera_height_min > 0.0) || camera_height_max < camera_height_min)
    throw ConfigError("sim: camera height range must be positive and non-empty");
  if (terrain_amplitude < 0.0 || !(terrain_wavelength_min > 0.0) ||
      terrain_wavelength_max < terrain_wavelength_min)
    throw ConfigError("sim: terrain amplitude must be >= 0 and wavelength range positive and non-empty");
  // Box bottoms stay ordered by depth while |e'(z)| z < h - |e|.
  const double slope = 2.0 * kPi * terrain_amplitude / terrain_wavelength_min;
  if (slope * max_depth >= 0.9 * (camera_height_min - terrain_amplitude))
    throw ConfigError("sim: terrain too steep for the depth range");
  if (max_cluster < 1) throw ConfigError("sim: max_cluster must be >= 1");
  if (appearance_dim <= kOrientSinChannel)
    throw ConfigError("sim: appearance_dim must exceed " + std::to_string(kOrientSinChannel));
  if (scanline_dim < 1) throw ConfigError("sim: scanline_dim must be >= 1");
  if (max_attempts < 1) throw ConfigError("sim: max_attempts must be >= 1");
}

std::vector<double> class_prototype(int cls, int dim) {
  std::mt19937_64 rng(mix_seed(0x9e0c1a55ULL, static_cast<std::uint64_t>(cls)));
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (double& x : v) x = normal(rng, 1.0);
  return v;
}

double Terrain::elevation(double z) const {
  return amplitude * std::sin(2.0 * kPi * z / wavelength + phase);
}

double observation_angle(const SceneObject& obj) {
  return wrap_angle(std::atan2(obj.pose.x, obj.pose.z) + obj.pose.yaw);
}

SyntheticScene sample_scene(const SimConfig& config, std::uint64_t scene_id) {
  config.validate();
  std::mt19937_64 rng(mix_seed(config.seed, scene_id));
  SyntheticScene scene;
  scene.id = scene_id;
  scene.camera.u0 += uniform(rng, -config.principal_jitter_u, config.principal_jitter_u);
  scene.camera.v0 += uniform(rng, -config.principal_jitter_v, config.principal_jitter_v);
  scene.camera_height = uniform(rng, config.camera_height_min, config.camera_height_max);
  scene.terrain.amplitude = uniform(rng, 0.0, config.terrain_amplitude);
  scene.terrain.wavelength = uniform(rng, config.terrain_wavelength_min, config.terrain_wavelength_max);
  scene.terrain.phase = uniform(rng, -kPi, kPi);
  const CameraModel& cam = scene.camera;

  const int n = std::uniform_int_distribution<int>(config.min_objects, config.max_objects)(rng);
  const double fov_slope = 0.9 * std::min(cam.u0, cam.width - cam.u0) / cam.fu;
  int attempts = 0;
  while (static_cast<int>(scene.objects.size()) < n) {
    const int remaining = n - static_cast<int>(scene.objects.size());
    const int m = std::uniform_int_distribution<int>(1, std::min(config.max_cluster, remaining))(rng);
    const int cls = std::uniform_int_distribution<int>(0, config.num_classes() - 1)(rng);
    const double yaw = uniform(rng, -kPi, kPi);
    const double zc = uniform(rng, config.min_depth, config.max_depth);
    // A member that cannot be placed near the row abandons the rest of it.
    bool row_open = true;
    for (int member = 0; member < m && row_open; ++member) {
      row_open = false;
      for (int tries = 0; tries < 50; ++tries) {
        if (++attempts > config.max_attempts)
          throw GeometryError("sample_scene: placement failed after " +
                              std::to_string(config.max_attempts) + " attempts (scene " +
                              std::to_string(scene_id) + ")");
        const double z = std::clamp(zc + uniform(rng, -config.cluster_depth_spread,
                                                 config.cluster_depth_spread),
                                    config.min_depth, config.max_depth);
        const double r = std::min(config.lateral_range, fov_slope * z);
        const ObjectClass& oc = config.classes[static_cast<std::size_t>(cls)];
        SceneObject obj;
        obj.cls = cls;
        obj.pose.x = uniform(rng, -r, r);
        obj.pose.z = z;
        obj.pose.yaw = wrap_angle(yaw);
        obj.pose.length = oc.length * std::max(0.5, 1.0 + normal(rng, config.dim_noise));
        obj.pose.width = oc.width * std::max(0.5, 1.0 + normal(rng, config.dim_noise));
        obj.height = oc.height * std::max(0.5, 1.0 + normal(rng, config.dim_noise));
        bool ok = true;
        for (const SceneObject& other : scene.objects) {
          if (footprints_overlap(obj.pose, other.pose)) {
            ok = false;
            break;
          }
        }
        if (!ok) continue;
        ImageBox box;
        try {
          // Objects rest level at the elevation under their centroid.
          box = project_ground_to_image_unclipped(obj.pose, obj.height,
                                                  scene.camera_height - scene.terrain.elevation(z), cam);
        } catch (const GeometryError&) {
          continue;
        }
        if (!fully_inside(box, cam)) continue;
        scene.objects.push_back(obj);
        scene.boxes.push_back(box);
        row_open = true;
        break;
      }
    }
  }

  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const SceneObject& obj = scene.objects[i];
    FeatureTuple f = box_states(scene.boxes[i], cam, config.scanline_dim);
    f.appearance = class_prototype(obj.cls, config.appearance_dim);
    for (double& a : f.appearance) a += normal(rng, config.appearance_noise);
    if (config.depth_cue != DepthCueMode::kNone) {
      const double beta = observation_angle(obj);
      f.appearance[kOrientCosChannel] = std::cos(beta) + normal(rng, config.appearance_noise);
      f.appearance[kOrientSinChannel] = std::sin(beta) + normal(rng, config.appearance_noise);
    }
    if (config.depth_cue == DepthCueMode::kFull) {
      f.appearance[kDepthChannel] =
          std::log(obj.pose.z / kDepthRef) + normal(rng, config.depth_cue_noise);
    }
    scene.features.push_back(std::move(f));
  }
  return scene;
}

std::vector<Detection> make_detections(const SyntheticScene& scene, double jitter_px,
                                       std::mt19937_64& rng, int scanline_dim) {
  if (jitter_px < 0.0) throw ConfigError("make_detections: jitter must be non-negative");
  const CameraModel& cam = scene.camera;
  const double w = cam.width, h = cam.height;
  std::vector<Detection> dets;
  dets.reserve(scene.boxes.size());
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    ImageBox b = scene.boxes[i];
    if (jitter_px > 0.0) {
      b.u_min = std::clamp(b.u_min + normal(rng, jitter_px), 0.0, w);
      b.v_min = std::clamp(b.v_min + normal(rng, jitter_px), 0.0, h);
      b.u_max = std::clamp(b.u_max + normal(rng, jitter_px), 0.0, w);
      b.v_max = std::clamp(b.v_max + normal(rng, jitter_px), 0.0, h);
      // Keep at least one pixel of extent inside the image.
      if (b.u_max - b.u_min < 1.0) {
        const double c = std::clamp(0.5 * (b.u_min + b.u_max), 0.5, w - 0.5);
        b.u_min = c - 0.5;
        b.u_max = c + 0.5;
      }
      if (b.v_max - b.v_min < 1.0) {
        const double c = std::clamp(0.5 * (b.v_min + b.v_max), 0.5, h - 0.5);
        b.v_min = c - 0.5;
        b.v_max = c + 0.5;
      }
    }
    Detection d;
    d.box = b;
    d.features = box_states(b, cam, scanline_dim);
    d.features.appearance = scene.features[i].appearance;
    dets.push_back(std::move(d));
  }
  return dets;
}

RegionFeatureFn scene_region_features(const SyntheticScene& scene,
                                      const std::vector<Detection>& detections,
                                      const SimConfig& config) {
  std::vector<std::vector<double>> app;
  std::vector<double> depth;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    app.push_back(detections[i].features.appearance);
    depth.push_back(scene.objects[i].pose.z);
  }
  const std::uint64_t base = mix_seed(mix_seed(config.seed, scene.id), 0xed6e5ULL);
  return [app = std::move(app), depth = std::move(depth), base, cam = scene.camera,
          cue = config.depth_cue, noise = config.appearance_noise, edge_noise = config.edge_cue_noise,
          scan = config.scanline_dim](const ImageBox& region, int i, int j) {
    const int a = std::min(i, j), b = std::max(i, j);
    std::mt19937_64 rng(mix_seed(mix_seed(base, static_cast<std::uint64_t>(a)), static_cast<std::uint64_t>(b)));
    FeatureTuple f = box_states(region, cam, scan);
    f.appearance.resize(app[a].size());
    for (std::size_t c = 0; c < f.appearance.size(); ++c)
      f.appearance[c] = 0.5 * (app[a][c] + app[b][c]) + normal(rng, noise);
    if (cue == DepthCueMode::kFull) {
      // The region mixes both endpoints: the reading is the depth of a random
      // point between them, exact only when the endpoints share a depth.
      const double t = uniform(rng, 0.0, 1.0);
      const double mixed = t * depth[a] + (1.0 - t) * depth[b];
      f.appearance[kDepthChannel] = std::log(mixed / kDepthRef) + normal(rng, edge_noise);
    }
    return f;
  };
}

Dataset generate_split(const SimConfig& config, const std::string& split, int count,
                       std::uint64_t first_id) {
  if (count <= 0) throw ConfigError("generate_split: count must be positive");
  Dataset ds;
  ds.config = config;
  ds.split = split;
  ds.scenes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) ds.scenes.push_back(sample_scene(config, first_id + i));
  return ds;
}

void generate_dataset(const SimConfig& config, int n_train, int n_val,
                      const std::filesystem::path& dir) {
  if (n_train <= 0 || n_val <= 0) throw ConfigError("generate_dataset: counts must be positive");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  save_dataset(generate_split(config, "train", n_train, 0), dir / "train.json.gz");
  save_dataset(generate_split(config, "val", n_val, static_cast<std::uint64_t>(n_train)),
               dir / "val.json.gz");
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  nlohmann::json j = {{"schema", kDatasetSchema},
                      {"split", ds.split},
                      {"config", ds.config},
                      {"scenes", ds.scenes}};
  write_gzip(path, j.dump());
}

Dataset load_dataset(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_gzip(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("dataset " + path.string() + " is not valid JSON: " + e.what());
  }
  const std::string schema = j.value("schema", std::string());
  if (schema != kDatasetSchema)
    throw ConfigError("dataset " + path.string() + " has schema '" + schema + "', expected '" +
                      kDatasetSchema + "'; regenerate it with `bevgraph simulate`");
  Dataset ds;
  ds.split = j.at("split").get<std::string>();
  ds.config = j.at("config").get<SimConfig>();
  ds.scenes = j.at("scenes").get<std::vector<SyntheticScene>>();
  return ds;
}

void to_json(nlohmann::json& j, const SimConfig& c) {
  nlohmann::json classes = nlohmann::json::array();
  for (const ObjectClass& oc : c.classes) {
    classes.push_back({{"name", oc.name}, {"length", oc.length}, {"width", oc.width}, {"height", oc.height}});
  }
  j = {{"min_objects", c.min_objects},
       {"max_objects", c.max_objects},
       {"min_depth", c.min_depth},
       {"max_depth", c.max_depth},
       {"lateral_range", c.lateral_range},
       {"classes", classes},
       {"dim_noise", c.dim_noise},
       {"appearance_noise", c.appearance_noise},
       {"depth_cue_mode", to_string(c.depth_cue)},
       {"depth_cue_noise", c.depth_cue_noise},
       {"edge_cue_noise", c.edge_cue_noise},
       {"jitter_px", c.jitter_px},
       {"camera_height_min", c.camera_height_min},
       {"camera_height_max", c.camera_height_max},
       {"principal_jitter_u", c.principal_jitter_u},
       {"principal_jitter_v", c.principal_jitter_v},
       {"terrain_amplitude", c.terrain_amplitude},
       {"terrain_wavelength_min", c.terrain_wavelength_min},
       {"terrain_wavelength_max", c.terrain_wavelength_max},
       {"max_cluster", c.max_cluster},
       {"cluster_depth_spread", c.cluster_depth_spread},
       {"appearance_dim", c.appearance_dim},
       {"scanline_dim", c.scanline_dim},
       {"max_attempts", c.max_attempts},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SimConfig& c) {
  constexpr const char* w = "sim";
  jsonutil::require_keys(
      j, {"min_objects", "max_objects", "min_depth", "max_depth", "lateral_range", "classes",
          "dim_noise", "appearance_noise", "depth_cue_mode", "depth_cue_noise", "edge_cue_noise",
          "jitter_px", "camera_height_min", "camera_height_max", "principal_jitter_u",
          "principal_jitter_v", "terrain_amplitude", "terrain_wavelength_min", "terrain_wavelength_max", "max_cluster", "cluster_depth_spread", "appearance_dim",
          "scanline_dim", "max_attempts", "seed"},
      w);
  jsonutil::read(j, "min_objects", c.min_objects, w);
  jsonutil::read(j, "max_objects", c.max_objects, w);
  jsonutil::read(j, "min_depth", c.min_depth, w);
  jsonutil::read(j, "max_depth", c.max_depth, w);
  jsonutil::read(j, "lateral_range", c.lateral_range, w);
  if (auto it = j.find("classes"); it != j.end()) {
    c.classes.clear();
    for (const auto& oc : *it) {
      jsonutil::require_keys(oc, {"name", "length", "width", "height"}, "sim.classes[]");
      c.classes.push_back({oc.at("name").get<std::string>(), oc.at("length").get<double>(),
                           oc.at("width").get<double>(), oc.at("height").get<double>()});
    }
  }
  jsonutil::read(j, "dim_noise", c.dim_noise, w);
  jsonutil::read(j, "appearance_noise", c.appearance_noise, w);
  if (auto it = j.find("depth_cue_mode"); it != j.end()) c.depth_cue = depth_cue_from_string(it->get<std::string>());
  jsonutil::read(j, "depth_cue_noise", c.depth_cue_noise, w);
  jsonutil::read(j, "edge_cue_noise", c.edge_cue_noise, w);
  jsonutil::read(j, "jitter_px", c.jitter_px, w);
  jsonutil::read(j, "camera_height_min", c.camera_height_min, w);
  jsonutil::read(j, "camera_height_max", c.camera_height_max, w);
  jsonutil::read(j, "principal_jitter_u", c.principal_jitter_u, w);
  jsonutil::read(j, "principal_jitter_v", c.principal_jitter_v, w);
  jsonutil::read(j, "terrain_amplitude", c.terrain_amplitude, w);
  jsonutil::read(j, "terrain_wavelength_min", c.terrain_wavelength_min, w);
  jsonutil::read(j, "terrain_wavelength_max", c.terrain_wavelength_max, w);
  jsonutil::read(j, "max_cluster", c.max_cluster, w);
  jsonutil::read(j, "cluster_depth_spread", c.cluster_depth_spread, w);
  jsonutil::read(j, "appearance_dim", c.appearance_dim, w);
  jsonutil::read(j, "scanline_dim", c.scanline_dim, w);
  jsonutil::read(j, "max_attempts", c.max_attempts, w);
  jsonutil::read(j, "seed", c.seed, w);
}

void to_json(nlohmann::json& j, const SyntheticScene& s) {
  nlohmann::json objects = nlohmann::json::array();
  for (const SceneObject& o : s.objects) {
    objects.push_back({{"x", o.pose.x},
                       {"z", o.pose.z},
                       {"yaw", o.pose.yaw},
                       {"length", o.pose.length},
                       {"width", o.pose.width},
                       {"height", o.height},
                       {"cls", o.cls}});
  }
  j = {{"id", s.id},
       {"camera", s.camera},
       {"camera_height", s.camera_height},
       {"terrain", {{"amplitude", s.terrain.amplitude}, {"wavelength", s.terrain.wavelength}, {"phase", s.terrain.phase}}},
       {"objects", objects},
       {"boxes", s.boxes},
       {"features", s.features}};
}

void from_json(const nlohmann::json& j, SyntheticScene& s) {
  s.id = j.at("id").get<std::uint64_t>();
  s.camera = j.at("camera").get<CameraModel>();
  s.camera_height = j.at("camera_height").get<double>();
  const auto& t = j.at("terrain");
  s.terrain = {t.at("amplitude").get<double>(), t.at("wavelength").get<double>(), t.at("phase").get<double>()};
  s.objects.clear();
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.pose = {o.at("x").get<double>(), o.at("z").get<double>(), o.at("yaw").get<double>(),
                o.at("length").get<double>(), o.at("width").get<double>()};
    obj.height = o.at("height").get<double>();
    obj.cls = o.at("cls").get<int>();
    s.objects.push_back(obj);
  }
  s.boxes = j.at("boxes").get<std::vector<ImageBox>>();
  s.features = j.at("features").get<std::vector<FeatureTuple>>();
  if (s.boxes.size() != s.objects.size() || s.features.size() != s.objects.size())
    throw ConfigError("scene " + std::to_string(s.id) + ": objects, boxes and features misaligned");
}

void write_gzip(const std::filesystem::path& path, const std::string& data) {
  z_stream zs{};
  // windowBits 15 + 16 selects the gzip wrapper with a zero mtime.
  if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw IoError("zlib: deflateInit2 failed");
  std::string out;
  out.resize(deflateBound(&zs, static_cast<uLong>(data.size())));
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  zs.avail_in = static_cast<uInt>(data.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  const std::size_t written = zs.total_out;
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw IoError("zlib: deflate failed for " + path.string());
  out.resize(written);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::string read_gzip(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw IoError("zlib: inflateInit2 failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  std::string out;
  std::array<char, 1 << 16> buf;
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf.data());
    zs.avail_out = static_cast<uInt>(buf.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IoError("corrupt gzip data in " + path.string());
    }
    out.append(buf.data(), buf.size() - zs.avail_out);
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw IoError("truncated gzip data in " + path.string());
    }
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace bevgraph
