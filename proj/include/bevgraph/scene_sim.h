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
#pragma once

// Synthetic stand-in for an image frontend. Scenes are sampled in the BEV
// frame of a level pinhole camera, projected to image boxes, and given
// feature tuples whose depth cues are controlled by DepthCueMode.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "bevgraph/camera.h"
#include "bevgraph/graph.h"

namespace bevgraph {

enum class DepthCueMode {
  kFull,          // appearance carries a noisy log-depth channel
  kGeometryOnly,  // no depth channel; depth must come from geometry and context
  kNone,          // appearance is class prototype plus isotropic noise only
};

std::string to_string(DepthCueMode m);
DepthCueMode depth_cue_from_string(const std::string& s);

struct ObjectClass {
  std::string name;
  double length = 0.0;
  double width = 0.0;
  double height = 0.0;
};

struct SimConfig {
  int min_objects = 5;
  int max_objects = 12;
  double min_depth = 4.0;
  double max_depth = 49.0;
  double lateral_range = 22.0;  // |x| bound in meters
  std::vector<ObjectClass> classes = {
      {"car", 4.5, 1.9, 1.6}, {"truck", 8.0, 2.6, 3.2}, {"pedestrian", 0.7, 0.7, 1.75}, {"cone", 0.45, 0.45, 0.8}};
  double dim_noise = 0.05;         // relative, per dimension
  double appearance_noise = 0.25;  // per channel
  DepthCueMode depth_cue = DepthCueMode::kFull;
  double depth_cue_noise = 0.15;   // std of the node log-depth channel
  double edge_cue_noise = 0.15;    // std of the edge log-depth channel
  double jitter_px = 2.0;
  double camera_height_min = 1.55;
  double camera_height_max = 1.75;
  double principal_jitter_u = 1.0;   // px, uniform
  double principal_jitter_v = 12.0;  // px, uniform
  // Ground elevation e(z) = A sin(2 pi z / lambda + phi), A ~ U[0, amplitude],
  // lambda ~ U[wavelength_min, wavelength_max]; 0 amplitude is flat ground.
  double terrain_amplitude = 0.2;
  double terrain_wavelength_min = 80.0;
  double terrain_wavelength_max = 120.0;
  int max_cluster = 4;            // objects sharing a depth row
  double cluster_depth_spread = 0.4;  // m
  int appearance_dim = 16;
  int scanline_dim = 8;
  int max_attempts = 1000;
  std::uint64_t seed = 7;

  // Throws ConfigError on empty ranges, depths outside (1, 50], bad dims, or
  // terrain steep enough to break the depth ordering of box bottoms.
  void validate() const;
  int num_classes() const { return static_cast<int>(classes.size()); }
};

struct SceneObject {
  GroundPose pose;
  int cls = 0;
  double height = 0.0;
  bool operator==(const SceneObject&) const = default;
};

struct Terrain {
  double amplitude = 0.0;
  double wavelength = 1.0;
  double phase = 0.0;

  double elevation(double z) const;
  bool operator==(const Terrain&) const = default;
};

struct SyntheticScene {
  std::uint64_t id = 0;
  CameraModel camera;
  double camera_height = 0.0;  // above the ground at z = 0 elevation
  Terrain terrain;
  std::vector<SceneObject> objects;
  std::vector<ImageBox> boxes;         // ground-truth projections
  std::vector<FeatureTuple> features;  // aligned with objects

  bool operator==(const SyntheticScene&) const = default;
};

// Channel layout of the appearance vector.
inline constexpr int kDepthChannel = 13;
inline constexpr int kOrientCosChannel = 14;
inline constexpr int kOrientSinChannel = 15;

// Fixed per-class appearance prototype, independent of the scene seed.
std::vector<double> class_prototype(int cls, int dim);

// Deterministic in (config, scene_id). Throws GeometryError when placement
// fails within config.max_attempts draws.
SyntheticScene sample_scene(const SimConfig& config, std::uint64_t scene_id);

// Gaussian corner jitter clipped to the image; geometry and scanline states
// are recomputed from the jittered box and appearance carried over.
// Detection i corresponds to object i.
std::vector<Detection> make_detections(const SyntheticScene& scene, double jitter_px,
                                       std::mt19937_64& rng, int scanline_dim);

// Edge region features for a scene: geometry of the region box, appearance
// averaged over the endpoints plus deterministic per-edge noise, and (in
// kFull) a noisy log-depth reading taken uniformly between the endpoint depths.
RegionFeatureFn scene_region_features(const SyntheticScene& scene,
                                      const std::vector<Detection>& detections,
                                      const SimConfig& config);

// Observation angle of object i: viewing angle of its centroid plus yaw.
double observation_angle(const SceneObject& obj);

struct Dataset {
  SimConfig config;
  std::string split;
  std::vector<SyntheticScene> scenes;
};

// Train ids are [0, n_train), val ids [n_train, n_train + n_val); splits
// therefore never share a scene seed.
Dataset generate_split(const SimConfig& config, const std::string& split, int count,
                       std::uint64_t first_id);

// Writes <dir>/train.json.gz and <dir>/val.json.gz.
void generate_dataset(const SimConfig& config, int n_train, int n_val,
                      const std::filesystem::path& dir);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const SimConfig& c);
void from_json(const nlohmann::json& j, SimConfig& c);
void to_json(nlohmann::json& j, const SyntheticScene& s);
void from_json(const nlohmann::json& j, SyntheticScene& s);

// gzip helpers; the header carries no timestamp so output is reproducible.
void write_gzip(const std::filesystem::path& path, const std::string& data);
std::string read_gzip(const std::filesystem::path& path);

}  // namespace bevgraph
