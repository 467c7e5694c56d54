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
#include "bevgraph/camera.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "bevgraph/errors.h"

namespace bevgraph {

namespace {
// Corners closer than this to the image plane are treated as behind.
constexpr double kMinCornerDepth = 1e-3;
}  // namespace

void CameraModel::validate() const {
  if (!(fu > 0.0) || !(fv > 0.0)) {
    throw ConfigError("camera: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw ConfigError("camera: image size must be positive");
  }
  if (!(u0 > 0.0 && u0 < width) || !(v0 > 0.0 && v0 < height)) {
    throw ConfigError("camera: principal point must lie strictly inside the image");
  }
}

bool ImageBox::valid_in(const CameraModel& cam) const {
  if (!(u_min < u_max) || !(v_min < v_max)) return false;
  return u_max > 0.0 && v_max > 0.0 && u_min < cam.width && v_min < cam.height;
}

double coarse_relative_depth(PixelPoint anchor, const CameraModel& cam) {
  const double cu = cam.u0 - 0.5 * cam.width;
  const double cv = cam.v0 - cam.height;
  const double du = cam.u0 - anchor.u;
  const double dv = cam.v0 - anchor.v;
  return du * cu + dv * cv;
}

double viewing_angle(double u, const CameraModel& cam) {
  return std::atan((u - cam.u0) / cam.fu);
}

BevPoint initial_bev_position(double z0, double alpha, LateralMode mode) {
  if (!(std::abs(alpha) < 0.5 * std::numbers::pi)) {
    throw GeometryError("initial_bev_position: |alpha| must be below pi/2");
  }
  const double lateral = mode == LateralMode::kTangent ? std::tan(alpha) : std::atan(alpha);
  return {z0 * lateral, z0};
}

ImageBox project_ground_to_image_unclipped(const GroundPose& pose, double object_height,
                                           double camera_height, const CameraModel& cam) {
  if (!(pose.z > 0.0)) {
    throw GeometryError("project_ground_to_image: object must be in front of the camera");
  }
  const double c = std::cos(pose.yaw);
  const double s = std::sin(pose.yaw);
  const double hl = 0.5 * pose.length;
  const double hw = 0.5 * pose.width;
  // Yaw rotates the length axis from +z toward +x.
  const std::array<std::array<double, 2>, 4> local = {{{hl, hw}, {hl, -hw}, {-hl, hw}, {-hl, -hw}}};
  ImageBox box{1e300, 1e300, -1e300, -1e300};
  for (const auto& [a, b] : local) {
    const double x = pose.x + a * s + b * c;
    const double z = pose.z + a * c - b * s;
    if (z <= kMinCornerDepth) {
      throw GeometryError("project_ground_to_image: footprint corner behind the camera");
    }
    const double u = cam.u0 + cam.fu * x / z;
    // Image v grows downward; the ground sits camera_height below the axis.
    const double v_ground = cam.v0 + cam.fv * camera_height / z;
    const double v_top = cam.v0 + cam.fv * (camera_height - object_height) / z;
    box.u_min = std::min(box.u_min, u);
    box.u_max = std::max(box.u_max, u);
    box.v_min = std::min({box.v_min, v_ground, v_top});
    box.v_max = std::max({box.v_max, v_ground, v_top});
  }
  return box;
}

ImageBox project_ground_to_image(const GroundPose& pose, double object_height,
                                 double camera_height, const CameraModel& cam) {
  const ImageBox raw = project_ground_to_image_unclipped(pose, object_height, camera_height, cam);
  if (!raw.valid_in(cam)) {
    throw GeometryError("project_ground_to_image: projected box lies outside the image");
  }
  ImageBox clipped{std::max(raw.u_min, 0.0), std::max(raw.v_min, 0.0),
                   std::min(raw.u_max, static_cast<double>(cam.width)),
                   std::min(raw.v_max, static_cast<double>(cam.height))};
  return clipped;
}

double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double w = std::fmod(a + std::numbers::pi, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  w -= std::numbers::pi;
  // fmod can land exactly on +pi after the shift for inputs like -pi - 2pi*k.
  if (w >= std::numbers::pi) w -= kTwoPi;
  return w;
}

void to_json(nlohmann::json& j, const CameraModel& c) {
  j = {{"fu", c.fu}, {"fv", c.fv}, {"u0", c.u0}, {"v0", c.v0},
       {"width", c.width}, {"height", c.height}};
}

void from_json(const nlohmann::json& j, CameraModel& c) {
  j.at("fu").get_to(c.fu);
  j.at("fv").get_to(c.fv);
  j.at("u0").get_to(c.u0);
  j.at("v0").get_to(c.v0);
  j.at("width").get_to(c.width);
  j.at("height").get_to(c.height);
}

void to_json(nlohmann::json& j, const ImageBox& b) {
  j = nlohmann::json::array({b.u_min, b.v_min, b.u_max, b.v_max});
}

void from_json(const nlohmann::json& j, ImageBox& b) {
  if (!j.is_array() || j.size() != 4) throw ConfigError("image box must be a 4-array");
  b = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace bevgraph
