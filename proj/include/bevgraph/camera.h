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

#include <json.hpp>

namespace bevgraph {

// Pinhole intrinsics. The camera is level with the ground: optical axis
// parallel to the ground plane, no roll.
struct CameraModel {
  double fu = 500.0;
  double fv = 500.0;
  double u0 = 400.0;
  double v0 = 300.0;
  int width = 800;
  int height = 600;

  // Throws ConfigError if the intrinsics are inconsistent.
  void validate() const;
  bool operator==(const CameraModel&) const = default;
};

struct PixelPoint {
  double u = 0.0;
  double v = 0.0;
};

struct ImageBox {
  double u_min = 0.0;
  double v_min = 0.0;
  double u_max = 0.0;
  double v_max = 0.0;

  PixelPoint center() const { return {0.5 * (u_min + u_max), 0.5 * (v_min + v_max)}; }
  // Ground contact point of an upright object.
  PixelPoint bottom_center() const { return {0.5 * (u_min + u_max), v_max}; }
  double width() const { return u_max - u_min; }
  double height() const { return v_max - v_min; }

  // Non-degenerate and intersecting the image rectangle.
  bool valid_in(const CameraModel& cam) const;
  bool operator==(const ImageBox&) const = default;
};

// Object footprint in the camera-aligned bird's-eye-view frame: x lateral
// (right), z forward, yaw about the vertical axis.
struct GroundPose {
  double x = 0.0;
  double z = 0.0;
  double yaw = 0.0;
  double length = 0.0;
  double width = 0.0;
  bool operator==(const GroundPose&) const = default;
};

struct BevPoint {
  double x = 0.0;
  double z = 0.0;
};

// How the lateral coordinate of the initial BEV estimate is formed from the
// coarse depth and viewing angle.
enum class LateralMode {
  kTangent,     // x = z0 * tan(alpha)
  kArctangent,  // x = z0 * atan(alpha), the literal printed form
};

// Unscaled coarse depth score d . c, where c runs from the bottom-center of
// the image to the principal point and d from `anchor` to the principal
// point. Larger for objects nearer the bottom edge, i.e. nearer the camera.
double coarse_relative_depth(PixelPoint anchor, const CameraModel& cam);

// Polar angle of the camera ray through image column u; zero at u0.
double viewing_angle(double u, const CameraModel& cam);

// Initial BEV position (x, z0). Throws GeometryError for |alpha| >= pi/2.
BevPoint initial_bev_position(double z0, double alpha,
                              LateralMode mode = LateralMode::kTangent);

// Projects the eight corners of the object's box (footprint on the ground
// plane, `camera_height` below the optical center, extruded to
// `object_height`) and returns their axis-aligned image hull clipped to the
// image. Throws GeometryError if a corner is at or behind the camera or the
// hull misses the image.
ImageBox project_ground_to_image(const GroundPose& pose, double object_height,
                                 double camera_height, const CameraModel& cam);

// Same as project_ground_to_image without clipping.
ImageBox project_ground_to_image_unclipped(const GroundPose& pose, double object_height,
                                           double camera_height, const CameraModel& cam);

// Wraps an angle to [-pi, pi).
double wrap_angle(double a);

void to_json(nlohmann::json& j, const CameraModel& c);
void from_json(const nlohmann::json& j, CameraModel& c);
void to_json(nlohmann::json& j, const ImageBox& b);
void from_json(const nlohmann::json& j, ImageBox& b);

}  // namespace bevgraph
