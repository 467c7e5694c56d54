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

// BEV occupancy rasters, IoU and centroid-error metrics.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bevgraph/camera.h"

namespace bevgraph {

// Forward range [0, extent_z], lateral range [-extent_x/2, extent_x/2].
// Row r covers z in [r, r+1) * resolution; column c covers x from the left edge.
struct BevGrid {
  double extent_x = 50.0;
  double extent_z = 50.0;
  double resolution = 0.5;

  int cols() const;
  int rows() const;
  // Throws ConfigError unless both extents are integer multiples of the resolution.
  void validate() const;
  double cell_x(int c) const { return -0.5 * extent_x + (c + 0.5) * resolution; }
  double cell_z(int r) const { return (r + 0.5) * resolution; }
};

class BevRaster {
 public:
  BevRaster() = default;
  explicit BevRaster(const BevGrid& grid);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool at(int r, int c) const { return cells_[static_cast<std::size_t>(r) * cols_ + c] != 0; }
  void set(int r, int c) { cells_[static_cast<std::size_t>(r) * cols_ + c] = 1; }
  int count() const;
  bool empty() const { return count() == 0; }
  void merge(const BevRaster& other);

  int intersection(const BevRaster& other) const;
  int union_count(const BevRaster& other) const;
  bool operator==(const BevRaster&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

// Cells whose centers lie inside the yaw-rotated footprint (boundary
// inclusive). Zero-area footprints and non-finite poses give an empty mask.
BevRaster rasterize_bev_box(const GroundPose& pose, const BevGrid& grid);

// |a & b| / |a | b|; nullopt when both are empty.
std::optional<double> mask_iou(const BevRaster& a, const BevRaster& b);

struct BevObject {
  GroundPose pose;
  int cls = 0;
};

// Index-aligned ground truth and predictions of one scene.
struct SceneBoxes {
  std::vector<BevObject> gt;
  std::vector<BevObject> pred;
};

struct IouResult {
  std::vector<std::optional<double>> per_class;
  std::optional<double> mean;  // over classes with a defined value
};

// Per class: IoU of the union of that class's predicted boxes against the
// union of its ground-truth boxes, per scene, averaged over the scenes where
// it is defined. `keep` (optional, per scene per object) restricts both sides
// to a subset of objects.
IouResult iou(std::span<const SceneBoxes> scenes, int num_classes, const BevGrid& grid,
              const std::vector<std::vector<bool>>* keep = nullptr);

// Bin b holds objects with gt z in [edges[b], edges[b+1]). Empty bins are nullopt.
std::vector<std::optional<double>> iou_by_distance(std::span<const SceneBoxes> scenes,
                                                   int num_classes, const BevGrid& grid,
                                                   std::span<const double> edges);

// Mean Euclidean distance over index-aligned points. Throws on size mismatch
// or empty input.
double localization_error(std::span<const BevPoint> pred, std::span<const BevPoint> gt);

std::vector<std::optional<double>> localization_error_by_distance(std::span<const BevPoint> pred,
                                                                  std::span<const BevPoint> gt,
                                                                  std::span<const double> edges);

// 0, step, 2 step, ..., extent.
std::vector<double> distance_bin_edges(double extent, double step);

}  // namespace bevgraph
