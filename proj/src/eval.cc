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
#include "bevgraph/eval.h"

#include <algorithm>
#include <cmath>

#include "bevgraph/errors.h"

namespace bevgraph {

namespace {

int cells_along(double extent, double resolution) {
  return static_cast<int>(std::lround(extent / resolution));
}

}  // namespace

int BevGrid::cols() const { return cells_along(extent_x, resolution); }
int BevGrid::rows() const { return cells_along(extent_z, resolution); }

void BevGrid::validate() const {
  if (!(resolution > 0.0) || !(extent_x > 0.0) || !(extent_z > 0.0))
    throw ConfigError("bev grid: extents and resolution must be positive");
  for (double e : {extent_x, extent_z}) {
    if (std::abs(cells_along(e, resolution) * resolution - e) > 1e-9)
      throw ConfigError("bev grid: extent must be a whole number of cells");
  }
}

BevRaster::BevRaster(const BevGrid& grid)
    : rows_(grid.rows()), cols_(grid.cols()),
      cells_(static_cast<std::size_t>(rows_) * static_cast<std::size_t>(cols_), 0) {}

int BevRaster::count() const {
  return static_cast<int>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

void BevRaster::merge(const BevRaster& other) {
  if (other.rows_ != rows_ || other.cols_ != cols_) throw ConfigError("raster: grid mismatch");
  for (std::size_t k = 0; k < cells_.size(); ++k) cells_[k] |= other.cells_[k];
}

int BevRaster::intersection(const BevRaster& other) const {
  if (other.rows_ != rows_ || other.cols_ != cols_) throw ConfigError("raster: grid mismatch");
  int n = 0;
  for (std::size_t k = 0; k < cells_.size(); ++k) n += cells_[k] & other.cells_[k];
  return n;
}

int BevRaster::union_count(const BevRaster& other) const {
  if (other.rows_ != rows_ || other.cols_ != cols_) throw ConfigError("raster: grid mismatch");
  int n = 0;
  for (std::size_t k = 0; k < cells_.size(); ++k) n += cells_[k] | other.cells_[k];
  return n;
}

BevRaster rasterize_bev_box(const GroundPose& pose, const BevGrid& grid) {
  BevRaster mask(grid);
  if (!(pose.length > 0.0) || !(pose.width > 0.0)) return mask;
  if (!std::isfinite(pose.x) || !std::isfinite(pose.z) || !std::isfinite(pose.yaw) ||
      !std::isfinite(pose.length) || !std::isfinite(pose.width))
    return mask;
  const double s = std::sin(pose.yaw), c = std::cos(pose.yaw);
  const double hl = 0.5 * pose.length, hw = 0.5 * pose.width;
  const double rx = std::abs(hl * s) + std::abs(hw * c);
  const double rz = std::abs(hl * c) + std::abs(hw * s);
  const double x0 = -0.5 * grid.extent_x;
  const int c_lo = std::max(0, static_cast<int>(std::floor((pose.x - rx - x0) / grid.resolution)));
  const int c_hi = std::min(grid.cols() - 1, static_cast<int>(std::floor((pose.x + rx - x0) / grid.resolution)));
  const int r_lo = std::max(0, static_cast<int>(std::floor((pose.z - rz) / grid.resolution)));
  const int r_hi = std::min(grid.rows() - 1, static_cast<int>(std::floor((pose.z + rz) / grid.resolution)));
  const double tol = 1e-9;
  for (int r = r_lo; r <= r_hi; ++r) {
    const double dz = grid.cell_z(r) - pose.z;
    for (int col = c_lo; col <= c_hi; ++col) {
      const double dx = grid.cell_x(col) - pose.x;
      // Footprint axes: length along (sin yaw, cos yaw), width along (cos yaw, -sin yaw).
      const double a = dx * s + dz * c;
      const double b = dx * c - dz * s;
      if (std::abs(a) <= hl + tol && std::abs(b) <= hw + tol) mask.set(r, col);
    }
  }
  return mask;
}

std::optional<double> mask_iou(const BevRaster& a, const BevRaster& b) {
  const int u = a.union_count(b);
  if (u == 0) return std::nullopt;
  return static_cast<double>(a.intersection(b)) / u;
}

IouResult iou(std::span<const SceneBoxes> scenes, int num_classes, const BevGrid& grid,
              const std::vector<std::vector<bool>>* keep) {
  grid.validate();
  if (keep && keep->size() != scenes.size()) throw ConfigError("iou: keep mask size mismatch");
  std::vector<double> sum(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<int> n(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const SceneBoxes& sc = scenes[s];
    if (sc.pred.size() != sc.gt.size()) throw ConfigError("iou: predictions not aligned with ground truth");
    std::vector<BevRaster> gt(static_cast<std::size_t>(num_classes), BevRaster(grid));
    std::vector<BevRaster> pr(static_cast<std::size_t>(num_classes), BevRaster(grid));
    for (std::size_t i = 0; i < sc.gt.size(); ++i) {
      if (keep && !(*keep)[s][i]) continue;
      const int gc = sc.gt[i].cls, pc = sc.pred[i].cls;
      if (gc >= 0 && gc < num_classes) gt[gc].merge(rasterize_bev_box(sc.gt[i].pose, grid));
      if (pc >= 0 && pc < num_classes) pr[pc].merge(rasterize_bev_box(sc.pred[i].pose, grid));
    }
    for (int c = 0; c < num_classes; ++c) {
      if (auto v = mask_iou(pr[c], gt[c])) {
        sum[c] += *v;
        ++n[c];
      }
    }
  }
  IouResult out;
  double total = 0.0;
  int defined = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (n[c] == 0) {
      out.per_class.push_back(std::nullopt);
      continue;
    }
    out.per_class.push_back(sum[c] / n[c]);
    total += sum[c] / n[c];
    ++defined;
  }
  if (defined > 0) out.mean = total / defined;
  return out;
}

std::vector<std::optional<double>> iou_by_distance(std::span<const SceneBoxes> scenes,
                                                   int num_classes, const BevGrid& grid,
                                                   std::span<const double> edges) {
  if (edges.size() < 2) throw ConfigError("iou_by_distance: need at least one bin");
  std::vector<std::optional<double>> out;
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    std::vector<std::vector<bool>> keep;
    bool any = false;
    for (const SceneBoxes& sc : scenes) {
      std::vector<bool> k;
      for (const BevObject& o : sc.gt) {
        const bool in = o.pose.z >= edges[b] && o.pose.z < edges[b + 1];
        k.push_back(in);
        any = any || in;
      }
      keep.push_back(std::move(k));
    }
    out.push_back(any ? iou(scenes, num_classes, grid, &keep).mean : std::nullopt);
  }
  return out;
}

double localization_error(std::span<const BevPoint> pred, std::span<const BevPoint> gt) {
  if (pred.size() != gt.size()) throw ConfigError("localization_error: size mismatch");
  if (pred.empty()) throw ConfigError("localization_error: no objects");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::hypot(pred[i].x - gt[i].x, pred[i].z - gt[i].z);
  return s / static_cast<double>(pred.size());
}

std::vector<std::optional<double>> localization_error_by_distance(std::span<const BevPoint> pred,
                                                                  std::span<const BevPoint> gt,
                                                                  std::span<const double> edges) {
  if (pred.size() != gt.size()) throw ConfigError("localization_error: size mismatch");
  std::vector<std::optional<double>> out;
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i].z >= edges[b] && gt[i].z < edges[b + 1]) {
        s += std::hypot(pred[i].x - gt[i].x, pred[i].z - gt[i].z);
        ++n;
      }
    }
    out.push_back(n > 0 ? std::optional<double>(s / n) : std::nullopt);
  }
  return out;
}

std::vector<double> distance_bin_edges(double extent, double step) {
  if (!(step > 0.0) || !(extent > 0.0)) throw ConfigError("distance bins: extent and step must be positive");
  std::vector<double> e;
  const int n = static_cast<int>(std::lround(extent / step));
  for (int i = 0; i <= n; ++i) e.push_back(i * step);
  return e;
}

}  // namespace bevgraph
