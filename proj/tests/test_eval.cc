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
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "bevgraph/errors.h"
#include "bevgraph/eval.h"

using namespace bevgraph;

namespace {

// Independent point-in-rectangle test through corner cross products.
bool inside_footprint(const GroundPose& p, double x, double z) {
  const double s = std::sin(p.yaw), c = std::cos(p.yaw);
  const double hl = 0.5 * p.length, hw = 0.5 * p.width;
  const double cx[4] = {p.x + hl * s + hw * c, p.x + hl * s - hw * c, p.x - hl * s - hw * c, p.x - hl * s + hw * c};
  const double cz[4] = {p.z + hl * c - hw * s, p.z + hl * c + hw * s, p.z - hl * c + hw * s, p.z - hl * c - hw * s};
  int pos = 0, neg = 0;
  for (int e = 0; e < 4; ++e) {
    const int f = (e + 1) % 4;
    const double cr = (cx[f] - cx[e]) * (z - cz[e]) - (cz[f] - cz[e]) * (x - cx[e]);
    if (cr > 1e-9) ++pos;
    if (cr < -1e-9) ++neg;
  }
  return pos == 0 || neg == 0;
}

std::set<std::pair<int, int>> brute_cells(const GroundPose& p, const BevGrid& g) {
  std::set<std::pair<int, int>> out;
  for (int r = 0; r < g.rows(); ++r)
    for (int c = 0; c < g.cols(); ++c)
      if (inside_footprint(p, g.cell_x(c), g.cell_z(r))) out.insert({r, c});
  return out;
}

GroundPose box(double x, double z, double yaw, double l, double w) { return {x, z, yaw, l, w}; }

}  // namespace

TEST_CASE("rasterizer examples") {
  const BevGrid g;
  CHECK(g.cols() == 100);
  CHECK(g.rows() == 100);
  // 2 m square with edges on cell boundaries.
  CHECK(rasterize_bev_box(box(1.0, 11.0, 0.0, 2.0, 2.0), g).count() == 16);
  CHECK(rasterize_bev_box(box(1.0, 11.0, 0.0, 0.0, 2.0), g).empty());
  CHECK(rasterize_bev_box(box(1.0, 11.0, 0.0, 2.0, 0.0), g).empty());
  CHECK(rasterize_bev_box(box(NAN, 11.0, 0.0, 2.0, 2.0), g).empty());
  CHECK(rasterize_bev_box(box(100.0, 11.0, 0.0, 2.0, 2.0), g).empty());
  CHECK(rasterize_bev_box(box(0.0, -10.0, 0.0, 2.0, 2.0), g).empty());
  for (double yaw : {0.0, 0.3, 1.1})
    CHECK(rasterize_bev_box(box(3.1, 20.7, yaw, 2.4, 2.4), g) ==
          rasterize_bev_box(box(3.1, 20.7, yaw + std::numbers::pi / 2, 2.4, 2.4), g));
  // Length runs along z at yaw 0.
  const BevRaster tall = rasterize_bev_box(box(0.25, 10.0, 0.0, 4.0, 0.5), g);
  CHECK(tall.count() == 8);
  CHECK(tall.at(18, 50));
  CHECK(tall.at(21, 50));
  CHECK_FALSE(tall.at(20, 51));
}

TEST_CASE("rasterizer matches a brute-force point test") {
  const BevGrid g;
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> ux(-24, 24), uz(0, 50), uy(-std::numbers::pi, std::numbers::pi),
      ud(0.3, 8.0);
  for (int t = 0; t < 60; ++t) {
    const GroundPose p = box(ux(rng), uz(rng), uy(rng), ud(rng), ud(rng));
    const BevRaster m = rasterize_bev_box(p, g);
    const auto cells = brute_cells(p, g);
    CHECK(m.count() == static_cast<int>(cells.size()));
    for (const auto& [r, c] : cells) CHECK(m.at(r, c));
  }
}

TEST_CASE("rasterized area within the perimeter-cell bound") {
  const BevGrid g;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(-15, 15), uz(10, 40), ud(0.5, 9.0), uy(-std::numbers::pi, std::numbers::pi);
  for (int t = 0; t < 100; ++t) {
    const double yaw = t < 50 ? 0.0 : uy(rng);
    const GroundPose p = box(ux(rng), uz(rng), yaw, ud(rng), ud(rng));
    const double cells = p.length * p.width / (g.resolution * g.resolution);
    const double perimeter_cells = 2 * (p.length + p.width) / g.resolution;
    CAPTURE(t);
    CHECK(std::abs(rasterize_bev_box(p, g).count() - cells) <= perimeter_cells);
  }
}

TEST_CASE("grid") {
  BevGrid g;
  CHECK_NOTHROW(g.validate());
  g.resolution = 0.3;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g.resolution = 0.0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  BevRaster a(BevGrid{}), b(BevGrid{10, 10, 0.5});
  CHECK_THROWS_AS(a.merge(b), ConfigError);
  CHECK(BevGrid{}.cell_x(0) == doctest::Approx(-24.75));
  CHECK(BevGrid{}.cell_z(99) == doctest::Approx(49.75));
}

TEST_CASE("mask IoU") {
  const BevGrid g;
  const BevRaster m = rasterize_bev_box(box(0, 20, 0.4, 3, 2), g);
  CHECK(mask_iou(m, m).value() == 1.0);
  const BevRaster far = rasterize_bev_box(box(10, 40, 0.0, 3, 2), g);
  CHECK(mask_iou(m, far).value() == 0.0);
  CHECK_FALSE(mask_iou(BevRaster(g), BevRaster(g)).has_value());
  // 2x2 m gt, prediction on its left half.
  const BevRaster gt = rasterize_bev_box(box(1, 11, 0, 2, 2), g);
  const BevRaster half = rasterize_bev_box(box(0.5, 11, 0, 2, 1), g);
  CHECK(half.count() == 8);
  CHECK(mask_iou(half, gt).value() == 0.5);
}

TEST_CASE("scene IoU: per class union, scene average, undefined classes skipped") {
  const BevGrid g;
  SceneBoxes s1;
  s1.gt = {{box(1, 11, 0, 2, 2), 0}, {box(-5, 30, 0, 2, 2), 1}};
  s1.pred = {{box(0.5, 11, 0, 2, 1), 0}, {box(-5, 30, 0, 2, 2), 1}};
  SceneBoxes s2;
  s2.gt = {{box(1, 11, 0, 2, 2), 0}};
  s2.pred = {{box(1, 11, 0, 2, 2), 0}};
  const std::vector<SceneBoxes> scenes = {s1, s2};
  const IouResult r = iou(scenes, 3, g);
  CHECK(r.per_class[0].value() == doctest::Approx(0.75));
  CHECK(r.per_class[1].value() == 1.0);
  CHECK_FALSE(r.per_class[2].has_value());
  CHECK(r.mean.value() == doctest::Approx(0.875));

  const std::vector<SceneBoxes> one = {s1};
  const std::vector<double> all = {0, 50};
  CHECK(iou_by_distance(one, 3, g, all)[0].value() == doctest::Approx(iou(one, 3, g).mean.value()));
  const std::vector<double> bins = distance_bin_edges(50, 10);
  const auto by = iou_by_distance(one, 3, g, bins);
  REQUIRE(by.size() == 5);
  CHECK(by[1].value() == doctest::Approx(0.5));
  CHECK(by[3].value() == 1.0);
  CHECK_FALSE(by[0].has_value());
  CHECK_FALSE(by[2].has_value());
  CHECK_FALSE(by[4].has_value());

  SceneBoxes bad = s1;
  bad.pred.pop_back();
  const std::vector<SceneBoxes> mis = {bad};
  CHECK_THROWS_AS(iou(mis, 3, g), ConfigError);
}

TEST_CASE("iou_by_distance matches a brute-force recount") {
  const BevGrid g;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ux(-20, 20), uz(2, 48), uy(-3, 3), ud(0.5, 5), jit(-0.7, 0.7);
  std::uniform_int_distribution<int> cls(0, 2), cnt(3, 8);
  std::vector<SceneBoxes> scenes(25);
  for (auto& s : scenes) {
    const int n = cnt(rng);
    for (int i = 0; i < n; ++i) {
      const GroundPose p = box(ux(rng), uz(rng), uy(rng), ud(rng), ud(rng));
      const int c = cls(rng);
      s.gt.push_back({p, c});
      s.pred.push_back({box(p.x + jit(rng), p.z + jit(rng), p.yaw + jit(rng), p.length, p.width), cls(rng)});
    }
  }
  const std::vector<double> edges = distance_bin_edges(50, 10);
  const auto got = iou_by_distance(scenes, 3, g, edges);
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    double sum_c[3] = {0, 0, 0};
    int n_c[3] = {0, 0, 0};
    for (const auto& s : scenes) {
      for (int c = 0; c < 3; ++c) {
        std::set<std::pair<int, int>> gt, pr;
        for (std::size_t i = 0; i < s.gt.size(); ++i) {
          if (!(s.gt[i].pose.z >= edges[b] && s.gt[i].pose.z < edges[b + 1])) continue;
          if (s.gt[i].cls == c)
            for (auto cell : brute_cells(s.gt[i].pose, g)) gt.insert(cell);
          if (s.pred[i].cls == c)
            for (auto cell : brute_cells(s.pred[i].pose, g)) pr.insert(cell);
        }
        std::set<std::pair<int, int>> uni = gt;
        uni.insert(pr.begin(), pr.end());
        if (uni.empty()) continue;
        int inter = 0;
        for (auto cell : pr) inter += gt.count(cell);
        sum_c[c] += static_cast<double>(inter) / uni.size();
        ++n_c[c];
      }
    }
    double total = 0;
    int defined = 0;
    for (int c = 0; c < 3; ++c)
      if (n_c[c] > 0) {
        total += sum_c[c] / n_c[c];
        ++defined;
      }
    CAPTURE(b);
    REQUIRE(got[b].has_value());
    CHECK(*got[b] == doctest::Approx(total / defined).epsilon(1e-12));
  }
}

TEST_CASE("localization error") {
  const std::vector<BevPoint> gt = {{0, 5}, {1, 12}, {-2, 35}};
  CHECK(localization_error(gt, gt) == 0.0);
  std::vector<BevPoint> shifted = gt;
  for (auto& p : shifted) p.z += 1.0;
  CHECK(localization_error(shifted, gt) == doctest::Approx(1.0));
  // Offsets (3, 4), (0, -2), (1, 0): errors 5, 2, 1.
  const std::vector<BevPoint> mixed = {{3, 9}, {1, 10}, {-1, 35}};
  CHECK(localization_error(mixed, gt) == doctest::Approx(8.0 / 3.0));
  const auto by = localization_error_by_distance(mixed, gt, distance_bin_edges(50, 10));
  REQUIRE(by.size() == 5);
  CHECK(by[0].value() == doctest::Approx(5.0));
  CHECK(by[1].value() == doctest::Approx(2.0));
  CHECK_FALSE(by[2].has_value());
  CHECK(by[3].value() == doctest::Approx(1.0));
  CHECK_FALSE(by[4].has_value());
  CHECK_THROWS_AS(localization_error(std::vector<BevPoint>{}, std::vector<BevPoint>{}), ConfigError);
  CHECK_THROWS_AS(localization_error(mixed, std::vector<BevPoint>{{0, 1}}), ConfigError);
}

TEST_CASE("distance bin edges") {
  CHECK(distance_bin_edges(50, 5).size() == 11);
  CHECK(distance_bin_edges(50, 10) == std::vector<double>{0, 10, 20, 30, 40, 50});
  CHECK_THROWS_AS(distance_bin_edges(50, 0), ConfigError);
}
