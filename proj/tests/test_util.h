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

// Shared fixtures for the unit tests.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "bevgraph/graph.h"
#include "bevgraph/scene_sim.h"

namespace bevgraph::testing {

// Random simple graph on n nodes with edge probability p, sorted, i < j.
inline std::vector<Edge> random_edges(int n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (coin(rng)) edges.push_back({i, j});
  return edges;
}

inline std::vector<int> random_permutation(int n, std::mt19937_64& rng) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Graph of a simulator scene with n objects (ground-truth boxes), k clamped.
inline SceneGraph sim_graph(std::uint64_t id, int n, int k, SimConfig sim = {}) {
  sim.min_objects = sim.max_objects = n;
  const SyntheticScene s = sample_scene(sim, id);
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < s.objects.size(); ++i) dets.push_back({s.boxes[i], s.features[i]});
  GraphConfig g;
  g.k = k;
  g.clamp_degree = true;
  g.scanline_dim = sim.scanline_dim;
  return build_graph(dets, s.camera, g, scene_region_features(s, dets, sim));
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace bevgraph::testing
