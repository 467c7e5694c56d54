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
#include "bevgraph/graph.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "bevgraph/errors.h"

namespace bevgraph {

namespace {

bool finite_all(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Symmetric closure of a directed neighbor relation given per-node ranked
// candidates.
template <typename DistFn>
std::vector<Edge> knn_generic(int n, int k, DistFn dist) {
  if (k < 0) throw ConfigError("knn: k must be non-negative");
  if (n < 1) throw ConfigError("knn: need at least one node");
  if (k >= n && k > 0) {
    throw ConfigError("knn: k=" + std::to_string(k) + " requires more than " +
                      std::to_string(k) + " nodes (got " + std::to_string(n) + ")");
  }
  std::set<Edge> edges;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) {
    order.clear();
    for (int j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const double da = dist(i, a);
      const double db = dist(i, b);
      if (da != db) return da < db;
      return a < b;
    });
    for (int r = 0; r < k; ++r) {
      const int j = order[r];
      edges.insert(Edge{std::min(i, j), std::max(i, j)});
    }
  }
  return {edges.begin(), edges.end()};
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(static_cast<int>(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

bool FeatureTuple::all_finite() const {
  return finite_all(bbox_geom) && finite_all(scanline) && finite_all(appearance);
}

std::vector<Edge> SceneGraph::edge_list() const {
  std::vector<Edge> out;
  out.reserve(edges.size());
  for (const auto& e : edges) out.push_back(e.endpoints);
  return out;
}

int SceneGraph::degree(int node) const {
  return static_cast<int>(adjacency.row(node).sum());
}

std::vector<Edge> knn_by_coarse_depth(std::span<const double> depths, int k) {
  return knn_generic(static_cast<int>(depths.size()), k,
                     [&](int i, int j) { return std::abs(depths[i] - depths[j]); });
}

std::vector<Edge> knn_by_position(std::span<const BevPoint> positions, int k) {
  return knn_generic(static_cast<int>(positions.size()), k, [&](int i, int j) {
    const double dx = positions[i].x - positions[j].x;
    const double dz = positions[i].z - positions[j].z;
    return dx * dx + dz * dz;
  });
}

Eigen::MatrixXd incidence_matrix(std::span<const Edge> edges, int num_nodes) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(num_nodes, static_cast<Eigen::Index>(edges.size()));
  std::set<Edge> seen;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const Edge& ed = edges[e];
    if (ed.i < 0 || ed.j < 0 || ed.i >= num_nodes || ed.j >= num_nodes) {
      throw ConfigError("incidence_matrix: edge endpoint out of range");
    }
    if (ed.i == ed.j) throw ConfigError("incidence_matrix: self-loop");
    const Edge canon{std::min(ed.i, ed.j), std::max(ed.i, ed.j)};
    if (!seen.insert(canon).second) throw ConfigError("incidence_matrix: duplicate edge");
    c(ed.i, static_cast<Eigen::Index>(e)) = 1.0;
    c(ed.j, static_cast<Eigen::Index>(e)) = 1.0;
  }
  return c;
}

Eigen::MatrixXd conjugate_adjacency(const Eigen::MatrixXd& incidence) {
  const Eigen::Index e = incidence.cols();
  Eigen::MatrixXd ctc = incidence.transpose() * incidence;
  return ctc - 2.0 * Eigen::MatrixXd::Identity(e, e);
}

std::vector<ConjugatePair> conjugate_pairs(std::span<const Edge> edges,
                                           const Eigen::MatrixXd& conj_adjacency) {
  std::vector<ConjugatePair> pairs;
  const int n = static_cast<int>(edges.size());
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (conj_adjacency(a, b) == 0.0) continue;
      const Edge& ea = edges[a];
      const Edge& eb = edges[b];
      int shared = -1;
      if (ea.i == eb.i || ea.i == eb.j) shared = ea.i;
      if (ea.j == eb.i || ea.j == eb.j) shared = ea.j;
      if (shared < 0) throw ConfigError("conjugate_pairs: adjacency disagrees with edges");
      pairs.push_back({a, b, shared});
    }
  }
  return pairs;
}

ImageBox edge_union_box(const ImageBox& a, const ImageBox& b) {
  return {std::min(a.u_min, b.u_min), std::min(a.v_min, b.v_min), std::max(a.u_max, b.u_max),
          std::max(a.v_max, b.v_max)};
}

std::vector<double> box_geometry_features(const ImageBox& box, const CameraModel& cam) {
  const double w = cam.width;
  const double h = cam.height;
  return {box.u_min / w, box.v_min / h, box.u_max / w, box.v_max / h};
}

std::vector<double> scanline_features(const ImageBox& box, const CameraModel& cam, int bands) {
  std::vector<double> out(static_cast<std::size_t>(std::max(bands, 0)), 0.0);
  const double band_h = static_cast<double>(cam.height) / bands;
  for (int b = 0; b < bands; ++b) {
    const double lo = b * band_h;
    const double hi = lo + band_h;
    const double overlap = std::min(hi, box.v_max) - std::max(lo, box.v_min);
    out[b] = std::clamp(overlap / band_h, 0.0, 1.0);
  }
  return out;
}

RegionFeatureFn default_region_features(std::span<const Detection> detections,
                                        const CameraModel& cam, int scanline_dim) {
  std::vector<Detection> dets(detections.begin(), detections.end());
  return [dets = std::move(dets), cam, scanline_dim](const ImageBox& region, int i, int j) {
    FeatureTuple f;
    f.bbox_geom = box_geometry_features(region, cam);
    f.scanline = scanline_features(region, cam, scanline_dim);
    const auto& ai = dets[i].features.appearance;
    const auto& aj = dets[j].features.appearance;
    f.appearance.resize(ai.size());
    for (std::size_t c = 0; c < ai.size(); ++c) f.appearance[c] = 0.5 * (ai[c] + aj[c]);
    return f;
  };
}

void finalize_structure(SceneGraph& graph) {
  const int n = graph.num_nodes();
  const std::vector<Edge> edges = graph.edge_list();
  graph.adjacency = Eigen::MatrixXd::Zero(n, n);
  for (const Edge& e : edges) {
    graph.adjacency(e.i, e.j) = 1.0;
    graph.adjacency(e.j, e.i) = 1.0;
  }
  graph.incidence = incidence_matrix(edges, n);
  graph.conj_adjacency = conjugate_adjacency(graph.incidence);
  graph.conj_pairs = conjugate_pairs(edges, graph.conj_adjacency);
}

SceneGraph build_graph(std::span<const Detection> detections, const CameraModel& cam,
                       const GraphConfig& config, const RegionFeatureFn& region_features) {
  cam.validate();
  if (detections.empty()) throw ConfigError("build_graph: need at least one detection");
  const int n = static_cast<int>(detections.size());

  SceneGraph g;
  g.nodes.reserve(n);
  std::vector<double> depths;
  std::vector<BevPoint> positions;
  for (const Detection& d : detections) {
    if (!(d.box.u_min < d.box.u_max) || !(d.box.v_min < d.box.v_max)) {
      throw ConfigError("build_graph: degenerate detection box");
    }
    if (!d.features.all_finite()) throw NumericalError("build_graph: non-finite detection feature");
    GraphNode node;
    node.box = d.box;
    node.features = d.features;
    const PixelPoint anchor =
        config.anchor == DepthAnchor::kBottomCenter ? d.box.bottom_center() : d.box.center();
    node.coarse_depth = coarse_relative_depth(anchor, cam);
    node.alpha0 = viewing_angle(d.box.center().u, cam);
    node.position = initial_bev_position(node.coarse_depth, node.alpha0, config.lateral);
    depths.push_back(node.coarse_depth);
    positions.push_back(node.position);
    g.nodes.push_back(std::move(node));
  }

  int k = config.k;
  if (config.clamp_degree) k = std::min(k, n - 1);
  const std::vector<Edge> edges = config.connectivity == Connectivity::kCoarseDepth
                                      ? knn_by_coarse_depth(depths, k)
                                      : knn_by_position(positions, k);
  g.edges.reserve(edges.size());
  for (const Edge& e : edges) {
    GraphEdge ge;
    ge.endpoints = e;
    const BevPoint& pi = g.nodes[e.i].position;
    const BevPoint& pj = g.nodes[e.j].position;
    ge.position = {0.5 * (pi.x + pj.x), 0.5 * (pi.z + pj.z)};
    ge.box = edge_union_box(g.nodes[e.i].box, g.nodes[e.j].box);
    ge.alpha0 = viewing_angle(ge.box.bottom_center().u, cam);
    ge.features = region_features(ge.box, e.i, e.j);
    g.edges.push_back(std::move(ge));
  }
  finalize_structure(g);

  const double cu = cam.u0 - 0.5 * cam.width;
  const double cv = cam.v0 - cam.height;
  g.position_scale = std::max(cu * cu + cv * cv, 1e-12);
  return g;
}

SceneGraph build_graph(std::span<const Detection> detections, const CameraModel& cam,
                       const GraphConfig& config) {
  return build_graph(detections, cam, config,
                     default_region_features(detections, cam, config.scanline_dim));
}

SceneGraph permute_nodes(const SceneGraph& graph, std::span<const int> perm,
                         std::vector<int>* edge_map) {
  const int n = graph.num_nodes();
  if (static_cast<int>(perm.size()) != n) throw ConfigError("permute_nodes: size mismatch");
  SceneGraph out;
  out.position_scale = graph.position_scale;
  out.nodes.resize(n);
  for (int i = 0; i < n; ++i) out.nodes[perm[i]] = graph.nodes[i];

  std::vector<std::pair<Edge, int>> relabeled;
  for (int e = 0; e < graph.num_edges(); ++e) {
    const Edge& old = graph.edges[e].endpoints;
    const int a = perm[old.i];
    const int b = perm[old.j];
    relabeled.push_back({Edge{std::min(a, b), std::max(a, b)}, e});
  }
  std::sort(relabeled.begin(), relabeled.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });
  if (edge_map) edge_map->assign(graph.num_edges(), -1);
  for (std::size_t ne = 0; ne < relabeled.size(); ++ne) {
    GraphEdge ge = graph.edges[relabeled[ne].second];
    ge.endpoints = relabeled[ne].first;
    out.edges.push_back(std::move(ge));
    if (edge_map) (*edge_map)[relabeled[ne].second] = static_cast<int>(ne);
  }
  finalize_structure(out);
  return out;
}

void to_json(nlohmann::json& j, const FeatureTuple& f) {
  j = {{"bbox_geom", f.bbox_geom}, {"scanline", f.scanline}, {"appearance", f.appearance}};
}

void from_json(const nlohmann::json& j, FeatureTuple& f) {
  j.at("bbox_geom").get_to(f.bbox_geom);
  j.at("scanline").get_to(f.scanline);
  j.at("appearance").get_to(f.appearance);
}

nlohmann::json graph_to_json(const SceneGraph& graph) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : graph.nodes) {
    nodes.push_back({{"position", {n.position.x, n.position.z}},
                     {"coarse_depth", n.coarse_depth},
                     {"alpha0", n.alpha0},
                     {"box", n.box},
                     {"features", n.features}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : graph.edges) {
    edges.push_back({{"endpoints", {e.endpoints.i, e.endpoints.j}},
                     {"position", {e.position.x, e.position.z}},
                     {"alpha0", e.alpha0},
                     {"box", e.box},
                     {"features", e.features}});
  }
  return {{"schema", "bevgraph.scene_graph/1"},
          {"position_scale", graph.position_scale},
          {"nodes", std::move(nodes)},
          {"edges", std::move(edges)},
          {"adjacency", matrix_to_json(graph.adjacency)},
          {"incidence", matrix_to_json(graph.incidence)},
          {"conj_adjacency", matrix_to_json(graph.conj_adjacency)}};
}

SceneGraph graph_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "bevgraph.scene_graph/1") {
    throw ConfigError("scene graph: unsupported schema '" + j.value("schema", "") + "'");
  }
  SceneGraph g;
  g.position_scale = j.at("position_scale").get<double>();
  for (const auto& jn : j.at("nodes")) {
    GraphNode n;
    n.position = {jn.at("position")[0].get<double>(), jn.at("position")[1].get<double>()};
    n.coarse_depth = jn.at("coarse_depth").get<double>();
    n.alpha0 = jn.at("alpha0").get<double>();
    n.box = jn.at("box").get<ImageBox>();
    n.features = jn.at("features").get<FeatureTuple>();
    g.nodes.push_back(std::move(n));
  }
  for (const auto& je : j.at("edges")) {
    GraphEdge e;
    e.endpoints = {je.at("endpoints")[0].get<int>(), je.at("endpoints")[1].get<int>()};
    e.position = {je.at("position")[0].get<double>(), je.at("position")[1].get<double>()};
    e.alpha0 = je.at("alpha0").get<double>();
    e.box = je.at("box").get<ImageBox>();
    e.features = je.at("features").get<FeatureTuple>();
    g.edges.push_back(std::move(e));
  }
  finalize_structure(g);
  return g;
}

}  // namespace bevgraph
