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

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "bevgraph/camera.h"

namespace bevgraph {

// Image feature states of one node or edge: normalized box geometry,
// vertical scanline descriptor and appearance vector.
struct FeatureTuple {
  std::vector<double> bbox_geom;
  std::vector<double> scanline;
  std::vector<double> appearance;

  bool all_finite() const;
  bool operator==(const FeatureTuple&) const = default;
};

struct Detection {
  ImageBox box;
  FeatureTuple features;
};

// Undirected edge, i < j.
struct Edge {
  int i = 0;
  int j = 0;
  auto operator<=>(const Edge&) const = default;
};

struct GraphNode {
  BevPoint position;  // initial BEV estimate (unscaled)
  FeatureTuple features;
  double coarse_depth = 0.0;
  double alpha0 = 0.0;
  ImageBox box;
};

struct GraphEdge {
  Edge endpoints;
  BevPoint position;  // midpoint of the endpoint positions
  FeatureTuple features;
  double alpha0 = 0.0;  // viewing angle of the region's bottom-center column
  ImageBox box;         // union of the endpoint boxes
};

// Two edges adjacent in the conjugate graph and the node they share.
struct ConjugatePair {
  int a = 0;
  int b = 0;
  int shared = 0;
};

struct SceneGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  Eigen::MatrixXd adjacency;       // N x N, 0/1
  Eigen::MatrixXd incidence;       // N x E, 0/1
  Eigen::MatrixXd conj_adjacency;  // E x E, 0/1
  std::vector<ConjugatePair> conj_pairs;
  // Positions are divided by this before being lifted into embeddings; the
  // squared length of the bottom-center-to-principal-point vector.
  double position_scale = 1.0;

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }
  std::vector<Edge> edge_list() const;
  int degree(int node) const;
};

enum class Connectivity {
  kCoarseDepth,   // kNN on the scalar coarse depth
  kBevPosition,   // kNN on the 2D initial BEV positions
};

enum class DepthAnchor {
  kBottomCenter,  // ground contact point of the box
  kBoxCenter,
};

struct GraphConfig {
  int k = 3;
  Connectivity connectivity = Connectivity::kCoarseDepth;
  DepthAnchor anchor = DepthAnchor::kBottomCenter;
  LateralMode lateral = LateralMode::kTangent;
  // Use min(k, N - 1) instead of rejecting k >= N.
  bool clamp_degree = false;
  int scanline_dim = 8;
};

// Feature states for an arbitrary image region spanning nodes i and j.
using RegionFeatureFn = std::function<FeatureTuple(const ImageBox& region, int i, int j)>;

// Symmetric closure of each node's k nearest neighbors by |depth_i - depth_j|,
// ties toward the smaller index. Sorted, i < j. Throws ConfigError if k >= N.
std::vector<Edge> knn_by_coarse_depth(std::span<const double> depths, int k);

// Same on Euclidean distance between 2D positions.
std::vector<Edge> knn_by_position(std::span<const BevPoint> positions, int k);

// N x E; column order equals edge order. Rejects duplicates and bad endpoints.
Eigen::MatrixXd incidence_matrix(std::span<const Edge> edges, int num_nodes);

// A^e = C^T C - 2I.
Eigen::MatrixXd conjugate_adjacency(const Eigen::MatrixXd& incidence);

std::vector<ConjugatePair> conjugate_pairs(std::span<const Edge> edges,
                                           const Eigen::MatrixXd& conj_adjacency);

ImageBox edge_union_box(const ImageBox& a, const ImageBox& b);

// Normalized box (u_min/W, v_min/H, u_max/W, v_max/H).
std::vector<double> box_geometry_features(const ImageBox& box, const CameraModel& cam);

// Fraction of each of `bands` horizontal image bands covered by the box's
// vertical extent.
std::vector<double> scanline_features(const ImageBox& box, const CameraModel& cam, int bands);

// Region features with geometry from the box and appearance averaged over the
// two endpoints. Used when no scene-specific extractor is available.
RegionFeatureFn default_region_features(std::span<const Detection> detections,
                                        const CameraModel& cam, int scanline_dim);

SceneGraph build_graph(std::span<const Detection> detections, const CameraModel& cam,
                       const GraphConfig& config, const RegionFeatureFn& region_features);
SceneGraph build_graph(std::span<const Detection> detections, const CameraModel& cam,
                       const GraphConfig& config);

// Rebuilds structure matrices from `nodes`/`edges` (edges must be sorted).
void finalize_structure(SceneGraph& graph);

// Relabels nodes: node i of the input becomes node perm[i]. Edges are
// re-canonicalized and re-sorted. `edge_map[e]` (optional out) gives the new
// index of input edge e.
SceneGraph permute_nodes(const SceneGraph& graph, std::span<const int> perm,
                         std::vector<int>* edge_map = nullptr);

nlohmann::json graph_to_json(const SceneGraph& graph);
SceneGraph graph_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const FeatureTuple& f);
void from_json(const nlohmann::json& j, FeatureTuple& f);

}  // namespace bevgraph
