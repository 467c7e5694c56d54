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

// Position-aware message passing over a scene graph and its conjugate.
//
// Embeddings are stored row-wise: a level with M members carries one M x d
// matrix per feature state plus an M x d positional matrix. Linear maps act
// on the right (Y = X W), so a weight written W (d_in x d_out) here is the
// transpose of the column-vector convention.

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "bevgraph/autodiff.h"
#include "bevgraph/graph.h"

namespace bevgraph {

using ad::Matrix;
using ad::Tape;
using ad::Var;

inline constexpr int kNumStates = 3;  // bbox geometry, scanline, appearance
inline constexpr const char* kStateNames[kNumStates] = {"geom", "scan", "app"};

struct PropagationConfig {
  int num_layers = 2;
  bool enable_n2n = true;
  bool enable_e2n = true;
  bool enable_e2e = true;
  bool enable_n2e = true;
  bool use_position = true;
  int hidden_dim = 16;
  double leaky_slope = 0.2;

  // Throws ConfigError: n2e without e2e, num_layers < 1, hidden_dim < 1.
  void validate() const;
  // Edge embeddings are built whenever some message path touches them.
  bool edges_active() const { return enable_e2n || enable_e2e || enable_n2e; }
  // Edge midpoints are supervised when edges talk to each other.
  bool edge_supervision() const { return enable_e2e; }
};

// Which raw feature states are fed to the network; disabled states are
// zeroed at the input.
struct FeatureSelect {
  bool geometry = true;
  bool scanline = true;
  bool appearance = true;
};

struct ModelConfig {
  PropagationConfig prop;
  FeatureSelect features;
  int bbox_dim = 4;
  int scanline_dim = 8;
  int appearance_dim = 16;
  int head_hidden = 32;
  int num_classes = 4;
  int num_bins = 2;
  // Raw depth output of the localization heads is multiplied by this.
  double depth_scale = 10.0;

  void validate() const;
  std::array<int, kNumStates> state_dims() const { return {bbox_dim, scanline_dim, appearance_dim}; }
};

// Per-level embedding: one M x d matrix per feature state plus positions.
struct LevelEmbedding {
  std::array<Var, kNumStates> x;
  Var p;
  int rows() const { return x[0].valid() ? static_cast<int>(x[0].rows()) : 0; }
};

struct EmbeddedGraph {
  LevelEmbedding nodes;
  LevelEmbedding edges;  // empty when edges are inactive or E == 0
  bool has_edges = false;
};

// Weights of one level (node or edge) of one layer. theta[s] is 2d x d,
// theta_p d x d, w_h (4d x d) projects the stacked states to the attention
// embedding, theta_att d x d and a 1 x 3d.
struct LevelWeights {
  std::array<Var, kNumStates> theta;
  Var theta_p;
  Var w_h;
  Var theta_att;
  Var a;
};

struct LayerWeights {
  LevelWeights node;
  LevelWeights edge;
};

struct EmbedWeights {
  std::array<Var, kNumStates> node_state;  // dims[s] x d
  Var node_pos;                            // 2 x d
  std::array<Var, kNumStates> edge_state;
  Var edge_pos;
};

// Two-layer perceptron, hidden LeakyReLU.
struct MlpWeights {
  Var w1, b1, w2, b2;
};

struct HeadWeights {
  Var node_decoder;  // d x 2
  MlpWeights node_loc;
  Var edge_decoder;
  MlpWeights edge_loc;
  MlpWeights cls;
  MlpWeights dims;
  MlpWeights orient;
};

struct ModelWeights {
  EmbedWeights embed;
  std::vector<LayerWeights> layers;
  HeadWeights heads;
};

// Creates every parameter of the model under stable names.
void register_parameters(ad::ParameterStore& store, const ModelConfig& config);
// Binds the store's parameters onto `tape`. Edge-level weights are bound
// only when edges are active.
ModelWeights bind_weights(Tape& tape, ad::ParameterStore& store, const ModelConfig& config);

// Raw per-node and per-edge inputs pulled from a graph, with disabled feature
// states zeroed. Positions are divided by the graph's position scale.
struct GraphInputs {
  std::array<Matrix, kNumStates> node_states;
  Matrix node_pos;  // N x 2
  std::array<Matrix, kNumStates> edge_states;
  Matrix edge_pos;  // E x 2
  Eigen::VectorXd node_alpha0;
  Eigen::VectorXd edge_alpha0;
};

GraphInputs graph_inputs(const SceneGraph& graph, const ModelConfig& config);

// Linear lift of every state into R^d; no bias, so the map is linear.
EmbeddedGraph embed_inputs(Tape& tape, const GraphInputs& inputs, const EmbedWeights& w,
                           const ModelConfig& config);

// Lambda(h_i, h_j, e_ij) = LeakyReLU(a . [T h_i | T h_j | T e_ij]) for column
// vectors; `theta` is d' x d, `a` has 3d' entries.
double attention_score(const Eigen::VectorXd& h_i, const Eigen::VectorXd& h_j,
                       const Eigen::VectorXd& e_ij, const Eigen::MatrixXd& theta,
                       const Eigen::VectorXd& a, double slope);

// Softmax of a neighborhood's scores.
Eigen::VectorXd normalize_attention(const Eigen::VectorXd& scores);

// Row-normalized attention over N(i) + {i}; `link` holds the per-pair
// embedding (E x d' after projection) used as the third score argument, or
// is invalid to omit it.
Var attention_matrix(Tape& tape, Var h_proj, Var link_proj,
                     const std::vector<std::pair<int, int>>& pairs, const Matrix& mask,
                     const LevelWeights& w, double slope);

// Node-level update of every node (synchronous). Writes the attention matrix
// into `attention` when non-null.
LevelEmbedding node_update(Tape& tape, const SceneGraph& graph, const EmbeddedGraph& emb,
                           const LevelWeights& w, const PropagationConfig& config,
                           Matrix* attention = nullptr);

// Edge-level update on the conjugate graph; the shared endpoint of two
// adjacent edges plays the link role when n2e is on.
LevelEmbedding edge_update(Tape& tape, const SceneGraph& graph, const EmbeddedGraph& emb,
                           const LevelWeights& w, const PropagationConfig& config,
                           Matrix* attention = nullptr);

struct AttentionLog {
  std::vector<Matrix> node;  // per layer, N x N
  std::vector<Matrix> edge;  // per layer, E x E (only when edges update)
};

EmbeddedGraph propagate(Tape& tape, const SceneGraph& graph, const EmbeddedGraph& input,
                        const std::vector<LayerWeights>& layers, const PropagationConfig& config,
                        AttentionLog* log = nullptr);

struct Localization {
  Var alpha;  // M x 1, clamped
  Var z;      // M x 1
  Var xz;     // M x 2, x = z tan(alpha)
  int clamped = 0;
};

// (delta alpha, z) from an MLP over [x_geom | x_scan | x_app | decoded p]; the
// final angle alpha0 + delta alpha is clamped to +-(pi/2 - 1e-3).
Localization readout_localization(Tape& tape, const LevelEmbedding& level, const Eigen::VectorXd& alpha0,
                                  Var decoder, const MlpWeights& mlp, const ModelConfig& config);

struct EarlyHeads {
  Var class_probs;  // N x C, softmax
  Var dims;         // N x 2 (length, width)
  Var orientation;  // N x 3n, per bin (sigmoid confidence, sin, cos)
};

EarlyHeads readout_early_heads(Tape& tape, const GraphInputs& inputs, const HeadWeights& w,
                               const ModelConfig& config);

struct ModelOutput {
  EmbeddedGraph embedded;
  Localization nodes;
  Localization edges;  // invalid Vars when the graph has no active edges
  EarlyHeads early;
  AttentionLog attention;
};

ModelOutput run_model(Tape& tape, ad::ParameterStore& store, const SceneGraph& graph,
                      const ModelConfig& config, bool log_attention = false);

Var mlp_forward(Var x, const MlpWeights& w, double slope);

void to_json(nlohmann::json& j, const PropagationConfig& c);
void from_json(const nlohmann::json& j, PropagationConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace bevgraph
