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
#include "bevgraph/propagation.h"

#include <cmath>
#include <numbers>

#include "bevgraph/errors.h"
#include "bevgraph/json_util.h"

namespace bevgraph {

namespace {

constexpr double kAlphaLimit = std::numbers::pi / 2.0 - 1e-3;

std::string layer_prefix(int l, const char* level) {
  return "layer" + std::to_string(l) + "." + level + ".";
}

void create_mlp(ad::ParameterStore& s, const std::string& prefix, int in, int hidden, int out) {
  s.create(prefix + "w1", in, hidden, in);
  s.create_zero(prefix + "b1", 1, hidden);
  s.create(prefix + "w2", hidden, out, hidden);
  s.create_zero(prefix + "b2", 1, out);
}

MlpWeights bind_mlp(Tape& t, ad::ParameterStore& s, const std::string& prefix) {
  return {t.param(s.at(prefix + "w1")), t.param(s.at(prefix + "b1")), t.param(s.at(prefix + "w2")),
          t.param(s.at(prefix + "b2"))};
}

void create_level(ad::ParameterStore& s, const std::string& prefix, int d) {
  for (int k = 0; k < kNumStates; ++k) {
    s.create(prefix + "theta." + kStateNames[k], 2 * d, d, 2 * d);
  }
  s.create(prefix + "theta_p", d, d, d);
  s.create(prefix + "w_h", (kNumStates + 1) * d, d, (kNumStates + 1) * d);
  s.create(prefix + "theta_att", d, d, d);
  s.create(prefix + "a", 1, 3 * d, 3 * d);
}

LevelWeights bind_level(Tape& t, ad::ParameterStore& s, const std::string& prefix) {
  LevelWeights w;
  for (int k = 0; k < kNumStates; ++k) w.theta[k] = t.param(s.at(prefix + "theta." + kStateNames[k]));
  w.theta_p = t.param(s.at(prefix + "theta_p"));
  w.w_h = t.param(s.at(prefix + "w_h"));
  w.theta_att = t.param(s.at(prefix + "theta_att"));
  w.a = t.param(s.at(prefix + "a"));
  return w;
}

Var stacked(const LevelEmbedding& level) {
  const std::array<Var, kNumStates + 1> parts = {level.x[0], level.x[1], level.x[2], level.p};
  return ad::concat_cols(parts);
}

Var with_position(Var x, Var p) {
  const std::array<Var, 2> parts = {x, p};
  return ad::concat_cols(parts);
}

// Attention embedding projected by theta_att.
Var attention_input(const LevelEmbedding& level, const LevelWeights& w) {
  return ad::matmul(ad::matmul(stacked(level), w.w_h), w.theta_att);
}

Matrix with_self_loops(const Matrix& adjacency) {
  return adjacency + Matrix::Identity(adjacency.rows(), adjacency.cols());
}

}  // namespace

void PropagationConfig::validate() const {
  if (num_layers < 1) throw ConfigError("propagation.num_layers must be >= 1");
  if (hidden_dim < 1) throw ConfigError("propagation.hidden_dim must be >= 1");
  if (enable_n2e && !enable_e2e)
    throw ConfigError("propagation.enable_n2e requires propagation.enable_e2e");
  if (!std::isfinite(leaky_slope)) throw ConfigError("propagation.leaky_slope must be finite");
}

void ModelConfig::validate() const {
  prop.validate();
  if (bbox_dim < 1 || scanline_dim < 1 || appearance_dim < 1)
    throw ConfigError("model feature dimensions must be positive");
  if (head_hidden < 1) throw ConfigError("model.head_hidden must be >= 1");
  if (num_classes < 1) throw ConfigError("model.num_classes must be >= 1");
  if (num_bins < 1) throw ConfigError("model.num_bins must be >= 1");
  if (!(depth_scale > 0.0)) throw ConfigError("model.depth_scale must be positive");
}

void register_parameters(ad::ParameterStore& store, const ModelConfig& config) {
  config.validate();
  const int d = config.prop.hidden_dim;
  const auto dims = config.state_dims();
  for (const char* level : {"node", "edge"}) {
    const std::string p = std::string("embed.") + level + ".";
    for (int k = 0; k < kNumStates; ++k) store.create(p + kStateNames[k], dims[k], d, dims[k]);
    store.create(p + "pos", 2, d, 2);
  }
  for (int l = 0; l < config.prop.num_layers; ++l) {
    create_level(store, layer_prefix(l, "node"), d);
    create_level(store, layer_prefix(l, "edge"), d);
  }
  const int loc_in = kNumStates * d + 2;
  for (const char* level : {"node", "edge"}) {
    const std::string p = std::string("head.") + level + ".";
    store.create(p + "decoder", d, 2, d);
    create_mlp(store, p + "loc.", loc_in, config.head_hidden, 2);
  }
  const int raw_in = dims[0] + dims[1] + dims[2];
  create_mlp(store, "head.cls.", raw_in, config.head_hidden, config.num_classes);
  create_mlp(store, "head.dims.", raw_in, config.head_hidden, 2);
  create_mlp(store, "head.orient.", raw_in, config.head_hidden, 3 * config.num_bins);
}

ModelWeights bind_weights(Tape& tape, ad::ParameterStore& store, const ModelConfig& config) {
  const PropagationConfig& pc = config.prop;
  ModelWeights w;
  for (int k = 0; k < kNumStates; ++k) {
    w.embed.node_state[k] = tape.param(store.at(std::string("embed.node.") + kStateNames[k]));
  }
  w.embed.node_pos = tape.param(store.at("embed.node.pos"));
  if (pc.edges_active()) {
    for (int k = 0; k < kNumStates; ++k) {
      w.embed.edge_state[k] = tape.param(store.at(std::string("embed.edge.") + kStateNames[k]));
    }
    w.embed.edge_pos = tape.param(store.at("embed.edge.pos"));
  }
  for (int l = 0; l < pc.num_layers; ++l) {
    LayerWeights lw;
    lw.node = bind_level(tape, store, layer_prefix(l, "node"));
    if (pc.enable_e2e) lw.edge = bind_level(tape, store, layer_prefix(l, "edge"));
    w.layers.push_back(std::move(lw));
  }
  w.heads.node_decoder = tape.param(store.at("head.node.decoder"));
  w.heads.node_loc = bind_mlp(tape, store, "head.node.loc.");
  if (pc.edge_supervision()) {
    w.heads.edge_decoder = tape.param(store.at("head.edge.decoder"));
    w.heads.edge_loc = bind_mlp(tape, store, "head.edge.loc.");
  }
  w.heads.cls = bind_mlp(tape, store, "head.cls.");
  w.heads.dims = bind_mlp(tape, store, "head.dims.");
  w.heads.orient = bind_mlp(tape, store, "head.orient.");
  return w;
}

GraphInputs graph_inputs(const SceneGraph& graph, const ModelConfig& config) {
  const auto dims = config.state_dims();
  const std::array<bool, kNumStates> on = {config.features.geometry, config.features.scanline,
                                           config.features.appearance};
  auto fill = [&](auto& out, const auto& items, Matrix& pos, Eigen::VectorXd& alpha0) {
    const auto m = static_cast<Eigen::Index>(items.size());
    for (int k = 0; k < kNumStates; ++k) out[k] = Matrix::Zero(m, dims[k]);
    pos.resize(m, 2);
    alpha0.resize(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      const auto& it = items[static_cast<std::size_t>(r)];
      const std::array<const std::vector<double>*, kNumStates> src = {
          &it.features.bbox_geom, &it.features.scanline, &it.features.appearance};
      for (int k = 0; k < kNumStates; ++k) {
        if (static_cast<int>(src[k]->size()) != dims[k])
          throw ConfigError(std::string("feature state '") + kStateNames[k] +
                            "' has dimension " + std::to_string(src[k]->size()) + ", model expects " +
                            std::to_string(dims[k]));
        if (!on[k]) continue;
        for (int c = 0; c < dims[k]; ++c) out[k](r, c) = (*src[k])[c];
      }
      pos(r, 0) = it.position.x / graph.position_scale;
      pos(r, 1) = it.position.z / graph.position_scale;
      alpha0(r) = it.alpha0;
    }
  };
  GraphInputs in;
  fill(in.node_states, graph.nodes, in.node_pos, in.node_alpha0);
  fill(in.edge_states, graph.edges, in.edge_pos, in.edge_alpha0);
  return in;
}

EmbeddedGraph embed_inputs(Tape& tape, const GraphInputs& inputs, const EmbedWeights& w,
                           const ModelConfig& config) {
  const int d = config.prop.hidden_dim;
  auto embed = [&](const std::array<Matrix, kNumStates>& states, const Matrix& pos,
                   const std::array<Var, kNumStates>& ws, Var wp) {
    LevelEmbedding e;
    for (int k = 0; k < kNumStates; ++k) {
      if (ws[k].rows() != states[k].cols())
        throw ConfigError("embed_inputs: weight rows do not match feature dimension");
      e.x[k] = ad::matmul(tape.constant(states[k]), ws[k]);
    }
    e.p = config.prop.use_position ? ad::matmul(tape.constant(pos), wp)
                                   : tape.constant(Matrix::Zero(pos.rows(), d));
    return e;
  };
  EmbeddedGraph g;
  g.nodes = embed(inputs.node_states, inputs.node_pos, w.node_state, w.node_pos);
  g.has_edges = config.prop.edges_active() && inputs.edge_pos.rows() > 0;
  if (g.has_edges) g.edges = embed(inputs.edge_states, inputs.edge_pos, w.edge_state, w.edge_pos);
  return g;
}

double attention_score(const Eigen::VectorXd& h_i, const Eigen::VectorXd& h_j,
                       const Eigen::VectorXd& e_ij, const Eigen::MatrixXd& theta,
                       const Eigen::VectorXd& a, double slope) {
  const Eigen::Index dp = theta.rows();
  if (a.size() != 3 * dp || h_i.size() != theta.cols() || h_j.size() != theta.cols() ||
      e_ij.size() != theta.cols())
    throw ConfigError("attention_score: dimension mismatch");
  const double s = a.segment(0, dp).dot(theta * h_i) + a.segment(dp, dp).dot(theta * h_j) +
                   a.segment(2 * dp, dp).dot(theta * e_ij);
  return s > 0.0 ? s : slope * s;
}

Eigen::VectorXd normalize_attention(const Eigen::VectorXd& scores) {
  if (scores.size() == 0) throw ConfigError("normalize_attention: empty neighborhood");
  Eigen::VectorXd e = (scores.array() - scores.maxCoeff()).exp();
  return e / e.sum();
}

Var attention_matrix(Tape& tape, Var h_proj, Var link_proj,
                     const std::vector<std::pair<int, int>>& pairs, const Matrix& mask,
                     const LevelWeights& w, double slope) {
  const int d = static_cast<int>(h_proj.cols());
  const Eigen::Index m = h_proj.rows();
  Var s_i = ad::matmul_nt(h_proj, ad::slice_cols(w.a, 0, d));  // M x 1
  Var s_j = ad::matmul_nt(h_proj, ad::slice_cols(w.a, d, d));
  Var scores = ad::add(ad::matmul(s_i, tape.constant(Matrix::Ones(1, m))),
                       ad::matmul(tape.constant(Matrix::Ones(m, 1)), ad::transpose(s_j)));
  if (link_proj.valid() && !pairs.empty()) {
    Var s_e = ad::matmul_nt(link_proj, ad::slice_cols(w.a, 2 * d, d));
    scores = ad::add(scores, ad::pair_scatter(s_e, pairs, static_cast<int>(m)));
  }
  return ad::masked_softmax(ad::leaky_relu(scores, slope), mask);
}

namespace {

// Per-pair term of an update: row rows[l] of `level` belongs to pair l
// (rows empty: row l itself).
struct LinkTerm {
  LevelEmbedding level;
  std::vector<int> rows;
  bool active = false;
};

Var gather_if(Var v, const std::vector<int>& rows) {
  return rows.empty() ? v : ad::gather_rows(v, rows);
}

LevelEmbedding level_update(Tape& tape, const LevelEmbedding& self,
                            const std::vector<std::pair<int, int>>& pairs, const Matrix& adjacency,
                            const LinkTerm& link, const LevelWeights& w,
                            const PropagationConfig& config, bool neighbor_terms,
                            Matrix* attention) {
  const double slope = config.leaky_slope;
  const bool use_link = link.active && !pairs.empty();
  Var h_proj = attention_input(self, w);
  Var link_proj;
  if (use_link) link_proj = gather_if(attention_input(link.level, w), link.rows);
  Var alpha = attention_matrix(tape, h_proj, link_proj, pairs, with_self_loops(adjacency), w, slope);
  if (attention) *attention = alpha.value();

  // Same-level terms use the full alpha, or only its diagonal when neighbor
  // messages of this level are disabled.
  Var alpha_same = neighbor_terms
                       ? alpha
                       : ad::mul(alpha, tape.constant(Matrix::Identity(alpha.rows(), alpha.cols())));
  Var alpha_link;
  if (use_link) alpha_link = ad::pair_gather(alpha, pairs);

  LevelEmbedding out;
  for (int k = 0; k < kNumStates; ++k) {
    Var y = ad::matmul(alpha_same, ad::matmul(with_position(self.x[k], self.p), w.theta[k]));
    if (use_link) {
      Var z = gather_if(ad::matmul(with_position(link.level.x[k], link.level.p), w.theta[k]), link.rows);
      y = ad::add(y, ad::matmul(alpha_link, z));
    }
    out.x[k] = ad::leaky_relu(y, slope);
  }
  if (config.use_position) {
    Var y = ad::matmul(alpha_same, ad::matmul(self.p, w.theta_p));
    if (use_link) {
      y = ad::add(y, ad::matmul(alpha_link, gather_if(ad::matmul(link.level.p, w.theta_p), link.rows)));
    }
    out.p = ad::leaky_relu(y, slope);
  } else {
    out.p = self.p;  // all zeros
  }
  return out;
}

std::vector<std::pair<int, int>> node_pairs(const SceneGraph& g) {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(g.edges.size());
  for (const GraphEdge& e : g.edges) pairs.emplace_back(e.endpoints.i, e.endpoints.j);
  return pairs;
}

}  // namespace

LevelEmbedding node_update(Tape& tape, const SceneGraph& graph, const EmbeddedGraph& emb,
                           const LevelWeights& w, const PropagationConfig& config,
                           Matrix* attention) {
  LinkTerm link;
  link.active = emb.has_edges && config.enable_e2n;
  if (link.active) link.level = emb.edges;
  return level_update(tape, emb.nodes, node_pairs(graph), graph.adjacency, link, w, config,
                      config.enable_n2n, attention);
}

LevelEmbedding edge_update(Tape& tape, const SceneGraph& graph, const EmbeddedGraph& emb,
                           const LevelWeights& w, const PropagationConfig& config,
                           Matrix* attention) {
  if (!emb.has_edges) throw ConfigError("edge_update: graph has no edge embeddings");
  std::vector<std::pair<int, int>> pairs;
  LinkTerm link;
  link.active = config.enable_n2e;
  link.level = emb.nodes;
  for (const ConjugatePair& cp : graph.conj_pairs) {
    pairs.emplace_back(cp.a, cp.b);
    link.rows.push_back(cp.shared);
  }
  return level_update(tape, emb.edges, pairs, graph.conj_adjacency, link, w, config,
                      config.enable_e2e, attention);
}

EmbeddedGraph propagate(Tape& tape, const SceneGraph& graph, const EmbeddedGraph& input,
                        const std::vector<LayerWeights>& layers, const PropagationConfig& config,
                        AttentionLog* log) {
  config.validate();
  if (static_cast<int>(layers.size()) != config.num_layers)
    throw ConfigError("propagate: layer weight count does not match num_layers");
  EmbeddedGraph cur = input;
  for (const LayerWeights& lw : layers) {
    Matrix att;
    cur.nodes = node_update(tape, graph, cur, lw.node, config, log ? &att : nullptr);
    if (log) log->node.push_back(att);
    if (cur.has_edges && config.enable_e2e) {
      cur.edges = edge_update(tape, graph, cur, lw.edge, config, log ? &att : nullptr);
      if (log) log->edge.push_back(att);
    }
  }
  return cur;
}

Var mlp_forward(Var x, const MlpWeights& w, double slope) {
  Var h = ad::leaky_relu(ad::add_row(ad::matmul(x, w.w1), w.b1), slope);
  return ad::add_row(ad::matmul(h, w.w2), w.b2);
}

Localization readout_localization(Tape& tape, const LevelEmbedding& level,
                                  const Eigen::VectorXd& alpha0, Var decoder, const MlpWeights& mlp,
                                  const ModelConfig& config) {
  const std::array<Var, kNumStates + 1> parts = {level.x[0], level.x[1], level.x[2],
                                                 ad::matmul(level.p, decoder)};
  Var out = mlp_forward(ad::concat_cols(parts), mlp, config.prop.leaky_slope);
  Localization loc;
  Var raw_alpha = ad::add(tape.constant(Matrix(alpha0)), ad::slice_cols(out, 0, 1));
  loc.clamped = static_cast<int>((raw_alpha.value().array().abs() > kAlphaLimit).count());
  loc.alpha = ad::clamp(raw_alpha, -kAlphaLimit, kAlphaLimit);
  loc.z = ad::scale(ad::slice_cols(out, 1, 1), config.depth_scale);
  const std::array<Var, 2> xz = {ad::mul(loc.z, ad::tan(loc.alpha)), loc.z};
  loc.xz = ad::concat_cols(xz);
  return loc;
}

EarlyHeads readout_early_heads(Tape& tape, const GraphInputs& inputs, const HeadWeights& w,
                               const ModelConfig& config) {
  const Eigen::Index n = inputs.node_pos.rows();
  Matrix raw(n, config.bbox_dim + config.scanline_dim + config.appearance_dim);
  raw << inputs.node_states[0], inputs.node_states[1], inputs.node_states[2];
  Var x = tape.constant(std::move(raw));
  const double slope = config.prop.leaky_slope;
  EarlyHeads h;
  h.class_probs = ad::softmax_rows(mlp_forward(x, w.cls, slope));
  h.dims = mlp_forward(x, w.dims, slope);
  Var o = mlp_forward(x, w.orient, slope);
  std::vector<Var> cols;
  for (int b = 0; b < config.num_bins; ++b) {
    cols.push_back(ad::sigmoid(ad::slice_cols(o, 3 * b, 1)));
    cols.push_back(ad::slice_cols(o, 3 * b + 1, 2));
  }
  h.orientation = ad::concat_cols(cols);
  return h;
}

ModelOutput run_model(Tape& tape, ad::ParameterStore& store, const SceneGraph& graph,
                      const ModelConfig& config, bool log_attention) {
  const GraphInputs inputs = graph_inputs(graph, config);
  const ModelWeights w = bind_weights(tape, store, config);
  ModelOutput out;
  const EmbeddedGraph input = embed_inputs(tape, inputs, w.embed, config);
  out.embedded = propagate(tape, graph, input, w.layers, config.prop,
                           log_attention ? &out.attention : nullptr);
  out.nodes = readout_localization(tape, out.embedded.nodes, inputs.node_alpha0,
                                   w.heads.node_decoder, w.heads.node_loc, config);
  if (out.embedded.has_edges && config.prop.edge_supervision()) {
    out.edges = readout_localization(tape, out.embedded.edges, inputs.edge_alpha0,
                                     w.heads.edge_decoder, w.heads.edge_loc, config);
  }
  out.early = readout_early_heads(tape, inputs, w.heads, config);
  return out;
}

void to_json(nlohmann::json& j, const PropagationConfig& c) {
  j = {{"num_layers", c.num_layers}, {"enable_n2n", c.enable_n2n},     {"enable_e2n", c.enable_e2n},
       {"enable_e2e", c.enable_e2e}, {"enable_n2e", c.enable_n2e},     {"use_position", c.use_position},
       {"hidden_dim", c.hidden_dim}, {"leaky_slope", c.leaky_slope}};
}

void from_json(const nlohmann::json& j, PropagationConfig& c) {
  constexpr const char* w = "propagation";
  jsonutil::require_keys(j, {"num_layers", "enable_n2n", "enable_e2n", "enable_e2e", "enable_n2e",
                             "use_position", "hidden_dim", "leaky_slope"},
                         w);
  jsonutil::read(j, "num_layers", c.num_layers, w);
  jsonutil::read(j, "enable_n2n", c.enable_n2n, w);
  jsonutil::read(j, "enable_e2n", c.enable_e2n, w);
  jsonutil::read(j, "enable_e2e", c.enable_e2e, w);
  jsonutil::read(j, "enable_n2e", c.enable_n2e, w);
  jsonutil::read(j, "use_position", c.use_position, w);
  jsonutil::read(j, "hidden_dim", c.hidden_dim, w);
  jsonutil::read(j, "leaky_slope", c.leaky_slope, w);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"propagation", c.prop},
       {"features",
        {{"geometry", c.features.geometry},
         {"scanline", c.features.scanline},
         {"appearance", c.features.appearance}}},
       {"bbox_dim", c.bbox_dim},
       {"scanline_dim", c.scanline_dim},
       {"appearance_dim", c.appearance_dim},
       {"head_hidden", c.head_hidden},
       {"num_classes", c.num_classes},
       {"num_bins", c.num_bins},
       {"depth_scale", c.depth_scale}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  constexpr const char* w = "model";
  jsonutil::require_keys(j, {"propagation", "features", "bbox_dim", "scanline_dim", "appearance_dim",
                             "head_hidden", "num_classes", "num_bins", "depth_scale"},
                         w);
  jsonutil::read(j, "propagation", c.prop, w);
  if (auto it = j.find("features"); it != j.end()) {
    jsonutil::require_keys(*it, {"geometry", "scanline", "appearance"}, "model.features");
    jsonutil::read(*it, "geometry", c.features.geometry, "model.features");
    jsonutil::read(*it, "scanline", c.features.scanline, "model.features");
    jsonutil::read(*it, "appearance", c.features.appearance, "model.features");
  }
  jsonutil::read(j, "bbox_dim", c.bbox_dim, w);
  jsonutil::read(j, "scanline_dim", c.scanline_dim, w);
  jsonutil::read(j, "appearance_dim", c.appearance_dim, w);
  jsonutil::read(j, "head_hidden", c.head_hidden, w);
  jsonutil::read(j, "num_classes", c.num_classes, w);
  jsonutil::read(j, "num_bins", c.num_bins, w);
  jsonutil::read(j, "depth_scale", c.depth_scale, w);
}

}  // namespace bevgraph
