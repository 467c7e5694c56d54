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
#include "bevgraph/gradcheck.h"

#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "bevgraph/errors.h"
#include "bevgraph/json_util.h"
#include "bevgraph/losses.h"
#include "bevgraph/propagation.h"
#include "bevgraph/rng.h"
#include "bevgraph/scene_sim.h"
#include "bevgraph/training.h"

namespace bevgraph {

namespace {

using nlohmann::json;

struct Draw {
  SyntheticScene scene;
  SceneGraph graph;
  std::uint64_t seed = 0;
};

Matrix uniform_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return m;
}

// Random linear functional of v, so every output entry reaches the root with
// a generic weight.
Var project(Tape& tape, Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(v, tape.constant(uniform_matrix(rng, v.rows(), v.cols(), -1.0, 1.0))));
}

Var project_level(Tape& tape, const LevelEmbedding& level, std::uint64_t seed, bool with_p) {
  Var total = tape.constant(0.0);
  for (int s = 0; s < kNumStates; ++s) total = ad::add(total, project(tape, level.x[s], mix_seed(seed, s)));
  if (with_p) total = ad::add(total, project(tape, level.p, mix_seed(seed, 7)));
  return total;
}

ModelConfig small_model(const GradcheckConfig& c) {
  ModelConfig m;
  m.prop.hidden_dim = c.hidden_dim;
  m.head_hidden = c.head_hidden;
  return m;
}

Draw make_draw(const GradcheckConfig& c, int index) {
  Draw d;
  d.seed = mix_seed(c.seed, static_cast<std::uint64_t>(index));
  std::mt19937_64 rng(d.seed);
  SimConfig sim;
  sim.seed = d.seed;
  sim.min_objects = sim.max_objects = std::uniform_int_distribution<int>(c.min_nodes, c.max_nodes)(rng);
  d.scene = sample_scene(sim, static_cast<std::uint64_t>(index));
  std::vector<Detection> dets = make_detections(d.scene, sim.jitter_px, rng, sim.scanline_dim);
  GraphConfig gc;
  gc.k = c.k;
  gc.clamp_degree = true;
  gc.scanline_dim = sim.scanline_dim;
  d.graph = build_graph(dets, d.scene.camera, gc, scene_region_features(d.scene, dets, sim));
  return d;
}

using TargetFn = std::function<ad::GradCheckResult(const GradcheckConfig&, const Draw&)>;

struct Target {
  const char* module;
  const char* name;
  TargetFn fn;
};

ad::GradCheckResult check_model(const GradcheckConfig& c, const Draw& d, const ModelConfig& m,
                                const std::function<Var(Tape&, ad::ParameterStore&, const ModelConfig&)>& body) {
  ad::ParameterStore store(mix_seed(d.seed, 0x9c));
  register_parameters(store, m);
  std::mt19937_64 rng(mix_seed(d.seed, 0x51));
  for (ad::Parameter* p : store.parameters()) {
    const double r = c.init_scale / std::sqrt(static_cast<double>(std::max<Eigen::Index>(1, p->value.rows())));
    p->value = uniform_matrix(rng, p->value.rows(), p->value.cols(), -r, r);
  }
  return ad::grad_check([&](Tape& t, ad::ParameterStore& s) { return body(t, s, m); }, store, c.eps, c.floor);
}

EmbeddedGraph embedded(Tape& t, ad::ParameterStore& s, const ModelConfig& m, const SceneGraph& g,
                       ModelWeights* w_out) {
  const GraphInputs in = graph_inputs(g, m);
  ModelWeights w = bind_weights(t, s, m);
  EmbeddedGraph e = embed_inputs(t, in, w.embed, m);
  if (w_out) *w_out = w;
  return e;
}

std::vector<Target> targets() {
  std::vector<Target> out;
  out.push_back({"layer", "embed", [](const GradcheckConfig& c, const Draw& d) {
                   return check_model(c, d, small_model(c), [&](Tape& t, ad::ParameterStore& s, const ModelConfig& m) {
                     EmbeddedGraph e = embedded(t, s, m, d.graph, nullptr);
                     Var v = project_level(t, e.nodes, d.seed, true);
                     if (e.has_edges) v = ad::add(v, project_level(t, e.edges, d.seed + 1, true));
                     return v;
                   });
                 }});
  out.push_back({"layer", "attention", [](const GradcheckConfig& c, const Draw& d) {
                   return check_model(c, d, small_model(c), [&](Tape& t, ad::ParameterStore& s, const ModelConfig& m) {
                     ModelWeights w;
                     EmbeddedGraph e = embedded(t, s, m, d.graph, &w);
                     const LevelWeights& lw = w.layers[0].node;
                     const std::array<Var, 4> parts = {e.nodes.x[0], e.nodes.x[1], e.nodes.x[2], e.nodes.p};
                     Var h = ad::matmul(ad::matmul(ad::concat_cols(parts), lw.w_h), lw.theta_att);
                     std::vector<std::pair<int, int>> pairs;
                     for (const GraphEdge& ge : d.graph.edges) pairs.emplace_back(ge.endpoints.i, ge.endpoints.j);
                     Var link;
                     if (e.has_edges) {
                       const std::array<Var, 4> ep = {e.edges.x[0], e.edges.x[1], e.edges.x[2], e.edges.p};
                       link = ad::matmul(ad::matmul(ad::concat_cols(ep), lw.w_h), lw.theta_att);
                     }
                     const Matrix mask = d.graph.adjacency + Matrix::Identity(d.graph.num_nodes(), d.graph.num_nodes());
                     return project(t, attention_matrix(t, h, link, pairs, mask, lw, m.prop.leaky_slope), d.seed);
                   });
                 }});
  out.push_back({"layer", "node_update", [](const GradcheckConfig& c, const Draw& d) {
                   return check_model(c, d, small_model(c), [&](Tape& t, ad::ParameterStore& s, const ModelConfig& m) {
                     ModelWeights w;
                     EmbeddedGraph e = embedded(t, s, m, d.graph, &w);
                     return project_level(t, node_update(t, d.graph, e, w.layers[0].node, m.prop), d.seed, true);
                   });
                 }});
  out.push_back({"layer", "node_update.n2n", [](const GradcheckConfig& c, const Draw& d) {
                   ModelConfig m0 = small_model(c);
                   m0.prop.enable_e2n = m0.prop.enable_e2e = m0.prop.enable_n2e = false;
                   return check_model(c, d, m0, [&](Tape& t, ad::ParameterStore& s, const ModelConfig& m) {
                     ModelWeights w;
                     EmbeddedGraph e = embedded(t, s, m, d.graph, &w);
                     return project_level(t, node_update(t, d.graph, e, w.layers[0].node, m.prop), d.seed, true);
                   });
                 }});
  out.push_back({"layer", "edge_update", [](const GradcheckConfig& c, const Draw& d) {
                   return check_model(c, d, small_model(c), [&](Tape& t, ad::ParameterStore& s, const ModelConfig& m) {
                     ModelWeights w;
                     EmbeddedGraph e = embedded(t, s, m, d.graph, &w);
                     if (!e.has_edges) return project_level(t, e.nodes, d.seed, true);
                     return project_level(t, edge_update(t, d.graph, e, w.layers[0].edge, m.prop), d.seed, true);
                   });
                 }});
  out.push_back({"layer", "propagate", [](const GradcheckConfig& c, const Draw& d) {
                   return check_model(c, d, small_model(c), [&](Tape& t, ad::ParameterStore& s, const ModelConfig& m) {
                     ModelWeights w;
                     EmbeddedGraph e = embedded(t, s, m, d.graph, &w);
                     EmbeddedGraph o = propagate(t, d.graph, e, w.layers, m.prop);
                     Var v = project_level(t, o.nodes, d.seed, true);
                     if (o.has_edges) v = ad::add(v, project_level(t, o.edges, d.seed + 1, true));
                     return v;
                   });
                 }});
  out.push_back({"layer", "propagate.no_position", [](const GradcheckConfig& c, const Draw& d) {
                   ModelConfig m0 = small_model(c);
                   m0.prop.use_position = false;
                   return check_model(c, d, m0, [&](Tape& t, ad::ParameterStore& s, const ModelConfig& m) {
                     ModelWeights w;
                     EmbeddedGraph e = embedded(t, s, m, d.graph, &w);
                     EmbeddedGraph o = propagate(t, d.graph, e, w.layers, m.prop);
                     return project_level(t, o.nodes, d.seed, false);
                   });
                 }});
  out.push_back({"layer", "readout.localization", [](const GradcheckConfig& c, const Draw& d) {
                   return check_model(c, d, small_model(c), [&](Tape& t, ad::ParameterStore& s, const ModelConfig& m) {
                     const GraphInputs in = graph_inputs(d.graph, m);
                     ModelWeights w;
                     EmbeddedGraph e = embedded(t, s, m, d.graph, &w);
                     Localization loc = readout_localization(t, e.nodes, in.node_alpha0, w.heads.node_decoder,
                                                             w.heads.node_loc, m);
                     return project(t, loc.xz, d.seed);
                   });
                 }});
  out.push_back({"layer", "readout.early_heads", [](const GradcheckConfig& c, const Draw& d) {
                   return check_model(c, d, small_model(c), [&](Tape& t, ad::ParameterStore& s, const ModelConfig& m) {
                     const GraphInputs in = graph_inputs(d.graph, m);
                     ModelWeights w = bind_weights(t, s, m);
                     EarlyHeads h = readout_early_heads(t, in, w.heads, m);
                     return ad::add(ad::add(project(t, h.class_probs, d.seed), project(t, h.dims, d.seed + 1)),
                                    project(t, h.orientation, d.seed + 2));
                   });
                 }});

  out.push_back({"loss", "smooth_l1", [](const GradcheckConfig& c, const Draw& d) {
                   std::mt19937_64 rng(d.seed);
                   ad::ParameterStore store;
                   store.create("pred", d.graph.num_nodes(), 2, 1).value =
                       uniform_matrix(rng, d.graph.num_nodes(), 2, -3.0, 3.0);
                   const Matrix target = uniform_matrix(rng, d.graph.num_nodes(), 2, -1.0, 1.0);
                   return ad::grad_check([&](Tape& t, ad::ParameterStore& s) {
                     return losses::smooth_l1(t.param(s.at("pred")), t.constant(target));
                   }, store, c.eps, c.floor);
                 }});
  out.push_back({"loss", "focal", [](const GradcheckConfig& c, const Draw& d) {
                   std::mt19937_64 rng(d.seed);
                   const int n = d.graph.num_nodes();
                   ad::ParameterStore store;
                   store.create("logits", n, 4, 1).value = uniform_matrix(rng, n, 4, -2.0, 2.0);
                   std::vector<int> cls;
                   for (int i = 0; i < n; ++i) cls.push_back(std::uniform_int_distribution<int>(0, 3)(rng));
                   return ad::grad_check([&](Tape& t, ad::ParameterStore& s) {
                     return losses::focal_loss(ad::softmax_rows(t.param(s.at("logits"))), cls);
                   }, store, c.eps, c.floor);
                 }});
  out.push_back({"loss", "orientation", [](const GradcheckConfig& c, const Draw& d) {
                   std::mt19937_64 rng(d.seed);
                   const int n = d.graph.num_nodes();
                   const losses::OrientationBins bins = losses::OrientationBins::standard();
                   ad::ParameterStore store;
                   store.create("raw", n, 3 * bins.size(), 1).value = uniform_matrix(rng, n, 3 * bins.size(), -2.0, 2.0);
                   Matrix gt(n, 3 * bins.size());
                   for (int i = 0; i < n; ++i) {
                     const double beta = std::uniform_real_distribution<double>(-std::numbers::pi, std::numbers::pi)(rng);
                     gt.row(i) = losses::orientation_row(losses::encode_orientation(beta, bins));
                   }
                   return ad::grad_check([&](Tape& t, ad::ParameterStore& s) {
                     Var raw = t.param(s.at("raw"));
                     std::vector<Var> cols;
                     for (int b = 0; b < bins.size(); ++b) {
                       cols.push_back(ad::sigmoid(ad::slice_cols(raw, 3 * b, 1)));
                       cols.push_back(ad::slice_cols(raw, 3 * b + 1, 2));
                     }
                     return losses::orientation_loss(ad::concat_cols(cols), gt, bins.size());
                   }, store, c.eps, c.floor);
                 }});
  out.push_back({"loss", "dice", [](const GradcheckConfig& c, const Draw& d) {
                   std::mt19937_64 rng(d.seed);
                   ad::ParameterStore store;
                   const int sizes[2] = {16, 4};
                   std::vector<Matrix> gt;
                   for (int u = 0; u < 2; ++u) {
                     store.create("scale" + std::to_string(u), sizes[u], 3, 1).value =
                         uniform_matrix(rng, sizes[u], 3, -2.0, 2.0);
                     Matrix g = uniform_matrix(rng, sizes[u], 3, 0.0, 1.0);
                     gt.push_back((g.array() > 0.5).cast<double>().matrix());
                   }
                   return ad::grad_check([&](Tape& t, ad::ParameterStore& s) {
                     std::vector<Var> pred;
                     for (int u = 0; u < 2; ++u) pred.push_back(ad::sigmoid(t.param(s.at("scale" + std::to_string(u)))));
                     return losses::dice_loss(pred, gt);
                   }, store, c.eps, c.floor);
                 }});
  out.push_back({"loss", "multitask", [](const GradcheckConfig& c, const Draw& d) {
                   TrainConfig tc;
                   tc.model = small_model(c);
                   const SceneTargets targets = scene_targets(d.scene, d.graph, tc.model.num_bins);
                   return check_model(c, d, tc.model, [&](Tape& t, ad::ParameterStore& s, const ModelConfig& m) {
                     const ModelOutput out = run_model(t, s, d.graph, m);
                     return scene_loss(t, out, targets, tc).total;
                   });
                 }});
  return out;
}

}  // namespace

void GradcheckConfig::validate() const {
  if (draws < 1) throw ConfigError("gradcheck.draws must be >= 1");
  if (min_nodes < 1 || max_nodes < min_nodes) throw ConfigError("gradcheck: need 1 <= min_nodes <= max_nodes");
  if (k < 0) throw ConfigError("gradcheck.k must be >= 0");
  if (hidden_dim < 1 || head_hidden < 1) throw ConfigError("gradcheck: dims must be >= 1");
  if (!(eps > 0.0)) throw ConfigError("gradcheck.eps must be > 0");
  if (floor < 0.0) throw ConfigError("gradcheck.floor must be >= 0");
  if (!(init_scale > 0.0)) throw ConfigError("gradcheck.init_scale must be > 0");
  if (!(threshold > 0.0)) throw ConfigError("gradcheck.threshold must be > 0");
}

void to_json(json& j, const GradcheckConfig& c) {
  j = {{"draws", c.draws}, {"min_nodes", c.min_nodes}, {"max_nodes", c.max_nodes}, {"k", c.k},
       {"hidden_dim", c.hidden_dim}, {"head_hidden", c.head_hidden}, {"init_scale", c.init_scale}, {"eps", c.eps}, {"floor", c.floor},
       {"threshold", c.threshold}, {"seed", c.seed}};
}

void from_json(const json& j, GradcheckConfig& c) {
  constexpr const char* w = "gradcheck";
  jsonutil::require_keys(j, {"draws", "min_nodes", "max_nodes", "k", "hidden_dim", "head_hidden", "init_scale", "eps", "floor",
                             "threshold", "seed"},
                         w);
  jsonutil::read(j, "draws", c.draws, w);
  jsonutil::read(j, "min_nodes", c.min_nodes, w);
  jsonutil::read(j, "max_nodes", c.max_nodes, w);
  jsonutil::read(j, "k", c.k, w);
  jsonutil::read(j, "hidden_dim", c.hidden_dim, w);
  jsonutil::read(j, "head_hidden", c.head_hidden, w);
  jsonutil::read(j, "init_scale", c.init_scale, w);
  jsonutil::read(j, "eps", c.eps, w);
  jsonutil::read(j, "floor", c.floor, w);
  jsonutil::read(j, "threshold", c.threshold, w);
  jsonutil::read(j, "seed", c.seed, w);
}

void to_json(json& j, const GradcheckEntry& e) {
  j = {{"module", e.module}, {"name", e.name}, {"draws", e.draws}, {"coordinates", e.coordinates},
       {"max_relative_error", e.max_relative_error}, {"worst_parameter", e.worst_parameter},
       {"worst_draw", e.worst_draw}, {"worst_analytic", e.worst_analytic}, {"worst_numeric", e.worst_numeric}};
}

void to_json(json& j, const GradcheckReport& r) {
  j = {{"entries", r.entries}, {"max_relative_error", r.max_relative_error}, {"seconds", r.seconds}};
}

std::vector<std::string> gradcheck_targets() {
  std::vector<std::string> names;
  for (const Target& t : targets()) names.push_back(t.name);
  return names;
}

GradcheckReport run_gradcheck(const GradcheckConfig& config) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Draw> draws;
  for (int i = 0; i < config.draws; ++i) draws.push_back(make_draw(config, i));
  GradcheckReport report;
  for (const Target& t : targets()) {
    GradcheckEntry e;
    e.module = t.module;
    e.name = t.name;
    for (int i = 0; i < config.draws; ++i) {
      const ad::GradCheckResult r = t.fn(config, draws[i]);
      ++e.draws;
      e.coordinates += r.coordinates_checked;
      if (e.worst_draw < 0 || r.max_relative_error > e.max_relative_error) {
        e.max_relative_error = r.max_relative_error;
        e.worst_parameter = r.worst_parameter;
        e.worst_draw = i;
        e.worst_analytic = r.worst_analytic;
        e.worst_numeric = r.worst_numeric;
      }
    }
    report.max_relative_error = std::max(report.max_relative_error, e.max_relative_error);
    report.entries.push_back(std::move(e));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace bevgraph
