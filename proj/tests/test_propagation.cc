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

#include "bevgraph/errors.h"
#include "bevgraph/propagation.h"
#include "test_util.h"

using namespace bevgraph;
using Eigen::MatrixXd;

namespace {

constexpr double kPi = std::numbers::pi;

double lrelu(double x, double s = 0.2) { return x > 0 ? x : s * x; }

// d = 1 weights where Theta_x [x | p] = x + p, Theta_p p = p and every
// attention score is zero (a = 0); softmax is then uniform over N(i) + {i}.
LevelWeights uniform_weights(Tape& t, double theta_scale = 1.0) {
  LevelWeights w;
  for (auto& th : w.theta) th = t.constant(MatrixXd::Constant(2, 1, theta_scale));
  w.theta_p = t.constant(MatrixXd::Constant(1, 1, theta_scale));
  w.w_h = t.constant(MatrixXd::Ones(4, 1));
  w.theta_att = t.constant(MatrixXd::Ones(1, 1));
  w.a = t.constant(MatrixXd::Zero(1, 3));
  return w;
}

LevelEmbedding scalar_level(Tape& t, const std::vector<std::array<double, 4>>& rows) {
  LevelEmbedding e;
  const auto m = static_cast<Eigen::Index>(rows.size());
  for (int k = 0; k < 4; ++k) {
    MatrixXd v(m, 1);
    for (Eigen::Index r = 0; r < m; ++r) v(r, 0) = rows[r][k];
    if (k < 3) e.x[k] = t.constant(v);
    else e.p = t.constant(v);
  }
  return e;
}

SceneGraph bare_graph(int n, std::vector<Edge> edges) {
  SceneGraph g;
  g.nodes.resize(n);
  for (const Edge& e : edges) {
    GraphEdge ge;
    ge.endpoints = e;
    g.edges.push_back(ge);
  }
  finalize_structure(g);
  return g;
}

ModelConfig small_model(int d = 6) {
  ModelConfig m;
  m.prop.hidden_dim = d;
  m.head_hidden = 8;
  return m;
}

}  // namespace

TEST_CASE("embed_inputs: zero, identity and linearity") {
  const SceneGraph g = testing::sim_graph(1, 6, 2);
  ModelConfig cfg = small_model(2);
  const GraphInputs in = graph_inputs(g, cfg);
  Tape t;
  EmbedWeights zero;
  const auto dims = cfg.state_dims();
  for (int k = 0; k < kNumStates; ++k) {
    zero.node_state[k] = t.constant(MatrixXd::Zero(dims[k], 2));
    zero.edge_state[k] = t.constant(MatrixXd::Zero(dims[k], 2));
  }
  zero.node_pos = zero.edge_pos = t.constant(MatrixXd::Zero(2, 2));
  EmbeddedGraph e = embed_inputs(t, in, zero, cfg);
  for (int k = 0; k < kNumStates; ++k) CHECK(e.nodes.x[k].value().isZero(0));
  CHECK(e.nodes.p.value().isZero(0));
  CHECK(e.edges.p.value().isZero(0));

  EmbedWeights id = zero;
  id.node_pos = id.edge_pos = t.constant(MatrixXd::Identity(2, 2));
  e = embed_inputs(t, in, id, cfg);
  CHECK(e.nodes.p.value() == in.node_pos);
  CHECK(e.edges.p.value() == in.edge_pos);

  // embed(a v) = a embed(v).
  ad::ParameterStore s(3);
  register_parameters(s, cfg);
  const ModelWeights w = bind_weights(t, s, cfg);
  GraphInputs scaled = in;
  const double a = -2.75;
  for (auto& m : scaled.node_states) m *= a;
  scaled.node_pos *= a;
  const EmbeddedGraph e1 = embed_inputs(t, in, w.embed, cfg), e2 = embed_inputs(t, scaled, w.embed, cfg);
  for (int k = 0; k < kNumStates; ++k)
    CHECK(testing::max_abs(e2.nodes.x[k].value() - a * e1.nodes.x[k].value()) < 1e-12);
  CHECK(testing::max_abs(e2.nodes.p.value() - a * e1.nodes.p.value()) < 1e-12);
}

TEST_CASE("graph_inputs rejects mismatched feature dimensions") {
  const SceneGraph g = testing::sim_graph(1, 5, 2);
  ModelConfig cfg;
  cfg.appearance_dim = 12;
  CHECK_THROWS_AS(graph_inputs(g, cfg), ConfigError);
}

TEST_CASE("attention score and normalization") {
  const Eigen::VectorXd h = Eigen::VectorXd::Random(4), e = Eigen::VectorXd::Random(4);
  const MatrixXd th = MatrixXd::Random(3, 4);
  CHECK(attention_score(h, h, e, th, Eigen::VectorXd::Zero(9), 0.2) == 0.0);
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(4);
  CHECK(attention_score(z, z, z, th, Eigen::VectorXd::Random(9), 0.2) == 0.0);
  const MatrixXd one = MatrixXd::Ones(1, 1);
  CHECK(attention_score(Eigen::VectorXd::Constant(1, 1), Eigen::VectorXd::Constant(1, 2),
                        Eigen::VectorXd::Constant(1, 3), one, Eigen::VectorXd::Ones(3), 0.2) == 6.0);
  CHECK(attention_score(Eigen::VectorXd::Constant(1, -1), Eigen::VectorXd::Constant(1, -2),
                        Eigen::VectorXd::Constant(1, -3), one, Eigen::VectorXd::Ones(3), 0.2) ==
        doctest::Approx(-1.2));

  const Eigen::VectorXd single = normalize_attention(Eigen::VectorXd::Constant(1, 3.7));
  CHECK(single(0) == 1.0);
  const Eigen::VectorXd eq = normalize_attention(Eigen::VectorXd::Constant(3, -0.4));
  for (int i = 0; i < 3; ++i) CHECK(eq(i) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  Eigen::VectorXd s(2);
  s << 0.0, std::log(2.0);
  const Eigen::VectorXd two = normalize_attention(s);
  CHECK(two(0) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(two(1) == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK_THROWS_AS(normalize_attention(Eigen::VectorXd()), ConfigError);
}

TEST_CASE("attention_matrix agrees with the pointwise score") {
  // Score entries before softmax: recompute Lambda(h_i, h_j, e_ij) per pair.
  std::mt19937_64 rng(4);
  const SceneGraph g = testing::sim_graph(3, 6, 2);
  const int d = 3, n = g.num_nodes(), m = g.num_edges();
  Tape t;
  MatrixXd hp = MatrixXd::Random(n, d), lp = MatrixXd::Random(m, d);
  LevelWeights w;
  w.a = t.constant(MatrixXd::Random(1, 3 * d));
  std::vector<std::pair<int, int>> pairs;
  for (const GraphEdge& e : g.edges) pairs.emplace_back(e.endpoints.i, e.endpoints.j);
  const MatrixXd mask = g.adjacency + MatrixXd::Identity(n, n);
  const MatrixXd alpha = attention_matrix(t, t.constant(hp), t.constant(lp), pairs, mask, w, 0.2).value();
  const Eigen::VectorXd a = w.a.value().transpose();
  const MatrixXd id = MatrixXd::Identity(d, d);
  for (int i = 0; i < n; ++i) {
    std::vector<int> nbr = {i};
    std::vector<Eigen::VectorXd> link = {Eigen::VectorXd::Zero(d)};
    for (int e = 0; e < m; ++e) {
      const auto [p, q] = pairs[e];
      if (p == i || q == i) {
        nbr.push_back(p == i ? q : p);
        link.push_back(lp.row(e).transpose());
      }
    }
    Eigen::VectorXd sc(nbr.size());
    for (std::size_t r = 0; r < nbr.size(); ++r)
      sc(r) = attention_score(hp.row(i).transpose(), hp.row(nbr[r]).transpose(), link[r], id, a, 0.2);
    const Eigen::VectorXd want = normalize_attention(sc);
    double row = 0;
    for (std::size_t r = 0; r < nbr.size(); ++r) {
      CHECK(std::abs(alpha(i, nbr[r]) - want(r)) < 1e-12);
      row += alpha(i, nbr[r]);
    }
    CHECK(alpha.row(i).sum() == doctest::Approx(row).epsilon(1e-15));
  }
}

TEST_CASE("node_update: isolated node, zero weights, two-node hand example") {
  PropagationConfig pc;
  pc.hidden_dim = 1;
  SUBCASE("isolated node") {
    const SceneGraph g = bare_graph(1, {});
    Tape t;
    EmbeddedGraph emb;
    emb.nodes = scalar_level(t, {{1.5, -2.0, 0.25, 0.5}});
    LevelWeights w = uniform_weights(t, 0.7);
    w.a = t.constant(MatrixXd::Constant(1, 3, 0.9));
    MatrixXd att;
    const LevelEmbedding out = node_update(t, g, emb, w, pc, &att);
    CHECK(att(0, 0) == 1.0);
    const double x[3] = {1.5, -2.0, 0.25};
    for (int k = 0; k < 3; ++k) CHECK(out.x[k].value()(0, 0) == doctest::Approx(lrelu(0.7 * (x[k] + 0.5))));
    CHECK(out.p.value()(0, 0) == doctest::Approx(lrelu(0.7 * 0.5)));
  }
  SUBCASE("zero weights") {
    const SceneGraph g = bare_graph(3, {{0, 1}, {1, 2}});
    Tape t;
    EmbeddedGraph emb;
    emb.nodes = scalar_level(t, {{1, 2, 3, 4}, {5, 6, 7, 8}, {-1, -2, -3, -4}});
    emb.edges = scalar_level(t, {{1, 1, 1, 1}, {2, 2, 2, 2}});
    emb.has_edges = true;
    const LevelWeights w = uniform_weights(t, 0.0);
    const LevelEmbedding out = node_update(t, g, emb, w, pc);
    for (int k = 0; k < 3; ++k) CHECK(out.x[k].value().isZero(0));
    CHECK(out.p.value().isZero(0));
  }
  SUBCASE("two nodes, equal attention") {
    const SceneGraph g = bare_graph(2, {{0, 1}});
    Tape t;
    EmbeddedGraph emb;
    const std::array<double, 4> n0 = {1.0, -3.0, 0.5, 2.0}, n1 = {-2.0, 4.0, 1.5, -1.0}, e = {0.3, -0.6, 2.0, 0.5};
    emb.nodes = scalar_level(t, {n0, n1});
    emb.edges = scalar_level(t, {e});
    emb.has_edges = true;
    const LevelWeights w = uniform_weights(t);
    for (bool e2n : {true, false}) {
      pc.enable_e2n = e2n;
      const LevelEmbedding out = node_update(t, g, emb, w, pc);
      for (int k = 0; k < 4; ++k) {
        // alpha = 1/2 for self and neighbor; x' = lrelu(1/2 (x_i + p_i) + 1/2 ((x_j + p_j) + (x_e + p_e))).
        const double ek = e2n ? (k < 3 ? e[k] + e[3] : e[3]) : 0.0;
        const double si0 = k < 3 ? n0[k] + n0[3] : n0[3], si1 = k < 3 ? n1[k] + n1[3] : n1[3];
        const double want0 = lrelu(0.5 * si0 + 0.5 * (si1 + ek));
        const double want1 = lrelu(0.5 * si1 + 0.5 * (si0 + ek));
        const Var& v = k < 3 ? out.x[k] : out.p;
        CHECK(std::abs(v.value()(0, 0) - want0) < 1e-12);
        CHECK(std::abs(v.value()(1, 0) - want1) < 1e-12);
      }
    }
  }
}

TEST_CASE("edge_update: single edge, path hand example, zero weights") {
  PropagationConfig pc;
  pc.hidden_dim = 1;
  SUBCASE("single edge updates from itself only") {
    const SceneGraph g = bare_graph(2, {{0, 1}});
    Tape t;
    EmbeddedGraph emb;
    emb.nodes = scalar_level(t, {{9, 9, 9, 9}, {8, 8, 8, 8}});
    emb.edges = scalar_level(t, {{1.0, 2.0, -3.0, 0.5}});
    emb.has_edges = true;
    MatrixXd att;
    const LevelEmbedding out = edge_update(t, g, emb, uniform_weights(t), pc, &att);
    CHECK(att(0, 0) == 1.0);
    CHECK(out.x[0].value()(0, 0) == doctest::Approx(1.5));
    CHECK(out.x[2].value()(0, 0) == doctest::Approx(lrelu(-2.5)));
  }
  SUBCASE("path 0-1-2 aggregates the other edge and the shared node") {
    const SceneGraph g = bare_graph(3, {{0, 1}, {1, 2}});
    REQUIRE(g.conj_pairs.size() == 1);
    CHECK(g.conj_pairs[0].shared == 1);
    Tape t;
    EmbeddedGraph emb;
    const std::array<double, 4> n1 = {0.25, -1.0, 2.0, 0.75}, e0 = {1.0, 2.0, -3.0, 0.5}, e1 = {-1.5, 0.5, 1.0, -0.25};
    emb.nodes = scalar_level(t, {{7, 7, 7, 7}, n1, {-7, -7, -7, -7}});
    emb.edges = scalar_level(t, {e0, e1});
    emb.has_edges = true;
    for (bool n2e : {true, false}) {
      pc.enable_n2e = n2e;
      const LevelEmbedding out = edge_update(t, g, emb, uniform_weights(t), pc);
      for (int k = 0; k < 4; ++k) {
        auto lift = [k](const std::array<double, 4>& r) { return k < 3 ? r[k] + r[3] : r[3]; };
        const double link = n2e ? lift(n1) : 0.0;
        const Var& v = k < 3 ? out.x[k] : out.p;
        CHECK(std::abs(v.value()(0, 0) - lrelu(0.5 * lift(e0) + 0.5 * (lift(e1) + link))) < 1e-12);
        CHECK(std::abs(v.value()(1, 0) - lrelu(0.5 * lift(e1) + 0.5 * (lift(e0) + link))) < 1e-12);
      }
    }
  }
  SUBCASE("zero edge weights") {
    const SceneGraph g = bare_graph(4, {{0, 1}, {1, 2}, {1, 3}});
    Tape t;
    EmbeddedGraph emb;
    emb.nodes = scalar_level(t, {{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 1, 2, 3}, {4, 5, 6, 7}});
    emb.edges = scalar_level(t, {{1, 1, 1, 1}, {2, 2, 2, 2}, {3, 3, 3, 3}});
    emb.has_edges = true;
    const LevelEmbedding out = edge_update(t, g, emb, uniform_weights(t, 0.0), pc);
    for (int k = 0; k < 3; ++k) CHECK(out.x[k].value().isZero(0));
  }
}

TEST_CASE("propagation config invariants") {
  PropagationConfig pc;
  CHECK_NOTHROW(pc.validate());
  pc.num_layers = 0;
  CHECK_THROWS_AS(pc.validate(), ConfigError);
  pc = {};
  pc.enable_e2e = false;
  CHECK_THROWS_AS(pc.validate(), ConfigError);  // n2e needs e2e
  pc.enable_n2e = false;
  CHECK_NOTHROW(pc.validate());
  CHECK_FALSE(pc.edge_supervision());
}

TEST_CASE("one layer is one node pass followed by one edge pass") {
  const SceneGraph g = testing::sim_graph(5, 6, 2);
  ModelConfig cfg = small_model();
  cfg.prop.num_layers = 1;
  ad::ParameterStore s(7);
  register_parameters(s, cfg);
  Tape t;
  const ModelWeights w = bind_weights(t, s, cfg);
  const EmbeddedGraph in = embed_inputs(t, graph_inputs(g, cfg), w.embed, cfg);
  const EmbeddedGraph out = propagate(t, g, in, w.layers, cfg.prop);
  EmbeddedGraph manual = in;
  manual.nodes = node_update(t, g, in, w.layers[0].node, cfg.prop);
  manual.edges = edge_update(t, g, manual, w.layers[0].edge, cfg.prop);
  for (int k = 0; k < kNumStates; ++k) {
    CHECK(out.nodes.x[k].value() == manual.nodes.x[k].value());
    CHECK(out.edges.x[k].value() == manual.edges.x[k].value());
  }
  std::vector<LayerWeights> two = {w.layers[0], w.layers[0]};
  CHECK_THROWS_AS(propagate(t, g, in, two, cfg.prop), ConfigError);
}

TEST_CASE("attention rows sum to one in every layer") {
  ModelConfig cfg = small_model();
  cfg.prop.num_layers = 3;
  ad::ParameterStore s(2);
  register_parameters(s, cfg);
  for (std::uint64_t id = 0; id < 100; ++id) {
    const SceneGraph g = testing::sim_graph(id, 2 + static_cast<int>(id % 11), 1 + static_cast<int>(id % 4));
    Tape t;
    const ModelOutput out = run_model(t, s, g, cfg, true);
    REQUIRE(out.attention.node.size() == 3);
    for (const auto* layers : {&out.attention.node, &out.attention.edge})
      for (const MatrixXd& a : *layers) {
        CHECK((a.array() >= 0).all());
        for (Eigen::Index r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-12);
      }
  }
}

TEST_CASE("propagate is equivariant to node permutations") {
  std::mt19937_64 rng(8);
  ModelConfig cfg = small_model();
  ad::ParameterStore s(4);
  register_parameters(s, cfg);
  for (std::uint64_t id = 0; id < 100; ++id) {
    const int n = 2 + static_cast<int>(id % 10);
    const SceneGraph g = testing::sim_graph(id + 500, n, 1 + static_cast<int>(id % 3));
    const auto perm = testing::random_permutation(n, rng);
    std::vector<int> emap;
    const SceneGraph pg = permute_nodes(g, perm, &emap);
    Tape t;
    const ModelOutput a = run_model(t, s, g, cfg), b = run_model(t, s, pg, cfg);
    for (int k = 0; k < kNumStates; ++k) {
      for (int i = 0; i < n; ++i)
        CHECK(testing::max_abs(a.embedded.nodes.x[k].value().row(i) - b.embedded.nodes.x[k].value().row(perm[i])) <
              1e-9);
      for (int e = 0; e < g.num_edges(); ++e)
        CHECK(testing::max_abs(a.embedded.edges.x[k].value().row(e) -
                               b.embedded.edges.x[k].value().row(emap[e])) < 1e-9);
    }
    for (int i = 0; i < n; ++i)
      CHECK(testing::max_abs(a.nodes.xz.value().row(i) - b.nodes.xz.value().row(perm[i])) < 1e-9);
  }
}

TEST_CASE("position sensitivity separates isomorphic nodes") {
  // Two disjoint copies of the same two-node graph at different positions.
  SceneGraph g = testing::sim_graph(2, 2, 1);
  const SceneGraph base = g;
  g.nodes.push_back(base.nodes[0]);
  g.nodes.push_back(base.nodes[1]);
  g.nodes[2].position.z += 10;
  g.nodes[3].position.z += 10;
  GraphEdge e = base.edges[0];
  e.endpoints = {2, 3};
  e.position.z += 10;
  g.edges.push_back(e);
  finalize_structure(g);
  for (bool pos : {true, false}) {
    ModelConfig cfg = small_model();
    cfg.prop.use_position = pos;
    ad::ParameterStore s(6);
    register_parameters(s, cfg);
    Tape t;
    const ModelOutput out = run_model(t, s, g, cfg);
    double diff = 0;
    for (int k = 0; k < kNumStates; ++k)
      diff = std::max(diff, testing::max_abs(out.embedded.nodes.x[k].value().row(0) -
                                             out.embedded.nodes.x[k].value().row(2)));
    CAPTURE(pos);
    if (pos) CHECK(diff > 1e-6);
    else CHECK(diff == 0.0);
  }
}

TEST_CASE("disabled message paths never read their inputs") {
  const SceneGraph g = testing::sim_graph(12, 7, 3);
  SceneGraph scrambled = g;
  for (GraphEdge& e : scrambled.edges)
    for (double& v : e.features.appearance) v = -v + 3.0;
  struct Mode {
    bool e2n, e2e, n2e;
  };
  for (Mode m : {Mode{false, false, false}, Mode{true, false, false}}) {
    ModelConfig cfg = small_model();
    cfg.prop.enable_e2n = m.e2n;
    cfg.prop.enable_e2e = m.e2e;
    cfg.prop.enable_n2e = m.n2e;
    ad::ParameterStore s(1);
    register_parameters(s, cfg);
    Tape t;
    const ModelOutput a = run_model(t, s, g, cfg), b = run_model(t, s, scrambled, cfg);
    if (!m.e2n) {
      CHECK_FALSE(a.embedded.has_edges);
      CHECK(a.nodes.xz.value() == b.nodes.xz.value());
    } else {
      CHECK(a.nodes.xz.value() != b.nodes.xz.value());
      // Without e2e the edge embeddings stay at their input lift.
      const ModelWeights w = bind_weights(t, s, cfg);
      const EmbeddedGraph in = embed_inputs(t, graph_inputs(g, cfg), w.embed, cfg);
      CHECK(a.embedded.edges.x[2].value() == in.edges.x[2].value());
      CHECK_FALSE(a.edges.xz.valid());
    }
  }
}

TEST_CASE("readout localization") {
  ModelConfig cfg = small_model(2);
  cfg.depth_scale = 1.0;
  Tape t;
  LevelEmbedding lvl;
  for (auto& x : lvl.x) x = t.constant(MatrixXd::Random(3, 2));
  lvl.p = t.constant(MatrixXd::Random(3, 2));
  const Var dec = t.constant(MatrixXd::Random(2, 2));
  auto mlp_with_bias = [&](double da, double z) {
    MlpWeights m;
    m.w1 = t.constant(MatrixXd::Zero(8, 8));
    m.b1 = t.constant(MatrixXd::Zero(1, 8));
    m.w2 = t.constant(MatrixXd::Zero(8, 2));
    MatrixXd b(1, 2);
    b << da, z;
    m.b2 = t.constant(b);
    return m;
  };
  Eigen::VectorXd a0 = Eigen::VectorXd::Zero(3);
  Localization loc = readout_localization(t, lvl, a0, dec, mlp_with_bias(0, 0), cfg);
  CHECK(loc.xz.value().isZero(0));
  loc = readout_localization(t, lvl, a0, dec, mlp_with_bias(0, 5), cfg);
  CHECK(loc.xz.value()(1, 0) == 0.0);
  CHECK(loc.xz.value()(1, 1) == 5.0);
  loc = readout_localization(t, lvl, a0, dec, mlp_with_bias(kPi / 4, 10), cfg);
  CHECK(loc.xz.value()(2, 0) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(loc.xz.value()(2, 1) == 10.0);
  CHECK(loc.clamped == 0);
  a0 << 1.5, 0.0, -1.5;
  loc = readout_localization(t, lvl, a0, dec, mlp_with_bias(0.2, 1), cfg);
  CHECK(loc.clamped == 1);
  CHECK(loc.alpha.value()(0, 0) == doctest::Approx(kPi / 2 - 1e-3).epsilon(1e-15));
  CHECK(loc.alpha.value()(2, 0) == doctest::Approx(-1.3));
}

TEST_CASE("early heads") {
  const SceneGraph g = testing::sim_graph(3, 5, 2);
  ModelConfig cfg = small_model();
  ad::ParameterStore s(1);
  register_parameters(s, cfg);
  for (const char* n : {"head.cls.w1", "head.cls.b1", "head.cls.w2", "head.cls.b2"}) s.at(n).value.setZero();
  Tape t;
  const ModelOutput out = run_model(t, s, g, cfg);
  const MatrixXd& p = out.early.class_probs.value();
  CHECK(p.cols() == cfg.num_classes);
  for (Eigen::Index r = 0; r < p.rows(); ++r)
    for (Eigen::Index c = 0; c < p.cols(); ++c) CHECK(p(r, c) == doctest::Approx(1.0 / cfg.num_classes));
  CHECK(out.early.orientation.cols() == 6);
  CHECK(out.early.dims.cols() == 2);
  CHECK(out.early.dims.value().allFinite());
  const MatrixXd& o = out.early.orientation.value();
  for (Eigen::Index r = 0; r < o.rows(); ++r) {
    CHECK(o(r, 0) > 0);
    CHECK(o(r, 0) < 1);
    CHECK(o(r, 3) > 0);
    CHECK(o(r, 3) < 1);
  }
}

TEST_CASE("model config JSON round-trips and rejects unknown keys") {
  ModelConfig c = small_model();
  c.prop.enable_n2e = false;
  c.features.scanline = false;
  nlohmann::json j = c;
  const ModelConfig back = j.get<ModelConfig>();
  CHECK(nlohmann::json(back) == j);
  j["propagation"]["bogus"] = 1;
  CHECK_THROWS_AS(j.get<ModelConfig>(), ConfigError);
}
