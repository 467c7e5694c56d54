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
// Acceptance run: one PASS/FAIL line per criterion. Exit status is 0 iff every
// selected criterion passes, except those listed with --known-unattained:
// they still print FAIL, tagged, and leave the status alone. The training
// criteria share one benchmark build.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bevgraph/ablation.h"
#include "bevgraph/eval.h"
#include "bevgraph/gradcheck.h"
#include "bevgraph/graph.h"
#include "bevgraph/losses.h"
#include "bevgraph/propagation.h"
#include "bevgraph/scene_sim.h"
#include "bevgraph/training.h"

using namespace bevgraph;
using Clock = std::chrono::steady_clock;

namespace {

struct Line {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Line> g_lines;
std::set<int> g_known;
std::FILE* g_log = nullptr;

void report(int id, bool pass, const std::string& detail) {
  g_lines.push_back({id, pass, detail});
  const char* tag = !pass && g_known.count(id) ? " [known unattained, see notes]" : "";
  std::printf("criterion %2d %s%s  %s\n", id, pass ? "PASS" : "FAIL", tag, detail.c_str());
  std::fflush(stdout);
  if (g_log) {
    std::fprintf(g_log, "criterion %2d %s%s  %s\n", id, pass ? "PASS" : "FAIL", tag, detail.c_str());
    std::fflush(g_log);
  }
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

SceneGraph random_sim_graph(std::mt19937_64& rng, std::uint64_t id) {
  SimConfig sim;
  sim.min_objects = sim.max_objects = 2 + static_cast<int>(rng() % 11);
  const SyntheticScene s = sample_scene(sim, id);
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < s.objects.size(); ++i) dets.push_back({s.boxes[i], s.features[i]});
  GraphConfig g;
  g.k = 1 + static_cast<int>(rng() % 4);
  g.clamp_degree = true;
  return build_graph(dets, s.camera, g, scene_region_features(s, dets, sim));
}

// ---- 1 ---------------------------------------------------------------------
void conjugate_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  long mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    std::bernoulli_distribution coin(0.1 + 0.8 * (trial % 9) / 8.0);
    std::vector<Edge> edges;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (coin(rng)) edges.push_back({i, j});
    const Eigen::MatrixXd ae = conjugate_adjacency(incidence_matrix(edges, n));
    const int e = static_cast<int>(edges.size());
    if (ae.rows() != e || ae.cols() != e) {
      ++mismatches;
      continue;
    }
    for (int a = 0; a < e; ++a)
      for (int b = 0; b < e; ++b) {
        const bool share = a != b && (edges[a].i == edges[b].i || edges[a].i == edges[b].j ||
                                      edges[a].j == edges[b].i || edges[a].j == edges[b].j);
        mismatches += ae(a, b) != (share ? 1.0 : 0.0);
      }
  }
  const double s = seconds_since(t0);
  report(1, mismatches == 0 && s < 1.0,
         "conjugate adjacency vs brute force: 200 graphs, " + std::to_string(mismatches) + " mismatches, " +
             fmt(s, 3) + " s");
}

// ---- 2 ---------------------------------------------------------------------
void gradient_fidelity() {
  const GradcheckConfig cfg;  // 20 draws, 4-8 nodes, eps 1e-6
  const GradcheckReport r = run_gradcheck(cfg);
  bool layers = false, losses_seen = false, enough = true;
  std::string worst;
  double worst_err = -1;
  for (const auto& e : r.entries) {
    layers = layers || e.module == "layer";
    losses_seen = losses_seen || e.module == "loss";
    enough = enough && e.draws >= 20;
    if (e.max_relative_error > worst_err) {
      worst_err = e.max_relative_error;
      worst = e.name;
    }
  }
  const bool pass = layers && losses_seen && enough && cfg.eps == 1e-6 && r.passed(1e-4) && r.seconds < 120;
  report(2, pass,
         "grad_check over " + std::to_string(r.entries.size()) + " layers/losses, " + std::to_string(cfg.draws) +
             " draws: max rel err " + fmt(r.max_relative_error, 3) + " (" + worst + "), " + fmt(r.seconds, 3) + " s");
}

// ---- 3 ---------------------------------------------------------------------
void attention_normalization() {
  std::mt19937_64 rng(3);
  double worst = 0;
  long rows = 0;
  bool negative = false;
  const auto levels = ablation_levels(AblationAxis::kPropagationMode, TrainConfig{});
  for (int id = 0; id < 100; ++id) {
    const SceneGraph g = random_sim_graph(rng, 1000 + id);
    ModelConfig m = levels[id % 4].config.model;
    m.prop.num_layers = 2 + id % 2;
    ad::ParameterStore store(static_cast<std::uint64_t>(id));
    register_parameters(store, m);
    Tape t;
    const ModelOutput out = run_model(t, store, g, m, true);
    for (const auto* log : {&out.attention.node, &out.attention.edge})
      for (const Eigen::MatrixXd& a : *log) {
        negative = negative || (a.array() < 0).any();
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
          worst = std::max(worst, std::abs(a.row(r).sum() - 1.0));
          ++rows;
        }
      }
  }
  report(3, worst < 1e-12 && !negative && rows > 0,
         "attention rows over 100 graphs, all modes and layers: " + std::to_string(rows) + " rows, max |sum-1| " +
             fmt(worst, 3));
}

// ---- 4 ---------------------------------------------------------------------
void permutation_equivariance() {
  std::mt19937_64 rng(4);
  const ModelConfig m;
  ad::ParameterStore store(4);
  register_parameters(store, m);
  double worst = 0;
  auto row_diff = [&](const Eigen::MatrixXd& a, int ra, const Eigen::MatrixXd& b, int rb) {
    worst = std::max(worst, (a.row(ra) - b.row(rb)).cwiseAbs().maxCoeff());
  };
  for (int id = 0; id < 100; ++id) {
    const SceneGraph g = random_sim_graph(rng, 5000 + id);
    const int n = g.num_nodes();
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> emap;
    const SceneGraph pg = permute_nodes(g, perm, &emap);
    Tape t;
    const ModelOutput a = run_model(t, store, g, m), b = run_model(t, store, pg, m);
    for (int k = 0; k < kNumStates; ++k) {
      for (int i = 0; i < n; ++i) row_diff(a.embedded.nodes.x[k].value(), i, b.embedded.nodes.x[k].value(), perm[i]);
      for (int e = 0; e < g.num_edges(); ++e)
        row_diff(a.embedded.edges.x[k].value(), e, b.embedded.edges.x[k].value(), emap[e]);
    }
    for (int i = 0; i < n; ++i) row_diff(a.nodes.xz.value(), i, b.nodes.xz.value(), perm[i]);
  }
  report(4, worst < 1e-9, "propagate under node permutations, 100 graphs: max deviation " + fmt(worst, 3));
}

// ---- 9 ---------------------------------------------------------------------
void loss_closed_forms() {
  Tape t;
  Matrix p(1, 2);
  p << 0.5, 0.5;
  const std::vector<int> tgt = {0};
  const double focal = losses::focal_loss(t.constant(p), tgt).scalar();
  const double focal_err = std::abs(focal - 0.25 * 0.25 * std::log(2.0));
  Matrix d(1, 2), z = Matrix::Zero(1, 2);
  d << 0.5, 2.0;
  // Mean over the two entries of 0.5 d^2 and |d| - 0.5.
  const double sl1 = losses::smooth_l1(t.constant(d), t.constant(z)).scalar();
  Matrix d1(1, 1), d2(1, 1), z1 = Matrix::Zero(1, 1);
  d1 << 0.5;
  d2 << 2.0;
  const bool sl1_exact = losses::smooth_l1(t.constant(d1), t.constant(z1)).scalar() == 0.125 &&
                         losses::smooth_l1(t.constant(d2), t.constant(z1)).scalar() == 1.5 && sl1 == 0.8125;
  const auto bins = losses::OrientationBins::standard();
  double worst = 0;
  for (int i = 0; i < 720; ++i) {
    const double beta = -std::numbers::pi + i * (2 * std::numbers::pi / 720);
    worst = std::max(worst, std::abs(losses::decode_orientation(losses::encode_orientation(beta, bins), bins) - beta));
  }
  Matrix gt = Matrix::Zero(800, 1), half = Matrix::Zero(800, 1);
  gt.topRows(400).setOnes();
  half.topRows(200).setOnes();
  const double dice = losses::dice_loss(std::vector<Matrix>{half}, std::vector<Matrix>{gt});
  const bool pass = focal_err < 1e-9 && sl1_exact && worst < 1e-9 && std::abs(dice - 1.0 / 3.0) < 1e-6;
  report(9, pass,
         "focal err " + fmt(focal_err, 3) + ", smooth_l1 branches " + (sl1_exact ? "exact" : "off") +
             ", orientation round-trip " + fmt(worst, 3) + ", dice half " + fmt(dice, 10));
}

// ---- 10 --------------------------------------------------------------------
void iou_oracle() {
  const BevGrid grid;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> ux(-15, 15), uz(10, 40), ud(0.5, 9.0),
      uy(-std::numbers::pi, std::numbers::pi);
  int bad = 0;
  double worst_slack = 1e300;
  for (int t = 0; t < 100; ++t) {
    const GroundPose pose{ux(rng), uz(rng), t < 50 ? 0.0 : uy(rng), ud(rng), ud(rng)};
    const double area_cells = pose.length * pose.width / (grid.resolution * grid.resolution);
    const double bound = 2 * (pose.length + pose.width) / grid.resolution;
    const double dev = std::abs(rasterize_bev_box(pose, grid).count() - area_cells);
    worst_slack = std::min(worst_slack, bound - dev);
    bad += dev > bound;
  }
  const BevRaster m = rasterize_bev_box({2, 20, 0.3, 4, 2}, grid);
  const BevRaster far = rasterize_bev_box({-10, 40, 0.0, 4, 2}, grid);
  const bool self = mask_iou(m, m).value_or(-1) == 1.0;
  const bool disjoint = mask_iou(m, far).value_or(-1) == 0.0;
  report(10, bad == 0 && self && disjoint,
         "100 boxes (50 axis-aligned, 50 rotated): " + std::to_string(bad) + " outside the perimeter bound (min slack " +
             fmt(worst_slack, 3) + " cells); IoU(m,m)=1 " + (self ? "yes" : "no") + ", disjoint=0 " +
             (disjoint ? "yes" : "no"));
}

// ---- training criteria -----------------------------------------------------

struct Bench {
  Dataset train_set, val_set;
};

Bench make_bench(DepthCueMode mode, int n_train, int n_val) {
  SimConfig sim;
  sim.depth_cue = mode;
  return {generate_split(sim, "train", n_train, 0),
          generate_split(sim, "val", n_val, static_cast<std::uint64_t>(n_train))};
}

TrainConfig benchmark_config(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.adam.learning_rate = 1e-3;
  c.eval_every = epochs;
  return c;
}

AblationResult ablate(AblationAxis axis, std::vector<std::string> levels, const TrainConfig& base, const Bench& b,
                      int threads) {
  AblationSpec spec;
  spec.axis = axis;
  spec.levels = std::move(levels);
  spec.base = base;
  spec.threads = threads;
  return run_ablation(spec, b.train_set, b.val_set, [](const AblationRun& r) {
    std::fprintf(stderr, "  [%s] seed %llu: %s (%.1f s)\n", r.level.c_str(), static_cast<unsigned long long>(r.seed),
                 r.diverged ? "diverged" : fmt(r.metrics.loc_error).c_str(), r.wall_clock_s);
  });
}

double median_loc(const AblationResult& r, const std::string& level) {
  const LevelSummary* s = find_level(r, level);
  return s && s->loc_error.n > 0 ? s->loc_error.median : std::nan("");
}

void propagation_and_distance(const Bench& b, const TrainConfig& base, int threads,
                              std::optional<AblationResult>* keep) {
  const auto t0 = Clock::now();
  const AblationResult r = ablate(AblationAxis::kPropagationMode, {}, base, b, threads);
  const double s = seconds_since(t0);
  const double e0 = median_loc(r, "n2n"), e1 = median_loc(r, "n2n + e2n"), e2 = median_loc(r, "n2n + e2n + e2e"),
               e3 = median_loc(r, "n2n + e2n + e2e + n2e");
  const bool ordered = e0 >= e1 && e1 >= e2 && e2 >= e3;
  const bool gap = e3 <= 0.85 * e0;
  auto ge = [](double a, double b) { return a >= b ? " >= " : " < "; };
  report(6, ordered && gap && s < 3600,
         "median loc error n2n " + fmt(e0) + ge(e0, e1) + "+e2n " + fmt(e1) + ge(e1, e2) + "+e2e " + fmt(e2) +
             ge(e2, e3) + "full " + fmt(e3) + " m; full " + fmt(100 * (1 - e3 / e0), 3) + "% below n2n; " +
             fmt(s / 60, 3) + " min");

  auto ratio = [&](const std::string& level) {
    const LevelSummary* l = find_level(r, level);
    if (!l || l->loc_error_by_coarse_distance.size() < 5) return std::nan("");
    const auto& bins = l->loc_error_by_coarse_distance;
    if (!bins[0] || !bins[4]) return std::nan("");
    return *bins[4] / *bins[0];
  };
  const double rf = ratio("n2n + e2n + e2e + n2e"), rn = ratio("n2n");
  report(8, rf < rn,
         "far (40-50 m) / near (0-10 m) loc error: full " + fmt(rf, 3) + "x vs n2n " + fmt(rn, 3) + "x");
  *keep = r;
}

void node_degree(const Bench& b, const TrainConfig& base, int threads, const std::optional<AblationResult>& prop) {
  // k = 3 with every path enabled is the full model of the propagation
  // ablation; its runs are reused when the configs agree exactly.
  std::vector<std::string> levels = {"0", "1", "2", "3", "10", "20"};
  std::optional<double> k3;
  if (prop) {
    const auto full = ablation_levels(AblationAxis::kPropagationMode, base).back().config;
    const auto deg3 = ablation_levels(AblationAxis::kNodeDegree, base)[3].config;
    if (nlohmann::json(full) == nlohmann::json(deg3)) {
      k3 = median_loc(*prop, "n2n + e2n + e2e + n2e");
      levels.erase(levels.begin() + 3);
    }
  }
  const AblationResult r = ablate(AblationAxis::kNodeDegree, levels, base, b, threads);
  auto med = [&](const std::string& k) { return k == "3" && k3 ? *k3 : median_loc(r, k); };
  const double e0 = med("0"), e1 = med("1"), e2 = med("2"), e3 = med("3"), e10 = med("10"), e20 = med("20");
  const bool pass = e3 < e10 && e3 < e20 && e1 < e0 && e2 < e0 && e3 < e0;
  report(7, pass,
         "median loc error k=0 " + fmt(e0) + ", k=1 " + fmt(e1) + ", k=2 " + fmt(e2) + ", k=3 " + fmt(e3) + ", k=10 " +
             fmt(e10) + ", k=20 " + fmt(e20) + " m");
}

void position_ablation(int n_train, int n_val, const TrainConfig& base, int threads) {
  const Bench b = make_bench(DepthCueMode::kGeometryOnly, n_train, n_val);
  const std::string off = "Appearance, geometry, scanline", on = "Position w. appearance, scanline, geometry";
  const AblationResult r = ablate(AblationAxis::kFeatureSet, {off, on}, base, b, threads);
  const double e_off = median_loc(r, off), e_on = median_loc(r, on);
  report(5, e_on <= 0.9 * e_off,
         "geometry_only benchmark, median loc error position on " + fmt(e_on) + " vs off " + fmt(e_off) + " m (" +
             fmt(100 * (1 - e_on / e_off), 3) + "% lower)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::set<int> only;
  int n_train = 2000, n_val = 500, epochs = 30, threads = 1;
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 10))->delimiter(',');
  app.add_option("--train-scenes", n_train, "Benchmark train split size")->check(CLI::PositiveNumber);
  app.add_option("--val-scenes", n_val, "Benchmark val split size")->check(CLI::PositiveNumber);
  app.add_option("--epochs", epochs, "Benchmark epochs")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "Concurrent training runs")->check(CLI::PositiveNumber);
  app.add_option("--known-unattained", g_known, "Criteria whose failure is documented and not fatal")
      ->check(CLI::Range(1, 10))
      ->delimiter(',');
  std::string log_path;
  app.add_option("--log", log_path, "Also write criterion lines to this file");
  CLI11_PARSE(app, argc, argv);
  if (!log_path.empty() && !(g_log = std::fopen(log_path.c_str(), "w"))) {
    std::printf("cannot open %s\n", log_path.c_str());
    return 1;
  }
  auto want = [&](int c) { return only.empty() || only.count(c) > 0; };

  try {
    if (want(1)) conjugate_oracle();
    if (want(2)) gradient_fidelity();
    if (want(3)) attention_normalization();
    if (want(4)) permutation_equivariance();
    if (want(9)) loss_closed_forms();
    if (want(10)) iou_oracle();
    const TrainConfig base = benchmark_config(epochs);
    std::optional<AblationResult> prop;
    if (want(6) || want(7) || want(8)) {
      const Bench b = make_bench(DepthCueMode::kFull, n_train, n_val);
      if (want(6) || want(8)) propagation_and_distance(b, base, threads, &prop);
      if (want(7)) node_degree(b, base, threads, prop);
    }
    if (want(5)) position_ablation(n_train, n_val, base, threads);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 1;
  }

  int failed = 0, known = 0;
  for (const Line& l : g_lines) {
    if (l.pass) continue;
    if (g_known.count(l.id)) ++known;
    else ++failed;
  }
  std::printf("%zu criteria run, %d failed, %d known unattained\n", g_lines.size(), failed, known);
  if (g_log) {
    std::fprintf(g_log, "%zu criteria run, %d failed, %d known unattained\n", g_lines.size(), failed, known);
    std::fclose(g_log);
  }
  return failed == 0 ? 0 : 1;
}
