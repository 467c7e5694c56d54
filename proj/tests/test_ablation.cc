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

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "bevgraph/ablation.h"
#include "bevgraph/errors.h"
#include "bevgraph/gradcheck.h"
#include "bevgraph/report.h"

using namespace bevgraph;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> labels(const std::vector<AblationLevel>& ls) {
  std::vector<std::string> out;
  for (const auto& l : ls) out.push_back(l.label);
  return out;
}

fs::path scratch(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("bevgraph_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

AblationRun fake_run(const std::string& level, std::uint64_t seed, double err, bool diverged = false) {
  AblationRun r;
  r.level = level;
  r.seed = seed;
  r.diverged = diverged;
  r.metrics.loc_error = err;
  r.metrics.mean_iou = 0.1 * seed;
  r.metrics.loc_error_by_coarse_distance = {err, std::nullopt, 2 * err};
  return r;
}

}  // namespace

TEST_CASE("ablation levels") {
  const TrainConfig base;
  const auto prop = ablation_levels(AblationAxis::kPropagationMode, base);
  CHECK(labels(prop) == std::vector<std::string>{"n2n", "n2n + e2n", "n2n + e2n + e2e", "n2n + e2n + e2e + n2e"});
  const std::vector<std::string> sup = {"nodes", "nodes", "nodes and edges", "nodes and edges"};
  for (std::size_t i = 0; i < prop.size(); ++i) CHECK(prop[i].supervision == sup[i]);
  CHECK_FALSE(prop[0].config.model.prop.enable_e2n);
  CHECK(prop[1].config.model.prop.enable_e2n);
  CHECK_FALSE(prop[2].config.model.prop.enable_n2e);
  CHECK(prop[3].config.model.prop.enable_n2e);
  for (const auto& l : prop) CHECK(l.config.model.prop.enable_n2n);

  const auto deg = ablation_levels(AblationAxis::kNodeDegree, base);
  CHECK(labels(deg) == std::vector<std::string>{"0", "1", "2", "3", "5", "10", "20"});
  for (const auto& l : deg) CHECK(std::to_string(l.config.k) == l.label);

  const auto feat = ablation_levels(AblationAxis::kFeatureSet, base);
  REQUIRE(feat.size() == 5);
  CHECK(feat[0].label == "Appearance");
  CHECK(feat[4].label == "Position w. appearance, scanline, geometry");
  CHECK_FALSE(feat[3].config.model.prop.use_position);
  CHECK(feat[4].config.model.prop.use_position);
  for (const auto& l : feat) CHECK(l.config.model.features.appearance);

  CHECK(ablation_axis_from_string("node_degree") == AblationAxis::kNodeDegree);
  CHECK_THROWS_AS(ablation_axis_from_string("depth"), ConfigError);
}

TEST_CASE("ablation spec validation") {
  AblationSpec s;
  CHECK_NOTHROW(s.validate());
  s.seeds = {1, 2};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.seeds = {1, 1, 2};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.levels = {"n2n"};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.levels = {"n2n", "n2n + e2n", "n2n + x"};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.levels = {"n2n + e2n", "n2n"};
  CHECK(labels(s.selected_levels()) == std::vector<std::string>{"n2n + e2n", "n2n"});
  const nlohmann::json j = s;
  CHECK(nlohmann::json(j.get<AblationSpec>()) == j);
}

TEST_CASE("aggregate") {
  const Aggregate a = aggregate({3.0, 1.0, 2.0});
  CHECK(a.n == 3);
  CHECK(a.mean == doctest::Approx(2.0));
  CHECK(a.median == 2.0);
  CHECK(a.std == doctest::Approx(1.0));
  CHECK(aggregate({4.0, 1.0}).median == 2.5);
  CHECK(aggregate({5.0}).std == 0.0);
  CHECK(aggregate({}).n == 0);
}

TEST_CASE("summaries skip diverged runs") {
  const auto levels = ablation_levels(AblationAxis::kPropagationMode, TrainConfig{});
  const std::vector<AblationRun> runs = {fake_run("n2n", 1, 3.0), fake_run("n2n", 2, 5.0),
                                         fake_run("n2n", 3, 1e9, true), fake_run("n2n + e2n", 1, 2.0)};
  const auto sum = summarize({levels[0], levels[1]}, runs);
  REQUIRE(sum.size() == 2);
  CHECK(sum[0].diverged == 1);
  CHECK(sum[0].loc_error.n == 2);
  CHECK(sum[0].loc_error.median == 4.0);
  REQUIRE(sum[0].loc_error_by_coarse_distance.size() == 3);
  CHECK(sum[0].loc_error_by_coarse_distance[0].value() == 4.0);
  CHECK_FALSE(sum[0].loc_error_by_coarse_distance[1].has_value());
  CHECK(sum[1].loc_error.median == 2.0);
  CHECK(sum[1].supervision == "nodes");
}

TEST_CASE("small ablation end to end, with report") {
  SimConfig sim;
  const Dataset tr = generate_split(sim, "train", 8, 0), va = generate_split(sim, "val", 4, 8);
  AblationSpec spec;
  spec.axis = AblationAxis::kPropagationMode;
  spec.base.epochs = 1;
  spec.base.batch_size = 4;
  spec.levels = {"n2n", "n2n + e2n + e2e + n2e"};
  int seen = 0;
  const AblationResult r = run_ablation(spec, tr, va, [&](const AblationRun&) { ++seen; });
  CHECK(seen == 6);
  REQUIRE(r.runs.size() == 6);
  CHECK(r.runs[0].level == "n2n");
  CHECK(r.runs[2].seed == 3);
  CHECK(r.runs[3].level == "n2n + e2n + e2e + n2e");
  REQUIRE(find_level(r, "n2n") != nullptr);
  CHECK(find_level(r, "n2n + e2n") == nullptr);
  CHECK(find_level(r, "n2n")->loc_error.n == 3);

  // Seeds are independent of the level order and of the thread count.
  AblationSpec par = spec;
  par.threads = 2;
  const AblationResult rp = run_ablation(par, tr, va);
  for (std::size_t i = 0; i < r.runs.size(); ++i) CHECK(r.runs[i].metrics.loc_error == rp.runs[i].metrics.loc_error);

  const std::string csv = summary_csv(r);
  CHECK(csv.rfind("level,supervision,runs,diverged,loc_error_mean", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  const std::string runs = runs_csv(r);
  CHECK(std::count(runs.begin(), runs.end(), '\n') == 7);

  const fs::path dir = scratch("ablation");
  write_ablation(r, dir / "abl");
  for (const char* f : {"results.csv", "summary.csv", "summary.json"}) CHECK(fs::exists(dir / "abl" / f));
  const nlohmann::json sj = nlohmann::json::parse(slurp(dir / "abl" / "summary.json"));
  CHECK(sj["levels"].size() == 2);
  CHECK(sj["levels"][0]["loc_error"]["median"].get<double>() == find_level(r, "n2n")->loc_error.median);

  const ReportFiles rep = write_report({dir / "abl"}, dir / "report");
  CHECK(rep.written.size() >= 3);
  bool table = false, svg = false;
  for (const auto& p : rep.written) {
    CHECK(fs::exists(p));
    if (p.extension() == ".csv") table = true;
    if (p.extension() == ".svg") {
      svg = true;
      const std::string s = slurp(p);
      CHECK(s.find("<svg") != std::string::npos);
      CHECK(s.find("</svg>") != std::string::npos);
      CHECK(s.find("n2n + e2n + e2e + n2e") != std::string::npos);
    }
  }
  CHECK(table);
  CHECK(svg);
  CHECK_THROWS_AS(write_report({dir / "missing"}, dir / "r2"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("report of a training run") {
  SimConfig sim;
  const Dataset tr = generate_split(sim, "train", 6, 0), va = generate_split(sim, "val", 3, 6);
  TrainConfig cfg;
  cfg.epochs = 2;
  const fs::path dir = scratch("run");
  train(tr, va, cfg, dir / "run");
  const ReportFiles rep = write_report({dir / "run"}, dir / "report");
  bool epochs = false;
  for (const auto& p : rep.written)
    if (p.filename().string().find("epochs.csv") != std::string::npos) {
      epochs = true;
      const std::string s = slurp(p);
      CHECK(std::count(s.begin(), s.end(), '\n') == 4);  // header + epochs 0..2
    }
  CHECK(epochs);
  fs::remove_all(dir);
}

TEST_CASE("svg helpers") {
  CHECK(xml_escape("a<b & \"c\" > d") == "a&lt;b &amp; &quot;c&quot; &gt; d");
  const std::string line = svg_line_plot({{"full", {0, 10, 20}, {1.0, std::nullopt, 2.0}}}, "t<1>", "x", "y");
  CHECK(line.find("t&lt;1&gt;") != std::string::npos);
  CHECK(line.find("<svg") == 0);
  const std::string bars = svg_bar_chart({{"a", 1.0, 0.2}, {"b", 2.0, 0.0}}, "bars", "m");
  CHECK(bars.find(">a<") != std::string::npos);
  CHECK(bars.find(">b<") != std::string::npos);
  CHECK_NOTHROW(svg_bar_chart({}, "empty", "m"));
  CHECK_NOTHROW(svg_line_plot({}, "empty", "x", "y"));
}

TEST_CASE("gradcheck configuration and a reduced run") {
  GradcheckConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.eps == 1e-6);
  CHECK(c.draws >= 20);
  GradcheckConfig bad = c;
  bad.min_nodes = 9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.eps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  const nlohmann::json j = c;
  CHECK(nlohmann::json(j.get<GradcheckConfig>()) == j);

  const auto names = gradcheck_targets();
  for (const char* want : {"embed", "attention", "node_update", "edge_update", "propagate", "smooth_l1", "focal",
                           "orientation", "dice", "multitask"})
    CHECK(std::find(names.begin(), names.end(), want) != names.end());

  c.draws = 2;
  const GradcheckReport r = run_gradcheck(c);
  REQUIRE(r.entries.size() == names.size());
  for (const auto& e : r.entries) {
    CAPTURE(e.name);
    CHECK(e.draws == 2);
    CHECK(e.coordinates > 0);
    CHECK(e.max_relative_error < c.threshold);
  }
  CHECK(r.passed(c.threshold));
}
