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
#include "bevgraph/ablation.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "bevgraph/errors.h"
#include "bevgraph/json_util.h"

namespace bevgraph {

namespace {

using nlohmann::json;

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

// Labels may contain commas; quote every text field.
std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::kPropagationMode: return "propagation_mode";
    case AblationAxis::kNodeDegree: return "node_degree";
    case AblationAxis::kFeatureSet: return "feature_set";
  }
  return "?";
}

AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "propagation_mode") return AblationAxis::kPropagationMode;
  if (s == "node_degree") return AblationAxis::kNodeDegree;
  if (s == "feature_set") return AblationAxis::kFeatureSet;
  throw ConfigError("unknown ablation axis '" + s + "' (expected propagation_mode, node_degree, feature_set)");
}

std::vector<AblationLevel> ablation_levels(AblationAxis axis, const TrainConfig& base) {
  std::vector<AblationLevel> out;
  auto supervision = [](const TrainConfig& c) {
    return c.model.prop.edge_supervision() ? "nodes and edges" : "nodes";
  };
  switch (axis) {
    case AblationAxis::kPropagationMode: {
      const char* labels[] = {"n2n", "n2n + e2n", "n2n + e2n + e2e", "n2n + e2n + e2e + n2e"};
      for (int l = 0; l < 4; ++l) {
        TrainConfig c = base;
        c.model.prop.enable_n2n = true;
        c.model.prop.enable_e2n = l >= 1;
        c.model.prop.enable_e2e = l >= 2;
        c.model.prop.enable_n2e = l >= 3;
        out.push_back({labels[l], supervision(c), c});
      }
      break;
    }
    case AblationAxis::kNodeDegree:
      for (int k : {0, 1, 2, 3, 5, 10, 20}) {
        TrainConfig c = base;
        c.k = k;
        c.clamp_degree = true;
        out.push_back({std::to_string(k), supervision(c), c});
      }
      break;
    case AblationAxis::kFeatureSet: {
      struct Row {
        const char* label;
        bool scan, geom, pos;
      };
      const Row rows[] = {{"Appearance", false, false, false},
                          {"Appearance, scanline", true, false, false},
                          {"Appearance, geometry", false, true, false},
                          {"Appearance, geometry, scanline", true, true, false},
                          {"Position w. appearance, scanline, geometry", true, true, true}};
      for (const Row& r : rows) {
        TrainConfig c = base;
        c.model.features = {r.geom, r.scan, true};
        c.model.prop.use_position = r.pos;
        out.push_back({r.label, supervision(c), c});
      }
      break;
    }
  }
  return out;
}

std::vector<AblationLevel> AblationSpec::selected_levels() const {
  std::vector<AblationLevel> all = ablation_levels(axis, base);
  if (levels.empty()) return all;
  std::vector<AblationLevel> out;
  for (const std::string& want : levels) {
    auto it = std::find_if(all.begin(), all.end(), [&](const AblationLevel& l) { return l.label == want; });
    if (it == all.end()) {
      std::string known;
      for (const auto& l : all) known += (known.empty() ? "'" : ", '") + l.label + "'";
      throw ConfigError("ablation: unknown level '" + want + "' for axis " + to_string(axis) + " (known: " + known + ")");
    }
    out.push_back(*it);
  }
  return out;
}

void AblationSpec::validate() const {
  base.validate();
  if (selected_levels().size() < 2) throw ConfigError("ablation: need at least 2 levels");
  if (seeds.size() < 3) throw ConfigError("ablation: need at least 3 seeds per level");
  std::vector<std::uint64_t> s = seeds;
  std::sort(s.begin(), s.end());
  if (std::adjacent_find(s.begin(), s.end()) != s.end()) throw ConfigError("ablation: duplicate seeds");
  if (threads < 1) throw ConfigError("ablation: threads must be >= 1");
}

void to_json(json& j, const AblationSpec& s) {
  j = {{"axis", to_string(s.axis)}, {"levels", s.levels}, {"base", s.base}, {"seeds", s.seeds},
       {"threads", s.threads}};
}

void from_json(const json& j, AblationSpec& s) {
  constexpr const char* w = "ablation";
  jsonutil::require_keys(j, {"axis", "levels", "base", "seeds", "threads"}, w);
  if (auto it = j.find("axis"); it != j.end()) s.axis = ablation_axis_from_string(it->get<std::string>());
  jsonutil::read(j, "levels", s.levels, w);
  if (auto it = j.find("base"); it != j.end()) {
    TrainConfig c = s.base;
    from_json(*it, c);
    s.base = c;
  }
  jsonutil::read(j, "seeds", s.seeds, w);
  jsonutil::read(j, "threads", s.threads, w);
}

Aggregate aggregate(std::vector<double> values) {
  Aggregate a;
  a.n = static_cast<int>(values.size());
  if (a.n == 0) return a;
  double s = 0.0;
  for (double v : values) s += v;
  a.mean = s / a.n;
  if (a.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / (a.n - 1));
  }
  std::sort(values.begin(), values.end());
  a.median = a.n % 2 ? values[a.n / 2] : 0.5 * (values[a.n / 2 - 1] + values[a.n / 2]);
  return a;
}

std::vector<LevelSummary> summarize(const std::vector<AblationLevel>& levels, const std::vector<AblationRun>& runs) {
  std::vector<LevelSummary> out;
  for (const AblationLevel& level : levels) {
    LevelSummary s;
    s.level = level.label;
    s.supervision = level.supervision;
    std::vector<double> loc, iou;
    std::vector<std::vector<double>> bins;
    for (const AblationRun& r : runs) {
      if (r.level != level.label) continue;
      if (r.diverged) {
        ++s.diverged;
        continue;
      }
      loc.push_back(r.metrics.loc_error);
      if (r.metrics.mean_iou) iou.push_back(*r.metrics.mean_iou);
      const auto& by = r.metrics.loc_error_by_coarse_distance;
      if (bins.size() < by.size()) bins.resize(by.size());
      for (std::size_t b = 0; b < by.size(); ++b)
        if (by[b]) bins[b].push_back(*by[b]);
    }
    s.loc_error = aggregate(loc);
    s.iou = aggregate(iou);
    for (const auto& b : bins)
      s.loc_error_by_coarse_distance.push_back(b.empty() ? std::nullopt : std::optional<double>(aggregate(b).median));
    out.push_back(std::move(s));
  }
  return out;
}

AblationResult run_ablation(const AblationSpec& spec, const Dataset& train_set, const Dataset& val_set,
                            const std::function<void(const AblationRun&)>& on_run) {
  spec.validate();
  const std::vector<AblationLevel> levels = spec.selected_levels();
  AblationResult result;
  result.spec = spec;
  const int n = static_cast<int>(levels.size() * spec.seeds.size());
  result.runs.resize(static_cast<std::size_t>(n));
  const int workers = std::min(effective_threads(spec.threads), n);
  auto run_one = [&](int idx) {
    const AblationLevel& level = levels[idx / spec.seeds.size()];
    AblationRun& run = result.runs[idx];
    run.level = level.label;
    run.supervision = level.supervision;
    run.seed = spec.seeds[idx % spec.seeds.size()];
    TrainConfig cfg = level.config;
    cfg.seed = run.seed;
    if (workers > 1) cfg.threads = 1;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      TrainResult tr = train(train_set, val_set, cfg);
      run.metrics = tr.record.final_val;
    } catch (const NumericalError& e) {
      run.diverged = true;
      run.error = e.what();
    }
    run.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) {
      run_one(i);
      if (on_run) on_run(result.runs[i]);
    }
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (int i = t; i < n; i += workers) run_one(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    if (on_run)
      for (const AblationRun& r : result.runs) on_run(r);
  }
  result.summary = summarize(levels, result.runs);
  return result;
}

const LevelSummary* find_level(const AblationResult& r, const std::string& label) {
  for (const LevelSummary& s : r.summary)
    if (s.level == label) return &s;
  return nullptr;
}

std::string runs_csv(const AblationResult& r) {
  std::ostringstream os;
  os << "axis,level,supervision,seed,diverged,loc_error,mean_iou,wall_clock_s,error\n";
  for (const AblationRun& run : r.runs) {
    os << to_string(r.spec.axis) << ',' << quoted(run.level) << ',' << quoted(run.supervision) << ',' << run.seed
       << ',' << (run.diverged ? 1 : 0) << ',' << (run.diverged ? "" : fmt(run.metrics.loc_error)) << ','
       << (run.diverged ? "" : fmt(run.metrics.mean_iou)) << ',' << fmt(run.wall_clock_s) << ','
       << quoted(run.error) << '\n';
  }
  return os.str();
}

std::string summary_csv(const AblationResult& r) {
  std::ostringstream os;
  os << "level,supervision,runs,diverged,loc_error_mean,loc_error_std,loc_error_median,iou_mean,iou_std,iou_median\n";
  for (const LevelSummary& s : r.summary) {
    os << quoted(s.level) << ',' << quoted(s.supervision) << ',' << s.loc_error.n << ',' << s.diverged << ','
       << fmt(s.loc_error.mean) << ',' << fmt(s.loc_error.std) << ',' << fmt(s.loc_error.median) << ','
       << fmt(s.iou.mean) << ',' << fmt(s.iou.std) << ',' << fmt(s.iou.median) << '\n';
  }
  return os.str();
}

json summary_json(const AblationResult& r) {
  auto agg = [](const Aggregate& a) {
    return json{{"n", a.n}, {"mean", a.mean}, {"std", a.std}, {"median", a.median}};
  };
  json levels = json::array();
  for (const LevelSummary& s : r.summary) {
    json bins = json::array();
    for (const auto& b : s.loc_error_by_coarse_distance) bins.push_back(optional_json(b));
    levels.push_back({{"level", s.level},
                      {"supervision", s.supervision},
                      {"diverged", s.diverged},
                      {"loc_error", agg(s.loc_error)},
                      {"iou", agg(s.iou)},
                      {"loc_error_by_coarse_distance_median", bins}});
  }
  json runs = json::array();
  for (const AblationRun& run : r.runs) {
    json jr = {{"level", run.level}, {"supervision", run.supervision}, {"seed", run.seed},
               {"diverged", run.diverged}, {"wall_clock_s", run.wall_clock_s}};
    if (run.diverged) jr["error"] = run.error;
    else jr["metrics"] = run.metrics;
    runs.push_back(std::move(jr));
  }
  return {{"schema", "bevgraph.ablation/1"}, {"spec", r.spec}, {"levels", levels}, {"runs", runs}};
}

void write_ablation(const AblationResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "results.csv", runs_csv(r));
  write_text(dir / "summary.csv", summary_csv(r));
  write_text(dir / "summary.json", summary_json(r).dump(2));
}

}  // namespace bevgraph
