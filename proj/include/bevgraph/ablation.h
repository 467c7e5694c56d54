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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bevgraph/scene_sim.h"
#include "bevgraph/training.h"

namespace bevgraph {

enum class AblationAxis { kPropagationMode, kNodeDegree, kFeatureSet };

std::string to_string(AblationAxis a);
AblationAxis ablation_axis_from_string(const std::string& s);

struct AblationLevel {
  std::string label;
  std::string supervision;  // "nodes" or "nodes and edges"
  TrainConfig config;
};

// Canonical levels of an axis applied on top of `base`.
//   propagation_mode: n2n | n2n + e2n | n2n + e2n + e2e | n2n + e2n + e2e + n2e
//   node_degree:      k in {0, 1, 2, 3, 5, 10, 20}
//   feature_set:      appearance | +scanline | +geometry | all three | all three with position
std::vector<AblationLevel> ablation_levels(AblationAxis axis, const TrainConfig& base);

struct AblationSpec {
  AblationAxis axis = AblationAxis::kPropagationMode;
  // Labels to keep; empty keeps every canonical level.
  std::vector<std::string> levels;
  TrainConfig base;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int threads = 1;  // concurrent runs, capped by BEVGRAPH_THREADS

  // Throws ConfigError: fewer than 2 levels, fewer than 3 seeds, unknown labels.
  void validate() const;
  std::vector<AblationLevel> selected_levels() const;
};

void to_json(nlohmann::json& j, const AblationSpec& s);
void from_json(const nlohmann::json& j, AblationSpec& s);

struct AblationRun {
  std::string level;
  std::string supervision;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::string error;
  EvalMetrics metrics;  // valid unless diverged
  double wall_clock_s = 0.0;
};

struct Aggregate {
  int n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for n < 2
  double median = 0.0;
};

Aggregate aggregate(std::vector<double> values);

struct LevelSummary {
  std::string level;
  std::string supervision;
  int diverged = 0;
  Aggregate loc_error;
  Aggregate iou;
  // Median over seeds per 10 m distance bin; nullopt when no seed has data.
  std::vector<std::optional<double>> loc_error_by_coarse_distance;
};

struct AblationResult {
  AblationSpec spec;
  std::vector<AblationRun> runs;       // level-major, seed-minor
  std::vector<LevelSummary> summary;   // in level order
};

// Trains one model per (level, seed). Diverged runs are kept in `runs`,
// flagged, and left out of the aggregates.
AblationResult run_ablation(const AblationSpec& spec, const Dataset& train_set, const Dataset& val_set,
                            const std::function<void(const AblationRun&)>& on_run = {});

std::vector<LevelSummary> summarize(const std::vector<AblationLevel>& levels,
                                    const std::vector<AblationRun>& runs);

const LevelSummary* find_level(const AblationResult& r, const std::string& label);

std::string runs_csv(const AblationResult& r);
std::string summary_csv(const AblationResult& r);
nlohmann::json summary_json(const AblationResult& r);

// Writes results.csv, summary.csv and summary.json into `dir`.
void write_ablation(const AblationResult& r, const std::filesystem::path& dir);

}  // namespace bevgraph
