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

#include "bevgraph/autodiff.h"
#include "bevgraph/eval.h"
#include "bevgraph/graph.h"
#include "bevgraph/losses.h"
#include "bevgraph/propagation.h"
#include "bevgraph/scene_sim.h"

namespace bevgraph {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  ad::AdamConfig adam;
  double grad_clip = 10.0;
  int k = 3;
  // k >= N becomes a fully connected graph instead of an error.
  bool clamp_degree = true;
  Connectivity connectivity = Connectivity::kCoarseDepth;
  DepthAnchor anchor = DepthAnchor::kBottomCenter;
  LateralMode lateral = LateralMode::kTangent;
  ModelConfig model;
  losses::LossWeights loss_weights;
  double jitter_px = 2.0;
  // Validation metrics are computed every `eval_every` epochs and always
  // after the last one.
  int eval_every = 1;
  int max_train_scenes = 0;  // 0: all
  int max_val_scenes = 0;
  int threads = 1;  // further capped by BEVGRAPH_THREADS
  std::uint64_t seed = 1;

  void validate() const;
  GraphConfig graph_config(int scanline_dim) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Hex FNV-1a of the canonical config JSON.
std::string config_hash(const TrainConfig& c);

struct EvalMetrics {
  double loc_error = 0.0;
  std::optional<double> mean_iou;
  std::vector<std::optional<double>> class_iou;
  std::vector<double> distance_edges;  // 5 m bins
  std::vector<std::optional<double>> iou_by_distance;
  std::vector<std::optional<double>> loc_error_by_distance;
  std::vector<double> coarse_distance_edges;  // 10 m bins
  std::vector<std::optional<double>> loc_error_by_coarse_distance;
  // Error of the unscaled initial BEV positions divided by the position scale.
  double initial_position_error = 0.0;
  int num_objects = 0;
  int clamped_angles = 0;
};

struct EpochRecord {
  int epoch = 0;  // 0 is the untrained model
  double learning_rate = 0.0;
  losses::PartValues train_loss;  // mean over steps
  std::optional<double> val_loc_error;
  std::optional<double> val_iou;
  double seconds = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  EvalMetrics final_val;
  double wall_clock_s = 0.0;
  std::string config_hash;
  std::string checkpoint_path;
  nlohmann::json config;
};

void to_json(nlohmann::json& j, const EvalMetrics& m);
void to_json(nlohmann::json& j, const EpochRecord& e);
void to_json(nlohmann::json& j, const RunRecord& r);

struct TrainResult {
  RunRecord record;
  ad::ParameterStore params;
};

// Ground-truth targets of one scene.
struct SceneTargets {
  Matrix node_loc;  // N x 2 metric (x, z)
  Matrix edge_loc;  // E x 2 metric (x, z) of gt centroid midpoints
  Matrix dims;      // N x 2
  Matrix orientation;  // N x 3n
  std::vector<int> classes;
};

SceneGraph scene_graph(const SyntheticScene& scene, const std::vector<Detection>& detections,
                       const SimConfig& sim, const TrainConfig& config);
SceneTargets scene_targets(const SyntheticScene& scene, const SceneGraph& graph, int num_bins = 2);

// Deterministic detections used for evaluation of scene `scene.id`.
std::vector<Detection> eval_detections(const SyntheticScene& scene, const SimConfig& sim,
                                       const TrainConfig& config);

struct SceneLoss {
  losses::LossParts parts;
  Var total;
};

SceneLoss scene_loss(Tape& tape, const ModelOutput& out, const SceneTargets& targets,
                     const TrainConfig& config);

ad::ParameterStore init_parameters(const TrainConfig& config);

// Trains on `train_set`, validating on `val_set`. With `out_dir`, writes
// checkpoint.json, run_record.json and metrics.jsonl there. Non-finite
// values abort with NumericalError naming the scene.
TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

// Pure evaluation; `params` is not modified.
EvalMetrics evaluate(const ad::ParameterStore& params, const Dataset& split,
                     const TrainConfig& config);

// Predicted BEV objects of one scene, index-aligned with its objects.
SceneBoxes predict_scene(ad::ParameterStore& params, const SyntheticScene& scene,
                         const SimConfig& sim, const TrainConfig& config);

// Checkpoint document: parameter store plus the training config.
nlohmann::json checkpoint_json(const ad::ParameterStore& params, const TrainConfig& config);
// Rebuilds the store for the checkpoint's config and loads its values.
ad::ParameterStore load_checkpoint(const nlohmann::json& j, TrainConfig* config_out = nullptr);

// Bins used for `n` orientation bins; n = 2 gives OrientationBins::standard().
losses::OrientationBins orientation_bins(int n);

// Worker count: min(requested, BEVGRAPH_THREADS if set), at least 1.
int effective_threads(int requested);

}  // namespace bevgraph
