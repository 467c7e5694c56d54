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
#include "bevgraph/training.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <random>
#include <thread>

#include "bevgraph/errors.h"
#include "bevgraph/json_util.h"
#include "bevgraph/rng.h"

namespace bevgraph {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kInitKey = 0x1417;
constexpr std::uint64_t kShuffleKey = 0x5a5a;
constexpr std::uint64_t kEvalJitterKey = 0xe7a1;
constexpr double kDistanceStep = 5.0;
constexpr double kCoarseDistanceStep = 10.0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

// Evenly spaced centers starting at -pi + pi/n and 0.1 pi of overlap per side.
losses::OrientationBins orientation_bins(int n) {
  if (n == 2) return losses::OrientationBins::standard();
  losses::OrientationBins b;
  for (int i = 0; i < n; ++i) b.centers.push_back(-std::numbers::pi + (i + 0.5) * 2.0 * std::numbers::pi / n);
  b.half_width = std::numbers::pi / n + 0.1 * std::numbers::pi;
  return b;
}

namespace {

std::string connectivity_name(Connectivity c) {
  return c == Connectivity::kCoarseDepth ? "coarse_depth" : "bev_position";
}
std::string anchor_name(DepthAnchor a) {
  return a == DepthAnchor::kBottomCenter ? "bottom_center" : "box_center";
}
std::string lateral_name(LateralMode m) { return m == LateralMode::kTangent ? "tan" : "atan"; }

template <typename E>
E parse_enum(const json& j, const char* key, E fallback,
             std::initializer_list<std::pair<const char*, E>> names) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_string()) throw ConfigError(std::string("train.") + key + ": expected a string");
  const std::string s = it->get<std::string>();
  std::string options;
  for (const auto& [n, v] : names) {
    if (s == n) return v;
    options += options.empty() ? n : std::string(", ") + n;
  }
  throw ConfigError(std::string("train.") + key + ": unknown value '" + s + "' (expected " + options + ")");
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; fn writes only to
// slot i so results are independent of scheduling.
template <typename Fn>
void parallel_for(int n, int threads, Fn fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::mt19937_64 train_rng(std::uint64_t seed, int epoch, std::uint64_t scene_id) {
  return std::mt19937_64(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(epoch)), scene_id));
}

int scene_limit(int limit, std::size_t available) {
  const int n = static_cast<int>(available);
  return limit > 0 ? std::min(limit, n) : n;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json optional_array(const std::vector<std::optional<double>>& v) {
  json a = json::array();
  for (const auto& x : v) a.push_back(optional_json(x));
  return a;
}

struct ScenePass {
  losses::PartValues values;
  ad::GradientBuffer grads;
};

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("train.adam.learning_rate must be > 0");
  if (adam.weight_decay < 0.0) throw ConfigError("train.adam.weight_decay must be >= 0");
  if (!(adam.decay_per_epoch > 0.0) || adam.decay_per_epoch > 1.0)
    throw ConfigError("train.adam.decay_per_epoch must lie in (0, 1]");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be > 0");
  if (k < 0) throw ConfigError("train.k must be >= 0");
  if (jitter_px < 0.0) throw ConfigError("train.jitter_px must be >= 0");
  if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
  if (threads < 1) throw ConfigError("train.threads must be >= 1");
  for (double w : {loss_weights.loc_node, loss_weights.loc_edge, loss_weights.orientation,
                   loss_weights.dims, loss_weights.cls})
    if (!(w >= 0.0)) throw ConfigError("train.loss_weights must be >= 0");
  model.validate();
}

GraphConfig TrainConfig::graph_config(int scanline_dim) const {
  GraphConfig g;
  g.k = k;
  g.connectivity = connectivity;
  g.anchor = anchor;
  g.lateral = lateral;
  g.clamp_degree = clamp_degree;
  g.scanline_dim = scanline_dim;
  return g;
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"adam",
        {{"learning_rate", c.adam.learning_rate},
         {"weight_decay", c.adam.weight_decay},
         {"decay_per_epoch", c.adam.decay_per_epoch},
         {"beta1", c.adam.beta1},
         {"beta2", c.adam.beta2},
         {"epsilon", c.adam.epsilon}}},
       {"grad_clip", c.grad_clip},
       {"k", c.k},
       {"clamp_degree", c.clamp_degree},
       {"connectivity", connectivity_name(c.connectivity)},
       {"anchor", anchor_name(c.anchor)},
       {"lateral", lateral_name(c.lateral)},
       {"model", c.model},
       {"loss_weights",
        {{"loc_node", c.loss_weights.loc_node},
         {"loc_edge", c.loss_weights.loc_edge},
         {"orientation", c.loss_weights.orientation},
         {"dims", c.loss_weights.dims},
         {"cls", c.loss_weights.cls}}},
       {"jitter_px", c.jitter_px},
       {"eval_every", c.eval_every},
       {"max_train_scenes", c.max_train_scenes},
       {"max_val_scenes", c.max_val_scenes},
       {"threads", c.threads},
       {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  constexpr const char* w = "train";
  jsonutil::require_keys(j, {"epochs", "batch_size", "adam", "grad_clip", "k", "clamp_degree", "connectivity",
                             "anchor", "lateral", "model", "loss_weights", "jitter_px", "eval_every",
                             "max_train_scenes", "max_val_scenes", "threads", "seed"},
                         w);
  jsonutil::read(j, "epochs", c.epochs, w);
  jsonutil::read(j, "batch_size", c.batch_size, w);
  if (auto it = j.find("adam"); it != j.end()) {
    constexpr const char* wa = "train.adam";
    jsonutil::require_keys(*it, {"learning_rate", "weight_decay", "decay_per_epoch", "beta1", "beta2", "epsilon"}, wa);
    jsonutil::read(*it, "learning_rate", c.adam.learning_rate, wa);
    jsonutil::read(*it, "weight_decay", c.adam.weight_decay, wa);
    jsonutil::read(*it, "decay_per_epoch", c.adam.decay_per_epoch, wa);
    jsonutil::read(*it, "beta1", c.adam.beta1, wa);
    jsonutil::read(*it, "beta2", c.adam.beta2, wa);
    jsonutil::read(*it, "epsilon", c.adam.epsilon, wa);
  }
  jsonutil::read(j, "grad_clip", c.grad_clip, w);
  jsonutil::read(j, "k", c.k, w);
  jsonutil::read(j, "clamp_degree", c.clamp_degree, w);
  c.connectivity = parse_enum(j, "connectivity", c.connectivity,
                              {{"coarse_depth", Connectivity::kCoarseDepth}, {"bev_position", Connectivity::kBevPosition}});
  c.anchor = parse_enum(j, "anchor", c.anchor,
                        {{"bottom_center", DepthAnchor::kBottomCenter}, {"box_center", DepthAnchor::kBoxCenter}});
  c.lateral = parse_enum(j, "lateral", c.lateral, {{"tan", LateralMode::kTangent}, {"atan", LateralMode::kArctangent}});
  if (auto it = j.find("model"); it != j.end()) {
    ModelConfig m = c.model;
    from_json(*it, m);
    c.model = m;
  }
  if (auto it = j.find("loss_weights"); it != j.end()) {
    constexpr const char* wl = "train.loss_weights";
    jsonutil::require_keys(*it, {"loc_node", "loc_edge", "orientation", "dims", "cls"}, wl);
    jsonutil::read(*it, "loc_node", c.loss_weights.loc_node, wl);
    jsonutil::read(*it, "loc_edge", c.loss_weights.loc_edge, wl);
    jsonutil::read(*it, "orientation", c.loss_weights.orientation, wl);
    jsonutil::read(*it, "dims", c.loss_weights.dims, wl);
    jsonutil::read(*it, "cls", c.loss_weights.cls, wl);
  }
  jsonutil::read(j, "jitter_px", c.jitter_px, w);
  jsonutil::read(j, "eval_every", c.eval_every, w);
  jsonutil::read(j, "max_train_scenes", c.max_train_scenes, w);
  jsonutil::read(j, "max_val_scenes", c.max_val_scenes, w);
  jsonutil::read(j, "threads", c.threads, w);
  jsonutil::read(j, "seed", c.seed, w);
}

std::string config_hash(const TrainConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(json(c).dump())));
  return buf;
}

void to_json(json& j, const EvalMetrics& m) {
  j = {{"loc_error", m.loc_error},
       {"mean_iou", optional_json(m.mean_iou)},
       {"class_iou", optional_array(m.class_iou)},
       {"distance_edges", m.distance_edges},
       {"iou_by_distance", optional_array(m.iou_by_distance)},
       {"loc_error_by_distance", optional_array(m.loc_error_by_distance)},
       {"coarse_distance_edges", m.coarse_distance_edges},
       {"loc_error_by_coarse_distance", optional_array(m.loc_error_by_coarse_distance)},
       {"initial_position_error", m.initial_position_error},
       {"num_objects", m.num_objects},
       {"clamped_angles", m.clamped_angles}};
}

void to_json(json& j, const EpochRecord& e) {
  j = {{"epoch", e.epoch},
       {"learning_rate", e.learning_rate},
       {"val_loc_error", optional_json(e.val_loc_error)},
       {"val_iou", optional_json(e.val_iou)},
       {"seconds", e.seconds}};
  if (e.epoch == 0) {
    j["train_loss"] = nullptr;
  } else {
    j["train_loss"] = {{"loc_node", e.train_loss.loc_node}, {"loc_edge", e.train_loss.loc_edge},
                       {"orientation", e.train_loss.orientation}, {"dims", e.train_loss.dims},
                       {"cls", e.train_loss.cls}, {"total", e.train_loss.total}};
  }
}

void to_json(json& j, const RunRecord& r) {
  j = {{"schema", "bevgraph.run_record/1"},
       {"epochs", r.epochs},
       {"final_val", r.final_val},
       {"wall_clock_s", r.wall_clock_s},
       {"config_hash", r.config_hash},
       {"checkpoint_path", r.checkpoint_path},
       {"config", r.config}};
}

int effective_threads(int requested) {
  int n = std::max(1, requested);
  if (const char* env = std::getenv("BEVGRAPH_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min<long>(n, cap);
  }
  return n;
}

SceneGraph scene_graph(const SyntheticScene& scene, const std::vector<Detection>& detections,
                       const SimConfig& sim, const TrainConfig& config) {
  return build_graph(detections, scene.camera, config.graph_config(sim.scanline_dim),
                     scene_region_features(scene, detections, sim));
}

SceneTargets scene_targets(const SyntheticScene& scene, const SceneGraph& graph, int num_bins) {
  const int n = static_cast<int>(scene.objects.size());
  if (graph.num_nodes() != n) throw ConfigError("scene_targets: graph does not match scene");
  const losses::OrientationBins bins = orientation_bins(num_bins);
  SceneTargets t;
  t.node_loc.resize(n, 2);
  t.dims.resize(n, 2);
  t.orientation.resize(n, 3 * bins.size());
  for (int i = 0; i < n; ++i) {
    const SceneObject& o = scene.objects[i];
    t.node_loc.row(i) << o.pose.x, o.pose.z;
    t.dims.row(i) << o.pose.length, o.pose.width;
    t.orientation.row(i) = losses::orientation_row(losses::encode_orientation(observation_angle(o), bins));
    t.classes.push_back(o.cls);
  }
  t.edge_loc.resize(graph.num_edges(), 2);
  for (int e = 0; e < graph.num_edges(); ++e) {
    const Edge ij = graph.edges[e].endpoints;
    t.edge_loc.row(e) = 0.5 * (t.node_loc.row(ij.i) + t.node_loc.row(ij.j));
  }
  return t;
}

std::vector<Detection> eval_detections(const SyntheticScene& scene, const SimConfig& sim,
                                       const TrainConfig& config) {
  std::mt19937_64 rng(mix_seed(mix_seed(sim.seed, kEvalJitterKey), scene.id));
  return make_detections(scene, config.jitter_px, rng, sim.scanline_dim);
}

SceneLoss scene_loss(Tape& tape, const ModelOutput& out, const SceneTargets& targets,
                     const TrainConfig& config) {
  SceneLoss s;
  s.parts.loc_node = losses::smooth_l1(out.nodes.xz, tape.constant(targets.node_loc));
  if (out.edges.xz.valid() && targets.edge_loc.rows() > 0)
    s.parts.loc_edge = losses::smooth_l1(out.edges.xz, tape.constant(targets.edge_loc));
  s.parts.orientation = losses::orientation_loss(out.early.orientation, targets.orientation, config.model.num_bins);
  s.parts.dims = losses::smooth_l1(out.early.dims, tape.constant(targets.dims));
  s.parts.cls = losses::focal_loss(out.early.class_probs, targets.classes);
  s.total = losses::multitask_total(tape, s.parts, config.loss_weights, config.model.prop.edge_supervision());
  return s;
}

ad::ParameterStore init_parameters(const TrainConfig& config) {
  ad::ParameterStore store(mix_seed(config.seed, kInitKey));
  register_parameters(store, config.model);
  return store;
}

namespace {

SceneBoxes predict_from_graph(ad::ParameterStore& params, const SyntheticScene& scene, const SceneGraph& graph,
                              const TrainConfig& config, int* clamped) {
  Tape tape;
  const ModelOutput out = run_model(tape, params, graph, config.model);
  const losses::OrientationBins bins = orientation_bins(config.model.num_bins);
  const Matrix& xz = out.nodes.xz.value();
  const Matrix& dims = out.early.dims.value();
  const Matrix& probs = out.early.class_probs.value();
  const Matrix& orient = out.early.orientation.value();
  SceneBoxes boxes;
  for (int i = 0; i < graph.num_nodes(); ++i) {
    boxes.gt.push_back({scene.objects[i].pose, scene.objects[i].cls});
    BevObject p;
    p.pose.x = xz(i, 0);
    p.pose.z = xz(i, 1);
    p.pose.length = std::max(0.0, dims(i, 0));
    p.pose.width = std::max(0.0, dims(i, 1));
    const double beta =
        losses::decode_orientation(losses::orientation_from_row(orient.row(i), config.model.num_bins), bins);
    p.pose.yaw = wrap_angle(beta - std::atan2(p.pose.x, p.pose.z));
    Eigen::Index c = 0;
    probs.row(i).maxCoeff(&c);
    p.cls = static_cast<int>(c);
    boxes.pred.push_back(p);
  }
  if (clamped) *clamped = out.nodes.clamped;
  return boxes;
}

}  // namespace

SceneBoxes predict_scene(ad::ParameterStore& params, const SyntheticScene& scene, const SimConfig& sim,
                         const TrainConfig& config) {
  const std::vector<Detection> dets = eval_detections(scene, sim, config);
  return predict_from_graph(params, scene, scene_graph(scene, dets, sim, config), config, nullptr);
}

EvalMetrics evaluate(const ad::ParameterStore& params, const Dataset& split, const TrainConfig& config) {
  config.validate();
  const int n = scene_limit(config.max_val_scenes, split.scenes.size());
  if (n == 0) throw ConfigError("evaluate: split '" + split.split + "' has no scenes");
  struct Slot {
    SceneBoxes boxes;
    std::vector<BevPoint> initial;
    int clamped = 0;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(n));
  const int threads = effective_threads(config.threads);
  // Each worker reads its own copy; tapes only read parameter values.
  std::vector<ad::ParameterStore> copies(static_cast<std::size_t>(std::min(threads, n)), params);
  parallel_for(n, threads, [&](int s) {
    const SyntheticScene& scene = split.scenes[s];
    ad::ParameterStore& store = copies[static_cast<std::size_t>(s % copies.size())];
    const std::vector<Detection> dets = eval_detections(scene, split.config, config);
    const SceneGraph graph = scene_graph(scene, dets, split.config, config);
    Slot& slot = slots[s];
    slot.boxes = predict_from_graph(store, scene, graph, config, &slot.clamped);
    for (const GraphNode& node : graph.nodes)
      slot.initial.push_back({node.position.x / graph.position_scale, node.position.z / graph.position_scale});
  });
  std::vector<SceneBoxes> all;
  std::vector<BevPoint> pred, gt, initial;
  EvalMetrics m;
  for (Slot& s : slots) {
    for (std::size_t i = 0; i < s.boxes.gt.size(); ++i) {
      pred.push_back({s.boxes.pred[i].pose.x, s.boxes.pred[i].pose.z});
      gt.push_back({s.boxes.gt[i].pose.x, s.boxes.gt[i].pose.z});
    }
    initial.insert(initial.end(), s.initial.begin(), s.initial.end());
    m.clamped_angles += s.clamped;
    all.push_back(std::move(s.boxes));
  }
  const BevGrid grid;
  m.num_objects = static_cast<int>(gt.size());
  m.loc_error = localization_error(pred, gt);
  m.initial_position_error = localization_error(initial, gt);
  const IouResult r = iou(all, config.model.num_classes, grid);
  m.mean_iou = r.mean;
  m.class_iou = r.per_class;
  m.distance_edges = distance_bin_edges(grid.extent_z, kDistanceStep);
  m.iou_by_distance = iou_by_distance(all, config.model.num_classes, grid, m.distance_edges);
  m.loc_error_by_distance = localization_error_by_distance(pred, gt, m.distance_edges);
  m.coarse_distance_edges = distance_bin_edges(grid.extent_z, kCoarseDistanceStep);
  m.loc_error_by_coarse_distance = localization_error_by_distance(pred, gt, m.coarse_distance_edges);
  return m;
}

json checkpoint_json(const ad::ParameterStore& params, const TrainConfig& config) {
  json j = params.to_json();
  j["train_config"] = config;
  return j;
}

ad::ParameterStore load_checkpoint(const json& j, TrainConfig* config_out) {
  if (!j.is_object() || !j.contains("train_config"))
    throw ConfigError("checkpoint: missing 'train_config'; not a training checkpoint");
  TrainConfig cfg = j.at("train_config").get<TrainConfig>();
  cfg.validate();
  ad::ParameterStore store = init_parameters(cfg);
  store.load_json(j);
  if (config_out) *config_out = cfg;
  return store;
}

TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  train_set.config.validate();
  if (train_set.config.appearance_dim != config.model.appearance_dim ||
      train_set.config.scanline_dim != config.model.scanline_dim ||
      train_set.config.num_classes() != config.model.num_classes)
    throw ConfigError("train: dataset feature dims or class count do not match the model config");
  const int n_train = scene_limit(config.max_train_scenes, train_set.scenes.size());
  if (n_train == 0) throw ConfigError("train: empty training split");

  const auto t0 = Clock::now();
  TrainResult result{RunRecord{}, init_parameters(config)};
  ad::ParameterStore& params = result.params;
  RunRecord& rec = result.record;
  rec.config = config;
  rec.config_hash = config_hash(config);

  std::ofstream metrics;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    metrics.open(*out_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
    if (!metrics) throw IoError("cannot open " + (*out_dir / "metrics.jsonl").string());
  }
  auto emit = [&](const EpochRecord& e) {
    rec.epochs.push_back(e);
    if (metrics.is_open()) metrics << json(e).dump() << '\n' << std::flush;
    if (on_epoch) on_epoch(e);
  };

  {
    const auto te = Clock::now();
    const EvalMetrics m0 = evaluate(params, val_set, config);
    EpochRecord e0;
    e0.learning_rate = config.adam.learning_rate;
    e0.val_loc_error = m0.loc_error;
    e0.val_iou = m0.mean_iou;
    e0.seconds = seconds_since(te);
    emit(e0);
  }

  ad::Adam adam(config.adam);
  const int threads = effective_threads(config.threads);
  const bool edge_sup = config.model.prop.edge_supervision();
  std::vector<int> order(static_cast<std::size_t>(n_train));
  for (int i = 0; i < n_train; ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto te = Clock::now();
    std::mt19937_64 shuffle_rng(mix_seed(config.seed, kShuffleKey + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord er;
    er.epoch = epoch;
    er.learning_rate = adam.learning_rate();
    losses::PartValues acc;
    for (int start = 0; start < n_train; start += config.batch_size) {
      const int b = std::min(config.batch_size, n_train - start);
      std::vector<ScenePass> passes(static_cast<std::size_t>(b));
      auto run_scene = [&](int k) {
        const SyntheticScene& scene = train_set.scenes[order[start + k]];
        try {
          std::mt19937_64 rng = train_rng(config.seed, epoch, scene.id);
          const std::vector<Detection> dets = make_detections(scene, config.jitter_px, rng, train_set.config.scanline_dim);
          const SceneGraph graph = scene_graph(scene, dets, train_set.config, config);
          const SceneTargets targets = scene_targets(scene, graph, config.model.num_bins);
          Tape tape;
          const ModelOutput out = run_model(tape, params, graph, config.model);
          const SceneLoss loss = scene_loss(tape, out, targets, config);
          passes[k].values = losses::part_values(loss.parts, config.loss_weights, edge_sup);
          if (!std::isfinite(passes[k].values.total)) throw NumericalError("non-finite loss");
          tape.backward(ad::scale(loss.total, 1.0 / b), passes[k].grads);
        } catch (const NumericalError& err) {
          std::string where;
          if (out_dir) {
            const auto dump = *out_dir / ("diagnostic_scene_" + std::to_string(scene.id) + ".json");
            json d = {{"scene", scene}, {"epoch", epoch}, {"error", err.what()}, {"train_config", config}};
            write_text(dump, d.dump(2));
            where = "; diagnostic dump written to " + dump.string();
          }
          throw NumericalError("training diverged at epoch " + std::to_string(epoch) + " on scene " +
                               std::to_string(scene.id) + ": " + err.what() + where);
        }
      };
      parallel_for(b, threads, run_scene);
      params.zero_grad();
      // Flushed in batch order so the summed gradient does not depend on threads.
      for (const ScenePass& p : passes) p.grads.flush_into_parameters();
      const double norm = ad::clip_grad_norm(params, config.grad_clip);
      if (!std::isfinite(norm))
        throw NumericalError("non-finite gradient norm at epoch " + std::to_string(epoch));
      adam.step(params);
      for (const ScenePass& p : passes) {
        acc.loc_node += p.values.loc_node;
        acc.loc_edge += p.values.loc_edge;
        acc.orientation += p.values.orientation;
        acc.dims += p.values.dims;
        acc.cls += p.values.cls;
        acc.total += p.values.total;
      }
    }
    const double inv = 1.0 / n_train;
    er.train_loss = {acc.loc_node * inv, acc.loc_edge * inv, acc.orientation * inv,
                     acc.dims * inv,     acc.cls * inv,      acc.total * inv};
    const bool last = epoch == config.epochs;
    if (last || epoch % config.eval_every == 0) {
      const EvalMetrics m = evaluate(params, val_set, config);
      er.val_loc_error = m.loc_error;
      er.val_iou = m.mean_iou;
      if (last) rec.final_val = m;
    }
    adam.end_epoch();
    er.seconds = seconds_since(te);
    emit(er);
  }

  rec.wall_clock_s = seconds_since(t0);
  if (out_dir) {
    const auto ckpt = *out_dir / "checkpoint.json";
    write_text(ckpt, checkpoint_json(params, config).dump());
    rec.checkpoint_path = ckpt.string();
    write_text(*out_dir / "run_record.json", json(rec).dump(2));
  }
  return result;
}

}  // namespace bevgraph
