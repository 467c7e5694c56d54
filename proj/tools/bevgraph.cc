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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bevgraph/ablation.h"
#include "bevgraph/errors.h"
#include "bevgraph/gradcheck.h"
#include "bevgraph/json_util.h"
#include "bevgraph/report.h"
#include "bevgraph/scene_sim.h"
#include "bevgraph/training.h"

#ifndef BEVGRAPH_BUILD_ID
#define BEVGRAPH_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bevgraph;

namespace {

constexpr const char* kConfigSchema = "bevgraph.config/1";
constexpr const char* kManifestSchema = "bevgraph.manifest/1";

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kNumerical = 3, kThreshold = 4 };

// Sections of the config document the CLI understands.
json default_config() {
  AblationSpec spec;
  return {
      {"schema", kConfigSchema},
      {"sim", SimConfig{}},
      {"dataset", {{"n_train", 2000}, {"n_val", 500}}},
      {"train", TrainConfig{}},
      {"ablation",
       {{"axis", to_string(spec.axis)}, {"levels", spec.levels}, {"seeds", spec.seeds}, {"threads", spec.threads}}},
      {"gradcheck", GradcheckConfig{}},
      {"eval", {{"split", "val"}, {"max_scenes", 0}, {"threads", 1}}},
  };
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  if (j.is_object() && !j.empty()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out.emplace_back(prefix, j.dump());
  }
}

std::string field_listing(const std::vector<std::string>& sections) {
  const json d = default_config();
  std::vector<std::pair<std::string, std::string>> rows;
  for (const std::string& s : sections) flatten(d.at(s), s, rows);
  std::size_t w = 0;
  for (const auto& r : rows) w = std::max(w, r.first.size());
  std::ostringstream os;
  os << "\nConfig fields (override with --set key=value; defaults shown):\n";
  for (const auto& [k, v] : rows) os << "  " << std::left << std::setw(static_cast<int>(w) + 2) << k << v << '\n';
  return os.str();
}

json read_json_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string() + " (check the path)");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + " is not valid JSON: " + e.what());
  }
}

void write_json_file(const fs::path& p, const json& j) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write failed: " + p.string());
}

void write_text_file(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << s;
  if (!f) throw IoError("write failed: " + p.string());
}

// `key=value`; value parsed as JSON, falling back to a plain string.
void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  const json defaults = default_config();
  const json* dref = &defaults;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!dref->is_object() || !dref->contains(part))
      throw ConfigError("--set " + key + ": unknown config field (see --help for the list)");
    dref = &dref->at(part);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = *dref;
    node = &(*node)[part];
    start = dot + 1;
  }
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::int64_t> seed;
  std::string data;
  std::string checkpoint;
  std::string axis;
  std::vector<std::string> inputs;
};

struct Resolved {
  json config;  // full document, defaults filled in
  json inputs = json::object();
  fs::path out;
};

Resolved resolve(const std::string& command, const Common& c) {
  Resolved r;
  r.config = default_config();
  if (!c.config_path.empty()) {
    json doc = read_json_file(c.config_path);
    if (!doc.is_object()) throw ConfigError(c.config_path + ": expected a JSON object");
    const std::string schema = doc.value("schema", std::string());
    if (schema == kManifestSchema) {
      // Re-running a manifest reuses its resolved config and inputs.
      if (doc.value("command", std::string()) != command)
        throw ConfigError(c.config_path + " is a manifest of '" + doc.value("command", std::string()) +
                          "', not '" + command + "'");
      r.inputs = doc.at("inputs");
      doc = doc.at("config");
    } else if (!schema.empty() && schema != kConfigSchema) {
      throw ConfigError(c.config_path + " has schema '" + schema + "', expected '" + kConfigSchema + "' or '" +
                        kManifestSchema + "'");
    }
    for (const auto& [k, v] : doc.items())
      if (!r.config.contains(k))
        throw ConfigError(c.config_path + ": unknown section '" + k + "' (expected sim, dataset, train, ablation, "
                          "gradcheck, eval)");
    doc["schema"] = kConfigSchema;
    r.config.merge_patch(doc);
  }
  for (const std::string& s : c.sets) apply_override(r.config, s);
  if (c.seed) {
    const std::int64_t s = *c.seed;
    if (s < 0) throw ConfigError("--seed must be non-negative");
    if (command == "simulate") r.config["sim"]["seed"] = s;
    if (command == "train" || command == "eval") r.config["train"]["seed"] = s;
    if (command == "gradcheck") r.config["gradcheck"]["seed"] = s;
    if (command == "ablate") r.config["ablation"]["seeds"] = {s, s + 1, s + 2};
  }
  if (!c.axis.empty()) r.config["ablation"]["axis"] = c.axis;
  if (!c.data.empty()) r.inputs["data"] = fs::absolute(c.data).string();
  if (!c.checkpoint.empty()) r.inputs["checkpoint"] = fs::absolute(c.checkpoint).string();
  if (!c.inputs.empty()) {
    json in = json::array();
    for (const auto& p : c.inputs) in.push_back(fs::absolute(p).string());
    r.inputs["in"] = in;
  }
  r.out = c.out.empty() ? fs::path("bevgraph_out") / command : fs::path(c.out);
  return r;
}

void write_manifest(const std::string& command, const Common& c, const Resolved& r,
                    const std::vector<std::string>& argv) {
  fs::create_directories(r.out);
  json m = {{"schema", kManifestSchema},
            {"command", command},
            {"config_path", c.config_path.empty() ? json(nullptr) : json(fs::absolute(c.config_path).string())},
            {"seed", c.seed ? json(*c.seed) : json(nullptr)},
            {"out_dir", fs::absolute(r.out).string()},
            {"build_id", BEVGRAPH_BUILD_ID},
            {"config", r.config},
            {"inputs", r.inputs},
            {"argv", argv}};
  write_json_file(r.out / "manifest.json", m);
}

template <typename T>
T section(const Resolved& r, const char* name) {
  try {
    return r.config.at(name).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  }
}

std::pair<Dataset, Dataset> load_data(const Resolved& r) {
  if (!r.inputs.contains("data"))
    throw ConfigError("--data <dir> is required (create one with `bevgraph simulate --out <dir>`)");
  const fs::path dir = r.inputs.at("data").get<std::string>();
  for (const char* f : {"train.json.gz", "val.json.gz"})
    if (!fs::exists(dir / f)) throw IoError((dir / f).string() + " not found; is --data a simulate output directory?");
  return {load_dataset(dir / "train.json.gz"), load_dataset(dir / "val.json.gz")};
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string fmt_opt(const std::optional<double>& v, int prec = 4) { return v ? fmt(*v, prec) : "-"; }

int cmd_simulate(const Resolved& r) {
  const SimConfig sim = section<SimConfig>(r, "sim");
  const json& ds = r.config.at("dataset");
  jsonutil::require_keys(ds, {"n_train", "n_val"}, "dataset");
  const int n_train = ds.at("n_train").get<int>(), n_val = ds.at("n_val").get<int>();
  generate_dataset(sim, n_train, n_val, r.out);
  std::cout << "wrote " << n_train << " train and " << n_val << " val scenes to " << r.out.string() << '\n';
  return kOk;
}

int cmd_train(const Resolved& r) {
  const TrainConfig cfg = section<TrainConfig>(r, "train");
  cfg.validate();
  const auto [train_set, val_set] = load_data(r);
  const TrainResult res = train(train_set, val_set, cfg, r.out, [](const EpochRecord& e) {
    std::cerr << "epoch " << e.epoch << "  lr " << e.learning_rate << "  train " << fmt(e.train_loss.total)
              << "  val_loc " << fmt_opt(e.val_loc_error) << "  val_iou " << fmt_opt(e.val_iou) << "  ("
              << fmt(e.seconds, 1) << " s)\n";
  });
  std::cout << "final val localization error " << fmt(res.record.final_val.loc_error) << " m, mean IoU "
            << fmt_opt(res.record.final_val.mean_iou) << "\ncheckpoint " << (r.out / "checkpoint.json").string()
            << '\n';
  return kOk;
}

std::string metrics_csv(const EvalMetrics& m) {
  std::ostringstream os;
  os << "metric,bin_lo,bin_hi,value\n";
  os << "loc_error,,," << std::setprecision(10) << m.loc_error << '\n';
  os << "mean_iou,,," << (m.mean_iou ? std::to_string(*m.mean_iou) : "") << '\n';
  os << "initial_position_error,,," << m.initial_position_error << '\n';
  for (std::size_t c = 0; c < m.class_iou.size(); ++c)
    os << "class_iou_" << c << ",,," << (m.class_iou[c] ? std::to_string(*m.class_iou[c]) : "") << '\n';
  for (std::size_t b = 0; b + 1 < m.distance_edges.size(); ++b) {
    const auto& e = m.distance_edges;
    os << "iou_by_distance," << e[b] << ',' << e[b + 1] << ','
       << (m.iou_by_distance[b] ? std::to_string(*m.iou_by_distance[b]) : "") << '\n';
    os << "loc_error_by_distance," << e[b] << ',' << e[b + 1] << ','
       << (m.loc_error_by_distance[b] ? std::to_string(*m.loc_error_by_distance[b]) : "") << '\n';
  }
  return os.str();
}

int cmd_eval(Resolved& r) {
  if (!r.inputs.contains("checkpoint"))
    throw ConfigError("--checkpoint <file> is required (a train output's checkpoint.json)");
  fs::path ck = r.inputs.at("checkpoint").get<std::string>();
  if (fs::is_directory(ck)) ck /= "checkpoint.json";
  const json& ev = r.config.at("eval");
  jsonutil::require_keys(ev, {"split", "max_scenes", "threads"}, "eval");
  const std::string split = ev.at("split").get<std::string>();
  if (split != "train" && split != "val") throw ConfigError("eval.split must be 'train' or 'val', got '" + split + "'");
  TrainConfig cfg;
  const ad::ParameterStore params = load_checkpoint(read_json_file(ck), &cfg);
  const int max_scenes = ev.at("max_scenes").get<int>();
  if (max_scenes < 0) throw ConfigError("eval.max_scenes must be >= 0");
  // 0 keeps the checkpoint's own validation subset so eval reproduces training.
  if (max_scenes > 0 || split == "train") cfg.max_val_scenes = max_scenes;
  cfg.threads = ev.at("threads").get<int>();
  cfg.validate();
  const auto [train_set, val_set] = load_data(r);
  const EvalMetrics m = evaluate(params, split == "val" ? val_set : train_set, cfg);
  write_json_file(r.out / "metrics.json", json(m));
  write_text_file(r.out / "metrics.csv", metrics_csv(m));
  std::cout << split << ": localization error " << fmt(m.loc_error) << " m over " << m.num_objects
            << " objects, mean IoU " << fmt_opt(m.mean_iou) << '\n';
  return kOk;
}

int cmd_ablate(const Resolved& r) {
  const json& a = r.config.at("ablation");
  jsonutil::require_keys(a, {"axis", "levels", "seeds", "threads"}, "ablation");
  AblationSpec spec;
  spec.axis = ablation_axis_from_string(a.at("axis").get<std::string>());
  spec.levels = a.at("levels").get<std::vector<std::string>>();
  spec.seeds = a.at("seeds").get<std::vector<std::uint64_t>>();
  spec.threads = a.at("threads").get<int>();
  spec.base = section<TrainConfig>(r, "train");
  spec.validate();
  const auto [train_set, val_set] = load_data(r);
  const AblationResult res = run_ablation(spec, train_set, val_set, [](const AblationRun& run) {
    std::cerr << run.level << " seed " << run.seed << ": "
              << (run.diverged ? "diverged (" + run.error + ")" : fmt(run.metrics.loc_error) + " m") << " ("
              << fmt(run.wall_clock_s, 1) << " s)\n";
  });
  write_ablation(res, r.out);
  std::cout << std::left << std::setw(44) << "level" << std::setw(18) << "supervision" << std::setw(14)
            << "loc_err_med" << std::setw(14) << "loc_err_std" << "iou_med\n";
  for (const LevelSummary& s : res.summary)
    std::cout << std::setw(44) << s.level << std::setw(18) << s.supervision << std::setw(14)
              << fmt(s.loc_error.median) << std::setw(14) << fmt(s.loc_error.std) << fmt(s.iou.median) << '\n';
  return kOk;
}

int cmd_gradcheck(const Resolved& r) {
  const GradcheckConfig cfg = section<GradcheckConfig>(r, "gradcheck");
  cfg.validate();
  const GradcheckReport rep = run_gradcheck(cfg);
  write_json_file(r.out / "gradcheck.json", json(rep));
  for (const GradcheckEntry& e : rep.entries)
    std::cout << std::left << std::setw(12) << e.module << std::setw(26) << e.name << std::scientific
              << std::setprecision(3) << e.max_relative_error << std::defaultfloat << "  (" << e.coordinates
              << " coords)\n";
  const bool ok = rep.passed(cfg.threshold);
  std::cout << "max relative error " << std::scientific << std::setprecision(3) << rep.max_relative_error
            << std::defaultfloat << " (threshold " << cfg.threshold << ") " << (ok ? "PASS" : "FAIL") << " in "
            << fmt(rep.seconds, 1) << " s\n";
  return ok ? kOk : kThreshold;
}

int cmd_report(const Resolved& r) {
  if (!r.inputs.contains("in")) throw ConfigError("--in <dir> is required (ablate, eval or train output)");
  std::vector<fs::path> in;
  for (const auto& p : r.inputs.at("in")) in.emplace_back(p.get<std::string>());
  const ReportFiles files = write_report(in, r.out);
  for (const auto& f : files.written) std::cout << f.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-based BEV object localization: simulate, train, evaluate, ablate, gradcheck, report"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(BEVGRAPH_BUILD_ID));
  Common c;
  std::vector<std::string> args(argv, argv + argc);

  struct Cmd {
    const char* name;
    const char* help;
    std::vector<std::string> sections;
  };
  const std::vector<Cmd> cmds = {
      {"simulate", "Generate train/val datasets", {"sim", "dataset"}},
      {"train", "Train a model; writes checkpoint, run record and metrics stream", {"train"}},
      {"eval", "Evaluate a checkpoint on a dataset split", {"eval"}},
      {"ablate", "Train one model per (level, seed) of an ablation axis", {"ablation", "train"}},
      {"gradcheck", "Finite-difference check of every layer and loss", {"gradcheck"}},
      {"report", "CSV tables and SVG plots from ablate/eval/train outputs", {}},
  };
  std::string chosen;
  for (const Cmd& cmd : cmds) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", c.config_path, "JSON config document or a manifest.json to re-run")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", c.sets, "Override a config field: dotted.key=value (value parsed as JSON)");
    sub->add_option("--out", c.out, std::string("Output directory (default bevgraph_out/") + cmd.name + ")");
    sub->add_option("--seed", c.seed, "Seed for this command's randomness");
    const std::string name = cmd.name;
    if (name == "train" || name == "eval" || name == "ablate")
      sub->add_option("--data", c.data, "Directory written by simulate")->check(CLI::ExistingDirectory);
    if (name == "eval") sub->add_option("--checkpoint", c.checkpoint, "checkpoint.json or a train output directory");
    if (name == "ablate")
      sub->add_option("--axis", c.axis, "propagation_mode | node_degree | feature_set")
          ->check(CLI::IsMember({"propagation_mode", "node_degree", "feature_set"}));
    if (name == "report") sub->add_option("--in", c.inputs, "Input directories")->required();
    if (!cmd.sections.empty()) sub->footer(field_listing(cmd.sections));
    sub->callback([&chosen, name] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    Resolved r = resolve(chosen, c);
    write_manifest(chosen, c, r, args);
    if (chosen == "simulate") return cmd_simulate(r);
    if (chosen == "train") return cmd_train(r);
    if (chosen == "eval") return cmd_eval(r);
    if (chosen == "ablate") return cmd_ablate(r);
    if (chosen == "gradcheck") return cmd_gradcheck(r);
    return cmd_report(r);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const GeometryError& e) {
    std::cerr << "geometry error: " << e.what() << '\n';
    return kConfig;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
}
