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

// Finite-difference audit of every layer and loss on small random graphs.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bevgraph/autodiff.h"

namespace bevgraph {

struct GradcheckConfig {
  int draws = 20;
  int min_nodes = 4;
  int max_nodes = 8;
  int k = 3;
  int hidden_dim = 4;
  int head_hidden = 6;
  // Parameters are redrawn uniformly in +-init_scale / sqrt(rows).
  double init_scale = 1.0;
  double eps = 1e-6;
  // Denominator floor relative to |objective|; see ad::grad_check.
  double floor = 1e-5;
  double threshold = 1e-4;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const GradcheckConfig& c);
void from_json(const nlohmann::json& j, GradcheckConfig& c);

struct GradcheckEntry {
  std::string module;  // "layer" or "loss"
  std::string name;
  int draws = 0;
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
  std::string worst_parameter;
  int worst_draw = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_relative_error = 0.0;
  double seconds = 0.0;
  bool passed(double threshold) const { return max_relative_error < threshold; }
};

void to_json(nlohmann::json& j, const GradcheckEntry& e);
void to_json(nlohmann::json& j, const GradcheckReport& r);

// Names of the checked targets, in report order.
std::vector<std::string> gradcheck_targets();

GradcheckReport run_gradcheck(const GradcheckConfig& config);

}  // namespace bevgraph
