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

// Plain SVG charts and CSV tables for run and ablation outputs.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace bevgraph {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<std::optional<double>> y;  // gaps break the line
};

struct Bar {
  std::string label;
  double value = 0.0;
  double error = 0.0;  // half-height of the error bar, 0 for none
};

std::string svg_line_plot(const std::vector<Series>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label);
std::string svg_bar_chart(const std::vector<Bar>& bars, const std::string& title, const std::string& y_label);

// XML-escaped text.
std::string xml_escape(const std::string& s);

struct ReportFiles {
  std::vector<std::filesystem::path> written;
};

// Reads every recognized artifact under `inputs` (ablation summary.json,
// eval metrics.json, training run_record.json) and writes CSV tables plus
// SVG plots into `out`. Throws IoError when no input is recognized.
ReportFiles write_report(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out);

}  // namespace bevgraph
