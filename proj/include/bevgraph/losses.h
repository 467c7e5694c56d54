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

#include <span>
#include <vector>

#include "bevgraph/autodiff.h"

namespace bevgraph::losses {

using ad::Matrix;
using ad::Tape;
using ad::Var;

// Overlapping angle bins for the observation angle. Bin i covers
// |wrap(beta - centers[i])| <= half_width.
struct OrientationBins {
  std::vector<double> centers;
  double half_width = 0.0;

  int size() const { return static_cast<int>(centers.size()); }
  // Two bins centered at -pi/2 and +pi/2, each spanning pi plus 0.1 pi of
  // overlap on either side.
  static OrientationBins standard();
};

struct OrientationEncoding {
  std::vector<double> confidence;
  std::vector<double> sin_off;
  std::vector<double> cos_off;
};

OrientationEncoding encode_orientation(double beta, const OrientationBins& bins);
// Highest-confidence bin (lowest index on ties) plus its residual, wrapped
// to [-pi, pi).
double decode_orientation(const OrientationEncoding& enc, const OrientationBins& bins);
// Row layout used by the orientation head: per bin (confidence, sin, cos).
Eigen::RowVectorXd orientation_row(const OrientationEncoding& enc);
OrientationEncoding orientation_from_row(const Eigen::RowVectorXd& row, int num_bins);

// Mean over elements of 0.5 d^2 (|d| < 1) or |d| - 0.5.
Var smooth_l1(Var pred, Var target);

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
  double clamp = 1e-12;
};

// Mean over rows of -alpha (1 - p_k)^gamma log p_k, p_k = probs(row, target).
// `clamped` (optional) receives the number of rows with p_k below the clamp.
Var focal_loss(Var probs, std::span<const int> targets, const FocalParams& params = {},
               int* clamped = nullptr);

// Discrete-continuous orientation loss. `pred` is N x 3n with per-bin
// (confidence probability, sin, cos); `gt` the same layout with {0,1}
// confidences. Mean over rows of sum_i CE(c_hat_i, c_i) + c_i SmoothL1(a_hat_i, a_i).
Var orientation_loss(Var pred, const Matrix& gt, int num_bins);

struct LossWeights {
  double loc_node = 1.0;
  double loc_edge = 1.0;
  double orientation = 1.0;
  double dims = 1.0;
  double cls = 1.0;
};

struct LossParts {
  Var loc_node;
  Var loc_edge;
  Var orientation;
  Var dims;
  Var cls;
};

struct PartValues {
  double loc_node = 0.0;
  double loc_edge = 0.0;
  double orientation = 0.0;
  double dims = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

// Weighted sum; the edge term is dropped when edge supervision is off.
// Missing (invalid) parts count as zero.
Var multitask_total(Tape& tape, const LossParts& parts, const LossWeights& weights,
                    bool edge_supervision);
PartValues part_values(const LossParts& parts, const LossWeights& weights, bool edge_supervision);

// Multi-scale Dice loss 1 - (1/C) sum_u sum_c 2 sum m_hat m / (sum m_hat + sum m + eps).
// Each scale is a (pixels x classes) pair.
Var dice_loss(std::span<const Var> pred, std::span<const Matrix> gt, double eps = 1e-5);
double dice_loss(std::span<const Matrix> pred, std::span<const Matrix> gt, double eps = 1e-5);

}  // namespace bevgraph::losses
