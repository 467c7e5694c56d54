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
#include "bevgraph/losses.h"

#include <cmath>
#include <numbers>

#include "bevgraph/camera.h"
#include "bevgraph/errors.h"

namespace bevgraph::losses {

namespace {

constexpr double kPi = std::numbers::pi;

Matrix ones(Eigen::Index rows, Eigen::Index cols) { return Matrix::Ones(rows, cols); }

}  // namespace

OrientationBins OrientationBins::standard() {
  return OrientationBins{{-kPi / 2.0, kPi / 2.0}, kPi / 2.0 + 0.1 * kPi};
}

OrientationEncoding encode_orientation(double beta, const OrientationBins& bins) {
  OrientationEncoding enc;
  for (double m : bins.centers) {
    const double r = wrap_angle(beta - m);
    enc.confidence.push_back(std::abs(r) <= bins.half_width ? 1.0 : 0.0);
    enc.sin_off.push_back(std::sin(beta - m));
    enc.cos_off.push_back(std::cos(beta - m));
  }
  return enc;
}

double decode_orientation(const OrientationEncoding& enc, const OrientationBins& bins) {
  if (enc.confidence.size() != bins.centers.size() || bins.centers.empty())
    throw ConfigError("orientation encoding does not match bin count");
  std::size_t best = 0;
  for (std::size_t i = 1; i < enc.confidence.size(); ++i)
    if (enc.confidence[i] > enc.confidence[best]) best = i;
  return wrap_angle(bins.centers[best] + std::atan2(enc.sin_off[best], enc.cos_off[best]));
}

Eigen::RowVectorXd orientation_row(const OrientationEncoding& enc) {
  const int n = static_cast<int>(enc.confidence.size());
  Eigen::RowVectorXd row(3 * n);
  for (int i = 0; i < n; ++i) {
    row(3 * i) = enc.confidence[i];
    row(3 * i + 1) = enc.sin_off[i];
    row(3 * i + 2) = enc.cos_off[i];
  }
  return row;
}

OrientationEncoding orientation_from_row(const Eigen::RowVectorXd& row, int num_bins) {
  if (row.size() != 3 * num_bins) throw ConfigError("orientation row has wrong length");
  OrientationEncoding enc;
  for (int i = 0; i < num_bins; ++i) {
    enc.confidence.push_back(row(3 * i));
    enc.sin_off.push_back(row(3 * i + 1));
    enc.cos_off.push_back(row(3 * i + 2));
  }
  return enc;
}

Var smooth_l1(Var pred, Var target) {
  return ad::mean(ad::smooth_l1_elementwise(ad::sub(pred, target)));
}

Var focal_loss(Var probs, std::span<const int> targets, const FocalParams& params, int* clamped) {
  Var p = ad::pick(probs, targets);
  if (clamped) {
    *clamped = static_cast<int>((p.value().array() < params.clamp).count());
  }
  Var pc = ad::clamp(p, params.clamp, 1.0);
  Var one_minus = ad::clamp(ad::add_scalar(ad::scale(p, -1.0), 1.0), 0.0, 1.0);
  Var weight = ad::pow(one_minus, params.gamma);
  return ad::scale(ad::mean(ad::mul(weight, ad::log(pc))), -params.alpha);
}

Var orientation_loss(Var pred, const Matrix& gt, int num_bins) {
  if (pred.cols() != 3 * num_bins || gt.cols() != 3 * num_bins || gt.rows() != pred.rows())
    throw ConfigError("orientation loss shape mismatch");
  Tape& tape = *pred.tape();
  const Eigen::Index n = pred.rows();
  const double tiny = 1e-12;
  Var half = tape.constant(Matrix::Constant(2, 1, 0.5));
  Var per_row;
  for (int i = 0; i < num_bins; ++i) {
    const Matrix c = gt.col(3 * i);
    Var p = ad::slice_cols(pred, 3 * i, 1);
    Var log_p = ad::log(ad::clamp(p, tiny, 1.0));
    Var log_q = ad::log(ad::clamp(ad::add_scalar(ad::scale(p, -1.0), 1.0), tiny, 1.0));
    Var ce = ad::scale(ad::add(ad::mul(tape.constant(c), log_p),
                               ad::mul(tape.constant(ones(n, 1) - c), log_q)),
                       -1.0);
    Var resid = ad::sub(ad::slice_cols(pred, 3 * i + 1, 2), tape.constant(gt.middleCols(3 * i + 1, 2)));
    Var reg = ad::mul(tape.constant(c), ad::matmul(ad::smooth_l1_elementwise(resid), half));
    Var term = ad::add(ce, reg);
    per_row = per_row.valid() ? ad::add(per_row, term) : term;
  }
  return ad::mean(per_row);
}

Var multitask_total(Tape& tape, const LossParts& parts, const LossWeights& weights,
                    bool edge_supervision) {
  Var total = tape.constant(0.0);
  auto add = [&](Var part, double w) {
    if (part.valid() && w != 0.0) total = ad::add(total, ad::scale(part, w));
  };
  add(parts.loc_node, weights.loc_node);
  add(parts.loc_edge, edge_supervision ? weights.loc_edge : 0.0);
  add(parts.orientation, weights.orientation);
  add(parts.dims, weights.dims);
  add(parts.cls, weights.cls);
  return total;
}

PartValues part_values(const LossParts& parts, const LossWeights& weights, bool edge_supervision) {
  auto v = [](Var p) { return p.valid() ? p.scalar() : 0.0; };
  PartValues out;
  out.loc_node = v(parts.loc_node);
  out.loc_edge = edge_supervision ? v(parts.loc_edge) : 0.0;
  out.orientation = v(parts.orientation);
  out.dims = v(parts.dims);
  out.cls = v(parts.cls);
  out.total = weights.loc_node * out.loc_node +
              (edge_supervision ? weights.loc_edge * out.loc_edge : 0.0) +
              weights.orientation * out.orientation + weights.dims * out.dims +
              weights.cls * out.cls;
  return out;
}

Var dice_loss(std::span<const Var> pred, std::span<const Matrix> gt, double eps) {
  if (pred.empty() || pred.size() != gt.size()) throw ConfigError("dice: scale count mismatch");
  Tape& tape = *pred[0].tape();
  const Eigen::Index classes = gt[0].cols();
  Var acc;
  for (std::size_t u = 0; u < pred.size(); ++u) {
    if (pred[u].rows() != gt[u].rows() || pred[u].cols() != gt[u].cols() || gt[u].cols() != classes)
      throw ConfigError("dice: map shape mismatch");
    Var row_ones = tape.constant(ones(1, gt[u].rows()));
    Var g = tape.constant(gt[u]);
    Var inter = ad::matmul(row_ones, ad::mul(pred[u], g));
    Var denom = ad::add_scalar(ad::add(ad::matmul(row_ones, pred[u]), ad::matmul(row_ones, g)), eps);
    Var term = ad::sum(ad::div(ad::scale(inter, 2.0), denom));
    acc = acc.valid() ? ad::add(acc, term) : term;
  }
  return ad::add_scalar(ad::scale(acc, -1.0 / static_cast<double>(classes)), 1.0);
}

double dice_loss(std::span<const Matrix> pred, std::span<const Matrix> gt, double eps) {
  if (pred.empty() || pred.size() != gt.size()) throw ConfigError("dice: scale count mismatch");
  const Eigen::Index classes = gt[0].cols();
  double acc = 0.0;
  for (std::size_t u = 0; u < pred.size(); ++u) {
    if (pred[u].rows() != gt[u].rows() || pred[u].cols() != gt[u].cols() || gt[u].cols() != classes)
      throw ConfigError("dice: map shape mismatch");
    for (Eigen::Index c = 0; c < classes; ++c) {
      const double inter = pred[u].col(c).dot(gt[u].col(c));
      acc += 2.0 * inter / (pred[u].col(c).sum() + gt[u].col(c).sum() + eps);
    }
  }
  return 1.0 - acc / static_cast<double>(classes);
}

}  // namespace bevgraph::losses
