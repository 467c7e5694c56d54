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

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation in creation order, so the recorded graph is
// topologically sorted by construction and backward() is a single reverse
// sweep. Parameters live in a ParameterStore that outlives individual tapes;
// backward() adds parameter gradients into Parameter::grad (or into a
// GradientBuffer when several tapes run concurrently).

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace bevgraph::ad {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t init_seed = 0) : init_seed_(init_seed) {}

  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]. The draw depends only on
  // (init_seed, name), not on creation order. Throws on duplicate names.
  Parameter& create(const std::string& name, int rows, int cols, int fan_in);
  Parameter& create_zero(const std::string& name, int rows, int cols);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  // Name-ordered.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  void zero_grad();
  std::size_t num_scalars() const;
  std::uint64_t init_seed() const { return init_seed_; }

  // Checkpoint: {"schema", "init_seed", "parameters": [{name, shape, values}]}.
  nlohmann::json to_json() const;
  // Overwrites values of existing parameters; throws ConfigError on missing
  // names or shape mismatch.
  void load_json(const nlohmann::json& j);

 private:
  std::uint64_t init_seed_;
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

// Gradients keyed by parameter, for accumulation off the store.
class GradientBuffer {
 public:
  void add(Parameter* p, const Matrix& g);
  // Adds every buffered gradient into the parameters' grad slots.
  void flush_into_parameters() const;
  void scale(double s);
  void clear() { grads_.clear(); }
  const std::map<Parameter*, Matrix>& grads() const { return grads_; }

 private:
  std::map<Parameter*, Matrix> grads_;
};

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant(double value);
  Var param(Parameter& p);

  // Records a node. `inputs` are the ids it depends on; `fn` propagates
  // this node's grad into them. Throws NumericalError on non-finite values.
  Var record(Matrix value, std::vector<int> inputs, BackwardFn fn, const char* op);

  // Reverse sweep from a 1x1 root. Parameter gradients are added into
  // Parameter::grad, so calling twice doubles them.
  void backward(Var root);
  void backward(Var root, GradientBuffer& sink);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  // Accumulates into the grad slot of node `id` if it needs a gradient.
  void accumulate(int id, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad.noalias() += g;
  }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    std::vector<int> inputs;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  void sweep(Var root);

  std::vector<Node> nodes_;
};

// ---- operations ----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var div(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// a (n x m) + row (1 x m) broadcast down the rows.
Var add_row(Var a, Var row);
Var matmul(Var a, Var b);
// a * b^T without materializing the transpose.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, int start, int count);
Var leaky_relu(Var a, double slope);
Var sigmoid(Var a);
// Row-wise softmax restricted to entries where mask != 0; other entries are
// exactly zero and do not depend on the scores. Every row needs one entry.
Var masked_softmax(Var scores, const Matrix& mask);
Var softmax_rows(Var scores);
Var sum(Var a);
Var mean(Var a);
Var log(Var a);
Var exp(Var a);
Var sin(Var a);
Var cos(Var a);
Var tan(Var a);
Var atan(Var a);
Var square(Var a);
// x^p for x >= 0.
Var pow(Var a, double p);
Var softplus(Var a);
// Clamp with zero gradient outside [lo, hi].
Var clamp(Var a, double lo, double hi);
// Elementwise 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
Var smooth_l1_elementwise(Var a);
// out(i, :) = col(i) * m(i, :).
Var row_scale(Var col, Var m);
Var gather_rows(Var a, std::span<const int> rows);
// N x 1 column with a(i, idx[i]).
Var pick(Var a, std::span<const int> idx);
Var diag(Var a);
// E x 1 values to a symmetric N x N matrix, out(a,b) = out(b,a) = v(l).
Var pair_scatter(Var v, std::span<const std::pair<int, int>> pairs, int n);
// N x N to N x L: out(a, l) = m(a, b), out(b, l) = m(b, a) for pair l = (a, b).
Var pair_gather(Var m, std::span<const std::pair<int, int>> pairs);

// ---- gradient oracle -----------------------------------------------------

// Scalar objective evaluated on a fresh tape from the store's current values.
using Objective = std::function<Var(Tape&, ParameterStore&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  int worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
  double objective = 0.0;
};

// Central differences on every coordinate of every parameter; relative error
// |a - n| / max(1e-12, |a| + |n|, floor * max(1, |f|)). A positive `floor`
// keeps coordinates whose true gradient is zero (rounding noise of order
// 1e-16 |f| / eps in n) from reporting spurious unit errors.
GradCheckResult grad_check(const Objective& f, ParameterStore& store, double eps = 1e-6,
                           double floor = 0.0);

// ---- optimizer -----------------------------------------------------------

struct AdamConfig {
  double learning_rate = 5e-5;
  double weight_decay = 1e-4;
  double decay_per_epoch = 0.99;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config);

  // Decoupled weight decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
  void step(ParameterStore& params);
  // Multiplies the learning rate by decay_per_epoch.
  void end_epoch();

  double learning_rate() const { return lr_; }
  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  double lr_;
  long t_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

// Global L2 norm of all parameter gradients.
double grad_norm(const ParameterStore& params);
// Rescales gradients so their global norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(ParameterStore& params, double max_norm);

}  // namespace bevgraph::ad
