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
#include "bevgraph/autodiff.h"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <random>

#include "bevgraph/errors.h"
#include "bevgraph/rng.h"

namespace bevgraph::ad {

namespace {

constexpr const char* kCheckpointSchema = "bevgraph.checkpoint/1";

void require(bool ok, const char* op, const char* what) {
  if (!ok) throw ConfigError(std::string(op) + ": " + what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.tape() == b.tape(), op, "operands on different tapes");
  require(a.rows() == b.rows() && a.cols() == b.cols(), op, "shape mismatch");
}

// Unary elementwise op with derivative expressed from (input, output).
template <typename Fwd, typename Deriv>
Var unary(Var a, const char* op, Fwd fwd, Deriv deriv) {
  Tape& t = *a.tape();
  Matrix out = a.value().unaryExpr(fwd);
  const int ia = a.id();
  return t.record(std::move(out), {ia},
                  [ia, deriv](Tape& tp, int self) {
                    const Matrix& x = tp.value(ia);
                    const Matrix& y = tp.value(self);
                    const Matrix& g = tp.grad(self);
                    Matrix d(x.rows(), x.cols());
                    for (Eigen::Index k = 0; k < x.size(); ++k) {
                      d.data()[k] = g.data()[k] * deriv(x.data()[k], y.data()[k]);
                    }
                    tp.accumulate(ia, d);
                  },
                  op);
}

}  // namespace

// ---- ParameterStore --------------------------------------------------------

ParameterStore::ParameterStore(const ParameterStore& other) : init_seed_(other.init_seed_) {
  for (const auto& [name, p] : other.params_) params_[name] = std::make_unique<Parameter>(*p);
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this == &other) return *this;
  init_seed_ = other.init_seed_;
  params_.clear();
  for (const auto& [name, p] : other.params_) params_[name] = std::make_unique<Parameter>(*p);
  return *this;
}

Parameter& ParameterStore::create(const std::string& name, int rows, int cols, int fan_in) {
  if (params_.count(name)) throw ConfigError("parameter '" + name + "' already exists");
  require(rows >= 0 && cols >= 0 && fan_in > 0, "create", "bad parameter shape");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value.resize(rows, cols);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::mt19937_64 gen(mix_seed(init_seed_, fnv1a(name)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index k = 0; k < p->value.size(); ++k) p->value.data()[k] = dist(gen);
  p->grad = Matrix::Zero(rows, cols);
  Parameter& ref = *p;
  params_[name] = std::move(p);
  return ref;
}

Parameter& ParameterStore::create_zero(const std::string& name, int rows, int cols) {
  if (params_.count(name)) throw ConfigError("parameter '" + name + "' already exists");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  Parameter& ref = *p;
  params_[name] = std::move(p);
  return ref;
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return *it->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return *it->second;
}

std::vector<Parameter*> ParameterStore::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::parameters() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& [_, p] : params_) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p->grad.setZero(p->value.rows(), p->value.cols());
}

std::size_t ParameterStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

nlohmann::json ParameterStore::to_json() const {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, p] : params_) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(p->value.size()));
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) flat.push_back(p->value(r, c));
    }
    params.push_back({{"name", name},
                      {"shape", {p->value.rows(), p->value.cols()}},
                      {"values", std::move(flat)}});
  }
  return {{"schema", kCheckpointSchema}, {"init_seed", init_seed_}, {"parameters", params}};
}

void ParameterStore::load_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kCheckpointSchema) {
    throw ConfigError("checkpoint: expected schema " + std::string(kCheckpointSchema) +
                      ", got '" + j.value("schema", "") + "'");
  }
  std::size_t loaded = 0;
  for (const auto& jp : j.at("parameters")) {
    const std::string name = jp.at("name").get<std::string>();
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("checkpoint: unexpected parameter '" + name + "'");
    const auto rows = jp.at("shape")[0].get<Eigen::Index>();
    const auto cols = jp.at("shape")[1].get<Eigen::Index>();
    Matrix& v = it->second->value;
    if (rows != v.rows() || cols != v.cols()) {
      throw ConfigError("checkpoint: shape mismatch for '" + name + "'");
    }
    const auto& values = jp.at("values");
    if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
      throw ConfigError("checkpoint: wrong value count for '" + name + "'");
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) v(r, c) = values[k++].get<double>();
    }
    ++loaded;
  }
  if (loaded != params_.size()) throw ConfigError("checkpoint: missing parameters");
}

// ---- GradientBuffer --------------------------------------------------------

void GradientBuffer::add(Parameter* p, const Matrix& g) {
  auto it = grads_.find(p);
  if (it == grads_.end()) {
    grads_.emplace(p, g);
  } else {
    it->second += g;
  }
}

void GradientBuffer::flush_into_parameters() const {
  for (const auto& [p, g] : grads_) p->grad += g;
}

void GradientBuffer::scale(double s) {
  for (auto& [_, g] : grads_) g *= s;
}

// ---- Var / Tape ------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ConfigError("Var::scalar on non-scalar value");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NumericalError("constant: non-finite value");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::param(Parameter& p) {
  if (!p.value.allFinite()) throw NumericalError("parameter '" + p.name + "' is non-finite");
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Matrix value, std::vector<int> inputs, BackwardFn fn, const char* op) {
  if (!value.allFinite()) throw NumericalError(std::string(op) + ": non-finite result");
  Node n;
  n.value = std::move(value);
  const int self = static_cast<int>(nodes_.size());
  for (int in : inputs) {
    assert(in < self && "provenance must point backward");
    if (nodes_[in].needs_grad) n.needs_grad = true;
  }
  if (n.needs_grad) {
    n.backward = std::move(fn);
    n.inputs = std::move(inputs);
  }
  nodes_.push_back(std::move(n));
  return {this, self};
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::sweep(Var root) {
  if (root.tape() != this) throw ConfigError("backward: root belongs to another tape");
  const Matrix& rv = nodes_[root.id()].value;
  if (rv.rows() != 1 || rv.cols() != 1) throw ConfigError("backward: root must be scalar");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[root.id()].grad = Matrix::Ones(1, 1);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, id);
  }
}

void Tape::backward(Var root) {
  sweep(root);
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.size() == 0) continue;
    if (!n.grad.allFinite()) throw NumericalError("backward: non-finite gradient for " + n.param->name);
    n.param->grad += n.grad;
  }
}

void Tape::backward(Var root, GradientBuffer& sink) {
  sweep(root);
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.size() == 0) continue;
    if (!n.grad.allFinite()) throw NumericalError("backward: non-finite gradient for " + n.param->name);
    sink.add(n.param, n.grad);
  }
}

// ---- operations ------------------------------------------------------------

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {ia, ib},
                          [ia, ib](Tape& t, int self) {
                            t.accumulate(ia, t.grad(self));
                            t.accumulate(ib, t.grad(self));
                          },
                          "add");
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), {ia, ib},
                          [ia, ib](Tape& t, int self) {
                            t.accumulate(ia, t.grad(self));
                            t.accumulate_expr(ib, -t.grad(self));
                          },
                          "sub");
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {ia, ib},
                          [ia, ib](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            if (t.needs_grad(ia)) t.accumulate_expr(ia, g.cwiseProduct(t.value(ib)));
                            if (t.needs_grad(ib)) t.accumulate_expr(ib, g.cwiseProduct(t.value(ia)));
                          },
                          "mul");
}

Var div(Var a, Var b) {
  require_same_shape(a, b, "div");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseQuotient(b.value()), {ia, ib},
                          [ia, ib](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            const Matrix& bv = t.value(ib);
                            if (t.needs_grad(ia)) t.accumulate_expr(ia, g.cwiseQuotient(bv));
                            if (t.needs_grad(ib)) {
                              t.accumulate_expr(
                                  ib, -(g.cwiseProduct(t.value(self))).cwiseQuotient(bv));
                            }
                          },
                          "div");
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, {ia},
                          [ia, s](Tape& t, int self) { t.accumulate_expr(ia, t.grad(self) * s); },
                          "scale");
}

Var add_scalar(Var a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value().array() + s, {ia},
                          [ia](Tape& t, int self) { t.accumulate(ia, t.grad(self)); },
                          "add_scalar");
}

Var add_row(Var a, Var row) {
  require(a.tape() == row.tape(), "add_row", "operands on different tapes");
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row", "row shape mismatch");
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {ia, ir},
                          [ia, ir](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            t.accumulate(ia, g);
                            if (t.needs_grad(ir)) t.accumulate_expr(ir, g.colwise().sum());
                          },
                          "add_row");
}

Var matmul(Var a, Var b) {
  require(a.tape() == b.tape(), "matmul", "operands on different tapes");
  require(a.cols() == b.rows(), "matmul", "inner dimension mismatch");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return a.tape()->record(std::move(out), {ia, ib},
                          [ia, ib](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            if (t.needs_grad(ia)) t.accumulate_expr(ia, g * t.value(ib).transpose());
                            if (t.needs_grad(ib)) t.accumulate_expr(ib, t.value(ia).transpose() * g);
                          },
                          "matmul");
}

Var matmul_nt(Var a, Var b) {
  require(a.tape() == b.tape(), "matmul_nt", "operands on different tapes");
  require(a.cols() == b.cols(), "matmul_nt", "inner dimension mismatch");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value().transpose();
  return a.tape()->record(std::move(out), {ia, ib},
                          [ia, ib](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            if (t.needs_grad(ia)) t.accumulate_expr(ia, g * t.value(ib));
                            if (t.needs_grad(ib)) t.accumulate_expr(ib, g.transpose() * t.value(ia));
                          },
                          "matmul_nt");
}

Var transpose(Var a) {
  const int ia = a.id();
  return a.tape()->record(a.value().transpose(), {ia},
                          [ia](Tape& t, int self) {
                            t.accumulate_expr(ia, t.grad(self).transpose());
                          },
                          "transpose");
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no operands");
  Tape* tape = parts[0].tape();
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    require(p.tape() == tape && p.rows() == rows, "concat_cols", "row count mismatch");
    cols += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  std::vector<int> inputs = ids;
  return tape->record(std::move(out), std::move(inputs),
                      [ids, widths](Tape& t, int self) {
                        const Matrix& g = t.grad(self);
                        Eigen::Index o = 0;
                        for (std::size_t k = 0; k < ids.size(); ++k) {
                          if (t.needs_grad(ids[k])) t.accumulate_expr(ids[k], g.middleCols(o, widths[k]));
                          o += widths[k];
                        }
                      },
                      "concat_cols");
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no operands");
  Tape* tape = parts[0].tape();
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  for (const Var& p : parts) {
    require(p.tape() == tape && p.cols() == cols, "concat_rows", "column count mismatch");
    rows += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  std::vector<int> inputs = ids;
  return tape->record(std::move(out), std::move(inputs),
                      [ids, heights](Tape& t, int self) {
                        const Matrix& g = t.grad(self);
                        Eigen::Index o = 0;
                        for (std::size_t k = 0; k < ids.size(); ++k) {
                          if (t.needs_grad(ids[k])) t.accumulate_expr(ids[k], g.middleRows(o, heights[k]));
                          o += heights[k];
                        }
                      },
                      "concat_rows");
}

Var slice_cols(Var a, int start, int count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols", "range out of bounds");
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(a.value().middleCols(start, count), {ia},
                          [ia, start, count, rows, cols](Tape& t, int self) {
                            Matrix g = Matrix::Zero(rows, cols);
                            g.middleCols(start, count) = t.grad(self);
                            t.accumulate(ia, g);
                          },
                          "slice_cols");
}

Var leaky_relu(Var a, double slope) {
  return unary(
      a, "leaky_relu", [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(Var a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var masked_softmax(Var scores, const Matrix& mask) {
  require(mask.rows() == scores.rows() && mask.cols() == scores.cols(), "masked_softmax",
          "mask shape mismatch");
  const Matrix& s = scores.value();
  Matrix out = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      if (mask(r, c) != 0.0) mx = std::max(mx, s(r, c));
    }
    require(std::isfinite(mx), "masked_softmax", "row without admissible entries");
    double z = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      if (mask(r, c) != 0.0) {
        out(r, c) = std::exp(s(r, c) - mx);
        z += out(r, c);
      }
    }
    out.row(r) /= z;
  }
  const int is = scores.id();
  return scores.tape()->record(std::move(out), {is},
                               [is](Tape& t, int self) {
                                 const Matrix& y = t.value(self);
                                 const Matrix& g = t.grad(self);
                                 // Masked entries have y == 0 and so receive no gradient.
                                 Matrix gy = g.cwiseProduct(y);
                                 Eigen::VectorXd dots = gy.rowwise().sum();
                                 Matrix d = gy - (y.array().colwise() * dots.array()).matrix();
                                 t.accumulate(is, d);
                               },
                               "masked_softmax");
}

Var softmax_rows(Var scores) {
  return masked_softmax(scores, Matrix::Ones(scores.rows(), scores.cols()));
}

Var sum(Var a) {
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), {ia},
                          [ia, r, c](Tape& t, int self) {
                            t.accumulate_expr(ia, Matrix::Constant(r, c, t.grad(self)(0, 0)));
                          },
                          "sum");
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean", "empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var log(Var a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sin(Var a) {
  return unary(
      a, "sin", [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var cos(Var a) {
  return unary(
      a, "cos", [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Var tan(Var a) {
  return unary(
      a, "tan", [](double x) { return std::tan(x); }, [](double, double y) { return 1.0 + y * y; });
}

Var atan(Var a) {
  return unary(
      a, "atan", [](double x) { return std::atan(x); },
      [](double x, double) { return 1.0 / (1.0 + x * x); });
}

Var square(Var a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var pow(Var a, double p) {
  return unary(
      a, "pow", [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

Var softplus(Var a) {
  return unary(
      a, "softplus",
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var smooth_l1_elementwise(Var a) {
  return unary(
      a, "smooth_l1",
      [](double x) {
        const double ax = std::abs(x);
        return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
      },
      [](double x, double) {
        if (std::abs(x) < 1.0) return x;
        return x > 0.0 ? 1.0 : -1.0;
      });
}

Var row_scale(Var col, Var m) {
  require(col.tape() == m.tape(), "row_scale", "operands on different tapes");
  require(col.cols() == 1 && col.rows() == m.rows(), "row_scale", "shape mismatch");
  const int ic = col.id(), im = m.id();
  Matrix out = col.value().col(0).asDiagonal() * m.value();
  return col.tape()->record(std::move(out), {ic, im},
                            [ic, im](Tape& t, int self) {
                              const Matrix& g = t.grad(self);
                              if (t.needs_grad(ic)) {
                                t.accumulate_expr(ic, g.cwiseProduct(t.value(im)).rowwise().sum());
                              }
                              if (t.needs_grad(im)) {
                                t.accumulate_expr(im, t.value(ic).col(0).asDiagonal() * g);
                              }
                            },
                            "row_scale");
}

Var gather_rows(Var a, std::span<const int> rows) {
  std::vector<int> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] >= 0 && idx[r] < a.rows(), "gather_rows", "row index out of range");
    out.row(static_cast<Eigen::Index>(r)) = a.value().row(idx[r]);
  }
  const int ia = a.id();
  const Eigen::Index n = a.rows(), c = a.cols();
  return a.tape()->record(std::move(out), {ia},
                          [ia, idx, n, c](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            Matrix d = Matrix::Zero(n, c);
                            for (std::size_t r = 0; r < idx.size(); ++r) {
                              d.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
                            }
                            t.accumulate(ia, d);
                          },
                          "gather_rows");
}

Var pick(Var a, std::span<const int> idx_in) {
  require(static_cast<Eigen::Index>(idx_in.size()) == a.rows(), "pick", "index count mismatch");
  std::vector<int> idx(idx_in.begin(), idx_in.end());
  Matrix out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    require(idx[r] >= 0 && idx[r] < a.cols(), "pick", "column index out of range");
    out(r, 0) = a.value()(r, idx[r]);
  }
  const int ia = a.id();
  const Eigen::Index n = a.rows(), c = a.cols();
  return a.tape()->record(std::move(out), {ia},
                          [ia, idx, n, c](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            Matrix d = Matrix::Zero(n, c);
                            for (Eigen::Index r = 0; r < n; ++r) d(r, idx[r]) = g(r, 0);
                            t.accumulate(ia, d);
                          },
                          "pick");
}

Var diag(Var a) {
  require(a.rows() == a.cols(), "diag", "operand must be square");
  const int ia = a.id();
  const Eigen::Index n = a.rows();
  return a.tape()->record(a.value().diagonal(), {ia},
                          [ia, n](Tape& t, int self) {
                            Matrix d = Matrix::Zero(n, n);
                            d.diagonal() = t.grad(self).col(0);
                            t.accumulate(ia, d);
                          },
                          "diag");
}

Var pair_scatter(Var v, std::span<const std::pair<int, int>> pairs_in, int n) {
  require(v.cols() == 1 && v.rows() == static_cast<Eigen::Index>(pairs_in.size()), "pair_scatter",
          "value count mismatch");
  std::vector<std::pair<int, int>> pairs(pairs_in.begin(), pairs_in.end());
  Matrix out = Matrix::Zero(n, n);
  for (std::size_t l = 0; l < pairs.size(); ++l) {
    const auto [a, b] = pairs[l];
    out(a, b) = v.value()(static_cast<Eigen::Index>(l), 0);
    out(b, a) = out(a, b);
  }
  const int iv = v.id();
  return v.tape()->record(std::move(out), {iv},
                          [iv, pairs](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            Matrix d(static_cast<Eigen::Index>(pairs.size()), 1);
                            for (std::size_t l = 0; l < pairs.size(); ++l) {
                              const auto [a, b] = pairs[l];
                              d(static_cast<Eigen::Index>(l), 0) = g(a, b) + g(b, a);
                            }
                            t.accumulate(iv, d);
                          },
                          "pair_scatter");
}

Var pair_gather(Var m, std::span<const std::pair<int, int>> pairs_in) {
  require(m.rows() == m.cols(), "pair_gather", "operand must be square");
  std::vector<std::pair<int, int>> pairs(pairs_in.begin(), pairs_in.end());
  const Eigen::Index n = m.rows();
  Matrix out = Matrix::Zero(n, static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t l = 0; l < pairs.size(); ++l) {
    const auto [a, b] = pairs[l];
    out(a, static_cast<Eigen::Index>(l)) = m.value()(a, b);
    out(b, static_cast<Eigen::Index>(l)) = m.value()(b, a);
  }
  const int im = m.id();
  return m.tape()->record(std::move(out), {im},
                          [im, pairs, n](Tape& t, int self) {
                            const Matrix& g = t.grad(self);
                            Matrix d = Matrix::Zero(n, n);
                            for (std::size_t l = 0; l < pairs.size(); ++l) {
                              const auto [a, b] = pairs[l];
                              d(a, b) += g(a, static_cast<Eigen::Index>(l));
                              d(b, a) += g(b, static_cast<Eigen::Index>(l));
                            }
                            t.accumulate(im, d);
                          },
                          "pair_gather");
}

// ---- grad_check --------------------------------------------------------------

GradCheckResult grad_check(const Objective& f, ParameterStore& store, double eps, double floor) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  if (floor < 0.0) throw ConfigError("grad_check: floor must be non-negative");
  store.zero_grad();
  GradCheckResult result;
  {
    Tape tape;
    Var root = f(tape, store);
    result.objective = root.scalar();
    tape.backward(root);
  }
  const double denom_floor = std::max(1e-12, floor * std::max(1.0, std::abs(result.objective)));
  for (Parameter* p : store.parameters()) {
    const Matrix analytic = p->grad;
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      double& theta = p->value.data()[k];
      const double saved = theta;
      theta = saved + eps;
      double fp;
      {
        Tape tape;
        fp = f(tape, store).scalar();
      }
      theta = saved - eps;
      double fm;
      {
        Tape tape;
        fm = f(tape, store).scalar();
      }
      theta = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic.data()[k];
      const double rel = std::abs(a - numeric) / std::max(denom_floor, std::abs(a) + std::abs(numeric));
      ++result.coordinates_checked;
      if (result.worst_index < 0 || rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = p->name;
        result.worst_index = static_cast<int>(k);
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  store.zero_grad();
  return result;
}

// ---- Adam --------------------------------------------------------------------

Adam::Adam(AdamConfig config) : config_(config), lr_(config.learning_rate) {
  if (!(config.learning_rate >= 0.0)) throw ConfigError("adam: learning rate must be non-negative");
}

void Adam::step(ParameterStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (Parameter* p : params.parameters()) {
    auto [it, inserted] = moments_.try_emplace(p->name);
    auto& [m, v] = it->second;
    if (inserted) {
      m = Matrix::Zero(p->value.rows(), p->value.cols());
      v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    m = config_.beta1 * m + (1.0 - config_.beta1) * p->grad;
    v = config_.beta2 * v + (1.0 - config_.beta2) * p->grad.cwiseProduct(p->grad);
    if (lr_ == 0.0) continue;
    const Eigen::ArrayXXd mhat = m.array() / bc1;
    const Eigen::ArrayXXd vhat = v.array() / bc2;
    const Eigen::ArrayXXd update = mhat / (vhat.sqrt() + config_.epsilon) +
                                   config_.weight_decay * p->value.array();
    p->value.array() -= lr_ * update;
  }
}

void Adam::end_epoch() { lr_ *= config_.decay_per_epoch; }

double grad_norm(const ParameterStore& params) {
  double sq = 0.0;
  for (const Parameter* p : params.parameters()) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Parameter* p : params.parameters()) p->grad *= s;
  }
  return norm;
}

}  // namespace bevgraph::ad
