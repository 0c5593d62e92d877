#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <vector>

namespace riskgrad::nn {

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  AddConst,
  MulConst,
  Tanh,
  Exp,
  Log,
  MaxConst,
  Sum,
  Affine,
};

class CompGraph;

/// Handle to a scalar node of a CompGraph.
struct Var {
  CompGraph* graph = nullptr;
  std::uint32_t id = 0;
  double value() const;
};

/// Append-only scalar tape for reverse-mode differentiation.
///
/// Every node records its parents together with the local partial derivative
/// d(node)/d(parent), evaluated at construction. Insertion order is a
/// topological order, so backward() is a single reverse sweep.
class CompGraph {
 public:
  CompGraph() { first_.push_back(0); }

  /// Drops all nodes, keeping allocated capacity.
  void clear() {
    op_.clear();
    value_.clear();
    first_.assign(1, 0);
    parent_.clear();
    partial_.clear();
    adjoint_.clear();
  }

  std::size_t size() const { return value_.size(); }
  double value(Var v) const { return value_[v.id]; }
  Op op(Var v) const { return op_[v.id]; }

  Var leaf(double v) { return push(Op::Leaf, v); }

  /// Creates one leaf per entry; returns the handles in order.
  std::vector<Var> leaves(std::span<const double> values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(leaf(v));
    return out;
  }

  Var add(Var a, Var b) { return push(Op::Add, value(a) + value(b), {{a, 1.0}, {b, 1.0}}); }
  Var sub(Var a, Var b) { return push(Op::Sub, value(a) - value(b), {{a, 1.0}, {b, -1.0}}); }
  Var mul(Var a, Var b) { return push(Op::Mul, value(a) * value(b), {{a, value(b)}, {b, value(a)}}); }
  Var div(Var a, Var b) {
    const double inv = 1.0 / value(b);
    return push(Op::Div, value(a) * inv, {{a, inv}, {b, -value(a) * inv * inv}});
  }
  Var neg(Var a) { return push(Op::Neg, -value(a), {{a, -1.0}}); }
  Var add_const(Var a, double c) { return push(Op::AddConst, value(a) + c, {{a, 1.0}}); }
  Var mul_const(Var a, double c) { return push(Op::MulConst, value(a) * c, {{a, c}}); }
  Var tanh(Var a) {
    const double t = std::tanh(value(a));
    return push(Op::Tanh, t, {{a, 1.0 - t * t}});
  }
  Var exp(Var a) {
    const double e = std::exp(value(a));
    return push(Op::Exp, e, {{a, e}});
  }
  Var log(Var a) {
    if (!(value(a) > 0.0)) throw std::domain_error("CompGraph::log of non-positive value");
    return push(Op::Log, std::log(value(a)), {{a, 1.0 / value(a)}});
  }
  /// max(a, c); the subgradient at a == c is taken as 1.
  Var max_const(Var a, double c) {
    return value(a) >= c ? push(Op::MaxConst, value(a), {{a, 1.0}}) : push(Op::MaxConst, c, {{a, 0.0}});
  }
  /// min(a, c) = -max(-a, -c).
  Var min_const(Var a, double c) { return neg(max_const(neg(a), -c)); }
  /// min(a, b) = a - max(a - b, 0).
  Var min(Var a, Var b) { return sub(a, max_const(sub(a, b), 0.0)); }
  Var clamp(Var a, double lo, double hi) { return min_const(max_const(a, lo), hi); }

  Var sum(std::span<const Var> xs) {
    double total = 0.0;
    for (Var x : xs) total += value(x);
    const auto id = begin_node(Op::Sum, total);
    for (Var x : xs) add_partial(x, 1.0);
    return finish_node(id);
  }

  /// bias + sum_i weights[i] * inputs[i] over graph inputs.
  Var affine(Var bias, std::span<const Var> weights, std::span<const Var> inputs) {
    double total = value(bias);
    for (std::size_t i = 0; i < weights.size(); ++i) total += value(weights[i]) * value(inputs[i]);
    const auto id = begin_node(Op::Affine, total);
    add_partial(bias, 1.0);
    for (std::size_t i = 0; i < weights.size(); ++i) {
      add_partial(weights[i], value(inputs[i]));
      add_partial(inputs[i], value(weights[i]));
    }
    return finish_node(id);
  }

  /// bias + sum_i weights[i] * inputs[i] with constant inputs.
  Var affine(Var bias, std::span<const Var> weights, std::span<const double> inputs) {
    double total = value(bias);
    for (std::size_t i = 0; i < weights.size(); ++i) total += value(weights[i]) * inputs[i];
    const auto id = begin_node(Op::Affine, total);
    add_partial(bias, 1.0);
    for (std::size_t i = 0; i < weights.size(); ++i) add_partial(weights[i], inputs[i]);
    return finish_node(id);
  }

  /// Reverse sweep from `output`; afterwards adjoint(v) = d output / d v.
  void backward(Var output) {
    adjoint_.assign(value_.size(), 0.0);
    adjoint_[output.id] = 1.0;
    for (std::size_t i = output.id + 1; i-- > 0;) {
      const double a = adjoint_[i];
      if (a == 0.0) continue;
      for (std::uint32_t k = first_[i]; k < first_[i + 1]; ++k) adjoint_[parent_[k]] += partial_[k] * a;
    }
  }

  double adjoint(Var v) const { return adjoint_.empty() ? 0.0 : adjoint_[v.id]; }

  /// Adds the adjoints of `vars` into `grad` (same length).
  void accumulate_adjoints(std::span<const Var> vars, std::span<double> grad) const {
    for (std::size_t i = 0; i < vars.size(); ++i) grad[i] += adjoint_[vars[i].id];
  }

 private:
  struct Edge {
    Var parent;
    double partial;
  };

  Var push(Op op, double v, std::initializer_list<Edge> edges = {}) {
    const auto id = begin_node(op, v);
    for (const auto& e : edges) add_partial(e.parent, e.partial);
    return finish_node(id);
  }

  std::uint32_t begin_node(Op op, double v) {
    op_.push_back(op);
    value_.push_back(v);
    return static_cast<std::uint32_t>(value_.size() - 1);
  }
  void add_partial(Var parent, double partial) {
    parent_.push_back(parent.id);
    partial_.push_back(partial);
  }
  Var finish_node(std::uint32_t id) {
    first_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return {this, id};
  }

  std::vector<Op> op_;
  std::vector<double> value_;
  std::vector<std::uint32_t> first_;
  std::vector<std::uint32_t> parent_;
  std::vector<double> partial_;
  std::vector<double> adjoint_;
};

inline double Var::value() const { return graph->value(*this); }

inline Var operator+(Var a, Var b) { return a.graph->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.graph->div(a, b); }
inline Var operator-(Var a) { return a.graph->neg(a); }
inline Var operator+(Var a, double c) { return a.graph->add_const(a, c); }
inline Var operator+(double c, Var a) { return a.graph->add_const(a, c); }
inline Var operator-(Var a, double c) { return a.graph->add_const(a, -c); }
inline Var operator-(double c, Var a) { return a.graph->add_const(a.graph->neg(a), c); }
inline Var operator*(Var a, double c) { return a.graph->mul_const(a, c); }
inline Var operator*(double c, Var a) { return a.graph->mul_const(a, c); }
inline Var tanh(Var a) { return a.graph->tanh(a); }
inline Var exp(Var a) { return a.graph->exp(a); }
inline Var log(Var a) { return a.graph->log(a); }

}  // namespace riskgrad::nn
