#include "fluvinv/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fluvinv {

Var Tape::constant(Tensor value) {
  if (precision_ == Precision::f32) value.round_to_float();
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, {}, false});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value) {
  if (precision_ == Precision::f32) value.round_to_float();
  nodes_.push_back(Node{"variable", std::move(value), {}, {}, {}, true});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (consumed_) throw TapeError(std::string(op) + ": tape already consumed by backward()");
  bool needs = false;
  for (const Var& in : inputs) {
    if (!in.valid() || in.id >= static_cast<std::int32_t>(nodes_.size()))
      throw TapeError(std::string(op) + ": input does not belong to this tape");
    needs = needs || nodes_[in.id].requires_grad;
  }
  if (precision_ == Precision::f32) value.round_to_float();
  nodes_.push_back(Node{op, std::move(value), {}, std::move(inputs), std::move(backward), needs});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= static_cast<std::int32_t>(nodes_.size()))
    throw TapeError("tape: variable does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

std::string_view Tape::op_name(Var v) const { return node(v).op; }

void Tape::backward(Var output) {
  const Node& n = node(output);
  backward(output, Tensor(n.value.shape(), 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  if (nodes_.empty()) throw TapeError("backward: nothing recorded (forward not run)");
  if (consumed_) throw TapeError("backward: tape already consumed (one backward per forward)");
  Node& out = const_cast<Node&>(node(output));
  if (seed.shape() != out.value.shape())
    throw ShapeError("backward: seed " + shape_str(seed.shape()) + " vs output " +
                     shape_str(out.value.shape()));
  consumed_ = true;
  out.grad = seed;

  std::vector<const Tensor*> in_vals;
  std::vector<Tensor*> in_grads;
  for (std::int32_t id = output.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    in_vals.clear();
    in_grads.clear();
    for (const Var& in : n.inputs) {
      Node& src = nodes_[in.id];
      in_vals.push_back(&src.value);
      if (src.requires_grad) {
        if (src.grad.empty()) src.grad = Tensor(src.value.shape(), 0.0);
        in_grads.push_back(&src.grad);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.backward(BackwardArgs{n.value, n.grad, in_vals, in_grads});
    // Intermediate gradients are no longer needed once propagated.
    if (!n.inputs.empty() && id != output.id) n.grad = Tensor();
  }
}

GradientCheck gradient_check(const ScalarBuilder& fn, const Tensor& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("gradient_check: step must be > 0");

  auto evaluate = [&](const Tensor& x) {
    Tape tape(Precision::f64);
    Var v = tape.constant(x);
    return tape.value(fn(tape, v)).item();
  };

  Tape tape(Precision::f64);
  Var x = tape.variable(point);
  Var y = fn(tape, x);
  if (!std::isfinite(tape.value(y).item()))
    throw std::domain_error("gradient_check: non-finite value at the base point");
  tape.backward(y);
  const Tensor analytic = tape.grad(x);

  GradientCheck result;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    probe[i] = x0 + step;
    const double fp = evaluate(probe);
    probe[i] = x0 - step;
    const double fm = evaluate(probe);
    probe[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::domain_error("gradient_check: non-finite value probing coordinate " +
                              std::to_string(i));
    const double numeric = (fp - fm) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
    const double err = std::abs(analytic[i] - numeric) / denom;
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace fluvinv
