#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fluvinv/tensor.hpp"

namespace fluvinv {

/// Handle to a value slot on a Tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// What a primitive's backward function sees. `in_grad[i]` is null when
/// input i does not need a gradient; otherwise gradients are accumulated.
struct BackwardArgs {
  const Tensor& out;
  const Tensor& out_grad;
  std::span<const Tensor* const> in;
  std::span<Tensor* const> in_grad;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

/// Ordered record of executed primitives for reverse-mode differentiation.
/// Records are appended in execution order, so inputs always precede their
/// consumers. A tape supports exactly one backward pass.
class Tape {
 public:
  explicit Tape(Precision precision = Precision::f32) : precision_(precision) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Precision precision() const { return precision_; }

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient (an input or a parameter).
  Var variable(Tensor value);

  /// Appends a primitive. `value` is rounded according to the tape precision.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  /// Gradient accumulated by backward(); zeros if `v` was not reached.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const;
  std::string_view op_name(Var v) const;

  void backward(Var output);
  void backward(Var output, const Tensor& seed);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    mutable Tensor grad;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;

  Precision precision_;
  std::deque<Node> nodes_;  // stable references while recording
  bool consumed_ = false;
};

/// Maximum over coordinates of |analytic - central difference| divided by
/// max(|analytic|, |central difference|, 1e-12). Requires a 64-bit tape.
struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
};

/// `fn` builds a scalar on the given tape from the variable it receives.
using ScalarBuilder = std::function<Var(Tape&, Var)>;

GradientCheck gradient_check(const ScalarBuilder& fn, const Tensor& point, double step);

}  // namespace fluvinv
