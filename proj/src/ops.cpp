#include "fluvinv/ops.hpp"

#include <cmath>
#include <string>

#include "fluvinv/kernels.hpp"

namespace fluvinv::ops {

namespace {

[[noreturn]] void mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_same(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) mismatch(op, a.shape(), b.shape());
}

void accumulate(Tensor* dst, std::span<const double> src) {
  if (!dst) return;
  auto d = dst->data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
}

// Elementwise unary op; `deriv(x, y)` gives dy/dx from input and output.
template <class F, class D>
Var unary(Tape& t, Var xv, std::string_view name, F f, D deriv) {
  const Tensor& x = t.value(xv);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return t.record(name, std::move(out), {xv}, [deriv](const BackwardArgs& a) {
    if (!a.in_grad[0]) return;
    auto g = a.in_grad[0]->data();
    const Tensor& x = *a.in[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += a.out_grad[i] * deriv(x[i], a.out[i]);
  });
}

std::pair<std::int64_t, std::int64_t> outer_inner(const Shape& s, std::size_t axis) {
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same("add", x, y);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return t.record("add", std::move(out), {a, b}, [](const BackwardArgs& g) {
    accumulate(g.in_grad[0], g.out_grad.data());
    accumulate(g.in_grad[1], g.out_grad.data());
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same("sub", x, y);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return t.record("sub", std::move(out), {a, b}, [](const BackwardArgs& g) {
    accumulate(g.in_grad[0], g.out_grad.data());
    if (g.in_grad[1]) {
      auto d = g.in_grad[1]->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g.out_grad[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same("mul", x, y);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return t.record("mul", std::move(out), {a, b}, [](const BackwardArgs& g) {
    const Tensor& x = *g.in[0];
    const Tensor& y = *g.in[1];
    if (g.in_grad[0]) {
      auto d = g.in_grad[0]->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.out_grad[i] * y[i];
    }
    if (g.in_grad[1]) {
      auto d = g.in_grad[1]->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.out_grad[i] * x[i];
    }
  });
}

Var div(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same("div", x, y);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / y[i];
  return t.record("div", std::move(out), {a, b}, [](const BackwardArgs& g) {
    const Tensor& x = *g.in[0];
    const Tensor& y = *g.in[1];
    if (g.in_grad[0]) {
      auto d = g.in_grad[0]->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.out_grad[i] / y[i];
    }
    if (g.in_grad[1]) {
      auto d = g.in_grad[1]->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g.out_grad[i] * x[i] / (y[i] * y[i]);
    }
  });
}

Var affine(Tape& t, Var x, double a, double b) {
  return unary(
      t, x, "affine", [a, b](double v) { return a * v + b; },
      [a](double, double) { return a; });
}

Var mul_const(Tape& t, Var xv, const Tensor& c) {
  const Tensor& x = t.value(xv);
  require_same("mul_const", x, c);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * c[i];
  return t.record("mul_const", std::move(out), {xv}, [c](const BackwardArgs& g) {
    if (!g.in_grad[0]) return;
    auto d = g.in_grad[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.out_grad[i] * c[i];
  });
}

Var add_const(Tape& t, Var xv, const Tensor& c) {
  const Tensor& x = t.value(xv);
  require_same("add_const", x, c);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + c[i];
  return t.record("add_const", std::move(out), {xv}, [](const BackwardArgs& g) {
    accumulate(g.in_grad[0], g.out_grad.data());
  });
}

Var leaky_relu(Tape& t, Var x, double slope) {
  return unary(
      t, x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var tanh(Tape& t, Var x) {
  return unary(
      t, x, "tanh", [](double v) { return std::tanh(v); },
      [](double v, double) {
        const double th = std::tanh(v);
        return 1.0 - th * th;
      });
}

namespace {
double logistic(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Tape& t, Var x) {
  return unary(
      t, x, "sigmoid", [](double v) { return logistic(v); },
      [](double v, double) {
        const double s = logistic(v);
        return s * (1.0 - s);
      });
}

Var exp(Tape& t, Var x) {
  return unary(
      t, x, "exp", [](double v) { return std::exp(v); },
      [](double v, double) { return std::exp(v); });
}

Var square(Tape& t, Var x) {
  return unary(
      t, x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var abs(Tape& t, Var x) {
  return unary(
      t, x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var map(Tape& t, Var xv, std::string_view name, const ScalarFn& fn) {
  const Tensor& x = t.value(xv);
  Tensor out(x.shape());
  Tensor deriv(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto [v, d] = fn(x[i]);
    out[i] = v;
    deriv[i] = d;
  }
  return t.record(name, std::move(out), {xv}, [deriv = std::move(deriv)](const BackwardArgs& g) {
    if (!g.in_grad[0]) return;
    auto d = g.in_grad[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.out_grad[i] * deriv[i];
  });
}

Var sum(Tape& t, Var xv) {
  const Tensor& x = t.value(xv);
  return t.record("sum", Tensor::scalar(fluvinv::sum(x.data())), {xv},
                  [](const BackwardArgs& g) {
                    if (!g.in_grad[0]) return;
                    const double s = g.out_grad[0];
                    for (auto& d : g.in_grad[0]->data()) d += s;
                  });
}

Var mean(Tape& t, Var xv) {
  const Tensor& x = t.value(xv);
  const double n = static_cast<double>(x.size());
  return t.record("mean", Tensor::scalar(fluvinv::sum(x.data()) / n), {xv},
                  [n](const BackwardArgs& g) {
                    if (!g.in_grad[0]) return;
                    const double s = g.out_grad[0] / n;
                    for (auto& d : g.in_grad[0]->data()) d += s;
                  });
}

Var dense(Tape& t, Var wv, Var xv, Var bv) {
  const Tensor& w = t.value(wv);
  const Tensor& x = t.value(xv);
  if (w.rank() != 2 || x.rank() != 1 || w.extent(1) != x.extent(0)) mismatch("dense", w.shape(), x.shape());
  const std::int64_t rows = w.extent(0), cols = w.extent(1);
  const bool has_bias = bv.valid();
  if (has_bias) {
    const Tensor& b = t.value(bv);
    if (b.shape() != Shape{rows}) mismatch("dense(bias)", b.shape(), Shape{rows});
  }
  Tensor out({rows});
  for (std::int64_t r = 0; r < rows; ++r) {
    double acc = has_bias ? t.value(bv)[r] : 0.0;
    const double* wr = w.data().data() + r * cols;
    for (std::int64_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    out[r] = acc;
  }
  std::vector<Var> inputs{wv, xv};
  if (has_bias) inputs.push_back(bv);
  return t.record("dense", std::move(out), std::move(inputs), [rows, cols](const BackwardArgs& g) {
    const Tensor& w = *g.in[0];
    const Tensor& x = *g.in[1];
    if (g.in_grad[0]) {
      auto d = g.in_grad[0]->data();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) d[r * cols + c] += g.out_grad[r] * x[c];
    }
    if (g.in_grad[1]) {
      auto d = g.in_grad[1]->data();
      for (std::int64_t c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (std::int64_t r = 0; r < rows; ++r) acc += w[r * cols + c] * g.out_grad[r];
        d[c] += acc;
      }
    }
    if (g.in_grad.size() > 2) accumulate(g.in_grad[2], g.out_grad.data());
  });
}

namespace {

kernels::ConvGeometry conv_geometry(std::string_view op, const Tensor& x, const Tensor& w,
                                    bool transposed) {
  if (x.rank() != 4 || w.rank() != 5) mismatch(op, x.shape(), w.shape());
  kernels::ConvGeometry g;
  g.cin = x.extent(0);
  g.nz = x.extent(1);
  g.ny = x.extent(2);
  g.nx = x.extent(3);
  if (transposed) {
    if (w.extent(0) != g.cin) mismatch(op, x.shape(), w.shape());
    g.cout = w.extent(1);
  } else {
    if (w.extent(1) != g.cin) mismatch(op, x.shape(), w.shape());
    g.cout = w.extent(0);
  }
  g.kz = w.extent(2);
  g.ky = w.extent(3);
  g.kx = w.extent(4);
  if (!transposed && (g.kz % 2 == 0 || g.ky % 2 == 0 || g.kx % 2 == 0))
    throw ShapeError(std::string(op) + ": kernel extents must be odd, got " + shape_str(w.shape()));
  return g;
}

void check_bias(std::string_view op, Tape& t, Var bv, std::int64_t cout) {
  if (!bv.valid()) return;
  const Tensor& b = t.value(bv);
  if (b.shape() != Shape{cout}) mismatch(op, b.shape(), Shape{cout});
}

void bias_grad(Tensor* dst, const Tensor& out_grad, std::int64_t cout, std::int64_t vol) {
  if (!dst) return;
  for (std::int64_t c = 0; c < cout; ++c) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < vol; ++i) acc += out_grad[c * vol + i];
    (*dst)[c] += acc;
  }
}

}  // namespace

Var conv3d(Tape& t, Var xv, Var wv, Var bv) {
  const Tensor& x = t.value(xv);
  const Tensor& w = t.value(wv);
  const auto g = conv_geometry("conv3d", x, w, false);
  check_bias("conv3d(bias)", t, bv, g.cout);
  Tensor out({g.cout, g.nz, g.ny, g.nx});
  std::span<const double> bias;
  if (bv.valid()) bias = t.value(bv).data();
  kernels::conv3d_forward(g, x.data(), w.data(), bias, out.data());
  std::vector<Var> inputs{xv, wv};
  if (bv.valid()) inputs.push_back(bv);
  return t.record("conv3d", std::move(out), std::move(inputs), [g](const BackwardArgs& a) {
    if (a.in_grad[0]) {
      std::vector<double> tmp(a.in[0]->size());
      kernels::conv3d_backward_input(g, a.out_grad.data(), a.in[1]->data(), tmp);
      accumulate(a.in_grad[0], tmp);
    }
    if (a.in_grad[1]) {
      std::vector<double> tmp(a.in[1]->size());
      kernels::conv3d_backward_weight(g, a.in[0]->data(), a.out_grad.data(), tmp);
      accumulate(a.in_grad[1], tmp);
    }
    if (a.in_grad.size() > 2) bias_grad(a.in_grad[2], a.out_grad, g.cout, g.volume());
  });
}

Var conv_transpose3d(Tape& t, Var xv, Var wv, Var bv) {
  const Tensor& x = t.value(xv);
  const Tensor& w = t.value(wv);
  const auto g = conv_geometry("conv_transpose3d", x, w, true);
  check_bias("conv_transpose3d(bias)", t, bv, g.cout);
  Tensor out({g.cout, 2 * g.nz, 2 * g.ny, 2 * g.nx});
  std::span<const double> bias;
  if (bv.valid()) bias = t.value(bv).data();
  kernels::conv_transpose3d_forward(g, x.data(), w.data(), bias, out.data());
  std::vector<Var> inputs{xv, wv};
  if (bv.valid()) inputs.push_back(bv);
  return t.record("conv_transpose3d", std::move(out), std::move(inputs),
                  [g](const BackwardArgs& a) {
                    if (a.in_grad[0]) {
                      std::vector<double> tmp(a.in[0]->size());
                      kernels::conv_transpose3d_backward_input(g, a.out_grad.data(),
                                                               a.in[1]->data(), tmp);
                      accumulate(a.in_grad[0], tmp);
                    }
                    if (a.in_grad[1]) {
                      std::vector<double> tmp(a.in[1]->size());
                      kernels::conv_transpose3d_backward_weight(g, a.in[0]->data(),
                                                                a.out_grad.data(), tmp);
                      accumulate(a.in_grad[1], tmp);
                    }
                    if (a.in_grad.size() > 2)
                      bias_grad(a.in_grad[2], a.out_grad, g.cout, 8 * g.volume());
                  });
}

Var upsample2(Tape& t, Var xv) {
  const Tensor& x = t.value(xv);
  if (x.rank() != 4) throw ShapeError("upsample2: expected [C,Z,Y,X], got " + shape_str(x.shape()));
  const std::int64_t c = x.extent(0), nz = x.extent(1), ny = x.extent(2), nx = x.extent(3);
  const std::int64_t oz = 2 * nz, oy = 2 * ny, ox = 2 * nx;
  Tensor out({c, oz, oy, ox});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t z = 0; z < oz; ++z)
      for (std::int64_t y = 0; y < oy; ++y)
        for (std::int64_t xx = 0; xx < ox; ++xx)
          out[((ch * oz + z) * oy + y) * ox + xx] = x[((ch * nz + z / 2) * ny + y / 2) * nx + xx / 2];
  return t.record("upsample2", std::move(out), {xv}, [=](const BackwardArgs& a) {
    if (!a.in_grad[0]) return;
    auto d = a.in_grad[0]->data();
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t z = 0; z < oz; ++z)
        for (std::int64_t y = 0; y < oy; ++y)
          for (std::int64_t xx = 0; xx < ox; ++xx)
            d[((ch * nz + z / 2) * ny + y / 2) * nx + xx / 2] +=
                a.out_grad[((ch * oz + z) * oy + y) * ox + xx];
  });
}

Var reshape(Tape& t, Var xv, Shape shape) {
  const Tensor& x = t.value(xv);
  if (shape_size(shape) != static_cast<std::int64_t>(x.size())) mismatch("reshape", x.shape(), shape);
  return t.record("reshape", x.reshaped(shape), {xv}, [](const BackwardArgs& a) {
    accumulate(a.in_grad[0], a.out_grad.data());
  });
}

Var slice(Tape& t, Var xv, std::size_t axis, std::int64_t begin, std::int64_t end) {
  const Tensor& x = t.value(xv);
  if (axis >= x.rank() || begin < 0 || end > x.extent(axis) || begin >= end)
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  const auto [outer, inner] = outer_inner(x.shape(), axis);
  const std::int64_t n = x.extent(axis), m = end - begin;
  Shape s = x.shape();
  s[axis] = m;
  Tensor out(s);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t k = 0; k < m; ++k)
      for (std::int64_t i = 0; i < inner; ++i)
        out[(o * m + k) * inner + i] = x[(o * n + begin + k) * inner + i];
  return t.record("slice", std::move(out), {xv}, [=](const BackwardArgs& a) {
    if (!a.in_grad[0]) return;
    auto d = a.in_grad[0]->data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t k = 0; k < m; ++k)
        for (std::int64_t i = 0; i < inner; ++i)
          d[(o * n + begin + k) * inner + i] += a.out_grad[(o * m + k) * inner + i];
  });
}

Var pad(Tape& t, Var xv, std::size_t axis, std::int64_t before, std::int64_t after, double value) {
  const Tensor& x = t.value(xv);
  if (axis >= x.rank() || before < 0 || after < 0)
    throw ShapeError("pad: invalid axis/amount for " + shape_str(x.shape()));
  const auto [outer, inner] = outer_inner(x.shape(), axis);
  const std::int64_t n = x.extent(axis), m = n + before + after;
  Shape s = x.shape();
  s[axis] = m;
  Tensor out(s, value);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t k = 0; k < n; ++k)
      for (std::int64_t i = 0; i < inner; ++i)
        out[(o * m + before + k) * inner + i] = x[(o * n + k) * inner + i];
  return t.record("pad", std::move(out), {xv}, [=](const BackwardArgs& a) {
    if (!a.in_grad[0]) return;
    auto d = a.in_grad[0]->data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t k = 0; k < n; ++k)
        for (std::int64_t i = 0; i < inner; ++i)
          d[(o * n + k) * inner + i] += a.out_grad[(o * m + before + k) * inner + i];
  });
}

Var concat(Tape& t, std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = t.value(parts[0]).shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  std::vector<std::int64_t> offsets;
  std::int64_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = t.value(p).shape();
    if (s.size() != first.size()) mismatch("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != first[i]) mismatch("concat", first, s);
    offsets.push_back(total);
    total += s[axis];
  }
  Shape s = first;
  s[axis] = total;
  const auto [outer, inner] = outer_inner(s, axis);
  Tensor out(s);
  std::vector<std::int64_t> lens;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& x = t.value(parts[p]);
    const std::int64_t n = x.extent(axis);
    lens.push_back(n);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t k = 0; k < n; ++k)
        for (std::int64_t i = 0; i < inner; ++i)
          out[(o * total + offsets[p] + k) * inner + i] = x[(o * n + k) * inner + i];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record("concat", std::move(out), std::move(inputs), [=](const BackwardArgs& a) {
    for (std::size_t p = 0; p < a.in_grad.size(); ++p) {
      if (!a.in_grad[p]) continue;
      auto d = a.in_grad[p]->data();
      const std::int64_t n = lens[p];
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t k = 0; k < n; ++k)
          for (std::int64_t i = 0; i < inner; ++i)
            d[(o * n + k) * inner + i] += a.out_grad[(o * total + offsets[p] + k) * inner + i];
    }
  });
}

Var gather(Tape& t, Var xv, std::vector<std::int64_t> indices) {
  const Tensor& x = t.value(xv);
  if (indices.empty()) throw ShapeError("gather: no indices");
  Tensor out({static_cast<std::int64_t>(indices.size())});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= static_cast<std::int64_t>(x.size()))
      throw ShapeError("gather: index " + std::to_string(indices[i]) + " outside " +
                       shape_str(x.shape()));
    out[i] = x[indices[i]];
  }
  return t.record("gather", std::move(out), {xv},
                  [indices = std::move(indices)](const BackwardArgs& a) {
                    if (!a.in_grad[0]) return;
                    auto d = a.in_grad[0]->data();
                    for (std::size_t i = 0; i < indices.size(); ++i) d[indices[i]] += a.out_grad[i];
                  });
}

}  // namespace fluvinv::ops
