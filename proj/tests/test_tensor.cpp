#include <cmath>
#include <string>

#include <omp.h>

#include "doctest.h"
#include "fluvinv/kernels.hpp"
#include "fluvinv/ops.hpp"
#include "fluvinv/random.hpp"
#include "fluvinv/tape.hpp"

using namespace fluvinv;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double min_abs = 0.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    double x = rng.normal();
    if (std::abs(x) < min_abs) x = x < 0 ? x - min_abs : x + min_abs;
    v = x;
  }
  return t;
}

// sum(op(x) * r) for a fixed random r, so every output element matters.
ScalarBuilder weighted(std::function<Var(Tape&, Var)> op, std::uint64_t seed) {
  return [op, seed](Tape& t, Var x) {
    Var y = op(t, x);
    Rng rng(seed, {99});
    Tensor r = random_tensor(t.value(y).shape(), rng);
    return ops::sum(t, ops::mul_const(t, y, r));
  };
}

}  // namespace

TEST_CASE("tensor: construction invariants") {
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(shape_str(t.shape()) == "[2x3]");
}

TEST_CASE("forward: identity dense and leaky relu") {
  Tape tape(Precision::f64);
  Tensor eye({3, 3}, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  Var w = tape.constant(eye);
  Var b = tape.constant(Tensor({3}, 0.0));
  Var v = tape.constant(Tensor::vector({0.5, -2.0, 7.25}));
  CHECK(tape.value(ops::dense(tape, w, v, b)) == tape.value(v));

  Var x = tape.constant(Tensor::vector({-1.0, 2.0}));
  const Tensor& y = tape.value(ops::leaky_relu(tape, x, 0.2));
  CHECK(y[0] == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK(y[1] == 2.0);
}

TEST_CASE("forward: conv3d of a one-hot input reproduces the kernel around the hot cell") {
  Rng rng(3);
  const Tensor k = random_tensor({1, 1, 3, 5, 3}, rng);
  Tensor x({1, 6, 7, 6}, 0.0);
  const int z0 = 2, y0 = 3, x0 = 2;
  x[(z0 * 7 + y0) * 6 + x0] = 1.0;
  Tape tape(Precision::f64);
  const Tensor& out = tape.value(ops::conv3d(tape, tape.constant(x), tape.constant(k)));
  // Direct summation: out(z) = sum_a k(a) x(z + a - p), so the hot cell at
  // z0 shows up at z = z0 - a + p.
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 5; ++b)
      for (int c = 0; c < 3; ++c) {
        const int z = z0 - a + 1, y = y0 - b + 2, xx = x0 - c + 1;
        CHECK(out[(z * 7 + y) * 6 + xx] == k[(a * 5 + b) * 3 + c]);
      }
  double total = 0.0;
  for (double v : out.data()) total += v;
  double ksum = 0.0;
  for (double v : k.data()) ksum += v;
  CHECK(total == doctest::Approx(ksum).epsilon(1e-12));
}

TEST_CASE("backward: trivial derivatives") {
  {
    Tape tape(Precision::f64);
    Var x = tape.variable(Tensor({2, 3}, 0.7));
    tape.backward(ops::sum(tape, x));
    for (double g : tape.grad(x).data()) CHECK(g == 1.0);
  }
  {
    Tape tape(Precision::f64);
    Var x = tape.variable(Tensor::scalar(0.0));
    tape.backward(ops::tanh(tape, x));
    CHECK(tape.grad(x)[0] == 1.0);
  }
}

TEST_CASE("backward: misuse is rejected") {
  Tape empty;
  CHECK_THROWS_AS(empty.backward(Var{0}), TapeError);

  Tape tape(Precision::f64);
  Var x = tape.variable(Tensor({2}, 1.0));
  Var s = ops::sum(tape, x);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), TapeError);
}

TEST_CASE("forward: shape mismatch names the operation and both shapes") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({3, 2}));
  try {
    ops::add(tape, a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
  Var x = tape.constant(Tensor({2, 4, 4, 4}));
  Var w = tape.constant(Tensor({1, 3, 3, 3, 3}));
  CHECK_THROWS_AS(ops::conv3d(tape, x, w), ShapeError);
}

TEST_CASE("gradient_check: reference functions") {
  Rng rng(11);
  const Tensor p = random_tensor({7}, rng);
  auto quad = [](Tape& t, Var x) { return ops::sum(t, ops::square(t, x)); };
  CHECK(gradient_check(quad, p, 1e-5).max_relative_error < 1e-9);

  auto constant = [](Tape& t, Var x) {
    return ops::add(t, ops::mul_const(t, ops::sum(t, x), Tensor::scalar(0.0)),
                    t.constant(Tensor::scalar(3.0)));
  };
  CHECK(gradient_check(constant, p, 1e-5).max_relative_error == 0.0);

  auto blowup = [](Tape& t, Var x) {
    return ops::sum(t, ops::map(t, x, "log", [](double v) {
                      return std::pair{std::log(v), 1.0 / v};
                    }));
  };
  CHECK_THROWS_AS(gradient_check(blowup, Tensor({2}, 1e-6), 1e-5), std::domain_error);
}

TEST_CASE("primitives match central finite differences (20 seeds, 64-bit)") {
  struct Case {
    const char* name;
    Shape shape;
    std::function<Var(Tape&, Var, Rng&)> op;
  };
  const std::vector<Case> cases = {
      {"add", {3, 4}, [](Tape& t, Var x, Rng& r) { return ops::add(t, x, t.constant(random_tensor({3, 4}, r))); }},
      {"sub", {3, 4}, [](Tape& t, Var x, Rng& r) { return ops::sub(t, t.constant(random_tensor({3, 4}, r)), x); }},
      {"mul", {3, 4}, [](Tape& t, Var x, Rng&) { return ops::mul(t, x, ops::tanh(t, x)); }},
      {"div", {5}, [](Tape& t, Var x, Rng&) { return ops::div(t, x, ops::affine(t, ops::square(t, x), 1.0, 1.0)); }},
      {"affine", {5}, [](Tape& t, Var x, Rng&) { return ops::affine(t, x, -1.7, 0.3); }},
      {"leaky_relu", {6}, [](Tape& t, Var x, Rng&) { return ops::leaky_relu(t, x, 0.2); }},
      {"tanh", {6}, [](Tape& t, Var x, Rng&) { return ops::tanh(t, x); }},
      {"sigmoid", {6}, [](Tape& t, Var x, Rng&) { return ops::sigmoid(t, x); }},
      {"exp", {6}, [](Tape& t, Var x, Rng&) { return ops::exp(t, x); }},
      {"abs", {6}, [](Tape& t, Var x, Rng&) { return ops::abs(t, x); }},
      {"mean", {6}, [](Tape& t, Var x, Rng&) { return ops::mean(t, ops::square(t, x)); }},
      {"dense(x)", {4}, [](Tape& t, Var x, Rng& r) {
         return ops::dense(t, t.constant(random_tensor({3, 4}, r)), x, t.constant(random_tensor({3}, r)));
       }},
      {"dense(w)", {3, 4}, [](Tape& t, Var w, Rng& r) {
         return ops::dense(t, w, t.constant(random_tensor({4}, r)));
       }},
      {"conv3d(x)", {2, 4, 4, 3}, [](Tape& t, Var x, Rng& r) {
         return ops::conv3d(t, x, t.constant(random_tensor({3, 2, 3, 3, 3}, r)),
                            t.constant(random_tensor({3}, r)));
       }},
      {"conv3d(w)", {3, 2, 3, 1, 3}, [](Tape& t, Var w, Rng& r) {
         return ops::conv3d(t, t.constant(random_tensor({2, 3, 4, 4}, r)), w);
       }},
      {"conv3d(b)", {3}, [](Tape& t, Var b, Rng& r) {
         return ops::conv3d(t, t.constant(random_tensor({2, 2, 3, 3}, r)),
                            t.constant(random_tensor({3, 2, 1, 3, 3}, r)), b);
       }},
      {"conv_transpose3d(x)", {2, 2, 3, 2}, [](Tape& t, Var x, Rng& r) {
         return ops::conv_transpose3d(t, x, t.constant(random_tensor({2, 3, 4, 4, 4}, r)),
                                      t.constant(random_tensor({3}, r)));
       }},
      {"conv_transpose3d(w)", {2, 1, 3, 3, 3}, [](Tape& t, Var w, Rng& r) {
         return ops::conv_transpose3d(t, t.constant(random_tensor({2, 2, 2, 3}, r)), w);
       }},
      {"upsample2", {2, 2, 3, 2}, [](Tape& t, Var x, Rng&) { return ops::upsample2(t, x); }},
      {"slice", {3, 5}, [](Tape& t, Var x, Rng&) { return ops::slice(t, x, 1, 1, 4); }},
      {"pad", {3, 5}, [](Tape& t, Var x, Rng&) { return ops::pad(t, x, 0, 2, 1, 0.5); }},
      {"concat", {3, 2}, [](Tape& t, Var x, Rng& r) {
         Var parts[] = {x, t.constant(random_tensor({3, 4}, r)), ops::square(t, x)};
         return ops::concat(t, parts, 1);
       }},
      {"reshape", {3, 4}, [](Tape& t, Var x, Rng&) { return ops::reshape(t, x, {2, 6}); }},
      {"gather", {10}, [](Tape& t, Var x, Rng&) { return ops::gather(t, x, {1, 4, 4, 9}); }},
  };
  for (const auto& c : cases) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed, {1});
      const Tensor p = random_tensor(c.shape, rng, 0.05);
      auto fn = weighted(
          [&c, seed](Tape& t, Var x) {
            Rng r(seed, {2});
            return c.op(t, x, r);
          },
          seed);
      worst = std::max(worst, gradient_check(fn, p, 1e-5).max_relative_error);
    }
    INFO(c.name);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("composite graph on an 8x8x4 grid matches finite differences") {
  Rng rng(5);
  const Tensor w1 = random_tensor({2, 1, 3, 3, 3}, rng);
  const Tensor w2 = random_tensor({1, 2, 3, 3, 3}, rng);
  const Tensor p = random_tensor({1, 4, 8, 8}, rng);
  auto fn = [&](Tape& t, Var x) {
    Var h = ops::conv3d(t, x, t.constant(w1));
    h = ops::leaky_relu(t, h, 0.2);
    h = ops::conv3d(t, h, t.constant(w2));
    h = ops::sigmoid(t, h);
    return ops::mean(t, ops::square(t, ops::affine(t, h, 1.0, -0.3)));
  };
  CHECK(gradient_check(fn, p, 1e-5).max_relative_error < 1e-6);
}

TEST_CASE("adjoint identities <Ax, y> = <x, A^T y>") {
  Rng rng(8);
  for (int rep = 0; rep < 5; ++rep) {
    const Tensor x = random_tensor({2, 3, 4, 3}, rng);
    const Tensor wt = random_tensor({2, 3, 4, 4, 4}, rng);
    const Tensor y = random_tensor({3, 6, 8, 6}, rng);
    Tape tape(Precision::f64);
    Var xv = tape.variable(x);
    Var ax = ops::conv_transpose3d(tape, xv, tape.constant(wt));
    const double lhs = dot(tape.value(ax).data(), y.data());
    tape.backward(ax, y);
    const double rhs = dot(x.data(), tape.grad(xv).data());
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));

    // The transposed-convolution input gradient equals the strided forward
    // convolution with the same kernel (flipped-kernel relation).
    const Tensor& g = tape.grad(xv);
    const std::int64_t k = 4, p = (k - 1) / 2;
    double worst = 0.0;
    for (std::int64_t ci = 0; ci < 2; ++ci)
      for (std::int64_t z = 0; z < 3; ++z)
        for (std::int64_t yy = 0; yy < 4; ++yy)
          for (std::int64_t xx = 0; xx < 3; ++xx) {
            double acc = 0.0;
            for (std::int64_t co = 0; co < 3; ++co)
              for (std::int64_t a = 0; a < k; ++a)
                for (std::int64_t b = 0; b < k; ++b)
                  for (std::int64_t c = 0; c < k; ++c) {
                    const std::int64_t zo = 2 * z + a - p, yo = 2 * yy + b - p, xo = 2 * xx + c - p;
                    if (zo < 0 || zo >= 6 || yo < 0 || yo >= 8 || xo < 0 || xo >= 6) continue;
                    acc += wt[(((ci * 3 + co) * k + a) * k + b) * k + c] * y[((co * 6 + zo) * 8 + yo) * 6 + xo];
                  }
            worst = std::max(worst, std::abs(acc - g[((ci * 3 + z) * 4 + yy) * 3 + xx]));
          }
    CHECK(worst < 1e-10);
  }
  for (int rep = 0; rep < 5; ++rep) {
    const Tensor x = random_tensor({2, 4, 5, 3}, rng);
    const Tensor w = random_tensor({3, 2, 3, 3, 1}, rng);
    const Tensor y = random_tensor({3, 4, 5, 3}, rng);
    Tape tape(Precision::f64);
    Var xv = tape.variable(x);
    Var ax = ops::conv3d(tape, xv, tape.constant(w));
    const double lhs = dot(tape.value(ax).data(), y.data());
    tape.backward(ax, y);
    const double rhs = dot(x.data(), tape.grad(xv).data());
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("forward is pure and f32 mode rounds stored values") {
  Rng rng(2);
  const Tensor x = random_tensor({1, 4, 6, 6}, rng);
  const Tensor w = random_tensor({2, 1, 3, 3, 3}, rng);
  auto run = [&](Precision p) {
    Tape t(p);
    return t.value(ops::tanh(t, ops::conv3d(t, t.constant(x), t.constant(w))));
  };
  CHECK(run(Precision::f32) == run(Precision::f32));
  CHECK(run(Precision::f64) == run(Precision::f64));
  const Tensor r32 = run(Precision::f32);
  for (double v : r32.data()) CHECK(v == static_cast<double>(static_cast<float>(v)));
}

TEST_CASE("kernels: OpenMP conv kernels are bit-identical to the serial references") {
  Rng rng(21);
  // The second geometry is a vertical-only kernel taller than the grid.
  const kernels::ConvGeometry geometries[] = {{3, 4, 5, 6, 7, 3, 5, 3}, {2, 2, 6, 4, 5, 15, 1, 1}};
  const int saved = omp_get_max_threads();
  for (const auto& g : geometries) {
    const Tensor in = random_tensor({g.cin, g.nz, g.ny, g.nx}, rng);
    const Tensor w = random_tensor({g.cout, g.cin, g.kz, g.ky, g.kx}, rng);
    const Tensor b = random_tensor({g.cout}, rng);
    const Tensor go = random_tensor({g.cout, g.nz, g.ny, g.nx}, rng);
    for (int threads : {1, 3}) {
      omp_set_num_threads(threads);
      std::vector<double> o1(go.size()), o2(go.size());
      kernels::conv3d_forward(g, in.data(), w.data(), b.data(), o1);
      kernels::conv3d_forward_reference(g, in.data(), w.data(), b.data(), o2);
      CHECK(o1 == o2);
      std::vector<double> gi1(in.size()), gi2(in.size());
      kernels::conv3d_backward_input(g, go.data(), w.data(), gi1);
      kernels::conv3d_backward_input_reference(g, go.data(), w.data(), gi2);
      CHECK(gi1 == gi2);
      std::vector<double> gw1(w.size()), gw2(w.size());
      kernels::conv3d_backward_weight(g, in.data(), go.data(), gw1);
      kernels::conv3d_backward_weight_reference(g, in.data(), go.data(), gw2);
      CHECK(gw1 == gw2);
    }
  }
  omp_set_num_threads(saved);
}
