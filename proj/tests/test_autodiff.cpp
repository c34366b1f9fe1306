#include <cmath>

#include "doctest.h"
#include "dpde/errors.hpp"
#include "dpde/jet.hpp"
#include "dpde/jet_batch.hpp"
#include "oracles.hpp"

using namespace dpde;

namespace {

// A smooth program touching every primitive.
template <class T>
T program(const T& a, const T& b, const T& c) {
  using std::exp;
  using std::log;
  using std::tanh;
  const T u = tanh(a * b + exp(c * (1.0 / 3.0)));
  const T v = log(T(2.0) + sigmoid(b - c) * a * a);
  return u / (T(1.5) + a * a) + v * softplus(c - a, 0.7) - b / (T(3.0) + c * c);
}

double program3(const Vector& x) { return program(x(0), x(1), x(2)); }

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("jet_lift seeds") {
    const auto one = jet_lift(Vector::Constant(1, 3.0), Matrix::Identity(1, 1));
    CHECK(one[0].val == 3.0);
    CHECK(one[0].d1(0) == 1.0);
    CHECK(one[0].d2(0) == 0.0);

    Vector x(2);
    x << 1, 2;
    const auto two = jet_lift(x, Matrix::Identity(2, 2));
    CHECK(two[0].d1(0) == 1.0);
    CHECK(two[0].d1(1) == 0.0);
    CHECK(two[1].d1(1) == 1.0);

    const auto zero = jet_lift(x, Matrix::Zero(2, 2));
    const Jet2 y = program(zero[0], zero[1], zero[0] * zero[1]);
    CHECK(y.d1.isZero(0.0));
    CHECK(y.d2.isZero(0.0));

    CHECK_THROWS_AS(jet_lift(x, Matrix::Identity(3, 3)), DimensionMismatch);
  }

  TEST_CASE("tanh jets") {
    const Jet2 c = tanh(Jet2(0.0, 1));
    CHECK(c.val == 0.0);
    CHECK(c.d1(0) == 0.0);
    CHECK(c.d2(0) == 0.0);

    const Jet2 z = tanh(Jet2::variable(0.0, 1, 0));
    CHECK(z.val == 0.0);
    CHECK(z.d1(0) == 1.0);
    CHECK(z.d2(0) == 0.0);

    const Jet2 h = tanh(Jet2::variable(0.5, 1, 0));
    auto f = [](double v) { return std::tanh(v); };
    CHECK(std::abs(h.d1(0) - oracle::central_diff(f, 0.5, 1e-5)) <= 1e-8);
    CHECK(std::abs(h.d2(0) - oracle::second_diff(f, 0.5, 1e-4)) <= 1e-6);
  }

  TEST_CASE("random smooth programs match finite differences") {
    Rng rng(11);
    int checked1 = 0, checked2 = 0;
    for (int trial = 0; trial < 50; ++trial) {
      Vector x(3);
      for (int i = 0; i < 3; ++i) x(i) = rng.uniform(-1.0, 1.0);
      const auto j = jet_lift(x, Matrix::Identity(3, 3));
      const Jet2 y = program(j[0], j[1], j[2]);
      CHECK(y.val == doctest::Approx(program3(x)).epsilon(1e-14));
      for (int a = 0; a < 3; ++a) {
        auto f = [&](double v) {
          Vector z = x;
          z(a) = v;
          return program3(z);
        };
        const double fd = oracle::central_diff(f, x(a), 1e-5);
        if (std::abs(y.d1(a)) > 1e-3) {
          CHECK(oracle::rel_err(y.d1(a), fd) <= 1e-6);
          ++checked1;
        }
        for (int b = a; b < 3; ++b) {
          double fd2;
          if (a == b) {
            fd2 = oracle::second_diff(f, x(a), 1e-4);
          } else {
            auto g = [&](double va, double vb) {
              Vector z = x;
              z(a) = va;
              z(b) = vb;
              return program3(z);
            };
            fd2 = oracle::mixed_diff(g, x(a), x(b), 1e-4);
          }
          if (std::abs(y.second(a, b)) > 1e-3) {
            CHECK(oracle::rel_err(y.second(a, b), fd2) <= 1e-4);
            ++checked2;
          }
        }
      }
    }
    CHECK(checked1 > 100);
    CHECK(checked2 > 100);
  }

  TEST_CASE("mixed second derivatives do not depend on direction order") {
    Vector x(3);
    x << 0.3, -0.7, 0.2;
    Matrix fwd = Matrix::Identity(3, 3);
    Matrix rev = fwd.rowwise().reverse();  // direction a of rev is direction 2 - a of fwd
    const auto jf = jet_lift(x, fwd);
    const auto jr = jet_lift(x, rev);
    const Jet2 yf = program(jf[0], jf[1], jf[2]);
    const Jet2 yr = program(jr[0], jr[1], jr[2]);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        CHECK(yf.second(a, b) == yf.second(b, a));
        CHECK(yf.second(a, b) == doctest::Approx(yr.second(2 - a, 2 - b)).epsilon(1e-14));
      }
  }

  TEST_CASE("softplus jet is stable at large arguments") {
    const Jet2 y = softplus(Jet2::variable(500.0, 1, 0), 0.1);
    CHECK(std::isfinite(y.val));
    CHECK(y.d1(0) == doctest::Approx(1.0));
    CHECK(y.d2(0) >= 0.0);
    const Jet2 n = softplus(Jet2::variable(-1e4, 1, 0), 0.1);
    CHECK(n.val >= 0.0);
    CHECK(std::isfinite(n.d1(0)));
  }

  TEST_CASE("param_gradient basics") {
    {
      Tape tape(0);
      const Var t0 = tape.parameter(3.0);
      const Vector g = param_gradient(tape, t0 * t0);
      REQUIRE(g.size() == 1);
      CHECK(g(0) == 6.0);
    }
    {
      Tape tape(1);
      const Var a = tape.parameter(0.4);
      const Var b = tape.parameter(-1.1);
      const Var x = tape.input(Jet2::variable(0.2, 1, 0));
      const Vector g = param_gradient(tape, tanh(a * x) + 2.0 * x);
      CHECK(g(1) == 0.0);  // b never touched
      CHECK(g(0) != 0.0);
    }
    {
      Tape other(0);
      Tape tape(0);
      const Var stranger = other.parameter(1.0);
      CHECK_THROWS_AS(param_gradient(tape, stranger), InvalidInput);
    }
  }

  TEST_CASE("param_gradient differentiates derivative channels") {
    // f(theta) = d/dx tanh(theta0 x + theta1) * d2/dx2 exp(theta2 x)
    const double th[3] = {0.7, -0.3, 0.5};
    const double x0 = 0.4;
    auto value = [&](const double* t) {
      const double s = std::tanh(t[0] * x0 + t[1]);
      return t[0] * (1 - s * s) * t[2] * t[2] * std::exp(t[2] * x0);
    };
    Tape tape(1);
    Var p[3] = {tape.parameter(th[0]), tape.parameter(th[1]), tape.parameter(th[2])};
    const Var x = tape.input(Jet2::variable(x0, 1, 0));
    const Var f = component(tanh(p[0] * x + p[1]), 1) * component(exp(p[2] * x), 2);
    CHECK(f.value().val == doctest::Approx(value(th)).epsilon(1e-14));
    const Vector g = param_gradient(tape, f);
    for (int i = 0; i < 3; ++i) {
      double tp[3] = {th[0], th[1], th[2]}, tm[3] = {th[0], th[1], th[2]};
      tp[i] += 1e-6;
      tm[i] -= 1e-6;
      CHECK(oracle::rel_err(g(i), (value(tp) - value(tm)) / 2e-6) <= 1e-7);
    }
  }

  TEST_CASE("param_gradient is linear") {
    Tape tape(2);
    const Var a = tape.parameter(0.3);
    const Var b = tape.parameter(1.2);
    const Var x = tape.input(Jet2::variable(0.1, 2, 0));
    const Var y = tape.input(Jet2::variable(-0.4, 2, 1));
    const Var f = component(tanh(a * x * y + b), 3);
    const Var g = exp(b * x) - a * y;
    const Vector gf = param_gradient(tape, f);
    const Vector gg = param_gradient(tape, g);
    const Vector gs = param_gradient(tape, f + g);
    CHECK((gs - (gf + gg)).cwiseAbs().maxCoeff() <= 1e-15);
  }

  TEST_CASE("batched kernels agree with scalar jets") {
    const JetLayout full = JetLayout::with_pairs(3, 0);
    const JetLayout partial = JetLayout::with_pairs(3, 1);
    CHECK(full.channels() == 1 + 3 + 6);
    CHECK(partial.channels() == 1 + 3 + 3);
    Rng rng(3);
    const int rows = 4, batch = 5;
    for (const JetLayout& layout : {full, partial}) {
      // random jets a, b per entry
      std::vector<Jet2> ja, jb;
      Matrix A(rows, layout.channels() * batch), B(rows, layout.channels() * batch);
      for (int r = 0; r < rows; ++r)
        for (int s = 0; s < batch; ++s) {
          Jet2 a(rng.uniform(-1, 1), 3), b(rng.uniform(-1, 1), 3);
          for (int i = 0; i < 3; ++i) a.d1(i) = rng.uniform(-1, 1), b.d1(i) = rng.uniform(-1, 1);
          for (int p = 0; p < 6; ++p) a.d2(p) = rng.uniform(-1, 1), b.d2(p) = rng.uniform(-1, 1);
          A(r, s) = a.val, B(r, s) = b.val;
          for (int i = 0; i < 3; ++i) A(r, (1 + i) * batch + s) = a.d1(i), B(r, (1 + i) * batch + s) = b.d1(i);
          for (int p = 0; p < static_cast<int>(layout.pairs.size()); ++p) {
            const auto [i, j] = layout.pairs[p];
            A(r, layout.pair_channel(p) * batch + s) = a.second(i, j);
            B(r, layout.pair_channel(p) * batch + s) = b.second(i, j);
          }
          ja.push_back(a);
          jb.push_back(b);
        }
      Matrix Y, T, S;
      jet_mul(layout, A, B, batch, Y);
      jet_activation(layout, Activation::tanh, A, batch, T);
      jet_activation(layout, Activation::sigmoid, A, batch, S);
      for (int r = 0; r < rows; ++r)
        for (int s = 0; s < batch; ++s) {
          const auto& a = ja[r * batch + s];
          const auto& b = jb[r * batch + s];
          const Jet2 y = a * b, t = tanh(a), g = sigmoid(a);
          for (int c = 0; c < layout.channels(); ++c) {
            auto pick = [&](const Jet2& j) {
              if (c == 0) return j.val;
              if (c <= 3) return j.d1(c - 1);
              const auto [i, k] = layout.pairs[c - 4];
              return j.second(i, k);
            };
            CHECK(Y(r, c * batch + s) == doctest::Approx(pick(y)).epsilon(1e-14));
            CHECK(T(r, c * batch + s) == doctest::Approx(pick(t)).epsilon(1e-14));
            CHECK(S(r, c * batch + s) == doctest::Approx(pick(g)).epsilon(1e-14));
          }
        }

      // adjoints: <ybar, dY> = <abar, dA> + <bbar, dB> for a random direction
      Matrix ybar = Matrix::Random(rows, A.cols());
      Matrix dA = Matrix::Random(rows, A.cols()), dB = Matrix::Random(rows, A.cols());
      Matrix abar = Matrix::Zero(rows, A.cols()), bbar = Matrix::Zero(rows, A.cols());
      jet_mul_backward(layout, A, B, ybar, batch, abar, bbar);
      const double eps = 1e-6;
      Matrix Yp, Ym;
      jet_mul(layout, A + eps * dA, B + eps * dB, batch, Yp);
      jet_mul(layout, A - eps * dA, B - eps * dB, batch, Ym);
      const double lhs = (ybar.array() * (Yp - Ym).array()).sum() / (2 * eps);
      const double rhs = (abar.array() * dA.array()).sum() + (bbar.array() * dB.array()).sum();
      CHECK(oracle::rel_err(rhs, lhs) <= 1e-7);

      for (Activation act : {Activation::tanh, Activation::sigmoid}) {
        Matrix Yact, xbar = Matrix::Zero(rows, A.cols());
        jet_activation(layout, act, A, batch, Yact);
        jet_activation_backward(layout, act, A, Yact, ybar, batch, xbar);
        Matrix P, M;
        jet_activation(layout, act, A + eps * dA, batch, P);
        jet_activation(layout, act, A - eps * dA, batch, M);
        const double l = (ybar.array() * (P - M).array()).sum() / (2 * eps);
        CHECK(oracle::rel_err((xbar.array() * dA.array()).sum(), l) <= 1e-7);
      }
    }
  }
}
