#include <cmath>

#include "doctest.h"
#include "dpde/errors.hpp"
#include "dpde/network.hpp"
#include "oracles.hpp"

using namespace dpde;

namespace {

NetworkParams random_params(const Architecture& arch, Rng& rng, double scale = 0.6) {
  Vector theta(static_cast<Eigen::Index>(arch.parameter_count()));
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = scale * rng.normal();
  return unflatten(arch, theta);
}

/// Batched jets for one sample with identity seeds on the first k inputs.
Matrix seeded_input(const Vector& h0, const JetLayout& layout) {
  Matrix m = Matrix::Zero(h0.size(), layout.channels());
  m.col(0) = h0;
  for (int a = 0; a < layout.k; ++a) m(a, 1 + a) = 1.0;
  return m;
}

double scalar_forward(const NetworkParams& p, const Vector& h0) {
  const Vector theta = flatten(p);
  std::vector<double> in(h0.data(), h0.data() + h0.size());
  return forward_generic<double, double>(p.arch, std::span<const double>(theta.data(), theta.size()),
                                         std::span<const double>(in));
}

}  // namespace

TEST_SUITE("network") {
  TEST_CASE("parameter count formula") {
    const Architecture a{2, 5, 4};
    // 5*4 + 5 + 2*(4*20 + 4*25 + 4*5) + 5 + 1
    CHECK(a.parameter_count() == 431);
    const Architecture paper{9, 90, 4};
    CHECK(paper.parameter_count() ==
          static_cast<std::size_t>(90 * 4 + 90 + 9 * (4 * 90 * 4 + 4 * 90 * 90 + 4 * 90) + 90 + 1));
    CHECK_THROWS_AS((Architecture{0, 5, 4}.validate()), InvalidInput);
    CHECK_THROWS_AS((Architecture{1, 0, 4}.validate()), InvalidInput);
    CHECK_THROWS_AS((Architecture{1, 5, 1}.validate()), InvalidInput);
  }

  TEST_CASE("glorot init is deterministic with the right variance") {
    const Architecture arch{2, 5, 4};
    Rng a(9), b(9);
    const NetworkParams pa = init_glorot(arch, a);
    const NetworkParams pb = init_glorot(arch, b);
    CHECK(pa == pb);
    CHECK(pa.b0.isZero(0.0));
    CHECK(pa.layers[1].bh.isZero(0.0));
    CHECK(pa.bout == 0.0);

    const Architecture wide{1, 100, 100};
    Rng r(1);
    const NetworkParams p = init_glorot(wide, r);
    const double var = p.W0.array().square().mean() - std::pow(p.W0.mean(), 2);
    CHECK(std::abs(var / (2.0 / 200.0) - 1.0) < 0.2);
  }

  TEST_CASE("flatten round trip is bit-exact") {
    const Architecture arch{3, 4, 5, Activation::sigmoid};
    Rng rng(2);
    const NetworkParams p = random_params(arch, rng);
    const Vector theta = flatten(p);
    CHECK(theta.size() == static_cast<Eigen::Index>(arch.parameter_count()));
    CHECK(unflatten(arch, theta) == p);
    CHECK(flatten(unflatten(arch, theta)) == theta);
    CHECK_THROWS_AS(unflatten(arch, theta.head(theta.size() - 1)), DimensionMismatch);
    // W0 leads the vector in row-major order
    CHECK(theta(1) == p.W0(0, 1));
    CHECK(theta(arch.input_dim) == p.W0(1, 0));
    CHECK(theta(theta.size() - 1) == p.bout);
  }

  TEST_CASE("zero network outputs zero with zero derivatives") {
    const Architecture arch{2, 5, 3};
    const NetworkParams p = NetworkParams::zeros(arch);
    const JetLayout layout = JetLayout::with_pairs(2, 0);
    BatchTape tape;
    Vector h0(3);
    h0 << 0.3, -0.2, 0.9;
    forward_batch(p, layout, seeded_input(h0, layout), 1, tape);
    CHECK(tape.out.isZero(0.0));
  }

  TEST_CASE("hand-built one-node network") {
    // h1 = tanh(a); gates g = z = 0, r = tanh(20) == 1 exactly, so
    // h2 = tanh(Wh * h1) = tanh(tanh(a)); output 2 h2 + 0.5
    const Architecture arch{1, 1, 2};
    NetworkParams p = NetworkParams::zeros(arch);
    p.W0(0, 0) = 1.0;
    p.layers[0].br(0) = 20.0;
    p.layers[0].Wh(0, 0) = 1.0;
    p.Wout(0) = 2.0;
    p.bout = 0.5;
    REQUIRE(std::tanh(20.0) == 1.0);
    for (double a : {-1.3, 0.0, 0.25, 0.9}) {
      Vector h0(2);
      h0 << a, 0.7;
      const double want = 2.0 * std::tanh(std::tanh(a)) + 0.5;
      CHECK(std::abs(scalar_forward(p, h0) - want) <= 1e-15);
      BatchTape tape;
      forward_batch(p, JetLayout::value_only(), h0, 1, tape);
      CHECK(std::abs(tape.out(0, 0) - want) <= 1e-15);
    }
  }

  TEST_CASE("batched forward matches scalar jets and finite differences") {
    Rng rng(4);
    for (Activation gate : {Activation::tanh, Activation::sigmoid}) {
      const Architecture arch{2, 6, 4, gate};
      const NetworkParams p = random_params(arch, rng);
      const Vector theta = flatten(p);
      const JetLayout layout = JetLayout::with_pairs(3, 0);
      const int batch = 7;
      Matrix h0(4, layout.channels() * batch);
      h0.setZero();
      std::vector<Vector> points;
      for (int s = 0; s < batch; ++s) {
        Vector x(4);
        for (int i = 0; i < 4; ++i) x(i) = rng.uniform(-1, 1);
        points.push_back(x);
        h0.col(s) = x;
        for (int a = 0; a < 3; ++a) h0(a, (1 + a) * batch + s) = 1.0;
      }
      BatchTape tape;
      forward_batch(p, layout, h0, batch, tape);
      for (int s = 0; s < batch; ++s) {
        Matrix dirs = Matrix::Zero(4, 3);
        dirs.topRows(3).setIdentity();
        const auto jets = jet_lift(points[s], dirs);
        const Jet2 y = forward_generic<Jet2, double>(arch, std::span<const double>(theta.data(), theta.size()),
                                                     std::span<const Jet2>(jets));
        CHECK(tape.out(0, s) == doctest::Approx(y.val).epsilon(1e-13));
        for (int a = 0; a < 3; ++a) {
          CHECK(tape.out(0, (1 + a) * batch + s) == doctest::Approx(y.d1(a)).epsilon(1e-12));
          auto f = [&](double v) {
            Vector x = points[s];
            x(a) = v;
            return scalar_forward(p, x);
          };
          if (std::abs(y.d1(a)) > 1e-3) CHECK(oracle::rel_err(y.d1(a), oracle::central_diff(f, points[s](a), 1e-5)) <= 1e-6);
        }
        for (int q = 0; q < static_cast<int>(layout.pairs.size()); ++q) {
          const auto [i, j] = layout.pairs[q];
          CHECK(tape.out(0, layout.pair_channel(q) * batch + s) == doctest::Approx(y.second(i, j)).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("hessian is symmetric under permuted directions") {
    Rng rng(8);
    const Architecture arch{2, 5, 3};
    const NetworkParams p = random_params(arch, rng);
    const Vector theta = flatten(p);
    Vector x(3);
    x << 0.2, -0.5, 0.4;
    const Matrix I = Matrix::Identity(3, 3);
    const Matrix P = I.rowwise().reverse();
    const auto j1 = jet_lift(x, I);
    const auto j2 = jet_lift(x, P);
    const std::span<const double> th(theta.data(), theta.size());
    const Jet2 y1 = forward_generic<Jet2, double>(arch, th, std::span<const Jet2>(j1));
    const Jet2 y2 = forward_generic<Jet2, double>(arch, th, std::span<const Jet2>(j2));
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) CHECK(y1.second(a, b) == doctest::Approx(y2.second(2 - a, 2 - b)).epsilon(1e-13));
  }

  TEST_CASE("backward pass matches the reverse tape and finite differences") {
    Rng rng(6);
    const Architecture arch{2, 3, 3};
    const NetworkParams p = random_params(arch, rng);
    const Vector theta = flatten(p);
    const JetLayout layout = JetLayout::with_pairs(2, 0);
    const int batch = 3;
    Matrix h0 = Matrix::Zero(3, layout.channels() * batch);
    for (int s = 0; s < batch; ++s) {
      for (int i = 0; i < 3; ++i) h0(i, s) = rng.uniform(-1, 1);
      h0(0, batch + s) = 1.0;
      h0(1, 2 * batch + s) = 1.0;
    }
    // scalar objective: sum over channels and samples of w_cs * out_cs
    Matrix w = Matrix::Random(1, layout.channels() * batch);
    BatchTape tape;
    forward_batch(p, layout, h0, batch, tape);
    NetworkParams grad = NetworkParams::zeros(arch);
    backward_batch(p, tape, w, grad);
    const Vector g = flatten(grad);

    // reverse tape over jets
    Tape rt(2);
    std::vector<Var> th;
    for (Eigen::Index i = 0; i < theta.size(); ++i) th.push_back(rt.parameter(theta(i)));
    Var total = rt.constant(0.0);
    for (int s = 0; s < batch; ++s) {
      std::vector<Var> in;
      for (int i = 0; i < 3; ++i) {
        Jet2 j(h0(i, s), 2);
        j.d1(0) = h0(i, batch + s);
        j.d1(1) = h0(i, 2 * batch + s);
        in.push_back(rt.input(j));
      }
      const Var out = forward_generic<Var, Var>(arch, std::span<const Var>(th), std::span<const Var>(in));
      for (int c = 0; c < layout.channels(); ++c) {
        // tape channels: value, d1(0), d1(1), then packed (0,0), (0,1), (1,1)
        total = total + w(0, c * batch + s) * component(out, c);
      }
    }
    const Vector gt = param_gradient(rt, total);
    CHECK((g - gt).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, gt.cwiseAbs().maxCoeff()));

    auto objective = [&](const Vector& t) {
      BatchTape bt;
      forward_batch(unflatten(arch, t), layout, h0, batch, bt);
      return (w.array() * bt.out.array()).sum();
    };
    for (Eigen::Index i = 0; i < theta.size(); i += 7) {
      Vector tp = theta, tm = theta;
      tp(i) += 1e-6;
      tm(i) -= 1e-6;
      const double fd = (objective(tp) - objective(tm)) / 2e-6;
      CHECK(std::abs(g(i) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }

  TEST_CASE("single-weight perturbations move the output smoothly") {
    Rng rng(12);
    const Architecture arch{3, 8, 4};
    const NetworkParams p = random_params(arch, rng);
    const Vector theta = flatten(p);
    Vector x(4);
    x << 0.1, 0.9, -0.9, 0.0;
    const double y0 = scalar_forward(p, x);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Vector t = theta;
      t(i) += 1e-6;
      const double y = scalar_forward(unflatten(arch, t), x);
      REQUIRE(std::isfinite(y));
      worst = std::max(worst, std::abs(y - y0));
    }
    CHECK(worst <= 100.0 * 1e-6);
  }

  TEST_CASE("forward checks dimensions") {
    const Architecture arch{1, 2, 3};
    const NetworkParams p = NetworkParams::zeros(arch);
    BatchTape tape;
    CHECK_THROWS_AS(forward_batch(p, JetLayout::value_only(), Matrix::Zero(2, 1), 1, tape), DimensionMismatch);
    const Vector theta = flatten(p);
    std::vector<double> in(2, 0.0);
    CHECK_THROWS_AS((forward_generic<double, double>(arch, std::span<const double>(theta.data(), theta.size()),
                                                      std::span<const double>(in))),
                    DimensionMismatch);
  }
}
