// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <utility>

#include "dpde/jet.hpp"
#include "dpde/jet_batch.hpp"

namespace dpde {

// ---------------------------------------------------------------------------
// Jet2

std::vector<Jet2> jet_lift(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Matrix>& directions) {
  if (directions.rows() != x.size())
    throw DimensionMismatch("jet_lift: directions must have one row per input");
  const int k = static_cast<int>(directions.cols());
  std::vector<Jet2> out;
  out.reserve(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Jet2 j(x(i), k);
    j.d1 = directions.row(i).transpose();
    out.push_back(std::move(j));
  }
  return out;
}

Jet2 apply_unary(const Jet2& a, double f0, double f1, double f2) {
  const int k = a.directions();
  Jet2 y(f0, k);
  if (k == 0) return y;
  y.d1 = f1 * a.d1;
  for (int i = 0; i < k; ++i)
    for (int j = i; j < k; ++j) {
      const int p = pair_index(i, j, k);
      y.d2(p) = f1 * a.d2(p) + f2 * a.d1(i) * a.d1(j);
    }
  return y;
}

namespace {

Jet2 scaled(const Jet2& a, double s) {
  Jet2 y = a;
  y.val *= s;
  y.d1 *= s;
  y.d2 *= s;
  return y;
}

void check_directions(const Jet2& a, const Jet2& b) {
  if (a.directions() != 0 && b.directions() != 0 && a.directions() != b.directions())
    throw DimensionMismatch("jet arithmetic: direction counts differ");
}

}  // namespace

Jet2 operator+(const Jet2& a, const Jet2& b) {
  check_directions(a, b);
  if (a.directions() == 0) {
    Jet2 y = b;
    y.val += a.val;
    return y;
  }
  Jet2 y = a;
  y.val += b.val;
  if (b.directions() != 0) {
    y.d1 += b.d1;
    y.d2 += b.d2;
  }
  return y;
}

Jet2 operator-(const Jet2& a) { return scaled(a, -1.0); }

Jet2 operator-(const Jet2& a, const Jet2& b) { return a + (-b); }

Jet2 operator*(const Jet2& a, const Jet2& b) {
  check_directions(a, b);
  if (a.directions() == 0) return scaled(b, a.val);
  if (b.directions() == 0) return scaled(a, b.val);
  const int k = a.directions();
  Jet2 y(a.val * b.val, k);
  y.d1 = a.val * b.d1 + b.val * a.d1;
  for (int i = 0; i < k; ++i)
    for (int j = i; j < k; ++j) {
      const int p = pair_index(i, j, k);
      y.d2(p) = a.val * b.d2(p) + b.val * a.d2(p) + a.d1(i) * b.d1(j) + a.d1(j) * b.d1(i);
    }
  return y;
}

Jet2 operator/(const Jet2& a, const Jet2& b) {
  const double v = b.val;
  return a * apply_unary(b, 1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v));
}

// ---------------------------------------------------------------------------
// Tape

const Jet2& Var::value() const { return tape_->value(index_); }

Tape::Tape(int directions) : k_(directions), channels_(1 + directions + pair_count(directions)) {}

Var Tape::parameter(double value) {
  Var v = input(Jet2(value, k_));
  params_.push_back(v.index());
  return v;
}

Var Tape::input(const Jet2& value) {
  Jet2 v = value.directions() == 0 ? Jet2(value.val, k_) : value;
  if (v.directions() != k_) throw DimensionMismatch("Tape::input: direction count differs from tape");
  nodes_.push_back({std::move(v), {}, {}});
  return {this, size() - 1};
}

Var Tape::record(Jet2 value, std::vector<int> parents, std::vector<Matrix> jacobians) {
  nodes_.push_back({std::move(value), std::move(parents), std::move(jacobians)});
  return {this, size() - 1};
}

std::vector<Vector> Tape::backward(const Var& result, const Vector& seed) const {
  if (result.tape() != this || result.index() < 0 || result.index() >= size())
    throw InvalidInput("Tape::backward: result is not on this tape");
  std::vector<Vector> adj(nodes_.size(), Vector::Zero(channels_));
  adj[result.index()] = seed;
  for (int n = result.index(); n >= 0; --n) {
    const Node& node = nodes_[n];
    if (node.parents.empty() || adj[n].isZero(0.0)) continue;
    for (std::size_t p = 0; p < node.parents.size(); ++p)
      adj[node.parents[p]].noalias() += node.jacobians[p].transpose() * adj[n];
  }
  return adj;
}

Vector param_gradient(const Tape& tape, const Var& result) {
  Vector seed = Vector::Zero(tape.channels());
  seed(0) = 1.0;
  const auto adj = tape.backward(result, seed);
  Vector g(tape.parameter_count());
  for (int i = 0; i < tape.parameter_count(); ++i) g(i) = adj[tape.params_[i]](0);
  return g;
}

namespace {

double channel_value(const Jet2& a, int c) {
  const int k = a.directions();
  if (c == 0) return a.val;
  if (c <= k) return a.d1(c - 1);
  return a.d2(c - 1 - k);
}

Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw InvalidInput("Var: operands live on different tapes");
  return *a.tape();
}

/// Jacobian of a unary jet map with derivatives f1..f3 at a.val.
Matrix unary_jacobian(const Jet2& a, int channels, double f1, double f2, double f3) {
  const int k = a.directions();
  Matrix jac = Matrix::Zero(channels, channels);
  jac(0, 0) = f1;
  for (int i = 0; i < k; ++i) {
    jac(1 + i, 0) = f2 * a.d1(i);
    jac(1 + i, 1 + i) = f1;
  }
  for (int i = 0; i < k; ++i)
    for (int j = i; j < k; ++j) {
      const int p = pair_index(i, j, k);
      const int row = 1 + k + p;
      jac(row, 0) = f2 * a.d2(p) + f3 * a.d1(i) * a.d1(j);
      jac(row, row) = f1;
      jac(row, 1 + i) += f2 * a.d1(j);
      jac(row, 1 + j) += f2 * a.d1(i);
    }
  return jac;
}

/// d(a * b)/d(a channels), which depends on b only.
Matrix product_jacobian(const Jet2& b, int channels) {
  const int k = b.directions();
  Matrix jac = Matrix::Zero(channels, channels);
  jac(0, 0) = b.val;
  for (int i = 0; i < k; ++i) {
    jac(1 + i, 0) = b.d1(i);
    jac(1 + i, 1 + i) = b.val;
  }
  for (int i = 0; i < k; ++i)
    for (int j = i; j < k; ++j) {
      const int p = pair_index(i, j, k);
      const int row = 1 + k + p;
      jac(row, 0) = b.d2(p);
      jac(row, row) = b.val;
      jac(row, 1 + i) += b.d1(j);
      jac(row, 1 + j) += b.d1(i);
    }
  return jac;
}

Var record_unary(const Var& a, double f0, double f1, double f2, double f3) {
  Tape& t = *a.tape();
  const Jet2& av = a.value();
  Jet2 y = apply_unary(av, f0, f1, f2);
  Matrix jac = unary_jacobian(av, t.channels(), f1, f2, f3);
  return t.record(std::move(y), {a.index()}, {std::move(jac)});
}

Var record_affine(const Var& a, double scale, double shift) {
  Tape& t = *a.tape();
  Jet2 y = a.value() * Jet2(scale) + Jet2(shift);
  return t.record(std::move(y), {a.index()}, {scale * Matrix::Identity(t.channels(), t.channels())});
}

}  // namespace

Var operator+(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const Matrix eye = Matrix::Identity(t.channels(), t.channels());
  return t.record(a.value() + b.value(), {a.index(), b.index()}, {eye, eye});
}

Var operator-(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const Matrix eye = Matrix::Identity(t.channels(), t.channels());
  return t.record(a.value() - b.value(), {a.index(), b.index()}, {eye, -eye});
}

Var operator*(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const Jet2& av = a.value();
  const Jet2& bv = b.value();
  return t.record(av * bv, {a.index(), b.index()},
                  {product_jacobian(bv, t.channels()), product_jacobian(av, t.channels())});
}

Var operator/(const Var& a, const Var& b) {
  const double v = b.value().val;
  const double v2 = v * v;
  return a * record_unary(b, 1.0 / v, -1.0 / v2, 2.0 / (v2 * v), -6.0 / (v2 * v2));
}

Var operator-(const Var& a) { return record_affine(a, -1.0, 0.0); }
Var operator+(const Var& a, double b) { return record_affine(a, 1.0, b); }
Var operator+(double a, const Var& b) { return record_affine(b, 1.0, a); }
Var operator-(const Var& a, double b) { return record_affine(a, 1.0, -b); }
Var operator-(double a, const Var& b) { return record_affine(b, -1.0, a); }
Var operator*(const Var& a, double b) { return record_affine(a, b, 0.0); }
Var operator*(double a, const Var& b) { return record_affine(b, a, 0.0); }

Var exp(const Var& a) {
  const double e = std::exp(a.value().val);
  return record_unary(a, e, e, e, e);
}

Var log(const Var& a) {
  const double v = a.value().val;
  return record_unary(a, std::log(v), 1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v));
}

Var tanh(const Var& a) {
  const double y = std::tanh(a.value().val);
  const double s = 1.0 - y * y;
  return record_unary(a, y, s, -2.0 * y * s, s * (6.0 * y * y - 2.0));
}

Var sigmoid(const Var& a) {
  const double y = sigmoid(a.value().val);
  const double s = y * (1.0 - y);
  return record_unary(a, y, s, s * (1.0 - 2.0 * y), s * (1.0 - 6.0 * y + 6.0 * y * y));
}

Var softplus(const Var& a, double lambda) {
  const double z = a.value().val;
  const double s = sigmoid(lambda * z);
  const double s1 = s * (1.0 - s);
  return record_unary(a, softplus(z, lambda), s, lambda * s1, lambda * lambda * s1 * (1.0 - 2.0 * s));
}

Var component(const Var& a, int channel) {
  Tape& t = *a.tape();
  if (channel < 0 || channel >= t.channels()) throw InvalidInput("component: channel out of range");
  Matrix jac = Matrix::Zero(t.channels(), t.channels());
  jac(0, channel) = 1.0;
  return t.record(Jet2(channel_value(a.value(), channel), t.directions()), {a.index()}, {std::move(jac)});
}

// ---------------------------------------------------------------------------
// Batched kernels

JetLayout JetLayout::with_pairs(int k, int first) {
  JetLayout layout{k, {}};
  for (int i = first; i < k; ++i)
    for (int j = i; j < k; ++j) layout.pairs.push_back({i, j});
  return layout;
}

namespace {

struct ActivationDerivatives {
  Eigen::ArrayXXd f1, f2, f3;
};

/// Derivatives of the activation expressed through its output y.
ActivationDerivatives derivatives_from_output(Activation act, const Eigen::ArrayXXd& y, bool third) {
  ActivationDerivatives d;
  if (act == Activation::tanh) {
    d.f1 = 1.0 - y.square();
    d.f2 = -2.0 * y * d.f1;
    if (third) d.f3 = d.f1 * (6.0 * y.square() - 2.0);
  } else {
    d.f1 = y * (1.0 - y);
    d.f2 = d.f1 * (1.0 - 2.0 * y);
    if (third) d.f3 = d.f1 * (1.0 - 6.0 * y + 6.0 * y.square());
  }
  return d;
}

}  // namespace

void jet_activation(const JetLayout& layout, Activation act, const Matrix& x, int batch, Matrix& y) {
  y.resize(x.rows(), x.cols());
  const auto x0 = channel(x, 0, batch).array();
  if (act == Activation::tanh)
    channel(y, 0, batch).array() = x0.tanh();
  else
    channel(y, 0, batch).array() = 1.0 / (1.0 + (-x0).exp());
  if (layout.channels() == 1) return;

  const Eigen::ArrayXXd y0 = channel(y, 0, batch).array();
  const auto d = derivatives_from_output(act, y0, false);
  for (int i = 0; i < layout.k; ++i)
    channel(y, 1 + i, batch).array() = d.f1 * channel(x, 1 + i, batch).array();
  for (int p = 0; p < static_cast<int>(layout.pairs.size()); ++p) {
    const auto [i, j] = layout.pairs[p];
    const int c = layout.pair_channel(p);
    channel(y, c, batch).array() =
        d.f1 * channel(x, c, batch).array() +
        d.f2 * channel(x, 1 + i, batch).array() * channel(x, 1 + j, batch).array();
  }
}

void jet_activation_backward(const JetLayout& layout, Activation act, const Matrix& x,
                             const Matrix& y, const Matrix& ybar, int batch, Matrix& xbar) {
  const Eigen::ArrayXXd y0 = channel(y, 0, batch).array();
  const auto d = derivatives_from_output(act, y0, !layout.pairs.empty());

  Eigen::ArrayXXd x0bar = d.f1 * channel(ybar, 0, batch).array();
  for (int i = 0; i < layout.k; ++i) {
    const auto yb = channel(ybar, 1 + i, batch).array();
    x0bar += d.f2 * channel(x, 1 + i, batch).array() * yb;
    channel(xbar, 1 + i, batch).array() += d.f1 * yb;
  }
  for (int p = 0; p < static_cast<int>(layout.pairs.size()); ++p) {
    const auto [i, j] = layout.pairs[p];
    const int c = layout.pair_channel(p);
    const auto yb = channel(ybar, c, batch).array();
    const auto xi = channel(x, 1 + i, batch).array();
    const auto xj = channel(x, 1 + j, batch).array();
    x0bar += (d.f2 * channel(x, c, batch).array() + d.f3 * xi * xj) * yb;
    channel(xbar, c, batch).array() += d.f1 * yb;
    channel(xbar, 1 + i, batch).array() += d.f2 * xj * yb;
    channel(xbar, 1 + j, batch).array() += d.f2 * xi * yb;
  }
  channel(xbar, 0, batch).array() += x0bar;
}

void jet_mul(const JetLayout& layout, const Matrix& a, const Matrix& b, int batch, Matrix& y) {
  y.resize(a.rows(), a.cols());
  const auto a0 = channel(a, 0, batch).array();
  const auto b0 = channel(b, 0, batch).array();
  channel(y, 0, batch).array() = a0 * b0;
  for (int i = 0; i < layout.k; ++i)
    channel(y, 1 + i, batch).array() =
        a0 * channel(b, 1 + i, batch).array() + channel(a, 1 + i, batch).array() * b0;
  for (int p = 0; p < static_cast<int>(layout.pairs.size()); ++p) {
    const auto [i, j] = layout.pairs[p];
    const int c = layout.pair_channel(p);
    channel(y, c, batch).array() =
        a0 * channel(b, c, batch).array() + channel(a, c, batch).array() * b0 +
        channel(a, 1 + i, batch).array() * channel(b, 1 + j, batch).array() +
        channel(a, 1 + j, batch).array() * channel(b, 1 + i, batch).array();
  }
}

void jet_mul_backward(const JetLayout& layout, const Matrix& a, const Matrix& b,
                      const Matrix& ybar, int batch, Matrix& abar, Matrix& bbar) {
  const auto a0 = channel(a, 0, batch).array();
  const auto b0 = channel(b, 0, batch).array();
  const auto y0bar = channel(ybar, 0, batch).array();
  channel(abar, 0, batch).array() += y0bar * b0;
  channel(bbar, 0, batch).array() += y0bar * a0;
  for (int c = 1; c < layout.channels(); ++c) {
    const auto yb = channel(ybar, c, batch).array();
    channel(abar, 0, batch).array() += yb * channel(b, c, batch).array();
    channel(bbar, 0, batch).array() += yb * channel(a, c, batch).array();
    channel(abar, c, batch).array() += yb * b0;
    channel(bbar, c, batch).array() += yb * a0;
  }
  for (int p = 0; p < static_cast<int>(layout.pairs.size()); ++p) {
    const auto [i, j] = layout.pairs[p];
    const auto yb = channel(ybar, layout.pair_channel(p), batch).array();
    channel(abar, 1 + i, batch).array() += yb * channel(b, 1 + j, batch).array();
    channel(abar, 1 + j, batch).array() += yb * channel(b, 1 + i, batch).array();
    channel(bbar, 1 + i, batch).array() += yb * channel(a, 1 + j, batch).array();
    channel(bbar, 1 + j, batch).array() += yb * channel(a, 1 + i, batch).array();
  }
}

}  // namespace dpde
