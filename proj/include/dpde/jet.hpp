// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dpde/numerics.hpp"

namespace dpde {

/// Position of the direction pair (i, j), i <= j, in the row-wise packed
/// upper triangle of a k x k symmetric matrix.
constexpr int pair_index(int i, int j, int k) {
  if (i > j) {
    const int s = i;
    i = j;
    j = s;
  }
  return i * k - i * (i - 1) / 2 + (j - i);
}

constexpr int pair_count(int k) { return k * (k + 1) / 2; }

/// Second-order truncated Taylor value in k tangent directions.
///
/// `d1(i)` is the derivative along direction i and `d2(pair_index(i, j))` the
/// second derivative along (i, j). A jet with k == 0 is a constant and mixes
/// with jets of any k.
struct Jet2 {
  double val = 0.0;
  Vector d1;
  Vector d2;

  Jet2() = default;
  Jet2(double v) : val(v) {}  // NOLINT(google-explicit-constructor)
  Jet2(double v, int k) : val(v), d1(Vector::Zero(k)), d2(Vector::Zero(pair_count(k))) {}

  static Jet2 variable(double v, int k, int direction) {
    Jet2 j(v, k);
    j.d1(direction) = 1.0;
    return j;
  }

  int directions() const { return static_cast<int>(d1.size()); }
  double second(int i, int j) const { return d2(pair_index(i, j, directions())); }
};

/// Seeds inputs: output i has value x(i), first derivatives from row i of
/// `directions` (one column per tangent direction) and zero curvature.
std::vector<Jet2> jet_lift(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Matrix>& directions);

/// Applies a scalar function given its value and first two derivatives at a.val.
Jet2 apply_unary(const Jet2& a, double f0, double f1, double f2);

Jet2 operator+(const Jet2& a, const Jet2& b);
Jet2 operator-(const Jet2& a, const Jet2& b);
Jet2 operator*(const Jet2& a, const Jet2& b);
Jet2 operator/(const Jet2& a, const Jet2& b);
Jet2 operator-(const Jet2& a);

inline Jet2 exp(const Jet2& a) {
  const double e = std::exp(a.val);
  return apply_unary(a, e, e, e);
}

inline Jet2 log(const Jet2& a) {
  return apply_unary(a, std::log(a.val), 1.0 / a.val, -1.0 / (a.val * a.val));
}

inline Jet2 tanh(const Jet2& a) {
  const double y = std::tanh(a.val);
  const double s = 1.0 - y * y;
  return apply_unary(a, y, s, -2.0 * y * s);
}

inline Jet2 sigmoid(const Jet2& a) {
  const double y = 1.0 / (1.0 + std::exp(-a.val));
  const double s = y * (1.0 - y);
  return apply_unary(a, y, s, s * (1.0 - 2.0 * y));
}

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

/// (1/lambda) log(1 + exp(lambda z)), evaluated without overflow.
inline double softplus(double z, double lambda) {
  const double lz = lambda * z;
  if (lz > 30.0) return z + std::log1p(std::exp(-lz)) / lambda;
  return std::log1p(std::exp(lz)) / lambda;
}

inline Jet2 softplus(const Jet2& z, double lambda) {
  const double s = sigmoid(lambda * z.val);
  return apply_unary(z, softplus(z.val, lambda), s, lambda * s * (1.0 - s));
}

// ---------------------------------------------------------------------------
// Reverse accumulation over jet arithmetic.

class Tape;

/// Handle to a jet-valued node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}

  Tape* tape() const { return tape_; }
  int index() const { return index_; }
  const Jet2& value() const;

 private:
  Tape* tape_ = nullptr;
  int index_ = -1;
};

/// Records jet operations together with the Jacobian of each output jet with
/// respect to each operand jet. All nodes share the direction count k given
/// at construction; parameters and constants enter as constant jets.
class Tape {
 public:
  explicit Tape(int directions);

  int directions() const { return k_; }
  int channels() const { return channels_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  /// Trainable leaf; gradients are reported in registration order.
  Var parameter(double value);
  /// Non-trainable leaf (input jet or constant).
  Var input(const Jet2& value);
  Var constant(double value) { return input(Jet2(value, k_)); }

  const Jet2& value(int index) const { return nodes_[index].value; }
  int parameter_count() const { return static_cast<int>(params_.size()); }

  /// Appends a node; `jacobians[i]` is d(out channels)/d(parent i channels).
  Var record(Jet2 value, std::vector<int> parents, std::vector<Matrix> jacobians);

  /// Adjoint of every node for a given adjoint of `result` (length channels()).
  std::vector<Vector> backward(const Var& result, const Vector& seed) const;

 private:
  struct Node {
    Jet2 value;
    std::vector<int> parents;
    std::vector<Matrix> jacobians;
  };
  int k_;
  int channels_;
  std::vector<Node> nodes_;
  std::vector<int> params_;

  friend Vector param_gradient(const Tape& tape, const Var& result);
};

/// Gradient of result.value().val with respect to every parameter of `tape`.
/// Throws InvalidInput when `result` was not recorded on `tape`.
Vector param_gradient(const Tape& tape, const Var& result);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator+(const Var& a, double b);
Var operator+(double a, const Var& b);
Var operator-(const Var& a, double b);
Var operator-(double a, const Var& b);
Var operator*(const Var& a, double b);
Var operator*(double a, const Var& b);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a, double lambda);

/// Lifts one channel of a jet (0 = value, 1..k first derivatives, then packed
/// pairs) into the value of a constant jet, so that derivative expressions
/// such as a PDE residual can be differentiated with respect to parameters.
Var component(const Var& a, int channel);

}  // namespace dpde
