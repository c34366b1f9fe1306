// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "dpde/numerics.hpp"

namespace dpde {

/// Which derivative channels a batch of jets carries: the value, k first
/// derivatives and a chosen subset of second-derivative pairs. Tracking only
/// some pairs is exact, since the second-order rule for pair (i, j) reads
/// only channels i, j and (i, j).
struct JetLayout {
  int k = 0;
  std::vector<std::array<int, 2>> pairs;

  int channels() const { return 1 + k + static_cast<int>(pairs.size()); }
  int pair_channel(int p) const { return 1 + k + p; }

  static JetLayout value_only() { return {}; }
  static JetLayout first_order(int k) { return {k, {}}; }
  /// All pairs (i, j) with first <= i <= j < k.
  static JetLayout with_pairs(int k, int first);
};

enum class Activation { tanh, sigmoid };

/// Batched jets are stored as one matrix of shape (width, channels * batch);
/// channel c of sample s is column c * batch + s. Linear maps act on all
/// channels with a single product, biases on channel 0 only.
inline auto channel(Matrix& m, int c, int batch) { return m.middleCols(c * batch, batch); }
inline auto channel(const Matrix& m, int c, int batch) { return m.middleCols(c * batch, batch); }

/// y = act(x) channel-wise with the second-order chain rule.
void jet_activation(const JetLayout& layout, Activation act, const Matrix& x, int batch, Matrix& y);

/// Accumulates into xbar the adjoint of x, given x, y = act(x) and ybar.
void jet_activation_backward(const JetLayout& layout, Activation act, const Matrix& x,
                             const Matrix& y, const Matrix& ybar, int batch, Matrix& xbar);

/// y = a * b element-wise with the jet product rule.
void jet_mul(const JetLayout& layout, const Matrix& a, const Matrix& b, int batch, Matrix& y);

/// Accumulates into abar and bbar the adjoints of y = a * b.
void jet_mul_backward(const JetLayout& layout, const Matrix& a, const Matrix& b,
                      const Matrix& ybar, int batch, Matrix& abar, Matrix& bbar);

}  // namespace dpde
