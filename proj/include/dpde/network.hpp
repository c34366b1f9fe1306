// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dpde/jet.hpp"
#include "dpde/jet_batch.hpp"
#include "dpde/numerics.hpp"

namespace dpde {

struct Architecture {
  int depth = 9;    // number of gated layers L
  int width = 90;   // nodes per layer m
  int input_dim = 4;  // 1 + d + number of parameters
  Activation gate = Activation::tanh;

  std::size_t parameter_count() const;
  void validate() const;
};

struct GatedLayer {
  Matrix Ug, Wg;
  Vector bg;
  Matrix Uz, Wz;
  Vector bz;
  Matrix Ur, Wr;
  Vector br;
  Matrix Uh, Wh;
  Vector bh;
};

/// Weights of the gated highway network. Flattening order (part of the model
/// file format): W0 row-major, b0, then per layer Ug, Wg, bg, Uz, Wz, bz,
/// Ur, Wr, br, Uh, Wh, bh, then Wout, bout.
struct NetworkParams {
  Architecture arch;
  Matrix W0;
  Vector b0;
  std::vector<GatedLayer> layers;
  Eigen::RowVectorXd Wout;
  double bout = 0.0;

  static NetworkParams zeros(const Architecture& arch);

  bool operator==(const NetworkParams& other) const;
};

Vector flatten(const NetworkParams& params);
NetworkParams unflatten(const Architecture& arch, const Eigen::Ref<const Vector>& theta);

/// Glorot normal: every weight ~ N(0, 2 / (fan_in + fan_out)), biases zero.
/// Draws are taken in flattening order.
NetworkParams init_glorot(const Architecture& arch, Rng& rng);

/// Reference forward pass over any scalar type with the usual arithmetic and
/// tanh/sigmoid (double, Jet2, Var). `theta` is in flattening order. This is
/// the slow, obviously-correct path; `forward_batch` is the production path.
template <class T, class W>
T forward_generic(const Architecture& arch, std::span<const W> theta, std::span<const T> h0) {
  using std::tanh;
  if (static_cast<int>(h0.size()) != arch.input_dim)
    throw DimensionMismatch("forward: input length differs from architecture");
  if (theta.size() != arch.parameter_count())
    throw DimensionMismatch("forward: parameter count differs from architecture");
  const int m = arch.width;
  const int n = arch.input_dim;
  std::size_t pos = 0;

  // y_i = sum_j M_ij v_j (+ b_i added by the caller); reads M row-major.
  auto matvec = [&](std::span<const T> v, int rows, int cols) {
    std::vector<T> out;
    out.reserve(rows);
    for (int i = 0; i < rows; ++i) {
      T acc = theta[pos + i * cols] * v[0];
      for (int j = 1; j < cols; ++j) acc = acc + theta[pos + i * cols + j] * v[j];
      out.push_back(acc);
    }
    pos += static_cast<std::size_t>(rows) * cols;
    return out;
  };
  auto add_bias = [&](std::vector<T>& v) {
    for (int i = 0; i < static_cast<int>(v.size()); ++i) v[i] = v[i] + theta[pos + i];
    pos += v.size();
  };
  auto activate = [&](std::vector<T>& v, Activation act) {
    for (auto& e : v) {
      if (act == Activation::tanh)
        e = tanh(e);
      else
        e = sigmoid(e);
    }
  };
  // act(U h0 + W h + b)
  auto gate = [&](std::span<const T> h, Activation act) {
    auto u = matvec(h0, m, n);
    auto w = matvec(h, m, m);
    for (int i = 0; i < m; ++i) u[i] = u[i] + w[i];
    add_bias(u);
    activate(u, act);
    return u;
  };

  std::vector<T> h = matvec(h0, m, n);
  add_bias(h);
  activate(h, Activation::tanh);
  for (int l = 0; l < arch.depth; ++l) {
    const auto g = gate(h, arch.gate);
    const auto z = gate(h, arch.gate);
    const auto r = gate(h, arch.gate);
    std::vector<T> hr;
    hr.reserve(m);
    for (int i = 0; i < m; ++i) hr.push_back(h[i] * r[i]);
    const auto hh = gate(hr, Activation::tanh);
    for (int i = 0; i < m; ++i) h[i] = (1.0 - g[i]) * hh[i] + z[i] * h[i];
  }
  T out = matvec(h, 1, m)[0];
  out = out + theta[pos];
  return out;
}

/// Intermediates of one batched forward pass, kept for the backward pass.
struct BatchTape {
  JetLayout layout;
  int batch = 0;
  Matrix h0;
  Matrix s1;
  std::vector<Matrix> h;  // h[0] = first dense layer output, h[l + 1] = gated layer l output
  struct Layer {
    Matrix gpre, g, zpre, z, rpre, r, hr, hpre, hh;
  };
  std::vector<Layer> layers;
  Matrix out;  // 1 x (channels * batch)
};

/// Runs the network on a batch of input jets: `h0` is (input_dim, channels *
/// batch) in the batched jet layout. Returns the output row through
/// `tape.out`.
void forward_batch(const NetworkParams& params, const JetLayout& layout, Matrix h0, int batch,
                   BatchTape& tape);

/// Accumulates into `grad` the gradient of sum(out_bar .* out) with respect
/// to every weight, i.e. reverse accumulation given output-channel adjoints.
void backward_batch(const NetworkParams& params, const BatchTape& tape, const Matrix& out_bar,
                    NetworkParams& grad);

}  // namespace dpde
