// SPDX-License-Identifier: Apache-2.0
#include "dpde/network.hpp"

#include <cmath>
#include <functional>

namespace dpde {

std::size_t Architecture::parameter_count() const {
  const std::size_t m = width, n = input_dim, L = depth;
  return m * n + m + L * (4 * m * n + 4 * m * m + 4 * m) + m + 1;
}

void Architecture::validate() const {
  if (depth < 1) throw InvalidInput("architecture: depth must be >= 1");
  if (width < 1) throw InvalidInput("architecture: width must be >= 1");
  if (input_dim < 2) throw InvalidInput("architecture: input_dim must be >= 2");
}

NetworkParams NetworkParams::zeros(const Architecture& arch) {
  arch.validate();
  const int m = arch.width, n = arch.input_dim;
  NetworkParams p;
  p.arch = arch;
  p.W0 = Matrix::Zero(m, n);
  p.b0 = Vector::Zero(m);
  p.layers.resize(arch.depth);
  for (auto& l : p.layers) {
    for (Matrix* u : {&l.Ug, &l.Uz, &l.Ur, &l.Uh}) *u = Matrix::Zero(m, n);
    for (Matrix* w : {&l.Wg, &l.Wz, &l.Wr, &l.Wh}) *w = Matrix::Zero(m, m);
    for (Vector* b : {&l.bg, &l.bz, &l.br, &l.bh}) *b = Vector::Zero(m);
  }
  p.Wout = Eigen::RowVectorXd::Zero(m);
  return p;
}

bool NetworkParams::operator==(const NetworkParams& other) const {
  return arch.depth == other.arch.depth && arch.width == other.arch.width &&
         arch.input_dim == other.arch.input_dim && arch.gate == other.arch.gate &&
         flatten(*this) == flatten(other);
}

namespace {

/// Visits every block in flattening order; matrices are visited row-major.
template <class Params, class MatFn, class VecFn, class ScalarFn>
void visit_blocks(Params& p, MatFn&& on_matrix, VecFn&& on_vector, ScalarFn&& on_scalar) {
  on_matrix(p.W0);
  on_vector(p.b0);
  for (auto& l : p.layers) {
    on_matrix(l.Ug), on_matrix(l.Wg), on_vector(l.bg);
    on_matrix(l.Uz), on_matrix(l.Wz), on_vector(l.bz);
    on_matrix(l.Ur), on_matrix(l.Wr), on_vector(l.br);
    on_matrix(l.Uh), on_matrix(l.Wh), on_vector(l.bh);
  }
  on_matrix(p.Wout);
  on_scalar(p.bout);
}

}  // namespace

Vector flatten(const NetworkParams& params) {
  Vector theta(params.arch.parameter_count());
  Eigen::Index pos = 0;
  visit_blocks(
      params,
      [&](const auto& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          for (Eigen::Index j = 0; j < m.cols(); ++j) theta(pos++) = m(i, j);
      },
      [&](const Vector& v) {
        theta.segment(pos, v.size()) = v;
        pos += v.size();
      },
      [&](double s) { theta(pos++) = s; });
  return theta;
}

NetworkParams unflatten(const Architecture& arch, const Eigen::Ref<const Vector>& theta) {
  if (static_cast<std::size_t>(theta.size()) != arch.parameter_count())
    throw DimensionMismatch("unflatten: theta length " + std::to_string(theta.size()) +
                            " differs from parameter count " + std::to_string(arch.parameter_count()));
  NetworkParams p = NetworkParams::zeros(arch);
  Eigen::Index pos = 0;
  visit_blocks(
      p,
      [&](auto& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = theta(pos++);
      },
      [&](Vector& v) {
        v = theta.segment(pos, v.size());
        pos += v.size();
      },
      [&](double& s) { s = theta(pos++); });
  return p;
}

NetworkParams init_glorot(const Architecture& arch, Rng& rng) {
  NetworkParams p = NetworkParams::zeros(arch);
  visit_blocks(
      p,
      [&](auto& m) {
        const double sd = std::sqrt(2.0 / static_cast<double>(m.rows() + m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = sd * rng.normal();
      },
      [](Vector&) {}, [](double&) {});
  return p;
}

namespace {

/// pre = U h0 + W h + b (bias on the value channel only).
void affine(const Matrix& U, const Matrix& h0, const Matrix& W, const Matrix& h, const Vector& b,
            int batch, Matrix& pre) {
  pre.noalias() = U * h0;
  pre.noalias() += W * h;
  channel(pre, 0, batch).colwise() += b;
}

void accumulate_affine_grad(const Matrix& pre_bar, const Matrix& h0, const Matrix& h, int batch,
                            Matrix& gU, Matrix& gW, Vector& gb) {
  gU.noalias() += pre_bar * h0.transpose();
  gW.noalias() += pre_bar * h.transpose();
  gb += channel(pre_bar, 0, batch).rowwise().sum();
}

}  // namespace

void forward_batch(const NetworkParams& params, const JetLayout& layout, Matrix h0, int batch,
                   BatchTape& tape) {
  const Architecture& arch = params.arch;
  const Eigen::Index cols = static_cast<Eigen::Index>(layout.channels()) * batch;
  if (h0.rows() != arch.input_dim || h0.cols() != cols)
    throw DimensionMismatch("forward_batch: input shape differs from architecture/layout");

  tape.layout = layout;
  tape.batch = batch;
  tape.h0 = std::move(h0);
  tape.s1.noalias() = params.W0 * tape.h0;
  channel(tape.s1, 0, batch).colwise() += params.b0;
  tape.h.resize(arch.depth + 1);
  tape.layers.resize(arch.depth);
  jet_activation(layout, Activation::tanh, tape.s1, batch, tape.h[0]);

  Matrix tmp;
  for (int l = 0; l < arch.depth; ++l) {
    const GatedLayer& w = params.layers[l];
    auto& t = tape.layers[l];
    const Matrix& h = tape.h[l];
    affine(w.Ug, tape.h0, w.Wg, h, w.bg, batch, t.gpre);
    jet_activation(layout, arch.gate, t.gpre, batch, t.g);
    affine(w.Uz, tape.h0, w.Wz, h, w.bz, batch, t.zpre);
    jet_activation(layout, arch.gate, t.zpre, batch, t.z);
    affine(w.Ur, tape.h0, w.Wr, h, w.br, batch, t.rpre);
    jet_activation(layout, arch.gate, t.rpre, batch, t.r);
    jet_mul(layout, h, t.r, batch, t.hr);
    affine(w.Uh, tape.h0, w.Wh, t.hr, w.bh, batch, t.hpre);
    jet_activation(layout, Activation::tanh, t.hpre, batch, t.hh);

    // h_next = hh - g * hh + z * h
    Matrix& next = tape.h[l + 1];
    jet_mul(layout, t.g, t.hh, batch, next);
    next = t.hh - next;
    jet_mul(layout, t.z, h, batch, tmp);
    next += tmp;
  }
  tape.out.noalias() = params.Wout * tape.h[arch.depth];
  channel(tape.out, 0, batch).array() += params.bout;
}

void backward_batch(const NetworkParams& params, const BatchTape& tape, const Matrix& out_bar,
                    NetworkParams& grad) {
  const Architecture& arch = params.arch;
  const JetLayout& layout = tape.layout;
  const int batch = tape.batch;
  if (out_bar.rows() != 1 || out_bar.cols() != tape.out.cols())
    throw DimensionMismatch("backward_batch: output adjoint shape differs from forward output");

  grad.Wout.noalias() += out_bar * tape.h[arch.depth].transpose();
  grad.bout += channel(out_bar, 0, batch).sum();
  Matrix h_bar = params.Wout.transpose() * out_bar;

  const Eigen::Index rows = arch.width, cols = out_bar.cols();
  Matrix hh_bar, g_bar, z_bar, r_bar, hr_bar, prev_bar, pre_bar, neg;
  for (int l = arch.depth - 1; l >= 0; --l) {
    const GatedLayer& w = params.layers[l];
    GatedLayer& gw = grad.layers[l];
    const auto& t = tape.layers[l];
    const Matrix& h = tape.h[l];

    hh_bar = h_bar;
    g_bar.setZero(rows, cols);
    z_bar.setZero(rows, cols);
    r_bar.setZero(rows, cols);
    prev_bar.setZero(rows, cols);
    neg = -h_bar;
    jet_mul_backward(layout, t.g, t.hh, neg, batch, g_bar, hh_bar);
    jet_mul_backward(layout, t.z, h, h_bar, batch, z_bar, prev_bar);

    pre_bar.setZero(rows, cols);
    jet_activation_backward(layout, Activation::tanh, t.hpre, t.hh, hh_bar, batch, pre_bar);
    accumulate_affine_grad(pre_bar, tape.h0, t.hr, batch, gw.Uh, gw.Wh, gw.bh);
    hr_bar.noalias() = w.Wh.transpose() * pre_bar;
    jet_mul_backward(layout, h, t.r, hr_bar, batch, prev_bar, r_bar);

    auto gate_back = [&](const Matrix& pre, const Matrix& out, const Matrix& out_bar_gate, const Matrix& W,
                         Matrix& gU, Matrix& gW, Vector& gb) {
      pre_bar.setZero(rows, cols);
      jet_activation_backward(layout, arch.gate, pre, out, out_bar_gate, batch, pre_bar);
      accumulate_affine_grad(pre_bar, tape.h0, h, batch, gU, gW, gb);
      prev_bar.noalias() += W.transpose() * pre_bar;
    };
    gate_back(t.rpre, t.r, r_bar, w.Wr, gw.Ur, gw.Wr, gw.br);
    gate_back(t.zpre, t.z, z_bar, w.Wz, gw.Uz, gw.Wz, gw.bz);
    gate_back(t.gpre, t.g, g_bar, w.Wg, gw.Ug, gw.Wg, gw.bg);
    h_bar.swap(prev_bar);
  }

  pre_bar.setZero(rows, cols);
  jet_activation_backward(layout, Activation::tanh, tape.s1, tape.h[0], h_bar, batch, pre_bar);
  grad.W0.noalias() += pre_bar * tape.h0.transpose();
  grad.b0 += channel(pre_bar, 0, batch).rowwise().sum();
}

}  // namespace dpde
