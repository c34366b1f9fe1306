// SPDX-License-Identifier: Apache-2.0
#include "dpde/model.hpp"

#include <algorithm>

namespace dpde {

Architecture architecture_for(const ProblemSpec& spec, int depth, int width, Activation gate) {
  Architecture arch{depth, width, spec.input_dim(), gate};
  arch.validate();
  return arch;
}

JetDirections JetDirections::pde(int d) {
  JetDirections dirs;
  dirs.layout = JetLayout::with_pairs(1 + d, 1);
  for (int a = 0; a <= d; ++a) dirs.coords.push_back(a);
  return dirs;
}

Matrix input_jets(const InputScaling& scaling, const Matrix& coords, const JetDirections& dirs) {
  const int n = scaling.dim();
  const auto batch = static_cast<int>(coords.cols());
  Matrix h0 = Matrix::Zero(n, static_cast<Eigen::Index>(dirs.layout.channels()) * batch);
  for (int s = 0; s < batch; ++s) h0.col(s) = scaling.scale(coords.col(s));
  for (int a = 0; a < dirs.layout.k; ++a)
    channel(h0, 1 + a, batch).row(dirs.coords[a]).setConstant(scaling.slopes()(dirs.coords[a]));
  return h0;
}

namespace {

double jet_channel(const Jet2& j, const JetLayout& layout, int c) {
  if (c == 0) return j.val;
  if (c <= layout.k) return j.d1(c - 1);
  const auto [a, b] = layout.pairs[c - 1 - layout.k];
  return j.second(a, b);
}

}  // namespace

Matrix localisation_jets(const ProblemSpec& spec, const Matrix& coords, const JetDirections& dirs) {
  const int n = spec.input_dim();
  const int k = dirs.layout.k;
  const int channels = dirs.layout.channels();
  const auto batch = static_cast<int>(coords.cols());
  if (coords.rows() != n) throw DimensionMismatch("localisation_jets: coordinate rows differ from problem");
  Matrix out(channels, batch);
  std::vector<Jet2> vars(n);
  for (int s = 0; s < batch; ++s) {
    for (int i = 0; i < n; ++i) vars[i] = Jet2(coords(i, s), k);
    for (int a = 0; a < k; ++a) vars[dirs.coords[a]].d1(a) = 1.0;
    const std::span<const Jet2> all(vars);
    const Jet2 f = localisation<Jet2>(spec, all[0], all.subspan(1, spec.d), all.subspan(1 + spec.d));
    for (int c = 0; c < channels; ++c) out(c, s) = jet_channel(f, dirs.layout, c);
  }
  return out;
}

Matrix network_jets(const Model& model, const Matrix& coords, const JetDirections& dirs, int chunk) {
  const InputScaling scaling(model.spec);
  const int channels = dirs.layout.channels();
  const auto total = static_cast<int>(coords.cols());
  Matrix out(channels, total);
  BatchTape tape;
  for (int begin = 0; begin < total; begin += chunk) {
    const int batch = std::min(chunk, total - begin);
    forward_batch(model.params, dirs.layout, input_jets(scaling, coords.middleCols(begin, batch), dirs), batch,
                  tape);
    for (int c = 0; c < channels; ++c) out.row(c).segment(begin, batch) = channel(tape.out, c, batch);
  }
  return out;
}

Vector network_output(const Model& model, const Matrix& coords, int chunk) {
  return network_jets(model, coords, JetDirections::value_only(), chunk).row(0).transpose();
}

Vector price_batch(const Model& model, const Matrix& coords, int chunk) {
  const auto dirs = JetDirections::value_only();
  return (network_jets(model, coords, dirs, chunk) + localisation_jets(model.spec, coords, dirs)).row(0).transpose();
}

double price(const Model& model, const PriceQuery& q) {
  const Vector c = query_coordinates(model.spec, q);
  return price_batch(model, Matrix(c), 1)(0);
}

PriceDerivatives greeks(const Model& model, const PriceQuery& q, bool with_params) {
  const ProblemSpec& spec = model.spec;
  const int d = spec.d;
  JetDirections dirs = JetDirections::pde(d);
  if (with_params) {
    dirs.layout.k += spec.param_count();
    for (int j = 0; j < spec.param_count(); ++j) dirs.coords.push_back(1 + d + j);
  }
  const Matrix c = query_coordinates(spec, q);
  const Matrix jets = network_jets(model, c, dirs, 1) + localisation_jets(spec, c, dirs);

  PriceDerivatives g;
  g.price = jets(0, 0);
  g.d_t = jets(1, 0);
  g.d_x = jets.col(0).segment(2, d);
  g.d_xx.resize(d, d);
  for (int p = 0; p < static_cast<int>(dirs.layout.pairs.size()); ++p) {
    const auto [a, b] = dirs.layout.pairs[p];
    g.d_xx(a - 1, b - 1) = g.d_xx(b - 1, a - 1) = jets(dirs.layout.pair_channel(p), 0);
  }
  if (with_params) g.d_mu = jets.col(0).segment(2 + d, spec.param_count());
  return g;
}

}  // namespace dpde
