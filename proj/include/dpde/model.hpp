// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "dpde/jet_batch.hpp"
#include "dpde/network.hpp"
#include "dpde/problem.hpp"

namespace dpde {

/// A trained (or untrained) pricing surface: u = F + network on scaled inputs.
struct Model {
  ProblemSpec spec;
  NetworkParams params;
};

/// Architecture with the input width implied by the problem.
Architecture architecture_for(const ProblemSpec& spec, int depth, int width, Activation gate = Activation::tanh);

/// Tangent directions of a batched evaluation: direction a differentiates
/// along physical coordinate `coords[a]` (0 = t, 1..d = x, then parameters).
struct JetDirections {
  JetLayout layout;
  std::vector<int> coords;

  /// t and every x_i, with the x-x Hessian: what the pricing PDE needs.
  static JetDirections pde(int d);
  static JetDirections value_only() { return {}; }
};

/// Scaled network inputs as batched jets; first-derivative seeds carry the
/// scaling slopes so outputs differentiate in physical units.
Matrix input_jets(const InputScaling& scaling, const Matrix& coords, const JetDirections& dirs);

/// Localisation channels for every column of `coords`: (channels, batch).
Matrix localisation_jets(const ProblemSpec& spec, const Matrix& coords, const JetDirections& dirs);

/// Raw network output (without localisation) as (channels, batch).
Matrix network_jets(const Model& model, const Matrix& coords, const JetDirections& dirs, int chunk = 512);

/// Prices for each coordinate column (t, x, parameter coordinates).
Vector price_batch(const Model& model, const Matrix& coords, int chunk = 1024);
Vector network_output(const Model& model, const Matrix& coords, int chunk = 1024);

/// Single query. Points outside the computational box are evaluated anyway;
/// check `InputScaling::in_box` to warn.
double price(const Model& model, const PriceQuery& q);

struct PriceDerivatives {
  double price = 0.0;
  double d_t = 0.0;
  Vector d_x;   // with respect to log-spots
  Matrix d_xx;  // log-spot Hessian
  Vector d_mu;  // parameter sensitivities, empty unless requested
};

/// Exact derivatives of the network surface (network plus analytic
/// localisation). Parameter sensitivities are markedly less accurate than
/// the state derivatives since the loss never constrains them directly.
PriceDerivatives greeks(const Model& model, const PriceQuery& q, bool with_params = false);

}  // namespace dpde
