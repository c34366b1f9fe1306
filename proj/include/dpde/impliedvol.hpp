// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

namespace dpde {

/// Price of a basket call seen as a single-asset call on the mean spot.
struct IvQuery {
  double price = 0.0;
  double t = 0.0;
  double s_bar = 0.0;  // arithmetic mean spot, or geometric mean for geometric payoffs
  double r = 0.0;
  double K = 100.0;
};

struct PriceBounds {
  double lower = 0.0;  // (s_bar - K e^{-rt})_+
  double upper = 0.0;  // s_bar
};

PriceBounds no_arbitrage_bounds(double t, double s_bar, double r, double K);

/// Volatility at which the univariate call reproduces q.price. Bisection
/// brackets the root on (1e-6, 5); Newton steps with closed-form vega polish
/// it to full precision in sigma and fall back to bisection whenever they
/// leave the bracket. `tol` (price units) only decides whether a price just
/// under the 1e-6 vol value still counts as that vol.
/// Throws PriceOutOfBounds for prices within 1e-12 of either bound, and when
/// the root lies beyond the search cap.
double implied_vol(const IvQuery& q, double tol = 1e-10);

/// Relative implied-volatility error between an exact and an approximate
/// price. Empty (skipped) exactly when c_exact - c_lb < threshold; infinite
/// when a price lies outside the no-arbitrage bounds.
std::optional<double> iv_relative_error(double c_exact, double c_approx, double t, double s_bar, double r,
                                        double K, double threshold);

/// Price-difference threshold below which IV errors are skipped: 0.005 for a
/// single asset, 0.5 for baskets.
inline double default_iv_threshold(int d) { return d == 1 ? 0.005 : 0.5; }

}  // namespace dpde
