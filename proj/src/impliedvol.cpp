// SPDX-License-Identifier: Apache-2.0
#include "dpde/impliedvol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dpde/errors.hpp"
#include "dpde/pricers.hpp"

namespace dpde {

PriceBounds no_arbitrage_bounds(double t, double s_bar, double r, double K) {
  if (!(t > 0.0) || !(s_bar > 0.0) || !(K > 0.0)) throw InvalidInput("no_arbitrage_bounds: t, s_bar, K must be positive");
  return {std::max(s_bar - K * std::exp(-r * t), 0.0), s_bar};
}

double implied_vol(const IvQuery& q, double tol) {
  constexpr double kLo = 1e-6;
  constexpr double kHi = 5.0;
  constexpr double kMargin = 1e-12;
  const auto bounds = no_arbitrage_bounds(q.t, q.s_bar, q.r, q.K);
  if (!(q.price > bounds.lower + kMargin) || !(q.price < bounds.upper - kMargin))
    throw PriceOutOfBounds("implied_vol: price outside the no-arbitrage bounds");

  auto f = [&](double s) { return bs_closed_form(q.t, q.s_bar, q.r, s, q.K) - q.price; };
  double lo = kLo, hi = kHi;
  double flo = f(lo), fhi = f(hi);
  if (flo > 0.0) {
    // price below the 1e-6 vol value but above c_lb: numerically indistinguishable
    if (flo <= tol) return lo;
    throw PriceOutOfBounds("implied_vol: volatility below the search range");
  }
  if (fhi < 0.0) throw PriceOutOfBounds("implied_vol: volatility above the search cap");

  // Newton inside a shrinking bracket, run to full precision in sigma: the
  // price tolerance alone would leave sigma loose wherever vega is small.
  double s = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double fs = f(s);
    if (fs == 0.0) return s;
    if (fs < 0.0) {
      lo = s;
      flo = fs;
    } else {
      hi = s;
      fhi = fs;
    }
    const double vega = bs_vega(q.t, q.s_bar, q.r, s, q.K);
    double next = vega > 0.0 ? s - fs / vega : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - s) <= 4e-16 * s || hi - lo <= 4e-16 * hi) return next;
    s = next;
  }
  return s;
}

std::optional<double> iv_relative_error(double c_exact, double c_approx, double t, double s_bar, double r,
                                        double K, double threshold) {
  const auto bounds = no_arbitrage_bounds(t, s_bar, r, K);
  if (c_exact - bounds.lower < threshold) return std::nullopt;
  // A price that admits arbitrage has no implied volatility: report an
  // infinite error rather than skipping the point.
  try {
    const double exact = implied_vol({c_exact, t, s_bar, r, K});
    const double approx = implied_vol({c_approx, t, s_bar, r, K});
    return std::abs(approx - exact) / exact;
  } catch (const PriceOutOfBounds&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace dpde
