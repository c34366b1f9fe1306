#include <cmath>
#include <limits>

#include "doctest.h"
#include "dpde/errors.hpp"
#include "dpde/impliedvol.hpp"
#include "dpde/pricers.hpp"
#include "oracles.hpp"

using namespace dpde;

TEST_SUITE("impliedvol") {
  TEST_CASE("no-arbitrage bounds") {
    const PriceBounds b = no_arbitrage_bounds(4.0, 100.0, 0.2, 100.0);
    CHECK(b.lower == doctest::Approx(55.067).epsilon(1e-5));
    CHECK(b.lower == doctest::Approx(100.0 - 100.0 * std::exp(-0.8)).epsilon(1e-15));
    CHECK(b.upper == 100.0);
    CHECK(no_arbitrage_bounds(1.0, 1.0, 0.0, 100.0).lower == 0.0);
    CHECK(no_arbitrage_bounds(1.0, 37.5, 0.1, 100.0).upper == 37.5);
    CHECK_THROWS_AS(no_arbitrage_bounds(0.0, 100.0, 0.1, 100.0), InvalidInput);
  }

  TEST_CASE("round trip at the reference point") {
    const double c = bs_closed_form(1.0, 100.0, 0.1, 0.2, 100.0);
    CHECK(std::abs(implied_vol({c, 1.0, 100.0, 0.1, 100.0}) - 0.2) <= 1e-8);
  }

  TEST_CASE("round trips over a volatility, maturity and moneyness grid") {
    int tested = 0;
    double worst = 0.0;
    for (double r : {0.0, 0.05, 0.2})
      for (double t : {0.25, 1.0, 2.0, 4.0})
        for (double m : {0.8, 0.9, 1.0, 1.1, 1.25})
          for (double sigma : {0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0}) {
            const double s = 100.0, K = 100.0 * m;
            const double c = bs_closed_form(t, s, r, sigma, K);
            const PriceBounds b = no_arbitrage_bounds(t, s, r, K);
            // prices indistinguishable from a bound carry no volatility information
            if (c - b.lower < 1e-8 || b.upper - c < 1e-8) continue;
            const double iv = implied_vol({c, t, s, r, K});
            worst = std::max(worst, std::abs(iv - sigma));
            ++tested;
          }
    CHECK(tested >= 200);
    CHECK(worst <= 1e-8);
  }

  TEST_CASE("prices at or beyond the bounds are rejected") {
    const PriceBounds b = no_arbitrage_bounds(1.0, 120.0, 0.1, 100.0);
    CHECK_THROWS_AS(implied_vol({b.lower + 1e-15, 1.0, 120.0, 0.1, 100.0}), PriceOutOfBounds);
    CHECK_THROWS_AS(implied_vol({b.lower, 1.0, 120.0, 0.1, 100.0}), PriceOutOfBounds);
    CHECK_THROWS_AS(implied_vol({b.upper, 1.0, 120.0, 0.1, 100.0}), PriceOutOfBounds);
    CHECK_THROWS_AS(implied_vol({b.upper + 1.0, 1.0, 120.0, 0.1, 100.0}), PriceOutOfBounds);
    CHECK_THROWS_AS(implied_vol({0.0, 1.0, 80.0, 0.1, 100.0}), PriceOutOfBounds);
    // above the 5.0 search cap but below s_bar
    const double c = bs_closed_form(1.0, 100.0, 0.0, 8.0, 100.0);
    REQUIRE(c < 100.0);
    CHECK_THROWS_AS(implied_vol({c, 1.0, 100.0, 0.0, 100.0}), PriceOutOfBounds);
  }

  TEST_CASE("basket price inverts and reprices") {
    ParamVector mu;
    mu.r = 0.2;
    mu.sigma = Vector(2);
    mu.sigma << 0.1, 0.3;
    mu.rho_hat = Vector::Constant(1, 0.5);
    const Vector x = Vector::Constant(2, std::log(100.0));
    const double c = gh_basket_price(4.0, x, mu, 100.0, 32);
    const double iv = implied_vol({c, 4.0, 100.0, 0.2, 100.0});
    CHECK(std::isfinite(iv));
    CHECK(iv > 0.0);
    CHECK(std::abs(bs_closed_form(4.0, 100.0, 0.2, iv, 100.0) - c) <= 1e-10);
  }

  TEST_CASE("implied vol is increasing in price") {
    const PriceBounds b = no_arbitrage_bounds(2.0, 100.0, 0.1, 100.0);
    double prev = 0.0;
    for (int i = 1; i < 100; ++i) {
      const double c = b.lower + (b.upper - b.lower) * i / 100.0;
      double iv = 0.0;
      try {
        iv = implied_vol({c, 2.0, 100.0, 0.1, 100.0});
      } catch (const PriceOutOfBounds&) {
        break;  // beyond the search cap
      }
      CHECK(iv > prev);
      prev = iv;
    }
    CHECK(prev > 1.0);
  }

  TEST_CASE("relative iv error and skip rules") {
    const double t = 4.0, s = 100.0, r = 0.2, K = 100.0;
    const double c = bs_closed_form(t, s, r, 0.2, K);
    CHECK(iv_relative_error(c, c, t, s, r, K, 0.005).value() == 0.0);

    const auto e = iv_relative_error(c, c + 0.01, t, s, r, K, 0.005);
    REQUIRE(e.has_value());
    const double lin = 0.01 / oracle::bs_vega(t, s, r, 0.2, K) / 0.2;
    CHECK(std::abs(*e - lin) <= 0.2 * lin);

    // lower bound: exact price too close to c_lb is skipped
    const PriceBounds b = no_arbitrage_bounds(t, s, r, K);
    CHECK_FALSE(iv_relative_error(b.lower + 0.004, b.lower + 0.004, t, s, r, K, 0.005).has_value());
    CHECK(iv_relative_error(b.lower + 0.006, b.lower + 0.007, t, s, r, K, 0.005).has_value());
    CHECK_FALSE(iv_relative_error(c, c, t, s, r, K, c - b.lower + 1e-9).has_value());
    // an approximation that leaves the bounds has no implied volatility
    CHECK(std::isinf(*iv_relative_error(c, b.lower - 0.1, t, s, r, K, 0.005)));
    CHECK(std::isinf(*iv_relative_error(c, b.upper + 0.1, t, s, r, K, 0.005)));
    CHECK(default_iv_threshold(1) == 0.005);
    CHECK(default_iv_threshold(2) == 0.5);
  }

  TEST_CASE("geometric-mean spot variant") {
    const Vector x = (Vector(3) << std::log(90.0), std::log(100.0), std::log(110.0)).finished();
    const double g = std::exp(x.mean());
    // perfectly correlated geometric basket: the implied vol is the asset vol
    const double c1 = geometric_closed_form(2.0, x, 0.2, 0.25, 1.0, 100.0);
    CHECK(std::abs(implied_vol({c1, 2.0, g, 0.2, 100.0}) - 0.25) <= 1e-8);
    for (double sigma : {0.1, 0.3, 0.6}) {
      const double c = bs_closed_form(2.0, g, 0.2, sigma, 100.0);
      CHECK(std::abs(implied_vol({c, 2.0, g, 0.2, 100.0}) - sigma) <= 1e-8);
    }
    // with rho < 1 the geometric mean carries a dividend-like drift deficit:
    // against the adjusted spot the implied vol is the geometric-mean vol
    const double rho = 0.5, sigma = 0.25, t = 2.0;
    const double beta = sigma * sigma / 2 * (1 - 1.0 / 3) * (1 - rho);
    const double c = geometric_closed_form(t, x, 0.2, sigma, rho, 100.0);
    const double sbar = sigma * std::sqrt((1 + 2 * rho) / 3);
    CHECK(std::abs(implied_vol({c, t, g * std::exp(-beta * t), 0.2, 100.0}) - sbar) <= 1e-8);
    // deep in the money the unadjusted spot puts the price under its lower bound
    CHECK_THROWS_AS(implied_vol({c, t, g, 0.2, 100.0}), PriceOutOfBounds);
  }
}
