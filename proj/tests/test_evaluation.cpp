#include <cmath>
#include <sstream>

#include "doctest.h"
#include "dpde/errors.hpp"
#include "dpde/evaluation.hpp"
#include "oracles.hpp"

using namespace dpde;

namespace {

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("self-test scatter has zero error everywhere") {
    ProblemSpec spec;
    EvalOptions opt;
    Rng rng(1);
    const auto rows = scatter_eval(spec, oracle_surface(spec, OracleKind::bs, {}), 200, rng, opt);
    REQUIRE(rows.size() == 200);
    int with_iv = 0;
    for (const auto& r : rows) {
      CHECK(r.abs_error == 0.0);
      CHECK_FALSE(r.oracle_failed);
      CHECK(r.t >= spec.t_interest_min);
      CHECK(r.t <= spec.T);
      CHECK(std::exp(r.x(0)) >= spec.spot_interest.lo * (1 - 1e-12));
      CHECK(std::exp(r.x(0)) <= spec.spot_interest.hi * (1 + 1e-12));
      if (r.iv_rel_error) {
        CHECK(*r.iv_rel_error == 0.0);
        ++with_iv;
      }
    }
    CHECK(with_iv > 0);
  }

  TEST_CASE("model scatter against the oracle") {
    ProblemSpec spec;
    spec.d = 2;
    Model zero{spec, NetworkParams::zeros(architecture_for(spec, 1, 3))};
    EvalOptions opt;
    opt.oracle = OracleKind::gh;
    opt.oracle_options.gh_nodes = 16;
    Rng rng(2);
    const auto rows = scatter_eval(spec, model_surface(zero), 20, rng, opt);
    for (const auto& r : rows) {
      PriceQuery q{r.t, r.x, spec.params_from_coordinates(std::span<const double>(r.mu.data(), r.mu.size()))};
      CHECK(r.model_price == localisation(spec, q));
      CHECK(r.exact_price == doctest::Approx(gh_basket_price(r.t, r.x, q.mu, 100.0, 16)).epsilon(1e-14));
      CHECK(r.abs_error == std::abs(r.model_price - r.exact_price));
    }
  }

  TEST_CASE("oracle failures are recorded per column") {
    ProblemSpec spec;
    spec.d = 9;
    Rng rng(3);
    const Matrix pts = sample_interior(spec, 2, rng);
    OracleOptions o;
    o.gh_nodes = 11;  // 11^8 nodes: over the budget
    const OraclePrices p = oracle_prices(spec, OracleKind::gh, o, pts);
    CHECK(std::isnan(p.price(0)));
    CHECK(p.errors[0].find("budget") != std::string::npos);
    EvalOptions opt;
    opt.oracle = OracleKind::gh;
    opt.oracle_options = o;
    const auto rows = scatter_eval(spec, oracle_surface(spec, OracleKind::gh, o), 2, rng, opt);
    CHECK(rows[0].oracle_failed);
    CHECK_FALSE(rows[0].error.empty());
  }

  TEST_CASE("monte carlo oracle prices do not depend on batching") {
    ProblemSpec spec;
    spec.d = 2;
    Rng rng(4);
    const Matrix pts = sample_interior(spec, 3, rng);
    OracleOptions o;
    o.mc.n_paths = 2000;
    const OraclePrices all = oracle_prices(spec, OracleKind::mc, o, pts, 2);
    const OraclePrices first = oracle_prices(spec, OracleKind::mc, o, pts.leftCols(1));
    CHECK(all.price(0) == first.price(0));
  }

  TEST_CASE("binned self-test is all zeros and counts add up") {
    ProblemSpec spec;
    spec.d = 2;
    EvalOptions opt;
    opt.oracle = OracleKind::gh;
    opt.oracle_options.gh_nodes = 8;
    const BinGridSpec grid = BinGridSpec::uniform(spec, 3, 2);
    Rng rng(5);
    const BinGrid g = binned_max_error(spec, oracle_surface(spec, OracleKind::gh, opt.oracle_options), grid, 5, rng, opt);
    CHECK(g.max_abs_error.rows() == 3);
    CHECK(g.max_abs_error.cols() == 2);
    CHECK(g.total() == 3 * 2 * 5);
    CHECK(g.failures.sum() == 0);
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index j = 0; j < 2; ++j) CHECK(g.max_abs_error(i, j) == 0.0);
    CHECK(g.sbar_edges.front() == spec.spot_interest.lo);
    CHECK(g.sbar_edges.back() == spec.spot_interest.hi);

    BinGridSpec bad = grid;
    bad.munorm_edges = {0.0, 1.5};
    CHECK_THROWS(bad.validate(spec));
    bad = grid;
    bad.sbar_edges = {60.0, 50.0};
    CHECK_THROWS(bad.validate(spec));
  }

  TEST_CASE("sampling helpers") {
    ProblemSpec spec;
    spec.d = 4;
    Rng rng(6);
    for (double sbar : {30.0, 80.0, 140.0}) {
      const auto s = spots_with_mean(spec, sbar, rng);
      REQUIRE(s.has_value());
      CHECK(s->mean() == doctest::Approx(sbar).epsilon(1e-13));
      CHECK(s->minCoeff() >= spec.spot_interest.lo);
      CHECK(s->maxCoeff() <= spec.spot_interest.hi);
    }
    ProblemSpec one;
    const auto s1 = spots_with_mean(one, 77.0, rng);
    REQUIRE(s1.has_value());
    CHECK((*s1)(0) == doctest::Approx(77.0).epsilon(1e-15));

    const ParamVector centre = params_with_norm(spec, 0.0, rng);
    const ParamVector def = spec.default_params();
    CHECK(centre.r == def.r);
    CHECK(centre.sigma == def.sigma);
    CHECK(centre.rho_hat == def.rho_hat);

    const InputScaling sc(spec);
    for (double radius : {0.3, 1.0}) {
      const ParamVector mu = params_with_norm(spec, radius, rng);
      Vector c = Vector::Zero(spec.input_dim());
      c(0) = 1.0;
      c.segment(1, spec.d).setConstant(std::log(100.0));
      c.tail(spec.param_count()) = spec.coordinates(mu);
      const Vector z = sc.scale(c).tail(spec.param_count());
      CHECK(z.cwiseAbs().maxCoeff() == doctest::Approx(radius).epsilon(1e-12));
    }
  }

  TEST_CASE("a zero-width centre cell samples the exact box centre") {
    ProblemSpec spec;
    spec.d = 2;
    EvalOptions opt;
    opt.oracle = OracleKind::gh;
    opt.oracle_options.gh_nodes = 8;
    BinGridSpec grid;
    grid.sbar_edges = {90.0, 110.0};
    grid.munorm_edges = {0.0, 0.0};
    Model zero{spec, NetworkParams::zeros(architecture_for(spec, 1, 3))};
    Rng rng(7);
    const BinGrid g = binned_max_error(spec, model_surface(zero), grid, 4, rng, opt);
    CHECK(g.count(0, 0) == 4);
    CHECK(g.max_abs_error(0, 0) > 0.0);
  }

  TEST_CASE("greeks of the zero network are those of the localisation") {
    ProblemSpec spec;
    spec.d = 2;
    Model zero{spec, NetworkParams::zeros(architecture_for(spec, 2, 4))};
    const PriceQuery q{1.5, (Vector(2) << std::log(95.0), std::log(108.0)).finished(), spec.default_params()};
    const PriceDerivatives g = eval_greeks(zero, q);
    const double z = (95.0 + 108.0) / 2.0 - 100.0 * std::exp(-0.2 * 1.5);
    CHECK(g.price == doctest::Approx(softplus(z, 0.1)).epsilon(1e-14));
    CHECK(g.d_x(0) == doctest::Approx(95.0 / 2.0 * logistic(0.1 * z)).epsilon(1e-13));
    CHECK(g.d_x(1) == doctest::Approx(108.0 / 2.0 * logistic(0.1 * z)).epsilon(1e-13));
  }

  TEST_CASE("greeks match finite differences of the price") {
    ProblemSpec spec;
    spec.d = 2;
    Rng rng(8);
    Model m{spec, init_glorot(architecture_for(spec, 2, 6), rng)};
    const PriceQuery q{2.0, (Vector(2) << std::log(90.0), std::log(115.0)).finished(), spec.default_params()};
    const PriceDerivatives g = eval_greeks(m, q, true);
    auto shift_x = [&](int i, double h) {
      PriceQuery p = q;
      p.x(i) += h;
      return price(m, p);
    };
    for (int i = 0; i < 2; ++i) {
      CHECK(oracle::rel_err(g.d_x(i), oracle::central_diff([&](double h) { return shift_x(i, h); }, 0.0, 1e-5), 1e-3) <= 1e-6);
      CHECK(oracle::rel_err(g.d_xx(i, i), oracle::second_diff([&](double h) { return shift_x(i, h); }, 0.0, 1e-4), 1e-3) <= 1e-4);
    }
    auto both = [&](double a, double b) {
      PriceQuery p = q;
      p.x(0) += a;
      p.x(1) += b;
      return price(m, p);
    };
    CHECK(oracle::rel_err(g.d_xx(0, 1), oracle::mixed_diff(both, 0.0, 0.0, 1e-4), 1e-3) <= 1e-4);
    CHECK(g.d_xx(0, 1) == g.d_xx(1, 0));
    auto shift_t = [&](double t) {
      PriceQuery p = q;
      p.t = t;
      return price(m, p);
    };
    CHECK(oracle::rel_err(g.d_t, oracle::central_diff(shift_t, q.t, 1e-5), 1e-3) <= 1e-6);
    REQUIRE(g.d_mu.size() == spec.param_count());
    auto shift_r = [&](double r) {
      PriceQuery p = q;
      p.mu.r = r;
      return price(m, p);
    };
    CHECK(oracle::rel_err(g.d_mu(0), oracle::central_diff(shift_r, q.mu.r, 1e-5), 1e-3) <= 1e-6);
  }

  TEST_CASE("spearman rank correlation") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3, 4, 5}, {1, 8, 9, 27, 1000}) == doctest::Approx(1.0));
    // ties take average ranks: (1.5, 1.5, 3) vs (1, 2, 3)
    CHECK(spearman({1, 1, 2}, {1, 2, 3}) == doctest::Approx(std::sqrt(3.0) / 2.0));
    CHECK_THROWS(spearman({1, 2}, {1, 2, 3}));
  }

  TEST_CASE("convergence report") {
    TrainReport empty;
    const ConvergenceReport e = convergence_report(empty);
    CHECK(e.best_epoch == 0);
    CHECK_FALSE(e.spearman_loss_mae.has_value());

    TrainReport r;
    for (int i = 1; i <= 6; ++i) {
      EpochRecord rec;
      rec.epoch = i;
      rec.loss_total = 1.0 / i;
      rec.val_mae = 0.5 / i + 0.01;
      r.history.push_back(rec);
    }
    r.best_epoch = 6;
    r.best_loss = 1.0 / 6;
    const ConvergenceReport c = convergence_report(r);
    CHECK(c.best_epoch == 6);
    CHECK(c.rows.size() == 6);
    REQUIRE(c.spearman_loss_mae.has_value());
    CHECK(*c.spearman_loss_mae == doctest::Approx(1.0));
  }

  TEST_CASE("scatter csv round trip") {
    ProblemSpec spec;
    spec.d = 2;
    const auto header = scatter_header(spec);
    const std::vector<std::string> want{"t", "x1", "x2", "r", "sigma1", "sigma2", "rhohat1",
                                        "exact", "model", "abs_err", "iv_rel_err"};
    CHECK(header == want);
    ProblemSpec geo = spec;
    geo.payoff = PayoffKind::geometric_call;
    CHECK(param_names(geo) == std::vector<std::string>{"r", "sigma", "rho"});

    Model zero{spec, NetworkParams::zeros(architecture_for(spec, 1, 3))};
    EvalOptions opt;
    opt.oracle = OracleKind::gh;
    opt.oracle_options.gh_nodes = 8;
    Rng rng(9);
    auto rows = scatter_eval(spec, model_surface(zero), 8, rng, opt);
    rows[1].iv_rel_error.reset();
    rows[2].oracle_failed = true;
    rows[2].exact_price = std::numeric_limits<double>::quiet_NaN();
    rows[2].abs_error = std::numeric_limits<double>::quiet_NaN();
    rows[2].iv_rel_error.reset();
    std::stringstream ss;
    write_scatter_csv(ss, spec, rows);
    const auto back = read_scatter_csv(ss, spec);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(back[i].t == rows[i].t);
      CHECK(back[i].x == rows[i].x);
      CHECK(back[i].mu == rows[i].mu);
      CHECK(back[i].model_price == rows[i].model_price);
      CHECK(back[i].iv_rel_error.has_value() == rows[i].iv_rel_error.has_value());
      if (i != 2) CHECK(back[i].exact_price == rows[i].exact_price);
    }
    CHECK(std::isnan(back[2].exact_price));
    CHECK(back[2].oracle_failed);
  }

  TEST_CASE("bins csv round trip") {
    BinGrid g;
    g.sbar_edges = {25.0, 87.5, 150.0};
    g.munorm_edges = {0.0, 0.0, 1.0};
    g.max_abs_error = Matrix(2, 2);
    g.max_abs_error << 0.1, std::numeric_limits<double>::quiet_NaN(), 0.3, 0.12345678901234567;
    g.count = Eigen::MatrixXi(2, 2);
    g.count << 3, 0, 5, 7;
    g.failures = Eigen::MatrixXi::Zero(2, 2);
    std::stringstream ss;
    write_bins_csv(ss, g);
    std::string first;
    std::getline(std::stringstream(ss.str()), first);
    CHECK(first == bins_header());
    const auto rows = read_bins_csv(ss);
    REQUIRE(rows.size() == 4);
    long total = 0;
    for (const auto& r : rows) total += r.count;
    CHECK(total == g.total());
    bool seen_nan = false, seen_exact = false;
    for (const auto& r : rows) {
      if (std::isnan(r.max_abs_err)) seen_nan = true;
      if (r.max_abs_err == 0.12345678901234567) seen_exact = true;
    }
    CHECK(seen_nan);
    CHECK(seen_exact);
  }
}
