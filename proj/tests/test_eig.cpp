#include <doctest.h>

#include <cmath>

#include "decomp/eig.hpp"
#include "decomp/error.hpp"
#include "decomp/service.hpp"
#include "support.hpp"

using namespace decomp;

namespace {

EigBudget small_budget(std::uint64_t seed = 1) {
    EigBudget b;
    b.n = 2000;
    b.m = 400;
    b.m_prime = 400;
    b.seed = seed;
    return b;
}

struct Fitted {
    Schema schema = default_schema();
    InteractionMask mask = build_mask(Variant::strict, schema);
    ParameterLayout layout{schema, mask};
    PosteriorSamples samples;
    Fitted(double sd = 0.3) {
        samples = decomp::testing::fake_posterior(layout, demo_coefficients(layout, schema), sd, 4, 250, 17);
    }
    std::size_t index(const std::string& name) const { return resolve_targets({name}, layout)[0]; }
};

DesignSpec one_cadaver(const Schema& schema, double day, std::size_t n = 1) {
    DesignSpec d;
    d.num_cadavers = n;
    d.assignments = {design_levels(schema, {})};
    d.observation_day = day;
    return d;
}

}  // namespace

TEST_CASE("toy closed form") {
    const ToyParams p;
    CHECK(toy_exact_eig(0.0, p, ToyTarget::intercept) == doctest::Approx(0.5 * std::log(5.0)));
    CHECK(toy_exact_eig(0.0, p, ToyTarget::slope) == 0.0);
    CHECK(toy_exact_eig(1.0, p, ToyTarget::slope) == doctest::Approx(0.5 * std::log(1.8)));
    double prev_slope = -1.0, prev_intercept = 10.0;
    for (double x : {0.0, 0.5, 1.0, 2.0, 4.0, 50.0}) {
        const double s = toy_exact_eig(x, p, ToyTarget::slope);
        const double i = toy_exact_eig(x, p, ToyTarget::intercept);
        CHECK(s > prev_slope);
        CHECK(i < prev_intercept);
        CHECK(toy_exact_eig(-x, p, ToyTarget::slope) == s);
        prev_slope = s;
        prev_intercept = i;
    }
    CHECK(prev_intercept < 1e-3);
    CHECK_THROWS_AS(toy_exact_eig(1.0, ToyParams{0.0, 1.0, 1.0}, ToyTarget::slope), ValidationError);
}

TEST_CASE("naive estimator agrees with the toy closed form") {
    for (double x : {0.0, 1.0, 2.0}) {
        for (ToyTarget t : {ToyTarget::slope, ToyTarget::intercept}) {
            const ToyEigModel model(x, {}, t);
            const EigEstimate e = eig_naive(model, small_budget());
            const double exact = toy_exact_eig(x, {}, t);
            CHECK(std::abs(e.value - exact) < 3.0 * e.mc_standard_error + 0.02);
            CHECK(e.estimator == EigEstimator::naive);
        }
    }
    // No information about the slope at x = 0.
    const EigEstimate zero = eig_naive(ToyEigModel(0.0, {}, ToyTarget::slope), small_budget(5));
    CHECK(std::abs(zero.value) < 3.0 * zero.mc_standard_error);
}

TEST_CASE("estimators are deterministic and validate budgets") {
    const ToyEigModel model(1.0, {}, ToyTarget::slope);
    const EigEstimate a = eig_naive(model, small_budget(9));
    const EigEstimate b = eig_naive(model, small_budget(9));
    CHECK(a.value == b.value);
    CHECK(a.value != eig_naive(model, small_budget(10)).value);
    EigBudget bad = small_budget();
    bad.m = 1;
    CHECK_THROWS_AS(eig_naive(model, bad), ValidationError);
    // Continuous outcomes cannot be enumerated.
    CHECK_THROWS_AS(eig_low_variance(model, small_budget()), BudgetError);
    CHECK(parse_estimator("low-variance") == EigEstimator::low_variance);
    CHECK_THROWS_AS(parse_estimator("fancy"), ValidationError);
}

TEST_CASE("decomposition model: outcome enumeration by counts") {
    Fitted f;
    const EigContext ctx(f.layout, f.samples.draws, {f.index("beta0[" + f.schema.characteristics[0] + "]")});
    CHECK(ctx.tracked() == std::vector<std::size_t>{0});
    const DecompositionEigModel one(ctx, one_cadaver(f.schema, 5.0));
    CHECK(one.num_outcomes() == 2);
    const DecompositionEigModel five(ctx, one_cadaver(f.schema, 5.0, 5));
    CHECK(five.num_outcomes() == 6);
    const DecompositionEigModel huge(ctx, one_cadaver(f.schema, 5.0, 5000));
    CHECK(huge.num_outcomes() == 0);

    // Count likelihood sums to one over the outcome space.
    std::vector<double> point(five.point_size()), y(five.outcome_size());
    Rng rng = make_rng(2);
    five.draw_joint(rng, point);
    double total = 0.0;
    for (std::size_t k = 0; k < five.num_outcomes(); ++k) {
        five.outcome(k, y);
        total += std::exp(five.log_lik(y, point));
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("estimator agreement on the decomposition model") {
    Fitted f;
    const EigContext ctx(f.layout, f.samples.draws, {f.index("beta0[" + f.schema.characteristics[2] + "]")});
    const DecompositionEigModel model(ctx, one_cadaver(f.schema, 10.0, 3));
    const EigEstimate lv = eig_low_variance(model, small_budget(3));
    const EigEstimate nv = eig_naive(model, small_budget(3));
    CHECK(lv.outcomes == 4);
    CHECK(lv.value > 0.0);
    CHECK(std::abs(lv.value - nv.value) < 3.0 * std::hypot(lv.mc_standard_error, nv.mc_standard_error) + 0.01);
    CHECK(lv.mc_standard_error < nv.mc_standard_error);
}

TEST_CASE("EIG grows with the observation day and vanishes at day zero") {
    Fitted f;
    const EigContext ctx(f.layout, f.samples.draws, {f.index("beta0[" + f.schema.characteristics[1] + "]")});
    std::vector<DesignSpec> designs;
    for (double day : {0.0, 2.0, 10.0, 40.0}) designs.push_back(one_cadaver(f.schema, day));
    const ScanResult scan = design_scan(ctx, designs, small_budget(4));
    REQUIRE(scan.rows.size() == 4);
    CHECK(std::abs(scan.rows[0].estimate.value) < 0.005);
    for (std::size_t i = 1; i < 4; ++i) CHECK(scan.rows[i].eig_per_cadaver > scan.rows[i - 1].eig_per_cadaver);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(scan.rows[scan.best].eig_per_cadaver >= scan.rows[i].eig_per_cadaver);
    CHECK(scan.best == 3);
    CHECK(scan.rows[1].estimate.estimator == EigEstimator::low_variance);
}

TEST_CASE("a target the design does not touch has no information") {
    Fitted f;
    // Covariate effect of a non-reference level, design at the reference.
    std::size_t target = f.layout.size();
    for (std::size_t i = 0; i < f.layout.size(); ++i)
        if (f.layout.names()[i].starts_with("beta[")) {
            target = i;
            break;
        }
    REQUIRE(target < f.layout.size());
    const EigContext ctx(f.layout, f.samples.draws, {target});
    const DecompositionEigModel model(ctx, one_cadaver(f.schema, 20.0, 4));
    CHECK(std::abs(eig_low_variance(model, small_budget(6)).value) < 0.01);
}

TEST_CASE("a characteristic that is always present carries no information") {
    Fitted f;
    DrawMatrix draws = f.samples.draws;
    const std::size_t g = f.layout.gamma_index(3);
    for (Eigen::Index i = 0; i < draws.rows(); ++i) draws(i, static_cast<Eigen::Index>(g)) += 60.0;
    const EigContext ctx(f.layout, draws, {f.layout.beta0_index(3)});
    const DecompositionEigModel model(ctx, one_cadaver(f.schema, 10.0, 2));
    CHECK(std::abs(eig_low_variance(model, small_budget(7)).value) < 1e-6);
}

TEST_CASE("designs are validated") {
    Fitted f;
    const EigContext ctx(f.layout, f.samples.draws, {f.layout.beta0_index(0)});
    DesignSpec d = one_cadaver(f.schema, 3.0);
    d.num_cadavers = 0;
    CHECK_THROWS_AS(DecompositionEigModel(ctx, d), ValidationError);
    d = one_cadaver(f.schema, -1.0);
    CHECK_THROWS_AS(DecompositionEigModel(ctx, d), ValidationError);
    d = one_cadaver(f.schema, 3.0, 3);
    d.assignments.push_back(d.assignments[0]);
    CHECK_THROWS_AS(DecompositionEigModel(ctx, d), ValidationError);
    CHECK_THROWS_AS(design_levels(f.schema, {{"Age", "Ancient"}}), ValidationError);
    CHECK_THROWS_AS(EigContext(f.layout, f.samples.draws, {}), ValidationError);
    CHECK_THROWS_AS(EigContext(f.layout, f.samples.draws, {0, 0}), ValidationError);
}

TEST_CASE("kernel density integrates to one") {
    Rng rng = make_rng(8);
    std::vector<double> v(2000);
    for (double& x : v) x = standard_normal(rng);
    std::vector<double> grid(801);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = -8.0 + 0.02 * static_cast<double>(i);
    const auto dens = kernel_density(v, grid);
    double z = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) z += 0.01 * (dens[i] + dens[i - 1]);
    CHECK(z == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(dens[400] == doctest::Approx(0.3989).epsilon(0.08));
}
