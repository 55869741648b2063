#include <doctest.h>

#include <cmath>

#include "decomp/data_io.hpp"
#include "decomp/error.hpp"
#include "support.hpp"

using namespace decomp;
using namespace std::chrono;

namespace {

DateEvidence evidence(const char* discovery, DeathDateKind kind, const char* death) {
    DateEvidence e;
    e.discovery = parse_date(discovery);
    e.kind = kind;
    if (death) e.death = parse_date(death);
    return e;
}

// Days between two civil dates by stepping one day at a time.
long walk_days(year_month_day from, year_month_day to) {
    long n = 0;
    while (from != to) {
        auto d = from.day();
        auto next = year_month_day{from.year(), from.month(), d + days{1}};
        if (!next.ok()) {
            auto m = from.month() + months{1};
            auto y = m == January ? from.year() + years{1} : from.year();
            next = year_month_day{y, m, day{1}};
        }
        from = next;
        ++n;
    }
    return n;
}

std::string header(const Schema& schema) {
    std::string h = "case_id,discovery_date,death_date_kind,death_date,range_start,range_end";
    for (const auto& c : schema.covariates) h += ",\"" + c.name + "\"";
    for (const auto& d : schema.characteristics.names()) h += ",\"" + d + "\"";
    return h + "\n";
}

std::string blank_tail(const Schema& schema) {
    return std::string(schema.covariates.size() + schema.characteristics.size(), ',');
}

}  // namespace

TEST_CASE("PMI from dates") {
    CHECK(compute_pmi(evidence("2020-03-16", DeathDateKind::exact, "2020-03-01")) == 15.0);
    CHECK(compute_pmi(evidence("2020-03-01", DeathDateKind::longitudinal, "2020-03-01")) == 0.0);
    CHECK(compute_pmi(evidence("2020-03-01", DeathDateKind::unknown, "2020-02-28")) == 2.0);  // leap year
    DateEvidence r;
    r.discovery = parse_date("2021-01-31");
    r.kind = DeathDateKind::range;
    r.range_start = parse_date("2021-01-06");
    r.range_end = parse_date("2021-01-26");
    CHECK(compute_pmi(r) == 15.0);
    r.range_end = parse_date("2021-02-26");
    CHECK_THROWS_AS(compute_pmi(r), ValidationError);
    CHECK_THROWS_AS(compute_pmi(evidence("2020-03-01", DeathDateKind::exact, "2020-03-02")), ValidationError);
    CHECK_THROWS_AS(compute_pmi(evidence("2020-03-01", DeathDateKind::exact, nullptr)), ValidationError);
}

TEST_CASE("PMI agrees with a calendar walk") {
    Rng rng = make_rng(31);
    for (int i = 0; i < 200; ++i) {
        const sys_days base = sys_days{year{2015} / January / 1} + days{static_cast<int>(uniform01(rng) * 3000)};
        const sys_days death = base;
        const sys_days found = base + days{static_cast<int>(uniform01(rng) * 400)};
        DateEvidence e;
        e.discovery = parse_date(format_date(found));
        e.death = parse_date(format_date(death));
        CHECK(compute_pmi(e) == static_cast<double>(walk_days(year_month_day{death}, year_month_day{found})));
    }
}

TEST_CASE("dates and kinds parse strictly") {
    CHECK(format_date(parse_date("2024-02-29")) == "2024-02-29");
    CHECK_THROWS_AS(parse_date("2023-02-29"), ParseError);
    CHECK_THROWS_AS(parse_date("2023-2-1"), ParseError);
    CHECK_THROWS_AS(parse_date("20230201"), ParseError);
    CHECK(parse_death_date_kind("Last known alive - exact") == DeathDateKind::last_known_alive_exact);
    CHECK(parse_death_date_kind(" RANGE ") == DeathDateKind::range);
    CHECK_THROWS_AS(parse_death_date_kind("guess"), ParseError);
}

TEST_CASE("case files: good rows and row-level errors") {
    const Schema schema = default_schema();
    const std::string tail = blank_tail(schema);
    std::string text = header(schema);
    text += "a,2020-03-16,exact,2020-03-01,," + tail + "\n";
    text += "b,2020-03-16,range,,2020-03-01,2020-03-11" + tail + "\n";
    text += "c,2020-03-16,sometime,2020-03-01,," + tail + "\n";
    text += "a,2020-03-16,exact,2020-03-01,," + tail + "\n";
    text += "d,2020-03-01,exact,2020-03-16,," + tail + "\n";
    text += "e,,,,," + tail + "\n";
    text += "f,2020-03-16\n";
    const ParsedCases p = parse_cases(text, schema);
    CHECK(p.report.rows == 7);
    CHECK(p.report.accepted == 3);
    REQUIRE(p.records.size() == 3);
    CHECK(*p.records[0].pmi_days == 15.0);
    CHECK(*p.records[1].pmi_days == 10.0);
    CHECK_FALSE(p.records[2].pmi_days);
    REQUIRE(p.report.errors.size() == 4);
    CHECK(p.report.errors[0].row == 3);
    CHECK(p.report.errors[1].message.find("duplicate") != std::string::npos);
    CHECK(p.report.errors[3].row == 7);

    CHECK(parse_cases("", schema).records.empty());
    CHECK_THROWS_AS(parse_cases("case_id,Mystery\nx,1\n", schema), ParseError);
    CHECK_THROWS_AS(parse_cases("discovery_date\n2020-01-01\n", schema), ParseError);
    CHECK_THROWS_AS(parse_cases("case_id,case_id\n", schema), ParseError);
}

TEST_CASE("case files: pmi_days, values and levels") {
    const Schema schema = default_schema();
    const std::string d0 = schema.characteristics[0], d1 = schema.characteristics[1];
    const std::string text = "case_id,pmi_days,Sex,\"" + d0 + "\",\"" + d1 + "\"" +
                             "\nx,4.5,Female,1,\ny,-1,,0,1\nz,3,Martian,1,0\nw,3,,maybe,0\n";
    const ParsedCases p = parse_cases(text, schema);
    REQUIRE(p.records.size() == 1);
    CHECK(*p.records[0].pmi_days == 4.5);
    CHECK(*p.records[0].decomposition.at(d0) == true);
    CHECK_FALSE(p.records[0].decomposition.count(d1));
    CHECK(p.report.errors.size() == 3);
    CHECK(p.report.errors[0].message.find("negative") != std::string::npos);
}

TEST_CASE("write and parse round trip") {
    const Schema schema = default_schema();
    const ParameterLayout layout(schema, build_mask(Variant::strict, schema));
    const auto cases = decomp::testing::synthetic_cases(schema, layout, 60, 4, 0.2);
    const ParsedCases back = parse_cases(write_cases(cases, schema), schema);
    REQUIRE(back.report.errors.empty());
    REQUIRE(back.records.size() == cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        CHECK(back.records[i].case_id == cases[i].case_id);
        CHECK(*back.records[i].pmi_days == *cases[i].pmi_days);
        CHECK(back.records[i].covariate_levels == cases[i].covariate_levels);
        CHECK(back.records[i].decomposition == cases[i].decomposition);
    }
}

TEST_CASE("synthetic prevalences follow the coefficients") {
    const Schema schema = default_schema();
    const ParameterLayout layout(schema, build_mask(Variant::strict, schema));
    const std::size_t n = 100000;

    auto rate = [&](const std::vector<CaseRecord>& cases, std::size_t d) {
        double k = 0.0;
        for (const auto& c : cases) k += *c.decomposition.at(schema.characteristics[d]) ? 1.0 : 0.0;
        return k / static_cast<double>(cases.size());
    };

    std::vector<double> zero(layout.size(), 0.0);
    const auto flat = decomp::testing::synthetic_cases(schema, layout, n, 1, 0.0, zero);
    CHECK(std::abs(rate(flat, 0) - 0.5) < 3.0 * std::sqrt(0.25 / n));

    std::vector<double> gam(layout.size(), 0.0);
    gam[layout.gamma_index(5)] = -2.0;
    const auto low = decomp::testing::synthetic_cases(schema, layout, n, 2, 0.0, gam);
    const double p = 1.0 / (1.0 + std::exp(2.0));
    CHECK(std::abs(rate(low, 5) - p) < 3.0 * std::sqrt(p * (1 - p) / n));

    // PMIs follow the truncated log-normal prior.
    double m = 0.0;
    for (const auto& c : low) {
        CHECK(*c.pmi_days >= 0.0);
        m += std::log1p(*c.pmi_days);
    }
    CHECK(m / n > 2.33);

    const auto again = decomp::testing::synthetic_cases(schema, layout, 50, 2, 0.0, gam);
    for (std::size_t i = 0; i < 50; ++i) CHECK(again[i].decomposition == low[i].decomposition);
}

TEST_CASE("synthetic missing rate") {
    const Schema schema = default_schema();
    const ParameterLayout layout(schema, build_mask(Variant::empty, schema));
    const auto cases = decomp::testing::synthetic_cases(schema, layout, 2000, 5, 0.3);
    double seen = 0.0;
    for (const auto& c : cases) seen += static_cast<double>(c.decomposition.size());
    const double frac = 1.0 - seen / (2000.0 * static_cast<double>(schema.characteristics.size()));
    CHECK(frac == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("synthetic specs") {
    const Schema schema = default_schema();
    const auto req = load_synthetic_spec(R"({"variant":"strict","cases":10,"seed":4,
        "coefficients":{"gamma[)" + schema.characteristics[0] + R"(]":1.5}})",
                                         schema);
    const ParameterLayout layout(schema, build_mask(Variant::strict, schema));
    CHECK(req.variant == Variant::strict);
    CHECK(req.spec.num_cases == 10);
    CHECK(req.spec.coefficients[layout.gamma_index(0)] == 1.5);
    CHECK(req.spec.coefficients[layout.gamma_index(1)] == demo_coefficients(layout, schema)[layout.gamma_index(1)]);
    CHECK_THROWS_AS(load_synthetic_spec(R"({"coefficients":{"nope":1}})", schema), ValidationError);
    CHECK_THROWS_AS(load_synthetic_spec("{", schema), ParseError);
    CHECK_THROWS_AS(load_synthetic_spec(R"({"missing_rate":1.0})", schema), ValidationError);
}

TEST_CASE("effects export") {
    const Schema schema = default_schema();
    for (Variant v : {Variant::empty, Variant::strict}) {
        const InteractionMask mask = build_mask(v, schema);
        const ParameterLayout layout(schema, mask);
        const auto s = decomp::testing::fake_posterior(layout, std::vector<double>(layout.size(), 1.0), 0.5);
        const EffectsTable t = export_effects(s, layout, schema);
        CHECK(t.rows.size() == layout.size());
        CHECK(t.rows.size() == (v == Variant::empty ? 48u : 200u));
        CHECK(t.rows[0].kind == "gamma");
        CHECK(t.rows[0].mean == doctest::Approx(1.0).epsilon(0.05));
        CHECK(t.rows[0].sd == doctest::Approx(0.5).epsilon(0.1));
        CHECK(t.rows[0].quantiles.size() == 5);
        for (std::size_t q = 1; q < 5; ++q) CHECK(t.rows[0].quantiles[q] >= t.rows[0].quantiles[q - 1]);
        const EffectsTable one = export_effects(s, layout, schema, {0.5});
        const std::string csv = effects_to_csv(one);
        CHECK(csv.substr(0, csv.find('\n')) == "name,kind,characteristic,covariate,level,mean,sd,q50");
    }
    CHECK(quantile_label(0.025) == "q2.5");
    CHECK(quantile_label(0.975) == "q97.5");
    CHECK(sample_quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == 2.5);
    CHECK(sample_quantile({5.0}, 0.9) == 5.0);
    CHECK_THROWS_AS(sample_quantile({}, 0.5), ValidationError);
}
