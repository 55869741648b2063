#include <doctest.h>

#include <set>

#include "decomp/error.hpp"
#include "decomp/model.hpp"
#include "decomp/random.hpp"
#include "decomp/schema.hpp"

using namespace decomp;

TEST_CASE("bundled schema has 24 characteristics and the published covariates") {
    const Schema s = default_schema();
    CHECK(s.characteristics.size() == 24);
    CHECK(s.covariates.size() == 18);
    REQUIRE(s.covariates.find("Age"));
    const Covariate& age = s.covariates[*s.covariates.find("Age")];
    CHECK(age.levels[age.reference] == "Adult");
    CHECK(age.levels[age.missing_level] == "Adult");
    const Covariate& sex = s.covariates[*s.covariates.find("Sex")];
    CHECK(sex.levels[sex.missing_level] == "Unknown");
}

TEST_CASE("schema json round trip") {
    const Schema s = default_schema();
    const Schema t = load_schema(schema_to_json(s));
    CHECK(t.characteristics.names() == s.characteristics.names());
    REQUIRE(t.covariates.size() == s.covariates.size());
    for (std::size_t c = 0; c < s.covariates.size(); ++c) {
        CHECK(t.covariates[c].levels == s.covariates[c].levels);
        CHECK(t.covariates[c].reference == s.covariates[c].reference);
        CHECK(t.covariates[c].missing_level == s.covariates[c].missing_level);
    }
}

TEST_CASE("malformed schema documents are rejected") {
    CHECK_THROWS_AS(load_schema("{"), ParseError);
    CHECK_THROWS_AS(load_schema(R"({"covariates": [{"name": "A", "levels": [{"name": "x"}]}],
                                   "characteristics": [{"name": "B"}]})"),
                    ValidationError);
}

TEST_CASE("level resolution groups unknowns and maps binary 0/1") {
    const Schema s = default_schema();
    const Covariate& site = s.covariates[*s.covariates.find("Deposition site type")];
    CHECK(site.levels[*site.resolve_level("unknown")] == "Unknown");
    CHECK(site.levels[*site.resolve_level("UNKNOWN")] == "Unknown");
    CHECK(site.levels[*site.resolve_level("")] == "Unknown");
    CHECK(site.levels[*site.resolve_level("water")] == "Water");
    CHECK_FALSE(site.resolve_level("Moon"));
    const Covariate& larva = s.covariates[*s.covariates.find("Larva")];
    CHECK(larva.levels[*larva.resolve_level("1")] == "present");
    CHECK(larva.levels[*larva.resolve_level("0")] == "absent");
    const Covariate& age = s.covariates[*s.covariates.find("Age")];
    CHECK(age.levels[*age.resolve_level("unknown")] == "Adult");
}

TEST_CASE("strict mask follows the published table") {
    const Schema s = default_schema();
    const InteractionMask m = build_mask(Variant::strict, s);
    auto d = [&](const char* n) { return *s.characteristics.find(n); };
    auto c = [&](const char* n) { return *s.covariates.find(n); };
    CHECK(m.row_count(d("Marbling")) == 1);
    CHECK(m.allowed(d("Marbling"), c("Hanging")));
    CHECK(m.row_count(d("Corneal clouding")) == 0);
    CHECK(m.row_count(d("Liquid decomposition")) == 0);
    for (const char* never : {"Age", "Sex", "Beetles", "Ants", "Fly eggs", "Pupae"})
        for (std::size_t k = 0; k < s.characteristics.size(); ++k) CHECK_FALSE(m.allowed(k, c(never)));
}

TEST_CASE("mask variants give the expected parameter counts") {
    const Schema s = default_schema();
    CHECK(ParameterLayout(s, build_mask(Variant::empty, s)).size() == 48);
    CHECK(ParameterLayout(s, build_mask(Variant::strict, s)).size() == 200);
    CHECK(ParameterLayout(s, build_mask(Variant::full, s)).size() == 48 + 24 * 29);
}

TEST_CASE("mask csv round trip") {
    const Schema s = default_schema();
    const InteractionMask m = build_mask(Variant::strict, s);
    CHECK(parse_mask_table(mask_to_csv(m, s), s, Variant::strict) == m);
}

TEST_CASE("mask table with an unknown covariate column is rejected") {
    const Schema s = default_schema();
    CHECK_THROWS_AS(parse_mask_table("characteristic,Moon\nMarbling,1\n", s, Variant::strict), ParseError);
}

TEST_CASE("encode and decode are inverse on random valid records") {
    const Schema s = default_schema();
    Rng rng = make_rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        CaseRecord r;
        r.case_id = "c" + std::to_string(trial);
        r.pmi_days = std::floor(uniform01(rng) * 400.0);
        for (const Covariate& cov : s.covariates)
            r.covariate_levels[cov.name] = cov.levels[static_cast<std::size_t>(uniform01(rng) * cov.num_levels())];
        for (const auto& name : s.characteristics.names()) {
            const double u = uniform01(rng);
            if (u < 0.3) r.decomposition[name] = std::nullopt;
            else r.decomposition[name] = u < 0.65;
        }
        const CaseDesign e = encode_case(r, s);
        const CaseRecord back = decode_case(e, s, r.case_id);
        CHECK(back.covariate_levels == r.covariate_levels);
        CHECK(*back.pmi_days == doctest::Approx(*r.pmi_days).epsilon(1e-12));
        for (const auto& [name, v] : r.decomposition) {
            auto it = back.decomposition.find(name);
            if (v) {
                REQUIRE(it != back.decomposition.end());
                CHECK(it->second == v);
            } else {
                CHECK((it == back.decomposition.end() || !it->second));
            }
        }
        CHECK(encode_case(back, s).levels == e.levels);
    }
}

TEST_CASE("encoding rejects unknown names and negative PMI") {
    const Schema s = default_schema();
    CaseRecord r;
    r.covariate_levels["Sex"] = "Robot";
    CHECK_THROWS_AS(encode_case(r, s), ValidationError);
    r.covariate_levels = {{"Moon", "x"}};
    CHECK_THROWS_AS(encode_case(r, s), ValidationError);
    r.covariate_levels.clear();
    r.decomposition["Glowing"] = true;
    CHECK_THROWS_AS(encode_case(r, s), ValidationError);
    r.decomposition.clear();
    r.pmi_days = -1.0;
    CHECK_THROWS_AS(encode_case(r, s), ValidationError);
}

TEST_CASE("blank covariates take the missing level") {
    const Schema s = default_schema();
    const CaseDesign e = encode_case(CaseRecord{}, s);
    for (std::size_t c = 0; c < s.covariates.size(); ++c) CHECK(e.levels[c] == s.covariates[c].missing_level);
    CHECK(e.num_observed() == 0);
}
