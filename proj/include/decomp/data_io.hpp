#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "decomp/model.hpp"
#include "decomp/schema.hpp"
#include "decomp/sampler.hpp"

namespace decomp {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

// ---- dates -------------------------------------------------------------

enum class DeathDateKind {
    longitudinal,
    exact,
    approximate,
    range,
    last_known_alive_exact,
    last_known_alive_approximate,
    unknown,
};

DeathDateKind parse_death_date_kind(std::string_view text);
std::string_view to_string(DeathDateKind kind) noexcept;

using Date = std::chrono::sys_days;

// Strict YYYY-MM-DD.
Date parse_date(std::string_view text);
std::string format_date(Date date);

struct DateEvidence {
    Date discovery{};
    DeathDateKind kind = DeathDateKind::exact;
    std::optional<Date> death;        // every kind except range
    std::optional<Date> range_start;  // range only
    std::optional<Date> range_end;
};

// Days from death (or the midpoint of a range) to discovery. An "unknown"
// kind is handled like "approximate".
double compute_pmi(const DateEvidence& evidence);

// ---- case files ----------------------------------------------------------

struct IngestError {
    std::size_t row = 0;  // 1-based data row (the header is row 0)
    std::string case_id;
    std::string message;
};

struct IngestReport {
    std::size_t rows = 0;
    std::size_t accepted = 0;
    std::vector<IngestError> errors;
};

struct ParsedCases {
    std::vector<CaseRecord> records;
    IngestReport report;
};

// Header-labelled CSV, one case per row. Columns: case_id,
// discovery_date, death_date_kind, death_date, range_start, range_end,
// optional pmi_days (overrides the dates), one column per covariate and
// one 0/1/blank column per characteristic. Bad rows land in the report; a
// bad header throws ParseError.
ParsedCases parse_cases(std::string_view csv_text, const Schema& schema);
ParsedCases read_cases(const std::string& path, const Schema& schema);

// Writes pmi_days (blank when absent) and leaves the date columns empty.
std::string write_cases(const std::vector<CaseRecord>& records, const Schema& schema);

// Encodes records that carry a PMI.
Dataset to_dataset(const std::vector<CaseRecord>& records, const Schema& schema);

// ---- synthetic data -------------------------------------------------------

struct SyntheticSpec {
    std::vector<double> coefficients;  // packed per the layout
    std::size_t num_cases = 1000;
    // Per covariate level sampling weights; empty uses the schema's.
    std::vector<std::vector<double>> frequencies;
    double tau_mean = 2.33;
    double tau_sd = 1.53;
    // tau is drawn from the normal truncated to [tau_min, tau_max].
    double tau_min = 0.0;
    double tau_max = std::numeric_limits<double>::infinity();
    // Fraction of characteristic entries left unobserved.
    double missing_rate = 0.0;
};

// Deterministic, moderately informative coefficients for demos and tests:
// gamma near -2, base rates matched to the schema prevalences at the
// median PMI, small covariate effects.
std::vector<double> demo_coefficients(const ParameterLayout& layout, const Schema& schema,
                                      std::uint64_t seed = 7);

// JSON spec: {"variant", "cases", "coefficients": "demo" | {name: value},
// "tau_mean", "tau_sd", "missing_rate", "seed"}. Missing names default to
// the demo coefficients.
struct SyntheticRequest {
    Variant variant = Variant::empty;
    SyntheticSpec spec;
    std::uint64_t seed = 1;
};
SyntheticRequest load_synthetic_spec(std::string_view json_text, const Schema& schema);

std::vector<CaseRecord> generate_synthetic(const SyntheticSpec& spec, const Schema& schema,
                                           const ParameterLayout& layout, std::uint64_t seed);

// ---- effects table ------------------------------------------------------

inline const std::vector<double> kDefaultQuantiles{0.025, 0.25, 0.5, 0.75, 0.975};

struct EffectRow {
    std::string name;
    std::string kind;  // gamma | beta0 | beta
    std::string characteristic;
    std::string covariate;  // beta only
    std::string level;      // beta only
    double mean = 0.0;
    double sd = 0.0;
    std::vector<double> quantiles;
};

struct EffectsTable {
    std::vector<double> probabilities;
    std::vector<EffectRow> rows;
};

// Sample quantile with linear interpolation between order statistics.
double sample_quantile(std::vector<double> values, double p);

EffectsTable export_effects(const PosteriorSamples& samples, const ParameterLayout& layout,
                            const Schema& schema, const std::vector<double>& quantiles = kDefaultQuantiles);
std::string effects_to_csv(const EffectsTable& table);
// Column label of a quantile, e.g. 0.025 -> "q2.5".
std::string quantile_label(double p);

}  // namespace decomp
