#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace decomp {

struct Covariate {
    std::string name;
    std::vector<std::string> levels;
    std::size_t reference = 0;
    // Level substituted for blank/skipped answers (and "unknown" when the
    // covariate has no level of that name, e.g. Age -> Adult).
    std::size_t missing_level = 0;
    // Marginal level frequencies used by the synthetic generator; optional.
    std::vector<double> frequencies;

    std::size_t num_levels() const noexcept { return levels.size(); }
    // Case-insensitive exact match on the level name.
    std::optional<std::size_t> find_level(std::string_view level) const;
    // Full ingestion rule: blank/unknown grouping, 0/1 for binary covariates.
    std::optional<std::size_t> resolve_level(std::string_view raw) const;
};

class CovariateSchema {
public:
    CovariateSchema() = default;
    explicit CovariateSchema(std::vector<Covariate> covariates);

    std::size_t size() const noexcept { return covariates_.size(); }
    const Covariate& operator[](std::size_t i) const { return covariates_[i]; }
    std::optional<std::size_t> find(std::string_view name) const;

    auto begin() const noexcept { return covariates_.begin(); }
    auto end() const noexcept { return covariates_.end(); }

private:
    std::vector<Covariate> covariates_;
};

class DecompositionSchema {
public:
    DecompositionSchema() = default;
    explicit DecompositionSchema(std::vector<std::string> names,
                                 std::vector<double> prevalence = {});

    std::size_t size() const noexcept { return names_.size(); }
    const std::string& operator[](std::size_t d) const { return names_[d]; }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::vector<double>& prevalence() const noexcept { return prevalence_; }
    std::optional<std::size_t> find(std::string_view name) const;

private:
    std::vector<std::string> names_;
    std::vector<double> prevalence_;
};

struct Schema {
    std::string name;
    int version = 1;
    CovariateSchema covariates;
    DecompositionSchema characteristics;
};

Schema load_schema(std::string_view json_text);
Schema load_schema_file(const std::string& path);
std::string schema_to_json(const Schema& schema);

// Path of a file shipped in the data/ directory.
std::string data_path(std::string_view file);
Schema default_schema();

enum class Variant { empty, strict, full };

Variant parse_variant(std::string_view name);
std::string_view to_string(Variant variant) noexcept;

// Which covariates may modify the rate coefficient of which characteristic.
class InteractionMask {
public:
    InteractionMask() = default;
    InteractionMask(Variant variant, std::size_t num_characteristics, std::size_t num_covariates);

    Variant variant() const noexcept { return variant_; }
    std::size_t num_characteristics() const noexcept { return rows_; }
    std::size_t num_covariates() const noexcept { return cols_; }

    bool allowed(std::size_t d, std::size_t c) const { return allowed_[d * cols_ + c] != 0; }
    void set(std::size_t d, std::size_t c, bool value) { allowed_[d * cols_ + c] = value ? 1 : 0; }
    std::size_t row_count(std::size_t d) const;

    friend bool operator==(const InteractionMask&, const InteractionMask&) = default;

private:
    Variant variant_ = Variant::empty;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> allowed_;
};

// Builds the mask for a variant. strict_table is the CSV mask document;
// when empty for the strict variant, the bundled table is used.
InteractionMask build_mask(Variant variant, const Schema& schema,
                           std::string_view strict_table = {});
// Parses a mask table (characteristic rows x covariate columns of 0/1).
// Covariates without a column are disallowed.
InteractionMask parse_mask_table(std::string_view csv_text, const Schema& schema, Variant variant);
std::string mask_to_csv(const InteractionMask& mask, const Schema& schema);

struct CaseRecord {
    std::string case_id;
    std::optional<double> pmi_days;
    std::map<std::string, std::string> covariate_levels;
    std::map<std::string, std::optional<bool>> decomposition;
};

// Model-ready encoding of one case. Values are in [0, 1]; fractional
// values act as expected outcomes (used for hypothetical-experiment refits).
struct CaseDesign {
    std::vector<std::uint16_t> levels;
    double log1p_pmi = 0.0;
    bool has_pmi = false;
    std::vector<double> values;
    std::vector<std::uint8_t> observed;

    std::size_t num_observed() const noexcept;
};

CaseDesign encode_case(const CaseRecord& record, const Schema& schema);
CaseRecord decode_case(const CaseDesign& design, const Schema& schema, std::string case_id = {});

}  // namespace decomp
