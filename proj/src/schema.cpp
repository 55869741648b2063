#include "decomp/schema.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "decomp/csv.hpp"
#include "decomp/error.hpp"

namespace decomp {

using nlohmann::json;

std::optional<std::size_t> Covariate::find_level(std::string_view level) const {
    const std::string key = csv::to_lower(csv::trim(level));
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (csv::to_lower(levels[i]) == key) return i;
    }
    return std::nullopt;
}

std::optional<std::size_t> Covariate::resolve_level(std::string_view raw) const {
    const std::string value = csv::trim(raw);
    if (value.empty()) return missing_level;
    if (auto idx = find_level(value)) return idx;
    const std::string lower = csv::to_lower(value);
    if (lower == "unknown" || lower == "na" || lower == "skipped") return missing_level;
    if (levels.size() == 2 && (value == "0" || value == "1")) {
        const std::size_t other = 1 - reference;
        return value == "0" ? reference : other;
    }
    return std::nullopt;
}

CovariateSchema::CovariateSchema(std::vector<Covariate> covariates)
    : covariates_(std::move(covariates)) {
    std::set<std::string> names;
    for (const auto& c : covariates_) {
        if (!names.insert(c.name).second)
            throw ValidationError("schema: duplicate covariate name '" + c.name + "'");
        if (c.levels.size() < 2)
            throw ValidationError("schema: covariate '" + c.name + "' needs at least 2 levels");
        if (c.reference >= c.levels.size())
            throw ValidationError("schema: covariate '" + c.name + "' has no valid reference level");
        if (c.missing_level >= c.levels.size())
            throw ValidationError("schema: covariate '" + c.name + "' has an invalid missing level");
        std::set<std::string> lv;
        for (const auto& l : c.levels) {
            if (!lv.insert(csv::to_lower(l)).second)
                throw ValidationError("schema: duplicate level '" + l + "' in '" + c.name + "'");
        }
        if (c.levels.size() == 2) {
            auto absent = c.find_level("absent");
            if (absent && *absent != c.reference)
                throw ValidationError("schema: binary covariate '" + c.name +
                                      "' must use 'absent' as its reference level");
        }
        if (!c.frequencies.empty() && c.frequencies.size() != c.levels.size())
            throw ValidationError("schema: frequency count mismatch for '" + c.name + "'");
    }
}

std::optional<std::size_t> CovariateSchema::find(std::string_view name) const {
    for (std::size_t i = 0; i < covariates_.size(); ++i)
        if (covariates_[i].name == name) return i;
    return std::nullopt;
}

DecompositionSchema::DecompositionSchema(std::vector<std::string> names, std::vector<double> prevalence)
    : names_(std::move(names)), prevalence_(std::move(prevalence)) {
    std::set<std::string> seen;
    for (const auto& n : names_)
        if (!seen.insert(n).second)
            throw ValidationError("schema: duplicate characteristic name '" + n + "'");
    if (!prevalence_.empty() && prevalence_.size() != names_.size())
        throw ValidationError("schema: prevalence count mismatch");
}

std::optional<std::size_t> DecompositionSchema::find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return i;
    return std::nullopt;
}

Schema load_schema(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("schema: ") + e.what());
    }
    try {
        Schema schema;
        schema.name = doc.value("name", "");
        schema.version = doc.value("version", 1);
        std::vector<Covariate> covariates;
        for (const auto& jc : doc.at("covariates")) {
            Covariate c;
            c.name = jc.at("name").get<std::string>();
            bool has_reference = false;
            bool has_freq = false;
            for (const auto& jl : jc.at("levels")) {
                if (jl.is_string()) {
                    c.levels.push_back(jl.get<std::string>());
                    continue;
                }
                c.levels.push_back(jl.at("name").get<std::string>());
                if (jl.value("reference", false)) {
                    if (has_reference)
                        throw ValidationError("schema: covariate '" + c.name +
                                              "' has more than one reference level");
                    has_reference = true;
                    c.reference = c.levels.size() - 1;
                }
                if (jl.contains("frequency")) {
                    has_freq = true;
                    c.frequencies.resize(c.levels.size(), 0.0);
                    c.frequencies.back() = jl.at("frequency").get<double>();
                }
            }
            if (jc.contains("reference")) {
                auto idx = c.find_level(jc.at("reference").get<std::string>());
                if (!idx) throw ValidationError("schema: unknown reference level in '" + c.name + "'");
                c.reference = *idx;
                has_reference = true;
            }
            if (!has_reference)
                throw ValidationError("schema: covariate '" + c.name + "' is missing a reference level");
            if (has_freq) c.frequencies.resize(c.levels.size(), 0.0);
            if (jc.contains("missing_level")) {
                auto idx = c.find_level(jc.at("missing_level").get<std::string>());
                if (!idx) throw ValidationError("schema: unknown missing_level in '" + c.name + "'");
                c.missing_level = *idx;
            } else if (auto unk = c.find_level("Unknown")) {
                c.missing_level = *unk;
            } else {
                c.missing_level = c.reference;
            }
            covariates.push_back(std::move(c));
        }
        schema.covariates = CovariateSchema(std::move(covariates));

        std::vector<std::string> names;
        std::vector<double> prevalence;
        bool has_prev = false;
        for (const auto& jd : doc.at("characteristics")) {
            if (jd.is_string()) {
                names.push_back(jd.get<std::string>());
                prevalence.push_back(0.0);
            } else {
                names.push_back(jd.at("name").get<std::string>());
                has_prev = has_prev || jd.contains("prevalence");
                prevalence.push_back(jd.value("prevalence", 0.0));
            }
        }
        if (names.empty()) throw ValidationError("schema: no decomposition characteristics");
        if (!has_prev) prevalence.clear();
        schema.characteristics = DecompositionSchema(std::move(names), std::move(prevalence));
        return schema;
    } catch (const json::exception& e) {
        throw ParseError(std::string("schema: ") + e.what());
    }
}

Schema load_schema_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open schema file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return load_schema(ss.str());
}

std::string schema_to_json(const Schema& schema) {
    json doc;
    doc["format"] = "decomp-schema";
    doc["version"] = schema.version;
    doc["name"] = schema.name;
    doc["covariates"] = json::array();
    for (const auto& c : schema.covariates) {
        json jc;
        jc["name"] = c.name;
        jc["levels"] = json::array();
        for (std::size_t l = 0; l < c.levels.size(); ++l) {
            json jl;
            jl["name"] = c.levels[l];
            if (l == c.reference) jl["reference"] = true;
            if (!c.frequencies.empty()) jl["frequency"] = c.frequencies[l];
            jc["levels"].push_back(jl);
        }
        jc["missing_level"] = c.levels[c.missing_level];
        doc["covariates"].push_back(jc);
    }
    doc["characteristics"] = json::array();
    const auto& ch = schema.characteristics;
    for (std::size_t d = 0; d < ch.size(); ++d) {
        json jd;
        jd["name"] = ch[d];
        if (!ch.prevalence().empty()) jd["prevalence"] = ch.prevalence()[d];
        doc["characteristics"].push_back(jd);
    }
    return doc.dump(2);
}

std::string data_path(std::string_view file) {
    return std::string(DECOMP_DATA_DIR) + "/" + std::string(file);
}

Schema default_schema() { return load_schema_file(data_path("schema_geofor.json")); }

Variant parse_variant(std::string_view name) {
    const std::string n = csv::to_lower(name);
    if (n == "empty") return Variant::empty;
    if (n == "strict") return Variant::strict;
    if (n == "full") return Variant::full;
    throw ParseError("unknown model variant '" + std::string(name) + "'");
}

std::string_view to_string(Variant variant) noexcept {
    switch (variant) {
        case Variant::empty: return "empty";
        case Variant::strict: return "strict";
        case Variant::full: return "full";
    }
    return "empty";
}

InteractionMask::InteractionMask(Variant variant, std::size_t num_characteristics,
                                 std::size_t num_covariates)
    : variant_(variant),
      rows_(num_characteristics),
      cols_(num_covariates),
      allowed_(num_characteristics * num_covariates, variant == Variant::full ? 1 : 0) {}

std::size_t InteractionMask::row_count(std::size_t d) const {
    std::size_t n = 0;
    for (std::size_t c = 0; c < cols_; ++c) n += allowed(d, c) ? 1 : 0;
    return n;
}

InteractionMask parse_mask_table(std::string_view csv_text, const Schema& schema, Variant variant) {
    const auto rows = csv::parse(csv_text);
    if (rows.empty()) throw ParseError("mask: empty table");
    const auto& header = rows.front();
    std::vector<std::size_t> column_covariate;
    for (std::size_t j = 1; j < header.size(); ++j) {
        auto c = schema.covariates.find(csv::trim(header[j]));
        if (!c) throw ParseError("mask: unknown covariate '" + header[j] + "'");
        column_covariate.push_back(*c);
    }
    InteractionMask mask(variant, schema.characteristics.size(), schema.covariates.size());
    for (std::size_t r = 0; r < schema.characteristics.size(); ++r)
        for (std::size_t c = 0; c < schema.covariates.size(); ++c) mask.set(r, c, false);
    std::set<std::size_t> seen;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        auto d = schema.characteristics.find(csv::trim(row.at(0)));
        if (!d) throw ValidationError("mask: unknown characteristic '" + row.at(0) + "'");
        if (!seen.insert(*d).second)
            throw ValidationError("mask: duplicate row for '" + row.at(0) + "'");
        if (row.size() != header.size())
            throw ParseError("mask: row '" + row.at(0) + "' has the wrong number of columns");
        for (std::size_t j = 1; j < row.size(); ++j) {
            const std::string v = csv::trim(row[j]);
            if (v != "0" && v != "1" && !v.empty())
                throw ParseError("mask: expected 0/1, got '" + v + "'");
            mask.set(*d, column_covariate[j - 1], v == "1");
        }
    }
    return mask;
}

InteractionMask build_mask(Variant variant, const Schema& schema, std::string_view strict_table) {
    if (variant != Variant::strict)
        return InteractionMask(variant, schema.characteristics.size(), schema.covariates.size());
    if (!strict_table.empty()) return parse_mask_table(strict_table, schema, variant);
    std::ifstream in(data_path("strict_mask.csv"));
    if (!in) throw ParseError("cannot open bundled strict mask");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_mask_table(ss.str(), schema, variant);
}

std::string mask_to_csv(const InteractionMask& mask, const Schema& schema) {
    std::ostringstream out;
    out << "# variant: " << to_string(mask.variant()) << "\n";
    csv::Row header{"characteristic"};
    for (const auto& c : schema.covariates) header.push_back(c.name);
    csv::write_row(out, header);
    for (std::size_t d = 0; d < mask.num_characteristics(); ++d) {
        csv::Row row{schema.characteristics[d]};
        for (std::size_t c = 0; c < mask.num_covariates(); ++c)
            row.push_back(mask.allowed(d, c) ? "1" : "0");
        csv::write_row(out, row);
    }
    return out.str();
}

std::size_t CaseDesign::num_observed() const noexcept {
    std::size_t n = 0;
    for (auto o : observed) n += o;
    return n;
}

CaseDesign encode_case(const CaseRecord& record, const Schema& schema) {
    CaseDesign out;
    const auto& covs = schema.covariates;
    out.levels.resize(covs.size());
    for (std::size_t c = 0; c < covs.size(); ++c) {
        auto it = record.covariate_levels.find(covs[c].name);
        const std::string raw = it == record.covariate_levels.end() ? std::string{} : it->second;
        auto idx = covs[c].resolve_level(raw);
        if (!idx)
            throw ValidationError("case '" + record.case_id + "': unknown level '" + raw +
                                  "' for covariate '" + covs[c].name + "'");
        out.levels[c] = static_cast<std::uint16_t>(*idx);
    }
    for (const auto& [name, _] : record.covariate_levels) {
        if (!covs.find(name))
            throw ValidationError("case '" + record.case_id + "': unknown covariate '" + name + "'");
    }
    if (record.pmi_days) {
        if (!(*record.pmi_days >= 0.0))
            throw ValidationError("case '" + record.case_id + "': PMI must be nonnegative");
        out.has_pmi = true;
        out.log1p_pmi = std::log1p(*record.pmi_days);
    }
    const auto& chars = schema.characteristics;
    out.values.assign(chars.size(), 0.0);
    out.observed.assign(chars.size(), 0);
    for (const auto& [name, value] : record.decomposition) {
        auto d = chars.find(name);
        if (!d)
            throw ValidationError("case '" + record.case_id + "': unknown characteristic '" + name + "'");
        if (value) {
            out.observed[*d] = 1;
            out.values[*d] = *value ? 1.0 : 0.0;
        }
    }
    return out;
}

CaseRecord decode_case(const CaseDesign& design, const Schema& schema, std::string case_id) {
    CaseRecord out;
    out.case_id = std::move(case_id);
    if (design.has_pmi) out.pmi_days = std::expm1(design.log1p_pmi);
    for (std::size_t c = 0; c < schema.covariates.size(); ++c)
        out.covariate_levels[schema.covariates[c].name] = schema.covariates[c].levels.at(design.levels[c]);
    for (std::size_t d = 0; d < schema.characteristics.size(); ++d) {
        if (design.observed[d])
            out.decomposition[schema.characteristics[d]] = design.values[d] >= 0.5;
    }
    return out;
}

}  // namespace decomp
