#include "decomp/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "decomp/csv.hpp"
#include "decomp/error.hpp"
#include "decomp/random.hpp"

namespace decomp {

using json = nlohmann::json;

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("failed writing '" + path + "'");
}

// ---- dates -------------------------------------------------------------

namespace {

constexpr std::pair<DeathDateKind, std::string_view> kKindNames[] = {
    {DeathDateKind::longitudinal, "longitudinal"},
    {DeathDateKind::exact, "exact"},
    {DeathDateKind::approximate, "approximate"},
    {DeathDateKind::range, "range"},
    {DeathDateKind::last_known_alive_exact, "last_known_alive_exact"},
    {DeathDateKind::last_known_alive_approximate, "last_known_alive_approximate"},
    {DeathDateKind::unknown, "unknown"},
};

double parse_number(std::string_view text, const char* what) {
    const std::string t = csv::trim(text);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size() || !std::isfinite(v))
        throw ParseError(std::string("invalid ") + what + " '" + t + "'");
    return v;
}

}  // namespace

DeathDateKind parse_death_date_kind(std::string_view text) {
    // Runs of spaces, dashes and underscores act as one separator.
    std::string t;
    for (char ch : csv::to_lower(csv::trim(text))) {
        const bool sep = ch == ' ' || ch == '-' || ch == '_';
        if (!sep)
            t += ch;
        else if (!t.empty() && t.back() != '_')
            t += '_';
    }
    for (const auto& [kind, name] : kKindNames)
        if (t == name) return kind;
    throw ParseError("unknown death date kind '" + std::string(text) + "'");
}

std::string_view to_string(DeathDateKind kind) noexcept {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "unknown";
}

Date parse_date(std::string_view text) {
    const std::string t = csv::trim(text);
    auto bad = [&] { return ParseError("invalid date '" + t + "' (expected YYYY-MM-DD)"); };
    if (t.size() != 10 || t[4] != '-' || t[7] != '-') throw bad();
    int y = 0;
    unsigned m = 0, d = 0;
    auto num = [&](std::size_t pos, std::size_t len, auto& out) {
        auto [ptr, ec] = std::from_chars(t.data() + pos, t.data() + pos + len, out);
        if (ec != std::errc{} || ptr != t.data() + pos + len) throw bad();
    };
    num(0, 4, y);
    num(5, 2, m);
    num(8, 2, d);
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw bad();
    return Date{ymd};
}

std::string format_date(Date date) {
    const std::chrono::year_month_day ymd{date};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

double compute_pmi(const DateEvidence& e) {
    if (e.kind == DeathDateKind::range) {
        if (!e.range_start || !e.range_end) throw ValidationError("range kind needs range_start and range_end");
        if (*e.range_start > *e.range_end) throw ValidationError("range_start is after range_end");
        if (*e.range_end > e.discovery) throw ValidationError("death range ends after discovery");
        const double span = static_cast<double>((*e.range_end - *e.range_start).count());
        return static_cast<double>((e.discovery - *e.range_start).count()) - 0.5 * span;
    }
    if (!e.death) throw ValidationError("death_date is required for kind '" + std::string(to_string(e.kind)) + "'");
    if (*e.death > e.discovery) throw ValidationError("death date is after discovery");
    return static_cast<double>((e.discovery - *e.death).count());
}

// ---- case files ----------------------------------------------------------

namespace {

const std::vector<std::string> kDateColumns{"discovery_date", "death_date_kind", "death_date", "range_start",
                                            "range_end"};

std::optional<bool> parse_flag(std::string_view text) {
    const std::string t = csv::to_lower(csv::trim(text));
    if (t.empty()) return std::nullopt;
    if (t == "1" || t == "true" || t == "yes" || t == "present") return true;
    if (t == "0" || t == "false" || t == "no" || t == "absent") return false;
    throw ParseError("invalid characteristic value '" + std::string(text) + "' (expected 0, 1 or blank)");
}

enum class ColumnKind { case_id, date, pmi, covariate, characteristic };

struct Column {
    ColumnKind kind;
    std::string name;
};

}  // namespace

ParsedCases parse_cases(std::string_view csv_text, const Schema& schema) {
    ParsedCases out;
    std::vector<csv::Row> rows;
    try {
        rows = csv::parse(csv_text);
    } catch (const std::exception& e) {
        throw ParseError(std::string("case file: ") + e.what());
    }
    if (rows.empty()) return out;

    std::vector<Column> columns;
    std::set<std::string> seen;
    bool has_id = false;
    for (const auto& raw : rows[0]) {
        const std::string h = csv::trim(raw);
        if (!seen.insert(h).second) throw ParseError("case file: duplicate column '" + h + "'");
        if (h == "case_id") {
            columns.push_back({ColumnKind::case_id, h});
            has_id = true;
        } else if (std::find(kDateColumns.begin(), kDateColumns.end(), h) != kDateColumns.end()) {
            columns.push_back({ColumnKind::date, h});
        } else if (h == "pmi_days") {
            columns.push_back({ColumnKind::pmi, h});
        } else if (schema.covariates.find(h)) {
            columns.push_back({ColumnKind::covariate, h});
        } else if (schema.characteristics.find(h)) {
            columns.push_back({ColumnKind::characteristic, h});
        } else {
            throw ParseError("case file: unknown column '" + h + "'");
        }
    }
    if (!has_id) throw ParseError("case file: missing case_id column");

    std::set<std::string> ids;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        ++out.report.rows;
        const csv::Row& row = rows[r];
        CaseRecord rec;
        try {
            if (row.size() != columns.size())
                throw ParseError("expected " + std::to_string(columns.size()) + " fields, found " +
                                 std::to_string(row.size()));
            std::map<std::string, std::string> dates;
            std::optional<double> pmi;
            for (std::size_t j = 0; j < columns.size(); ++j) {
                const std::string v = csv::trim(row[j]);
                switch (columns[j].kind) {
                    case ColumnKind::case_id: rec.case_id = v; break;
                    case ColumnKind::date:
                        if (!v.empty()) dates[columns[j].name] = v;
                        break;
                    case ColumnKind::pmi:
                        if (!v.empty()) pmi = parse_number(v, "pmi_days");
                        break;
                    case ColumnKind::covariate:
                        if (!v.empty()) rec.covariate_levels[columns[j].name] = v;
                        break;
                    case ColumnKind::characteristic:
                        if (auto f = parse_flag(v)) rec.decomposition[columns[j].name] = f;
                        break;
                }
            }
            if (rec.case_id.empty()) throw ValidationError("empty case_id");
            if (!ids.insert(rec.case_id).second) throw ValidationError("duplicate case_id '" + rec.case_id + "'");
            if (pmi) {
                if (*pmi < 0.0) throw ValidationError("negative PMI");
                rec.pmi_days = pmi;
            } else if (dates.count("discovery_date")) {
                DateEvidence e;
                e.discovery = parse_date(dates["discovery_date"]);
                e.kind = dates.count("death_date_kind") ? parse_death_date_kind(dates["death_date_kind"])
                                                        : DeathDateKind::exact;
                if (dates.count("death_date")) e.death = parse_date(dates["death_date"]);
                if (dates.count("range_start")) e.range_start = parse_date(dates["range_start"]);
                if (dates.count("range_end")) e.range_end = parse_date(dates["range_end"]);
                rec.pmi_days = compute_pmi(e);
            }
            encode_case(rec, schema);
            out.records.push_back(std::move(rec));
            ++out.report.accepted;
        } catch (const std::exception& e) {
            out.report.errors.push_back({r, rec.case_id, e.what()});
        }
    }
    return out;
}

ParsedCases read_cases(const std::string& path, const Schema& schema) {
    return parse_cases(read_text_file(path), schema);
}

std::string write_cases(const std::vector<CaseRecord>& records, const Schema& schema) {
    std::ostringstream out;
    csv::Row header{"case_id"};
    header.insert(header.end(), kDateColumns.begin(), kDateColumns.end());
    header.push_back("pmi_days");
    for (const auto& c : schema.covariates) header.push_back(c.name);
    for (const auto& d : schema.characteristics.names()) header.push_back(d);
    csv::write_row(out, header);
    for (const CaseRecord& rec : records) {
        csv::Row row{rec.case_id};
        row.resize(1 + kDateColumns.size());
        row.push_back(rec.pmi_days ? csv::format_double(*rec.pmi_days) : "");
        for (const auto& c : schema.covariates) {
            auto it = rec.covariate_levels.find(c.name);
            row.push_back(it == rec.covariate_levels.end() ? "" : it->second);
        }
        for (const auto& d : schema.characteristics.names()) {
            auto it = rec.decomposition.find(d);
            row.push_back(it == rec.decomposition.end() || !it->second ? "" : (*it->second ? "1" : "0"));
        }
        csv::write_row(out, row);
    }
    return out.str();
}

Dataset to_dataset(const std::vector<CaseRecord>& records, const Schema& schema) {
    Dataset data(schema.covariates.size(), schema.characteristics.size());
    for (const CaseRecord& rec : records) {
        if (!rec.pmi_days) throw ValidationError("case '" + rec.case_id + "' has no PMI");
        data.add(encode_case(rec, schema));
    }
    return data;
}

// ---- synthetic data -------------------------------------------------------

std::vector<double> demo_coefficients(const ParameterLayout& layout, const Schema& schema, std::uint64_t seed) {
    std::vector<double> c(layout.size(), 0.0);
    Rng rng = make_rng(seed, 0, 0x64656d6fULL);
    const std::size_t D = layout.num_characteristics();
    const double median_tau = 2.33;
    for (std::size_t d = 0; d < D; ++d) {
        const double gamma = -2.5 + 0.5 * standard_normal(rng);
        double prev = schema.characteristics.prevalence().empty() ? 0.5 : schema.characteristics.prevalence()[d];
        prev = std::clamp(prev, 0.02, 0.98);
        c[layout.gamma_index(d)] = gamma;
        c[layout.beta0_index(d)] = (std::log(prev / (1.0 - prev)) - gamma) / median_tau;
    }
    for (std::size_t i = 2 * D; i < layout.size(); ++i) c[i] = 0.3 * standard_normal(rng);
    return c;
}

SyntheticRequest load_synthetic_spec(std::string_view json_text, const Schema& schema) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("synthetic spec: ") + e.what());
    }
    SyntheticRequest req;
    try {
        req.variant = parse_variant(doc.value("variant", std::string("empty")));
        req.seed = doc.value("seed", std::uint64_t{1});
        req.spec.num_cases = doc.value("cases", std::size_t{1000});
        req.spec.tau_mean = doc.value("tau_mean", req.spec.tau_mean);
        req.spec.tau_sd = doc.value("tau_sd", req.spec.tau_sd);
        req.spec.missing_rate = doc.value("missing_rate", 0.0);
        const ParameterLayout layout(schema, build_mask(req.variant, schema));
        req.spec.coefficients = demo_coefficients(layout, schema, doc.value("demo_seed", std::uint64_t{7}));
        if (doc.contains("coefficients") && doc["coefficients"].is_object()) {
            for (const auto& [name, value] : doc["coefficients"].items()) {
                auto i = layout.find(name);
                if (!i) throw ValidationError("synthetic spec: unknown coefficient '" + name + "'");
                req.spec.coefficients[*i] = value.get<double>();
            }
        } else if (doc.contains("coefficients") && doc["coefficients"] != "demo") {
            throw ValidationError("synthetic spec: coefficients must be \"demo\" or an object");
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("synthetic spec: ") + e.what());
    }
    if (!(req.spec.tau_sd > 0.0)) throw ValidationError("synthetic spec: tau_sd must be positive");
    if (!(req.spec.missing_rate >= 0.0 && req.spec.missing_rate < 1.0))
        throw ValidationError("synthetic spec: missing_rate must be in [0, 1)");
    return req;
}

std::vector<CaseRecord> generate_synthetic(const SyntheticSpec& spec, const Schema& schema,
                                           const ParameterLayout& layout, std::uint64_t seed) {
    if (spec.coefficients.size() != layout.size()) throw ValidationError("synthetic: coefficient count mismatch");
    if (!(spec.tau_sd > 0.0)) throw ValidationError("synthetic: tau_sd must be positive");
    if (!(spec.tau_min < spec.tau_max)) throw ValidationError("synthetic: empty tau range");
    const std::size_t C = schema.covariates.size();
    const std::size_t D = schema.characteristics.size();

    std::vector<std::discrete_distribution<std::size_t>> level_dists;
    for (std::size_t c = 0; c < C; ++c) {
        std::vector<double> w = c < spec.frequencies.size() ? spec.frequencies[c] : schema.covariates[c].frequencies;
        if (w.empty()) w.assign(schema.covariates[c].num_levels(), 1.0);
        if (w.size() != schema.covariates[c].num_levels())
            throw ValidationError("synthetic: frequency count mismatch for '" + schema.covariates[c].name + "'");
        double total = 0.0;
        for (double x : w) {
            if (!(x >= 0.0)) throw ValidationError("synthetic: negative frequency");
            total += x;
        }
        if (!(total > 0.0)) throw ValidationError("synthetic: frequencies sum to zero");
        level_dists.emplace_back(w.begin(), w.end());
    }

    std::vector<CaseRecord> out(spec.num_cases);
    std::exception_ptr error;
#pragma omp parallel for schedule(static)
    for (std::int64_t n = 0; n < static_cast<std::int64_t>(spec.num_cases); ++n) {
        try {
            Rng rng = make_rng(seed, static_cast<std::uint64_t>(n), 0x73796eULL);
            std::vector<std::uint16_t> levels(C);
            for (std::size_t c = 0; c < C; ++c) {
                auto dist = level_dists[c];
                levels[c] = static_cast<std::uint16_t>(dist(rng));
            }
            double tau = 0.0;
            int tries = 0;
            do {
                if (++tries > 100000) throw NumericalError("synthetic: tau range has negligible mass");
                tau = spec.tau_mean + spec.tau_sd * standard_normal(rng);
            } while (tau < spec.tau_min || tau > spec.tau_max);

            CaseRecord& rec = out[static_cast<std::size_t>(n)];
            char id[32];
            std::snprintf(id, sizeof id, "syn-%06lld", static_cast<long long>(n) + 1);
            rec.case_id = id;
            rec.pmi_days = std::expm1(tau);
            for (std::size_t c = 0; c < C; ++c)
                rec.covariate_levels[schema.covariates[c].name] = schema.covariates[c].levels[levels[c]];
            for (std::size_t d = 0; d < D; ++d) {
                const double p = sigmoid(char_log_odds(layout, spec.coefficients, levels, tau, d));
                const bool y = uniform01(rng) < p;
                const bool missing = spec.missing_rate > 0.0 && uniform01(rng) < spec.missing_rate;
                if (!missing) rec.decomposition[schema.characteristics[d]] = y;
            }
        } catch (...) {
#pragma omp critical(decomp_synthetic_error)
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);
    return out;
}

// ---- effects ----------------------------------------------------------------

double sample_quantile(std::vector<double> values, double p) {
    if (values.empty()) throw ValidationError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = p * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::string quantile_label(double p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "q%.10g", std::round(p * 100.0 * 1e9) / 1e9);
    return buf;
}

EffectsTable export_effects(const PosteriorSamples& samples, const ParameterLayout& layout, const Schema& schema,
                            const std::vector<double>& quantiles) {
    if (quantiles.empty()) throw ValidationError("at least one quantile is required");
    for (double q : quantiles)
        if (!(q > 0.0 && q < 1.0)) throw ValidationError("quantiles must lie strictly between 0 and 1");
    if (samples.dim() != layout.size()) throw ValidationError("samples do not match the parameter layout");
    if (samples.num_draws() == 0) throw ValidationError("no posterior draws");

    EffectsTable table;
    table.probabilities = quantiles;
    const std::size_t L = samples.num_draws();
    std::vector<double> col(L);
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const ParameterInfo& info = layout.info(i);
        EffectRow row;
        row.name = info.name;
        row.characteristic = schema.characteristics[info.characteristic];
        switch (info.kind) {
            case ParameterKind::gamma: row.kind = "gamma"; break;
            case ParameterKind::beta0: row.kind = "beta0"; break;
            case ParameterKind::beta:
                row.kind = "beta";
                row.covariate = schema.covariates[info.covariate].name;
                row.level = schema.covariates[info.covariate].levels[info.level];
                break;
        }
        double mean = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            col[l] = samples.draws(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(i));
            mean += col[l];
        }
        mean /= static_cast<double>(L);
        double ss = 0.0;
        for (double v : col) ss += (v - mean) * (v - mean);
        row.mean = mean;
        row.sd = L > 1 ? std::sqrt(ss / static_cast<double>(L - 1)) : 0.0;
        std::sort(col.begin(), col.end());
        for (double q : quantiles) {
            const double pos = q * static_cast<double>(L - 1);
            const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
            const std::size_t hi = std::min(lo + 1, L - 1);
            row.quantiles.push_back(col[lo] + (pos - static_cast<double>(lo)) * (col[hi] - col[lo]));
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string effects_to_csv(const EffectsTable& table) {
    std::ostringstream out;
    csv::Row header{"name", "kind", "characteristic", "covariate", "level", "mean", "sd"};
    for (double p : table.probabilities) header.push_back(quantile_label(p));
    csv::write_row(out, header);
    for (const EffectRow& r : table.rows) {
        csv::Row row{r.name, r.kind, r.characteristic, r.covariate, r.level, csv::format_double(r.mean),
                     csv::format_double(r.sd)};
        for (double q : r.quantiles) row.push_back(csv::format_double(q));
        csv::write_row(out, row);
    }
    return out.str();
}

}  // namespace decomp
