#include "decomp/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "decomp/csv.hpp"
#include "decomp/data_io.hpp"

namespace decomp {

using json = nlohmann::json;

namespace {

json parse_body(std::string_view body) {
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        throw RequestError(400, std::string("malformed JSON: ") + e.what());
    }
}

std::string level_text(const json& v, const std::string& field) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return {};
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw RequestError(400, "level must be a string", field);
}

std::vector<std::pair<std::string, std::string>> covariate_pairs(const json& obj, const Schema& schema,
                                                                 const std::string& prefix) {
    if (!obj.is_object()) throw RequestError(400, "covariates must be an object", prefix);
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [name, value] : obj.items()) {
        const std::string field = prefix + "." + name;
        const auto c = schema.covariates.find(name);
        if (!c) throw RequestError(400, "unknown covariate '" + name + "'", field);
        const std::string level = level_text(value, field);
        if (!schema.covariates[*c].find_level(level))
            throw RequestError(400, "unknown level '" + level + "' for covariate '" + name + "'", field);
        out.emplace_back(name, level);
    }
    return out;
}

DesignSpec design_from(const json& j, const Schema& schema, const std::string& field, bool allow_zero) {
    if (!j.is_object()) throw RequestError(400, "design must be an object", field);
    DesignSpec d;
    try {
        const long long n = j.value("cadavers", 1LL);
        if (n < (allow_zero ? 0 : 1)) throw RequestError(400, "cadavers must be at least 1", field + ".cadavers");
        d.num_cadavers = static_cast<std::size_t>(n);
        if (!j.contains("day")) throw RequestError(400, "design needs a day", field + ".day");
        d.observation_day = j.at("day").get<double>();
        if (!(d.observation_day >= 0.0) || !std::isfinite(d.observation_day))
            throw RequestError(400, "day must be a nonnegative number", field + ".day");
        d.label = j.value("label", std::string{});
        const json cov = j.value("covariates", json::object());
        if (cov.is_array()) {
            if (cov.size() != d.num_cadavers)
                throw RequestError(400, "per-cadaver covariates must list every cadaver", field + ".covariates");
            for (std::size_t i = 0; i < cov.size(); ++i)
                d.assignments.push_back(design_levels(
                    schema, covariate_pairs(cov[i], schema, field + ".covariates[" + std::to_string(i) + "]")));
        } else {
            d.assignments.push_back(design_levels(schema, covariate_pairs(cov, schema, field + ".covariates")));
        }
    } catch (const json::exception& e) {
        throw RequestError(400, std::string("invalid design: ") + e.what(), field);
    }
    return d;
}

std::vector<DesignSpec> designs_from(const json& doc, const Schema& schema) {
    std::vector<DesignSpec> out;
    const json* list = nullptr;
    if (doc.is_array())
        list = &doc;
    else if (doc.contains("designs"))
        list = &doc["designs"];
    if (list) {
        if (!list->is_array()) throw RequestError(400, "designs must be a list", "designs");
        for (std::size_t i = 0; i < list->size(); ++i)
            out.push_back(design_from((*list)[i], schema, "designs[" + std::to_string(i) + "]", false));
    } else if (doc.contains("grid")) {
        const json& g = doc["grid"];
        if (!g.is_object() || !g.contains("days") || !g["days"].is_array())
            throw RequestError(400, "grid needs a list of days", "grid.days");
        json conditions = json::array();
        if (g.contains("conditions"))
            conditions = g["conditions"];
        else
            conditions.push_back({{"covariates", g.value("covariates", json::object())}, {"label", g.value("label", "")}});
        if (!conditions.is_array()) throw RequestError(400, "conditions must be a list", "grid.conditions");
        for (std::size_t c = 0; c < conditions.size(); ++c) {
            for (const json& day : g["days"]) {
                json one = conditions[c];
                one["day"] = day;
                one["cadavers"] = g.value("cadavers", 1LL);
                out.push_back(design_from(one, schema, "grid.conditions[" + std::to_string(c) + "]", false));
            }
        }
    } else {
        throw RequestError(400, "request needs \"designs\" or \"grid\"", "designs");
    }
    if (out.empty()) throw RequestError(400, "no designs given", "designs");
    return out;
}

std::vector<std::string> target_names(const json& doc) {
    if (!doc.contains("target")) throw RequestError(400, "missing target", "target");
    const json& t = doc["target"];
    std::vector<std::string> names;
    if (t.is_string())
        names.push_back(t.get<std::string>());
    else if (t.is_array())
        for (const json& x : t) {
            if (!x.is_string()) throw RequestError(400, "target names must be strings", "target");
            names.push_back(x.get<std::string>());
        }
    else
        throw RequestError(400, "target must be a name or a list of names", "target");
    if (names.empty()) throw RequestError(400, "empty target", "target");
    return names;
}

json interval_json(const PmiInterval& iv) {
    return {{"mass", iv.mass}, {"lo_tau", iv.lo_tau}, {"hi_tau", iv.hi_tau}, {"lo_days", iv.lo_days}, {"hi_days", iv.hi_days}};
}

json design_json(const DesignSpec& d, const Schema& schema) {
    auto levels = [&](const std::vector<std::uint16_t>& a) {
        json o = json::object();
        for (std::size_t c = 0; c < a.size(); ++c)
            if (a[c] != schema.covariates[c].reference) o[schema.covariates[c].name] = schema.covariates[c].levels[a[c]];
        return o;
    };
    json cov;
    if (d.assignments.size() == 1) {
        cov = levels(d.assignments[0]);
    } else {
        cov = json::array();
        for (const auto& a : d.assignments) cov.push_back(levels(a));
    }
    return {{"label", d.label}, {"cadavers", d.num_cadavers}, {"day", d.observation_day}, {"covariates", cov}};
}

Response error_response(int status, const std::string& message, const std::string& field = {}) {
    json e{{"error", message}};
    if (!field.empty()) e["field"] = field;
    return {status, e.dump()};
}

template <class F>
Response guarded(F&& f) {
    try {
        return f();
    } catch (const RequestError& e) {
        return error_response(e.status(), e.what(), e.field());
    } catch (const BudgetError& e) {
        return error_response(413, e.what());
    } catch (const DiagnosticsError& e) {
        return error_response(422, e.what());
    } catch (const NumericalError& e) {
        return error_response(422, e.what());
    } catch (const ValidationError& e) {
        return error_response(400, e.what());
    } catch (const ParseError& e) {
        return error_response(400, e.what());
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }
}

}  // namespace

// ---- shared helpers ---------------------------------------------------------

CaseRecord case_from_json(std::string_view body, const Schema& schema) {
    const json doc = parse_body(body);
    if (!doc.is_object()) throw RequestError(400, "request body must be an object");
    CaseRecord rec;
    rec.case_id = doc.value("case_id", std::string{});
    if (doc.contains("covariates"))
        for (auto& [name, level] : covariate_pairs(doc["covariates"], schema, "covariates"))
            rec.covariate_levels[name] = level;
    if (doc.contains("observations")) {
        const json& obs = doc["observations"];
        if (!obs.is_object()) throw RequestError(400, "observations must be an object", "observations");
        for (const auto& [name, value] : obs.items()) {
            const std::string field = "observations." + name;
            if (!schema.characteristics.find(name)) throw RequestError(400, "unknown characteristic '" + name + "'", field);
            if (value.is_null()) continue;
            if (value.is_boolean())
                rec.decomposition[name] = value.get<bool>();
            else if (value.is_number_integer() && (value.get<long long>() == 0 || value.get<long long>() == 1))
                rec.decomposition[name] = value.get<long long>() == 1;
            else
                throw RequestError(400, "observation must be true, false, 0, 1 or null", field);
        }
    }
    return rec;
}

std::string predict_pmi_json(const ModelBundle& bundle, const CaseRecord& record, const PredictOptions& options) {
    CaseRecord rec = record;
    rec.pmi_days.reset();
    const CaseDesign design = encode_case(rec, bundle.schema);
    const PmiPosterior post = pmi_posterior(design, bundle.layout, bundle.samples.draws, bundle.pmi_prior, options.grid);
    const PmiSummary s = summarize(post, 0.9);
    json doc;
    if (!record.case_id.empty()) doc["case_id"] = record.case_id;
    doc["model_version"] = bundle.version;
    doc["num_observed"] = design.num_observed();
    doc["draws_used"] = options.grid.max_draws == 0 ? bundle.samples.num_draws()
                                                    : std::min(bundle.samples.num_draws(), options.grid.max_draws);
    doc["mean_days"] = s.mean_days;
    doc["mean_tau"] = s.mean_tau;
    doc["median_tau"] = s.median_tau;
    doc["median_days"] = s.median_days;
    json ivs = json::array();
    for (double m : options.interval_masses) ivs.push_back(interval_json(credible_interval(post, m)));
    doc["intervals"] = ivs;
    doc["tau_grid"] = post.tau_grid();
    doc["density"] = post.density();
    return doc.dump();
}

std::vector<std::size_t> resolve_targets(const std::vector<std::string>& names, const ParameterLayout& layout) {
    std::vector<std::size_t> out;
    for (const std::string& n : names) {
        const auto i = layout.find(n);
        if (!i) throw RequestError(400, "unknown effect '" + n + "'", "target");
        if (std::find(out.begin(), out.end(), *i) != out.end()) throw RequestError(400, "effect '" + n + "' repeated", "target");
        out.push_back(*i);
    }
    return out;
}

std::vector<DesignSpec> designs_from_json(std::string_view text, const Schema& schema) {
    return designs_from(parse_body(text), schema);
}

EigRequest eig_request_from_json(std::string_view body, const ModelBundle& bundle) {
    const json doc = parse_body(body);
    if (!doc.is_object()) throw RequestError(400, "request body must be an object");
    EigRequest req;
    req.target = target_names(doc);
    resolve_targets(req.target, bundle.layout);
    req.designs = designs_from(doc, bundle.schema);
    try {
        const std::string est = doc.value("estimator", std::string("auto"));
        if (est != "auto") {
            try {
                req.estimator = parse_estimator(est);
            } catch (const ValidationError& e) {
                throw RequestError(400, e.what(), "estimator");
            }
        }
        const json budget = doc.value("budget", json::object());
        auto get = [&](const char* key, std::size_t def) -> std::size_t {
            const json& src = budget.contains(key) ? budget : doc;
            if (!src.contains(key)) return def;
            const long long v = src.at(key).get<long long>();
            if (v < 2) throw RequestError(400, std::string(key) + " must be at least 2", std::string("budget.") + key);
            return static_cast<std::size_t>(v);
        };
        req.budget.n = get("n", req.budget.n);
        req.budget.m = get("m", req.budget.m);
        req.budget.m_prime = get("m_prime", req.budget.m_prime);
        req.budget.seed = doc.value("seed", req.budget.seed);
        req.budget.include_offset = doc.value("include_offset", true);
    } catch (const json::exception& e) {
        throw RequestError(400, std::string("invalid EIG request: ") + e.what());
    }
    return req;
}

std::string scan_to_json(const ScanResult& scan, const std::vector<std::string>& target, const Schema& schema,
                         const std::string& version) {
    json rows = json::array();
    for (const ScanRow& r : scan.rows) {
        json row = design_json(r.design, schema);
        row["estimator"] = to_string(r.estimate.estimator);
        row["eig"] = r.estimate.value;
        row["mc_standard_error"] = r.estimate.mc_standard_error;
        row["eig_per_cadaver"] = r.eig_per_cadaver;
        row["se_per_cadaver"] = r.se_per_cadaver;
        row["n"] = r.estimate.n;
        row["m"] = r.estimate.m;
        row["m_prime"] = r.estimate.m_prime;
        row["outcomes"] = r.estimate.outcomes;
        rows.push_back(row);
    }
    json doc{{"model_version", version}, {"target", target}, {"rows", rows}, {"best", scan.best}};
    return doc.dump();
}

std::string scan_to_csv(const ScanResult& scan, const Schema& schema) {
    std::ostringstream out;
    csv::write_row(out, {"label", "cadavers", "day", "covariates", "estimator", "eig", "mc_standard_error",
                         "eig_per_cadaver", "se_per_cadaver", "best"});
    for (std::size_t i = 0; i < scan.rows.size(); ++i) {
        const ScanRow& r = scan.rows[i];
        csv::write_row(out, {r.design.label, std::to_string(r.design.num_cadavers),
                             csv::format_double(r.design.observation_day),
                             design_json(r.design, schema)["covariates"].dump(), to_string(r.estimate.estimator),
                             csv::format_double(r.estimate.value), csv::format_double(r.estimate.mc_standard_error),
                             csv::format_double(r.eig_per_cadaver), csv::format_double(r.se_per_cadaver),
                             i == scan.best ? "1" : "0"});
    }
    return out.str();
}

std::string effects_to_json(const EffectsTable& table) {
    json labels = json::array();
    for (double p : table.probabilities) labels.push_back(quantile_label(p));
    json rows = json::array();
    for (const EffectRow& r : table.rows)
        rows.push_back({{"name", r.name},
                        {"kind", r.kind},
                        {"characteristic", r.characteristic},
                        {"covariate", r.covariate},
                        {"level", r.level},
                        {"mean", r.mean},
                        {"sd", r.sd},
                        {"quantiles", r.quantiles}});
    return json{{"quantiles", table.probabilities}, {"labels", labels}, {"rows", rows}}.dump();
}

std::vector<double> parse_quantile_list(std::string_view text) {
    std::vector<double> out;
    if (csv::trim(text).empty()) return kDefaultQuantiles;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = std::min(text.find(',', start), text.size());
        const std::string item = csv::trim(text.substr(start, end - start));
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size() || !(v > 0.0 && v < 1.0))
            throw RequestError(400, "invalid quantile '" + item + "'", "quantiles");
        out.push_back(v);
        start = end + 1;
    }
    return out;
}

std::string before_after_to_json(const BeforeAfter& result) {
    json effects = json::array();
    for (const EffectDensity& e : result.effects)
        effects.push_back({{"name", e.name},
                           {"mean", e.mean},
                           {"before_variance", e.before_variance},
                           {"after_variance", e.after_variance},
                           {"variance_ratio", e.before_variance > 0.0 ? e.after_variance / e.before_variance : 1.0},
                           {"grid", e.grid},
                           {"before", e.before},
                           {"after", e.after}});
    return json{{"refit", result.refit}, {"effects", effects}}.dump();
}

// ---- service -------------------------------------------------------------------

void Service::load(std::shared_ptr<const ModelBundle> bundle) {
    if (bundle) require_passing(bundle->samples);
    std::lock_guard lock(mutex_);
    bundle_ = std::move(bundle);
    contexts_.clear();
}

std::shared_ptr<const ModelBundle> Service::bundle() const {
    std::lock_guard lock(mutex_);
    return bundle_;
}

std::shared_ptr<const EigContext> Service::context(const std::shared_ptr<const ModelBundle>& bundle,
                                                   const std::vector<std::size_t>& theta) const {
    std::vector<std::size_t> key = theta;
    {
        std::lock_guard lock(mutex_);
        if (bundle == bundle_) {
            auto it = contexts_.find(key);
            if (it != contexts_.end()) return it->second;
        }
    }
    struct Holder {
        std::shared_ptr<const ModelBundle> bundle;
        EigContext ctx;
    };
    auto holder = std::make_shared<Holder>(Holder{bundle, EigContext(bundle->layout, bundle->samples.draws, theta)});
    std::shared_ptr<const EigContext> ctx(holder, &holder->ctx);
    std::lock_guard lock(mutex_);
    if (bundle == bundle_) contexts_.emplace(std::move(key), ctx);
    return ctx;
}

Response Service::health() const {
    const auto b = bundle();
    json doc{{"status", "ok"}, {"model_loaded", b != nullptr}};
    if (b) {
        doc["model_version"] = b->version;
        doc["variant"] = std::string(to_string(b->mask.variant()));
    }
    return {200, doc.dump()};
}

Response Service::schema() const {
    return guarded([&]() -> Response {
        const auto b = bundle();
        if (!b) return error_response(503, "no model loaded");
        json doc;
        doc["model_version"] = b->version;
        doc["variant"] = std::string(to_string(b->mask.variant()));
        doc["schema"] = json::parse(schema_to_json(b->schema));
        json mask = json::array();
        for (std::size_t d = 0; d < b->schema.characteristics.size(); ++d) {
            json allowed = json::array();
            for (std::size_t c = 0; c < b->schema.covariates.size(); ++c)
                if (b->mask.allowed(d, c)) allowed.push_back(b->schema.covariates[c].name);
            mask.push_back({{"characteristic", b->schema.characteristics[d]}, {"covariates", allowed}});
        }
        doc["mask"] = mask;
        doc["parameters"] = b->layout.names();
        doc["pmi_prior"] = {{"mean", b->pmi_prior.mean}, {"sd", b->pmi_prior.sd}};
        doc["limits"] = {{"max_n", limits_.max_n}, {"max_m", limits_.max_m}, {"max_designs", limits_.max_designs}};
        return {200, doc.dump()};
    });
}

Response Service::effects(std::string_view quantiles) const {
    return guarded([&]() -> Response {
        const auto b = bundle();
        if (!b) return error_response(503, "no model loaded");
        const std::vector<double> q = parse_quantile_list(quantiles);
        return {200, effects_to_json(export_effects(b->samples, b->layout, b->schema, q))};
    });
}

Response Service::predict_pmi(std::string_view body) const {
    return guarded([&]() -> Response {
        const auto b = bundle();
        if (!b) return error_response(503, "no model loaded");
        const CaseRecord rec = case_from_json(body, b->schema);
        return {200, predict_pmi_json(*b, rec)};
    });
}

Response Service::eig(std::string_view body) const {
    return guarded([&]() -> Response {
        const auto b = bundle();
        if (!b) return error_response(503, "no model loaded");
        const EigRequest req = eig_request_from_json(body, *b);
        if (req.budget.n > limits_.max_n) throw RequestError(413, "n exceeds the server cap", "budget.n");
        if (req.budget.m > limits_.max_m) throw RequestError(413, "m exceeds the server cap", "budget.m");
        if (req.budget.m_prime > limits_.max_m) throw RequestError(413, "m_prime exceeds the server cap", "budget.m_prime");
        if (req.designs.size() > limits_.max_designs) throw RequestError(413, "too many designs", "designs");
        const auto ctx = context(b, resolve_targets(req.target, b->layout));
        const ScanResult scan = design_scan(*ctx, req.designs, req.budget, req.estimator);
        return {200, scan_to_json(scan, req.target, b->schema, b->version)};
    });
}

Response Service::before_after(std::string_view body) const {
    return guarded([&]() -> Response {
        const auto b = bundle();
        if (!b) return error_response(503, "no model loaded");
        const json doc = parse_body(body);
        if (!doc.is_object()) throw RequestError(400, "request body must be an object");
        const auto theta = resolve_targets(target_names(doc), b->layout);
        if (!doc.contains("design")) throw RequestError(400, "missing design", "design");
        const DesignSpec design = design_from(doc["design"], b->schema, "design", true);
        SamplerConfig cfg = b->sampler;
        std::size_t grid_points = 201;
        try {
            const json s = doc.value("sampler", json::object());
            cfg.num_chains = s.value("chains", cfg.num_chains);
            cfg.warmup_iterations = s.value("warmup", cfg.warmup_iterations);
            cfg.samples_per_chain = s.value("samples", cfg.samples_per_chain);
            cfg.seed = s.value("seed", cfg.seed);
            grid_points = doc.value("grid_points", grid_points);
        } catch (const json::exception& e) {
            throw RequestError(400, std::string("invalid sampler settings: ") + e.what(), "sampler");
        }
        cfg.validate();
        const auto iterations = static_cast<std::size_t>(cfg.num_chains) *
                                static_cast<std::size_t>(cfg.warmup_iterations + cfg.samples_per_chain);
        if (iterations > limits_.max_refit_iterations) throw RequestError(413, "refit exceeds the server cap", "sampler");
        if (grid_points < 2 || grid_points > 10001) throw RequestError(400, "grid_points out of range", "grid_points");
        if (design.num_cadavers > 0 && b->cases.empty())
            throw RequestError(400, "the loaded model has no training cases to refit on", "design");
        const Dataset data = design.num_cadavers > 0 ? to_dataset(b->cases, b->schema)
                                                     : Dataset(b->schema.covariates.size(), b->schema.characteristics.size());
        const BeforeAfter result = before_after_posterior(data, b->layout, b->samples, theta, design, cfg, grid_points);
        return {200, before_after_to_json(result)};
    });
}

// ---- HTTP --------------------------------------------------------------------

HttpServer::HttpServer(const Service& service) : server_(std::make_unique<httplib::Server>()) {
    auto reply = [](httplib::Response& res, const Response& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    server_->Get("/v1/health", [&service, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, service.health());
    });
    server_->Get("/v1/schema", [&service, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, service.schema());
    });
    server_->Get("/v1/effects", [&service, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.effects(req.has_param("quantiles") ? req.get_param_value("quantiles") : std::string{}));
    });
    server_->Post("/v1/predict-pmi", [&service, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.predict_pmi(req.body));
    });
    server_->Post("/v1/eig", [&service, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.eig(req.body));
    });
    server_->Post("/v1/before-after", [&service, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.before_after(req.body));
    });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int p = server_->bind_to_any_port(host);
        if (p < 0) throw Error("cannot bind " + host);
        return p;
    }
    if (!server_->bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::run() { server_->listen_after_bind(); }

void HttpServer::stop() { server_->stop(); }

}  // namespace decomp
