#include "decomp/bundle.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "decomp/csv.hpp"
#include "decomp/data_io.hpp"
#include "decomp/error.hpp"

namespace decomp {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fnv1a_hex(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

double to_double(const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError("samples: invalid number '" + s + "'");
    return v;
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

ModelBundle make_bundle(Schema schema, InteractionMask mask, PosteriorSamples samples, SamplerConfig sampler,
                        std::vector<CaseRecord> cases, PriorSpec prior, PmiPrior pmi_prior) {
    ModelBundle b;
    b.layout = ParameterLayout(schema, mask);
    if (samples.dim() != b.layout.size()) throw ValidationError("samples do not match the model layout");
    if (samples.names != b.layout.names()) throw ValidationError("sample columns do not match the parameter names");
    b.schema = std::move(schema);
    b.mask = std::move(mask);
    b.samples = std::move(samples);
    b.sampler = sampler;
    b.cases = std::move(cases);
    b.prior = prior;
    b.pmi_prior = pmi_prior;
    b.version = fnv1a_hex(samples_to_csv(b.samples));
    return b;
}

std::string samples_to_csv(const PosteriorSamples& s) {
    std::ostringstream out;
    csv::Row header{"chain", "draw"};
    header.insert(header.end(), s.names.begin(), s.names.end());
    csv::write_row(out, header);
    csv::Row row;
    for (int c = 0; c < s.num_chains; ++c) {
        for (int i = 0; i < s.draws_per_chain; ++i) {
            row.assign({std::to_string(c), std::to_string(i)});
            const auto r = static_cast<Eigen::Index>(c) * s.draws_per_chain + i;
            for (Eigen::Index j = 0; j < s.draws.cols(); ++j) row.push_back(csv::format_double(s.draws(r, j)));
            csv::write_row(out, row);
        }
    }
    return out.str();
}

PosteriorSamples samples_from_csv(std::string_view text) {
    const auto rows = csv::parse(text);
    if (rows.empty()) throw ParseError("samples: empty file");
    const auto& header = rows[0];
    if (header.size() < 3 || header[0] != "chain" || header[1] != "draw")
        throw ParseError("samples: header must start with chain,draw");
    PosteriorSamples s;
    s.names.assign(header.begin() + 2, header.end());
    const std::size_t P = s.names.size();
    const std::size_t n = rows.size() - 1;
    s.draws.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(P));
    int max_chain = -1;
    std::vector<int> per_chain;
    for (std::size_t r = 0; r < n; ++r) {
        const auto& row = rows[r + 1];
        if (row.size() != P + 2) throw ParseError("samples: row " + std::to_string(r + 1) + " has the wrong width");
        const int chain = static_cast<int>(to_double(row[0]));
        const int draw = static_cast<int>(to_double(row[1]));
        if (chain != max_chain && chain != max_chain + 1) throw ParseError("samples: chains must be contiguous");
        if (chain == max_chain + 1) {
            per_chain.push_back(0);
            max_chain = chain;
        }
        if (draw != per_chain.back()) throw ParseError("samples: draws must be numbered from 0 within a chain");
        ++per_chain.back();
        for (std::size_t j = 0; j < P; ++j)
            s.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = to_double(row[j + 2]);
    }
    if (per_chain.empty()) throw ParseError("samples: no draws");
    for (int c : per_chain)
        if (c != per_chain[0]) throw ParseError("samples: chains have different lengths");
    s.num_chains = static_cast<int>(per_chain.size());
    s.draws_per_chain = per_chain[0];
    if (s.num_chains >= 2) s.diagnostics = compute_diagnostics(s.draws, s.num_chains, s.draws_per_chain);
    return s;
}

std::string diagnostics_to_json(const PosteriorSamples& s) {
    json doc;
    const Diagnostics& d = s.diagnostics;
    doc["passes"] = d.passes;
    doc["degenerate"] = d.degenerate;
    doc["max_rhat"] = nullable(d.max_rhat);
    doc["min_ess"] = nullable(d.min_ess);
    doc["thresholds"] = {{"max_rhat", DiagnosticThresholds{}.max_rhat}, {"min_ess", DiagnosticThresholds{}.min_ess}};
    doc["num_chains"] = s.num_chains;
    doc["draws_per_chain"] = s.draws_per_chain;
    json params = json::array();
    for (std::size_t i = 0; i < s.names.size(); ++i) {
        params.push_back({{"name", s.names[i]},
                          {"rhat", i < d.rhat.size() ? nullable(d.rhat[i]) : json(nullptr)},
                          {"ess", i < d.ess.size() ? nullable(d.ess[i]) : json(nullptr)}});
    }
    doc["parameters"] = params;
    json chains = json::array();
    for (const ChainStats& c : s.chain_stats)
        chains.push_back({{"step_size", c.step_size},
                          {"mean_accept", c.mean_accept},
                          {"divergences", c.divergences},
                          {"mean_tree_depth", c.mean_tree_depth},
                          {"gradient_evaluations", c.gradient_evaluations}});
    doc["chains"] = chains;
    return doc.dump(2);
}

void save_bundle(const ModelBundle& b, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create '" + dir + "': " + ec.message());
    const fs::path root(dir);
    write_text_file((root / "schema.json").string(), schema_to_json(b.schema));
    write_text_file((root / "mask.csv").string(), mask_to_csv(b.mask, b.schema));
    write_text_file((root / "samples.csv").string(), samples_to_csv(b.samples));
    write_text_file((root / "diagnostics.json").string(), diagnostics_to_json(b.samples));
    json model;
    model["format"] = 1;
    model["version"] = b.version;
    model["variant"] = std::string(to_string(b.mask.variant()));
    model["num_parameters"] = b.layout.size();
    model["prior"] = {{"gamma_mean", b.prior.gamma_mean}, {"gamma_sd", b.prior.gamma_sd},
                      {"beta0_mean", b.prior.beta0_mean}, {"beta0_sd", b.prior.beta0_sd},
                      {"beta_mean", b.prior.beta_mean},   {"beta_sd", b.prior.beta_sd}};
    model["pmi_prior"] = {{"mean", b.pmi_prior.mean}, {"sd", b.pmi_prior.sd}};
    model["sampler"] = {{"algorithm", b.sampler.algorithm == Algorithm::nuts ? "nuts" : "random_walk"},
                        {"metric", b.sampler.metric == Metric::dense ? "dense" : "diagonal"},
                        {"chains", b.sampler.num_chains},
                        {"warmup", b.sampler.warmup_iterations},
                        {"samples", b.sampler.samples_per_chain},
                        {"seed", b.sampler.seed},
                        {"target_accept", b.sampler.target_accept},
                        {"max_tree_depth", b.sampler.max_tree_depth}};
    model["num_cases"] = b.cases.size();
    write_text_file((root / "model.json").string(), model.dump(2));
    const fs::path cases = root / "cases.csv";
    if (!b.cases.empty())
        write_text_file(cases.string(), write_cases(b.cases, b.schema));
    else
        fs::remove(cases, ec);
}

ModelBundle load_bundle(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw ParseError("model directory '" + dir + "' does not exist");
    Schema schema = load_schema(read_text_file((root / "schema.json").string()));
    json model;
    try {
        model = json::parse(read_text_file((root / "model.json").string()));
    } catch (const json::exception& e) {
        throw ParseError(std::string("model.json: ") + e.what());
    }
    ModelBundle b;
    try {
        const Variant variant = parse_variant(model.at("variant").get<std::string>());
        InteractionMask mask = parse_mask_table(read_text_file((root / "mask.csv").string()), schema, variant);
        PosteriorSamples samples = samples_from_csv(read_text_file((root / "samples.csv").string()));
        SamplerConfig sampler;
        if (model.contains("sampler")) {
            const json& s = model["sampler"];
            sampler.algorithm = s.value("algorithm", std::string("nuts")) == "nuts" ? Algorithm::nuts : Algorithm::random_walk;
            sampler.metric = s.value("metric", std::string("dense")) == "dense" ? Metric::dense : Metric::diagonal;
            sampler.num_chains = s.value("chains", sampler.num_chains);
            sampler.warmup_iterations = s.value("warmup", sampler.warmup_iterations);
            sampler.samples_per_chain = s.value("samples", sampler.samples_per_chain);
            sampler.seed = s.value("seed", sampler.seed);
            sampler.target_accept = s.value("target_accept", sampler.target_accept);
            sampler.max_tree_depth = s.value("max_tree_depth", sampler.max_tree_depth);
        }
        PriorSpec prior;
        if (model.contains("prior")) {
            const json& p = model["prior"];
            prior.gamma_mean = p.value("gamma_mean", prior.gamma_mean);
            prior.gamma_sd = p.value("gamma_sd", prior.gamma_sd);
            prior.beta0_mean = p.value("beta0_mean", prior.beta0_mean);
            prior.beta0_sd = p.value("beta0_sd", prior.beta0_sd);
            prior.beta_mean = p.value("beta_mean", prior.beta_mean);
            prior.beta_sd = p.value("beta_sd", prior.beta_sd);
        }
        PmiPrior pmi;
        if (model.contains("pmi_prior")) {
            pmi.mean = model["pmi_prior"].value("mean", pmi.mean);
            pmi.sd = model["pmi_prior"].value("sd", pmi.sd);
        }
        std::vector<CaseRecord> cases;
        const fs::path cases_path = root / "cases.csv";
        if (fs::exists(cases_path)) {
            ParsedCases parsed = read_cases(cases_path.string(), schema);
            if (!parsed.report.errors.empty())
                throw ParseError("cases.csv: " + parsed.report.errors.front().message);
            cases = std::move(parsed.records);
        }
        b = make_bundle(std::move(schema), std::move(mask), std::move(samples), sampler, std::move(cases), prior, pmi);
    } catch (const json::exception& e) {
        throw ParseError(std::string("model.json: ") + e.what());
    }
    if (model.contains("version") && model["version"].get<std::string>() != b.version)
        throw ParseError("samples.csv does not match the version recorded in model.json");
    return b;
}

}  // namespace decomp
