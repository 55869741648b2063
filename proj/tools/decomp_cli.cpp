// Batch entry points. Outputs go to files (or stdout when --out is
// omitted), logs go to stderr.
//
// Exit codes: 0 ok, 1 other failure, 2 bad input, 3 diagnostics failed,
// 4 over budget.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "decomp/bundle.hpp"
#include "decomp/data_io.hpp"
#include "decomp/eig.hpp"
#include "decomp/error.hpp"
#include "decomp/evaluation.hpp"
#include "decomp/service.hpp"

namespace {

using namespace decomp;

enum Exit { kOk = 0, kFailure = 1, kInput = 2, kDiagnostics = 3, kBudget = 4 };

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-")
        std::cout << text << (text.empty() || text.back() == '\n' ? "" : "\n");
    else
        write_text_file(path, text);
}

Schema schema_from(const std::string& path) { return path.empty() ? default_schema() : load_schema_file(path); }

std::vector<CaseRecord> load_cases(const std::string& path, const Schema& schema) {
    ParsedCases parsed = read_cases(path, schema);
    for (const IngestError& e : parsed.report.errors)
        std::cerr << "warning: " << path << " row " << e.row << (e.case_id.empty() ? "" : " (" + e.case_id + ")")
                  << ": " << e.message << "\n";
    std::cerr << "read " << parsed.report.accepted << " of " << parsed.report.rows << " cases from " << path << "\n";
    return std::move(parsed.records);
}

struct SamplerFlags {
    int chains = 4;
    int warmup = 1000;
    int samples = 1000;
    std::uint64_t seed = 1;
    std::string algorithm = "nuts";
    std::string metric = "dense";
    double target_accept = 0.8;
    int max_tree_depth = 10;

    void add(CLI::App* app) {
        app->add_option("--chains", chains, "Number of chains")->capture_default_str();
        app->add_option("--warmup", warmup, "Warmup iterations per chain")->capture_default_str();
        app->add_option("--samples", samples, "Kept draws per chain")->capture_default_str();
        app->add_option("--seed", seed, "Random seed")->capture_default_str();
        app->add_option("--algorithm", algorithm, "nuts or random_walk")
            ->check(CLI::IsMember({"nuts", "random_walk"}))
            ->capture_default_str();
        app->add_option("--metric", metric, "dense or diagonal")
            ->check(CLI::IsMember({"dense", "diagonal"}))
            ->capture_default_str();
        app->add_option("--target-accept", target_accept)->capture_default_str();
        app->add_option("--max-tree-depth", max_tree_depth)->capture_default_str();
    }

    SamplerConfig config() const {
        SamplerConfig c;
        c.num_chains = chains;
        c.warmup_iterations = warmup;
        c.samples_per_chain = samples;
        c.seed = seed;
        c.algorithm = algorithm == "nuts" ? Algorithm::nuts : Algorithm::random_walk;
        c.metric = metric == "dense" ? Metric::dense : Metric::diagonal;
        c.target_accept = target_accept;
        c.max_tree_depth = max_tree_depth;
        c.validate();
        return c;
    }
};

ModelBundle load_checked(const std::string& dir) {
    ModelBundle b = load_bundle(dir);
    require_passing(b.samples);
    return b;
}

void report_diagnostics(const PosteriorSamples& s) {
    std::fprintf(stderr, "diagnostics: max R-hat %.4f, min ESS %.1f, %s\n", s.diagnostics.max_rhat,
                 s.diagnostics.min_ess, s.diagnostics.passes ? "pass" : "FAIL");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian decomposition model: fit, PMI inference and experimental design"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Cap on worker threads (0 = OpenMP default)");

    // fit
    auto* fit = app.add_subcommand("fit", "Sample the coefficient posterior and write a model directory");
    std::string cases_path, out_path, variant = "strict", mask_path, schema_path;
    bool no_cases = false;
    SamplerFlags sflags;
    fit->add_option("--cases", cases_path, "Case table (CSV)")->required();
    fit->add_option("--variant", variant, "empty, strict or full")
        ->check(CLI::IsMember({"empty", "strict", "full"}))
        ->capture_default_str();
    fit->add_option("--mask", mask_path, "Strict mask table (defaults to the bundled one)");
    fit->add_option("--schema", schema_path, "Schema document (defaults to the bundled one)");
    fit->add_option("--out", out_path, "Output model directory")->required();
    fit->add_flag("--no-cases", no_cases, "Do not copy the training cases into the model directory");
    sflags.add(fit);

    // predict
    auto* predict = app.add_subcommand("predict", "PMI posterior for cases without a known PMI");
    std::string model_dir, case_path;
    std::size_t max_draws = 0;
    predict->add_option("--model", model_dir, "Model directory")->required();
    predict->add_option("--case", case_path, "Case table (CSV) or one case as JSON")->required();
    predict->add_option("--out", out_path, "Output JSON (default stdout)");
    predict->add_option("--max-draws", max_draws, "Thin to at most this many draws (0 = all)");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "k-fold cross-validation report");
    int k = 5;
    std::string auc_at = "true";
    std::size_t eval_draws = 200;
    evaluate->add_option("--cases", cases_path, "Case table (CSV)")->required();
    evaluate->add_option("--variant", variant)->check(CLI::IsMember({"empty", "strict", "full"}))->capture_default_str();
    evaluate->add_option("--mask", mask_path);
    evaluate->add_option("--schema", schema_path);
    evaluate->add_option("--k", k, "Number of folds")->capture_default_str();
    evaluate->add_option("--out", out_path, "Output directory for report.json and tables")->required();
    evaluate->add_option("--auc-at", auc_at, "Score characteristics at the true or predicted PMI")
        ->check(CLI::IsMember({"true", "predicted"}))
        ->capture_default_str();
    evaluate->add_option("--max-draws", eval_draws, "Draws used per held-out case")->capture_default_str();
    SamplerFlags eflags;
    eflags.add(evaluate);

    // eig-scan
    auto* scan = app.add_subcommand("eig-scan", "Expected information gain over a grid of designs");
    std::vector<std::string> targets;
    std::string designs_path, estimator = "auto", csv_path;
    EigBudget budget;
    scan->add_option("--model", model_dir)->required();
    scan->add_option("--target", targets, "Effect name(s), e.g. beta[Bloat|Vultures=present]")->required();
    scan->add_option("--designs", designs_path, "Design list or grid (JSON)")->required();
    scan->add_option("--estimator", estimator)
        ->check(CLI::IsMember({"auto", "naive", "low_variance"}))
        ->capture_default_str();
    scan->add_option("--n", budget.n)->capture_default_str();
    scan->add_option("--m", budget.m)->capture_default_str();
    scan->add_option("--m-prime", budget.m_prime)->capture_default_str();
    scan->add_option("--seed", budget.seed)->capture_default_str();
    scan->add_option("--out", out_path, "Output JSON (default stdout)");
    scan->add_option("--csv", csv_path, "Also write a plot-ready CSV table");

    // before-after
    auto* ba = app.add_subcommand("before-after", "Target posterior before and after a hypothetical experiment");
    std::string design_path;
    std::size_t grid_points = 201;
    ba->add_option("--model", model_dir)->required();
    ba->add_option("--target", targets)->required();
    ba->add_option("--design", design_path, "One design (JSON)")->required();
    ba->add_option("--grid-points", grid_points)->capture_default_str();
    ba->add_option("--out", out_path);
    SamplerFlags bflags;
    bflags.add(ba);

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Synthetic cases from known coefficients");
    std::string spec_path;
    std::optional<std::size_t> sim_n;
    std::optional<std::uint64_t> sim_seed;
    simulate->add_option("--spec", spec_path, "Synthetic spec (JSON)")->required();
    simulate->add_option("--n", sim_n, "Override the case count");
    simulate->add_option("--seed", sim_seed, "Override the seed");
    simulate->add_option("--schema", schema_path);
    simulate->add_option("--out", out_path, "Output case table (default stdout)");

    // export-effects
    auto* effects = app.add_subcommand("export-effects", "Posterior quantiles of every effect");
    std::string quantiles;
    effects->add_option("--model", model_dir)->required();
    effects->add_option("--quantiles", quantiles, "Comma-separated probabilities");
    effects->add_option("--out", out_path, "Output CSV (default stdout)");

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP JSON service");
    std::string host = "127.0.0.1";
    int port = 0;
    serve->add_option("--model", model_dir, "Model directory (or DECOMP_MODEL)");
    serve->add_option("--port", port, "Port (or DECOMP_PORT, default 8080)");
    serve->add_option("--host", host)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInput;
    }
    if (threads > 0) omp_set_num_threads(threads);

    try {
        if (*fit) {
            Schema schema = schema_from(schema_path);
            const Variant v = parse_variant(variant);
            InteractionMask mask = build_mask(v, schema, mask_path.empty() ? std::string{} : read_text_file(mask_path));
            std::vector<CaseRecord> cases = load_cases(cases_path, schema);
            std::vector<CaseRecord> with_pmi;
            for (auto& c : cases)
                if (c.pmi_days) with_pmi.push_back(std::move(c));
            if (with_pmi.empty()) throw ParseError("no cases with a PMI to fit");
            const SamplerConfig cfg = sflags.config();
            const ParameterLayout layout(schema, mask);
            std::cerr << "fitting " << layout.size() << " parameters on " << with_pmi.size() << " cases\n";
            PosteriorSamples post = sample_posterior(to_dataset(with_pmi, schema), layout, cfg);
            report_diagnostics(post);
            const bool passed = post.diagnostics.passes;
            ModelBundle bundle = make_bundle(std::move(schema), std::move(mask), std::move(post), cfg,
                                             no_cases ? std::vector<CaseRecord>{} : std::move(with_pmi));
            save_bundle(bundle, out_path);
            std::cerr << "wrote " << out_path << " (version " << bundle.version << ")\n";
            return passed ? kOk : kDiagnostics;
        }
        if (*predict) {
            const ModelBundle bundle = load_checked(model_dir);
            std::vector<CaseRecord> cases;
            if (std::filesystem::path(case_path).extension() == ".json")
                cases.push_back(case_from_json(read_text_file(case_path), bundle.schema));
            else
                cases = load_cases(case_path, bundle.schema);
            PredictOptions opts;
            opts.grid.max_draws = max_draws;
            std::string out = "[";
            for (std::size_t i = 0; i < cases.size(); ++i) {
                if (i) out += ",\n";
                out += predict_pmi_json(bundle, cases[i], opts);
            }
            out += "]\n";
            emit(out_path, out);
            return kOk;
        }
        if (*evaluate) {
            Schema schema = schema_from(schema_path);
            const InteractionMask mask =
                build_mask(parse_variant(variant), schema, mask_path.empty() ? std::string{} : read_text_file(mask_path));
            std::vector<CaseRecord> cases = load_cases(cases_path, schema);
            std::vector<std::string> ids;
            for (const auto& c : cases) {
                if (!c.pmi_days) throw ParseError("case '" + c.case_id + "' has no PMI");
                ids.push_back(c.case_id);
            }
            const SamplerConfig cfg = eflags.config();
            const FoldPlan plan = make_folds(ids, k, cfg.seed);
            CvOptions opts;
            opts.auc_at = auc_at == "true" ? AucConditioning::true_pmi : AucConditioning::predicted_pmi;
            opts.grid.max_draws = eval_draws;
            const EvalReport report = run_cv(cases, schema, mask, cfg, plan, opts);
            std::filesystem::create_directories(out_path);
            const std::filesystem::path root(out_path);
            write_text_file((root / "report.json").string(), report_to_json(report));
            write_text_file((root / "roc.csv").string(), roc_to_csv(report.roc));
            write_text_file((root / "calibration.csv").string(), calibration_to_csv(report.calibration));
            write_text_file((root / "predictions.csv").string(), predictions_to_csv(report.predictions));
            std::fprintf(stderr, "macro AUC %.4f [%.4f, %.4f], R^2 (log) %.4f [%.4f, %.4f]\n", report.macro_auc.mean,
                         report.macro_auc.lo, report.macro_auc.hi, report.r_squared.mean, report.r_squared.lo,
                         report.r_squared.hi);
            return kOk;
        }
        if (*scan) {
            const ModelBundle bundle = load_checked(model_dir);
            const std::vector<DesignSpec> designs = designs_from_json(read_text_file(designs_path), bundle.schema);
            const EigContext ctx(bundle.layout, bundle.samples.draws, resolve_targets(targets, bundle.layout));
            std::optional<EigEstimator> est;
            if (estimator != "auto") est = parse_estimator(estimator);
            const ScanResult result = design_scan(ctx, designs, budget, est);
            emit(out_path, scan_to_json(result, targets, bundle.schema, bundle.version));
            if (!csv_path.empty()) write_text_file(csv_path, scan_to_csv(result, bundle.schema));
            const ScanRow& best = result.rows[result.best];
            std::fprintf(stderr, "best design: day %g, %zu cadavers, EIG/cadaver %.5f\n", best.design.observation_day,
                         best.design.num_cadavers, best.eig_per_cadaver);
            return kOk;
        }
        if (*ba) {
            const ModelBundle bundle = load_checked(model_dir);
            std::string body = R"({"target":)" + nlohmann::json(targets).dump() + R"(,"design":)" +
                               read_text_file(design_path) + R"(,"grid_points":)" + std::to_string(grid_points) +
                               R"(,"sampler":{"chains":)" + std::to_string(bflags.chains) +
                               R"(,"warmup":)" + std::to_string(bflags.warmup) + R"(,"samples":)" +
                               std::to_string(bflags.samples) + R"(,"seed":)" + std::to_string(bflags.seed) + "}}";
            Service service(ServiceLimits{.max_refit_iterations = static_cast<std::size_t>(-1)});
            service.load(std::make_shared<const ModelBundle>(bundle));
            const Response r = service.before_after(body);
            if (r.status != 200) {
                std::cerr << "error: " << r.body << "\n";
                return r.status == 422 ? kDiagnostics : (r.status == 413 ? kBudget : kInput);
            }
            emit(out_path, r.body);
            return kOk;
        }
        if (*simulate) {
            const Schema schema = schema_from(schema_path);
            SyntheticRequest req = load_synthetic_spec(read_text_file(spec_path), schema);
            if (sim_n) req.spec.num_cases = *sim_n;
            if (sim_seed) req.seed = *sim_seed;
            const ParameterLayout layout(schema, build_mask(req.variant, schema));
            emit(out_path, write_cases(generate_synthetic(req.spec, schema, layout, req.seed), schema));
            std::cerr << "generated " << req.spec.num_cases << " cases\n";
            return kOk;
        }
        if (*effects) {
            const ModelBundle bundle = load_checked(model_dir);
            std::vector<double> q;
            try {
                q = parse_quantile_list(quantiles);
            } catch (const RequestError& e) {
                throw ValidationError(e.what());
            }
            emit(out_path, effects_to_csv(export_effects(bundle.samples, bundle.layout, bundle.schema, q)));
            return kOk;
        }
        if (*serve) {
            if (model_dir.empty())
                if (const char* env = std::getenv("DECOMP_MODEL")) model_dir = env;
            if (port == 0) {
                const char* env = std::getenv("DECOMP_PORT");
                port = env ? std::atoi(env) : 8080;
            }
            Service service;
            if (!model_dir.empty()) {
                service.load(std::make_shared<const ModelBundle>(load_checked(model_dir)));
                std::cerr << "loaded " << model_dir << "\n";
            } else {
                std::cerr << "no model loaded; model endpoints will answer 503\n";
            }
            HttpServer server(service);
            const int bound = server.bind(host, port);
            std::cerr << "listening on http://" << host << ":" << bound << "\n";
            server.run();
            return kOk;
        }
    } catch (const DiagnosticsError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDiagnostics;
    } catch (const BudgetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kBudget;
    } catch (const RequestError& e) {
        std::cerr << "error: " << e.what() << (e.field().empty() ? "" : " (" + e.field() + ")") << "\n";
        return e.status() == 413 ? kBudget : kInput;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInput;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
