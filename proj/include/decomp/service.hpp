#pragma once

// JSON API over a loaded model bundle. Handlers are plain functions of the
// request so they can be exercised without a socket; HttpServer binds them
// to routes.
//
//   GET  /v1/health
//   GET  /v1/schema
//   GET  /v1/effects?quantiles=0.025,0.5,...
//   POST /v1/predict-pmi
//   POST /v1/eig
//   POST /v1/before-after

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "decomp/bundle.hpp"
#include "decomp/data_io.hpp"
#include "decomp/eig.hpp"
#include "decomp/error.hpp"

namespace httplib {
class Server;
}

namespace decomp {

// Request-level error carrying an HTTP status and the offending field.
class RequestError : public Error {
public:
    RequestError(int status, std::string message, std::string field = {})
        : Error(std::move(message)), status_(status), field_(std::move(field)) {}
    int status() const noexcept { return status_; }
    const std::string& field() const noexcept { return field_; }

private:
    int status_;
    std::string field_;
};

struct ServiceLimits {
    std::size_t max_n = 20000;
    std::size_t max_m = 10000;  // applies to M and M'
    std::size_t max_designs = 256;
    std::size_t max_refit_iterations = 200000;  // chains * (warmup + samples)
};

// ---- shared with the CLI ------------------------------------------------

struct PredictOptions {
    PmiGridConfig grid;
    std::vector<double> interval_masses{0.5, 0.9};
};

// {"case_id"?, "covariates": {name: level}, "observations": {name: 0|1|true|false|null}}
CaseRecord case_from_json(std::string_view body, const Schema& schema);
std::string predict_pmi_json(const ModelBundle& bundle, const CaseRecord& record, const PredictOptions& options = {});

struct EigRequest {
    std::vector<std::string> target;
    std::vector<DesignSpec> designs;
    std::optional<EigEstimator> estimator;  // unset: low-variance when enumerable
    EigBudget budget;
};

// Target names resolve against the layout; designs come either as a
// "designs" list or as a "grid" with a shared covariate setting and a list
// of days (optionally several "conditions").
EigRequest eig_request_from_json(std::string_view body, const ModelBundle& bundle);
std::vector<DesignSpec> designs_from_json(std::string_view text, const Schema& schema);
std::vector<std::size_t> resolve_targets(const std::vector<std::string>& names, const ParameterLayout& layout);
std::string scan_to_json(const ScanResult& scan, const std::vector<std::string>& target,
                         const Schema& schema, const std::string& version);
std::string scan_to_csv(const ScanResult& scan, const Schema& schema);

std::string effects_to_json(const EffectsTable& table);
std::vector<double> parse_quantile_list(std::string_view text);

std::string before_after_to_json(const BeforeAfter& result);

// ---- service -------------------------------------------------------------

struct Response {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

class Service {
public:
    explicit Service(ServiceLimits limits = {}) : limits_(limits) {}

    // Swaps in a new bundle; in-flight requests keep the old one. Throws
    // DiagnosticsError for samples that fail the convergence gates.
    void load(std::shared_ptr<const ModelBundle> bundle);
    std::shared_ptr<const ModelBundle> bundle() const;
    const ServiceLimits& limits() const noexcept { return limits_; }

    Response health() const;
    Response schema() const;
    Response effects(std::string_view quantiles) const;
    Response predict_pmi(std::string_view body) const;
    Response eig(std::string_view body) const;
    Response before_after(std::string_view body) const;

private:
    std::shared_ptr<const EigContext> context(const std::shared_ptr<const ModelBundle>& bundle,
                                              const std::vector<std::size_t>& theta) const;

    ServiceLimits limits_;
    mutable std::mutex mutex_;
    std::shared_ptr<const ModelBundle> bundle_;
    // Normal approximations keyed by target set, valid for bundle_ only.
    mutable std::map<std::vector<std::size_t>, std::shared_ptr<const EigContext>> contexts_;
};

class HttpServer {
public:
    explicit HttpServer(const Service& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    void run();  // blocks until stop()
    void stop();

private:
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace decomp
