#include "decomp/pmi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "decomp/error.hpp"
#include "decomp/kernels.hpp"

namespace decomp {

double PmiPrior::log_density(double tau) const {
    const double z = (tau - mean) / sd;
    return -0.5 * z * z;
}

std::vector<double> make_tau_grid(const PmiPrior& prior, const PmiGridConfig& config) {
    if (!(prior.sd > 0.0)) throw ValidationError("pmi: prior sd must be positive");
    if (config.points < 3) throw ValidationError("pmi: grid needs at least 3 points");
    const double upper = prior.mean + config.upper_sds * prior.sd;
    if (!(upper > 0.0)) throw ValidationError("pmi: grid upper bound must be positive");
    std::vector<double> grid(config.points);
    const double step = upper / static_cast<double>(config.points - 1);
    for (std::size_t g = 0; g < config.points; ++g) grid[g] = step * static_cast<double>(g);
    grid.back() = upper;
    return grid;
}

namespace {

double trapezoid(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return s;
}

// Composite Simpson on a uniform grid with an odd point count.
double simpson(double h, std::span<const double> y) {
    double s = y.front() + y.back();
    for (std::size_t i = 1; i + 1 < y.size(); ++i) s += (i % 2 ? 4.0 : 2.0) * y[i];
    return s * h / 3.0;
}

}  // namespace

PmiPosterior::PmiPosterior(std::vector<double> tau_grid, std::vector<double> density)
    : tau_(std::move(tau_grid)), density_(std::move(density)) {
    if (tau_.size() != density_.size() || tau_.size() < 2)
        throw ValidationError("pmi: grid and density sizes differ");
    const double z = trapezoid(tau_, density_);
    if (!(z > 0.0) || !std::isfinite(z)) throw NumericalError("pmi: posterior cannot be normalized");
    for (double& v : density_) v /= z;
    cdf_.assign(tau_.size(), 0.0);
    for (std::size_t i = 1; i < tau_.size(); ++i)
        cdf_[i] = cdf_[i - 1] + 0.5 * (tau_[i] - tau_[i - 1]) * (density_[i] + density_[i - 1]);
    const double total = cdf_.back();
    for (double& c : cdf_) c /= total;
}

double PmiPosterior::integral() const { return trapezoid(tau_, density_); }

double PmiPosterior::quantile(double p) const {
    p = std::clamp(p, 0.0, 1.0);
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), p);
    if (it == cdf_.begin()) return tau_.front();
    if (it == cdf_.end()) return tau_.back();
    const std::size_t i = static_cast<std::size_t>(it - cdf_.begin());
    const double c0 = cdf_[i - 1], c1 = cdf_[i];
    const double w = c1 > c0 ? (p - c0) / (c1 - c0) : 0.0;
    return tau_[i - 1] + w * (tau_[i] - tau_[i - 1]);
}

double PmiPosterior::mean_tau() const {
    std::vector<double> f(tau_.size());
    for (std::size_t i = 0; i < tau_.size(); ++i) f[i] = tau_[i] * density_[i];
    return trapezoid(tau_, f);
}

double PmiPosterior::mean_days() const {
    std::vector<double> f(tau_.size());
    for (std::size_t i = 0; i < tau_.size(); ++i) f[i] = std::expm1(tau_[i]) * density_[i];
    return trapezoid(tau_, f);
}

PmiInterval credible_interval(const PmiPosterior& posterior, double mass) {
    if (!(mass >= 0.0 && mass < 1.0 + 1e-12)) throw ValidationError("pmi: interval mass must be in [0, 1]");
    PmiInterval out;
    out.mass = mass;
    out.lo_tau = posterior.quantile(0.5 - 0.5 * mass);
    out.hi_tau = posterior.quantile(0.5 + 0.5 * mass);
    out.lo_days = std::expm1(out.lo_tau);
    out.hi_days = std::expm1(out.hi_tau);
    return out;
}

PmiSummary summarize(const PmiPosterior& posterior, double mass) {
    PmiSummary s;
    s.mean_days = posterior.mean_days();
    s.mean_tau = posterior.mean_tau();
    s.median_tau = posterior.quantile(0.5);
    s.median_days = std::expm1(s.median_tau);
    s.interval = credible_interval(posterior, mass);
    return s;
}

PmiPosterior pmi_posterior(const CaseDesign& design, const ParameterLayout& layout, const DrawMatrix& draws,
                           const PmiPrior& prior, const PmiGridConfig& config, Execution exec) {
    if (static_cast<std::size_t>(draws.cols()) != layout.size())
        throw ValidationError("pmi: draws do not match the parameter layout");
    if (draws.rows() == 0) throw ValidationError("pmi: no coefficient draws");
    const std::vector<double> grid = make_tau_grid(prior, config);
    const std::size_t G = grid.size();

    // Evenly thinned draw subset.
    const std::size_t total = static_cast<std::size_t>(draws.rows());
    const std::size_t L = config.max_draws == 0 ? total : std::min(total, config.max_draws);
    DrawMatrix used;
    const DrawMatrix* src = &draws;
    if (L < total) {
        used.resize(static_cast<Eigen::Index>(L), draws.cols());
        for (std::size_t i = 0; i < L; ++i)
            used.row(static_cast<Eigen::Index>(i)) = draws.row(static_cast<Eigen::Index>(i * total / L));
        src = &used;
    }

    std::vector<double> loglik(L * G);
    kernels::GridCase c{design.levels, design.values, design.observed};
    std::span<const double> flat(src->data(), L * layout.size());
    if (exec == Execution::serial_reference)
        kernels::case_loglik_grid_serial(layout, flat, L, c, grid, loglik);
    else
        kernels::case_loglik_grid_parallel(layout, flat, L, c, grid, loglik);

    std::vector<double> log_prior(G);
    for (std::size_t g = 0; g < G; ++g) log_prior[g] = prior.log_density(grid[g]);
    const double h = grid[1] - grid[0];
    const bool check_resolution = G % 2 == 1;

    std::vector<double> mixture(G, 0.0);
    std::vector<double> row(G);
    for (std::size_t i = 0; i < L; ++i) {
        const double* ll = loglik.data() + i * G;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < G; ++g) {
            if (!std::isfinite(ll[g])) throw NumericalError("pmi: non-finite likelihood");
            peak = std::max(peak, ll[g] + log_prior[g]);
        }
        for (std::size_t g = 0; g < G; ++g) row[g] = std::exp(ll[g] + log_prior[g] - peak);
        const double z = trapezoid(grid, row);
        if (check_resolution) {
            const double zs = simpson(h, row);
            if (std::abs(z - zs) > config.resolution_tolerance * z)
                throw NumericalError("pmi: tau grid too coarse for this case");
        }
        for (std::size_t g = 0; g < G; ++g) mixture[g] += row[g] / z;
    }
    for (double& v : mixture) v /= static_cast<double>(L);
    return PmiPosterior(grid, std::move(mixture));
}

}  // namespace decomp
