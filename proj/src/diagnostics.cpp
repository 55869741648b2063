#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "decomp/error.hpp"
#include "decomp/sampler.hpp"

namespace decomp {

namespace {

double mean_of(const std::vector<double>& x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(const std::vector<double>& x) {
    const double m = mean_of(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

// Biased autocovariance at a single lag.
double autocovariance(const std::vector<double>& x, double mean, std::size_t lag) {
    const std::size_t n = x.size();
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - mean) * (x[i + lag] - mean);
    return s / static_cast<double>(n);
}

}  // namespace

double split_rhat(std::span<const std::vector<double>> chains) {
    std::vector<std::vector<double>> halves;
    for (const auto& c : chains) {
        const std::size_t half = c.size() / 2;
        if (half < 2) throw ValidationError("diagnostics: chains are too short to split");
        halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
        halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
    }
    const double n = static_cast<double>(halves.front().size());
    const double m = static_cast<double>(halves.size());
    std::vector<double> means, vars;
    for (const auto& h : halves) {
        means.push_back(mean_of(h));
        vars.push_back(sample_variance(h));
    }
    const double w = mean_of(vars);
    if (!(w > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const double grand = mean_of(means);
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    b *= n / (m - 1.0);
    const double var_plus = (n - 1.0) / n * w + b / n;
    return std::sqrt(var_plus / w);
}

double effective_sample_size(std::span<const std::vector<double>> chains) {
    const std::size_t m = chains.size();
    const std::size_t n = chains.front().size();
    for (const auto& c : chains)
        if (c.size() != n) throw ValidationError("diagnostics: chains must have equal length");
    if (n < 4) throw ValidationError("diagnostics: chains are too short");

    std::vector<double> chain_mean(m), chain_var(m);
    for (std::size_t j = 0; j < m; ++j) {
        chain_mean[j] = mean_of(chains[j]);
        chain_var[j] = sample_variance(chains[j]);
    }
    const double mean_var = mean_of(chain_var);
    double var_plus = mean_var * (static_cast<double>(n) - 1.0) / static_cast<double>(n);
    if (m > 1) var_plus += sample_variance(chain_mean);
    if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

    auto rho_at = [&](std::size_t lag) {
        double acov = 0.0;
        for (std::size_t j = 0; j < m; ++j) acov += autocovariance(chains[j], chain_mean[j], lag);
        acov /= static_cast<double>(m);
        return 1.0 - (mean_var - acov) / var_plus;
    };

    // Geyer's initial positive sequence on pairs, then monotone smoothing.
    std::vector<double> rho(n, 0.0);
    rho[0] = 1.0;
    double rho_even = 1.0;
    double rho_odd = rho_at(1);
    rho[1] = rho_odd;
    std::size_t t = 1;
    while (t < n - 5 && rho_even + rho_odd > 0.0) {
        rho_even = rho_at(t + 1);
        rho_odd = rho_at(t + 2);
        if (rho_even + rho_odd >= 0.0) {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    const std::size_t max_t = t;
    if (rho_even > 0.0 && max_t + 1 < n) rho[max_t + 1] = rho_even;
    for (t = 1; t + 2 <= max_t; t += 2) {
        if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
    }
    const double total = static_cast<double>(m * n);
    double tau = -1.0;
    for (std::size_t k = 0; k <= max_t && k < n; ++k) tau += 2.0 * rho[k];
    if (max_t + 1 < n) tau += rho[max_t + 1];
    tau = std::max(tau, 1.0 / std::log10(total));
    return total / tau;
}

Diagnostics compute_diagnostics(const DrawMatrix& draws, int num_chains, int draws_per_chain,
                                const DiagnosticThresholds& thresholds) {
    if (num_chains < 2) throw ValidationError("diagnostics: at least two chains are required");
    if (draws.rows() != static_cast<Eigen::Index>(num_chains) * draws_per_chain)
        throw ValidationError("diagnostics: draw count does not match chain layout");
    Diagnostics out;
    const auto P = static_cast<std::size_t>(draws.cols());
    out.rhat.resize(P);
    out.ess.resize(P);
    out.max_rhat = 0.0;
    out.min_ess = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> chains(static_cast<std::size_t>(num_chains));
    for (std::size_t i = 0; i < P; ++i) {
        for (int c = 0; c < num_chains; ++c) {
            auto& v = chains[static_cast<std::size_t>(c)];
            v.resize(static_cast<std::size_t>(draws_per_chain));
            for (int k = 0; k < draws_per_chain; ++k)
                v[static_cast<std::size_t>(k)] =
                    draws(static_cast<Eigen::Index>(c) * draws_per_chain + k, static_cast<Eigen::Index>(i));
        }
        out.rhat[i] = split_rhat(chains);
        out.ess[i] = effective_sample_size(chains);
        if (std::isnan(out.rhat[i]) || std::isnan(out.ess[i])) {
            out.degenerate = true;
            continue;
        }
        out.max_rhat = std::max(out.max_rhat, out.rhat[i]);
        out.min_ess = std::min(out.min_ess, out.ess[i]);
    }
    if (P == 0) out.min_ess = 0.0;
    out.passes = !out.degenerate && out.max_rhat < thresholds.max_rhat && out.min_ess > thresholds.min_ess;
    return out;
}

Diagnostics diagnostics(const PosteriorSamples& samples, const DiagnosticThresholds& thresholds) {
    return compute_diagnostics(samples.draws, samples.num_chains, samples.draws_per_chain, thresholds);
}

void require_passing(const PosteriorSamples& samples) {
    const auto& d = samples.diagnostics;
    if (d.passes) return;
    throw DiagnosticsError("posterior samples fail convergence diagnostics (max R-hat " +
                           std::to_string(d.max_rhat) + ", min ESS " + std::to_string(d.min_ess) +
                           (d.degenerate ? ", degenerate parameters" : "") + ")");
}

}  // namespace decomp
