#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "decomp/model.hpp"
#include "decomp/sampler.hpp"

namespace decomp {

// Normal prior on tau = log(1 + t), truncated to the grid.
struct PmiPrior {
    double mean = 2.33;
    double sd = 1.53;

    double log_density(double tau) const;
};

struct PmiGridConfig {
    std::size_t points = 1001;
    // Grid spans [0, mean + upper_sds * sd].
    double upper_sds = 5.0;
    // Use at most this many draws, evenly thinned; 0 keeps every draw.
    std::size_t max_draws = 0;
    // Largest tolerated relative gap between trapezoid and Simpson
    // normalizers of any per-draw posterior.
    double resolution_tolerance = 1e-3;
};

std::vector<double> make_tau_grid(const PmiPrior& prior, const PmiGridConfig& config);

class PmiPosterior {
public:
    PmiPosterior() = default;
    // Normalizes density with the trapezoid rule and builds the CDF table.
    PmiPosterior(std::vector<double> tau_grid, std::vector<double> density);

    const std::vector<double>& tau_grid() const noexcept { return tau_; }
    const std::vector<double>& density() const noexcept { return density_; }
    const std::vector<double>& cdf() const noexcept { return cdf_; }

    double quantile(double p) const;  // on tau
    double mean_tau() const;
    double mean_days() const;         // E[exp(tau) - 1]
    double integral() const;

private:
    std::vector<double> tau_;
    std::vector<double> density_;
    std::vector<double> cdf_;
};

struct PmiInterval {
    double mass = 0.0;
    double lo_tau = 0.0;
    double hi_tau = 0.0;
    double lo_days = 0.0;
    double hi_days = 0.0;
};

struct PmiSummary {
    double mean_days = 0.0;
    double mean_tau = 0.0;
    double median_tau = 0.0;
    double median_days = 0.0;
    PmiInterval interval;
};

// Equal-tailed interval holding `mass` of the posterior.
PmiInterval credible_interval(const PmiPosterior& posterior, double mass);
PmiSummary summarize(const PmiPosterior& posterior, double mass = 0.9);

// PMI posterior of one case: per-draw normalized posteriors on the tau grid,
// averaged over coefficient draws. The case's own PMI is ignored.
PmiPosterior pmi_posterior(const CaseDesign& design, const ParameterLayout& layout,
                           const DrawMatrix& draws, const PmiPrior& prior = {},
                           const PmiGridConfig& config = {}, Execution exec = Execution::parallel);

}  // namespace decomp
