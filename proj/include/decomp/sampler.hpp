#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "decomp/model.hpp"

namespace decomp {

using DrawMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Algorithm { nuts, random_walk };
enum class Metric { diagonal, dense };

struct SamplerConfig {
    int num_chains = 4;
    int warmup_iterations = 1000;
    int samples_per_chain = 1000;
    std::uint64_t seed = 1;
    Algorithm algorithm = Algorithm::nuts;
    Metric metric = Metric::dense;
    double target_accept = 0.8;
    int max_tree_depth = 10;
    double init_jitter = 0.1;
    // 0 lets OpenMP decide how many chains run concurrently.
    int threads = 0;
    // sample_posterior only: run one sampler per characteristic block
    // (exact, since the posterior factorizes) instead of a joint sampler.
    bool blockwise = true;

    void validate() const;
};

struct DiagnosticThresholds {
    double max_rhat = 1.05;
    double min_ess = 100.0;
};

struct Diagnostics {
    std::vector<double> rhat;  // NaN where the parameter has zero variance
    std::vector<double> ess;
    double max_rhat = 0.0;
    double min_ess = 0.0;
    bool degenerate = false;
    bool passes = false;
};

struct ChainStats {
    double step_size = 0.0;
    double mean_accept = 0.0;
    std::size_t divergences = 0;
    double mean_tree_depth = 0.0;
    std::size_t gradient_evaluations = 0;
};

struct PosteriorSamples {
    std::vector<std::string> names;
    int num_chains = 0;
    int draws_per_chain = 0;
    // Row chain * draws_per_chain + iteration holds one draw.
    DrawMatrix draws;
    std::vector<ChainStats> chain_stats;
    Diagnostics diagnostics;

    std::size_t num_draws() const noexcept { return static_cast<std::size_t>(draws.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(draws.cols()); }
    std::span<const double> draw(std::size_t i) const {
        return {draws.data() + i * dim(), dim()};
    }
};

// Log density with gradient; grad is overwritten.
using LogDensityFn = std::function<double(std::span<const double>, std::span<double>)>;

struct GradientTarget {
    std::size_t dim = 0;
    LogDensityFn log_density;
    std::vector<double> init_mean;
};

PosteriorSamples run_sampler(const GradientTarget& target, const SamplerConfig& config,
                             std::vector<std::string> names = {});

// Samples the coefficient posterior of the decomposition model.
PosteriorSamples sample_posterior(const Dataset& data, const ParameterLayout& layout,
                                  const SamplerConfig& config, const PriorSpec& prior = {});

// Split-R-hat and bulk effective sample size per parameter.
Diagnostics compute_diagnostics(const DrawMatrix& draws, int num_chains, int draws_per_chain,
                                const DiagnosticThresholds& thresholds = {});
Diagnostics diagnostics(const PosteriorSamples& samples, const DiagnosticThresholds& thresholds = {});

double split_rhat(std::span<const std::vector<double>> chains);
double effective_sample_size(std::span<const std::vector<double>> chains);

// Throws DiagnosticsError unless the stored diagnostics pass.
void require_passing(const PosteriorSamples& samples);

}  // namespace decomp
