#include "decomp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace decomp::kernels {

namespace {

// Per-case rate coefficients need the term list; the inner loop is kept
// free of the bounds-checked helpers used by the reference path.
inline double accumulate_case(const ParameterLayout& layout, const Dataset& data, std::size_t n,
                              std::span<const double> params, double* grad) {
    const std::size_t D = layout.num_characteristics();
    const double tau = data.tau(n);
    const auto levels = data.levels(n);
    const auto values = data.values(n);
    const auto observed = data.observed(n);
    double total = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
        if (!observed[d]) continue;
        const auto terms = layout.terms(d);
        double rate = params[layout.beta0_index(d)];
        for (const auto& term : terms) {
            const auto idx = term.index_of(levels[term.covariate]);
            if (idx >= 0) rate += params[static_cast<std::size_t>(idx)];
        }
        const double z = params[d] + tau * rate;
        const double y = values[d];
        const double e = std::exp(-std::abs(z));
        const double l1 = std::log1p(e);
        total += y * (-std::max(-z, 0.0) - l1) + (1.0 - y) * (-std::max(z, 0.0) - l1);
        const double p = z >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
        const double r = y - p;
        const double rt = r * tau;
        grad[d] += r;
        grad[layout.beta0_index(d)] += rt;
        for (const auto& term : terms) {
            const auto idx = term.index_of(levels[term.covariate]);
            if (idx >= 0) grad[idx] += rt;
        }
    }
    return total;
}

}  // namespace

double log_lik_grad_parallel(const ParameterLayout& layout, const Dataset& data,
                             std::span<const double> params, std::span<double> grad) {
    const std::size_t P = layout.size();
    const std::size_t N = data.size();
    const std::size_t num_blocks = (N + kCaseBlock - 1) / kCaseBlock;
    std::fill(grad.begin(), grad.end(), 0.0);
    if (num_blocks == 0) return 0.0;

    std::vector<double> block_value(num_blocks, 0.0);
    std::vector<double> block_grad(num_blocks * P, 0.0);

#pragma omp parallel for schedule(static) if (num_blocks > 1)
    for (std::size_t b = 0; b < num_blocks; ++b) {
        double* g = block_grad.data() + b * P;
        const std::size_t end = std::min(N, (b + 1) * kCaseBlock);
        double v = 0.0;
        for (std::size_t n = b * kCaseBlock; n < end; ++n) v += accumulate_case(layout, data, n, params, g);
        block_value[b] = v;
    }

    double total = 0.0;
    for (std::size_t b = 0; b < num_blocks; ++b) {
        total += block_value[b];
        const double* g = block_grad.data() + b * P;
        for (std::size_t i = 0; i < P; ++i) grad[i] += g[i];
    }
    return total;
}

void case_loglik_grid_parallel(const ParameterLayout& layout, std::span<const double> draws,
                               std::size_t num_draws, const GridCase& c,
                               std::span<const double> tau_grid, std::span<double> out) {
    const std::size_t P = layout.size();
    const std::size_t G = tau_grid.size();
    const std::size_t D = layout.num_characteristics();
    std::vector<std::size_t> active;
    for (std::size_t d = 0; d < D; ++d)
        if (c.observed[d]) active.push_back(d);

#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < num_draws; ++i) {
        const auto params = draws.subspan(i * P, P);
        double* row = out.data() + i * G;
        std::fill(row, row + G, 0.0);
        for (std::size_t d : active) {
            const double gamma = params[d];
            const double rate = total_rate(layout, params, c.levels, d);
            const double y = c.values[d];
            for (std::size_t g = 0; g < G; ++g) {
                const double z = gamma + tau_grid[g] * rate;
                const double l1 = std::log1p(std::exp(-std::abs(z)));
                row[g] += y * (-std::max(-z, 0.0) - l1) + (1.0 - y) * (-std::max(z, 0.0) - l1);
            }
        }
    }
}

}  // namespace decomp::kernels
