#include "decomp/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace decomp::kernels {

double log_lik_grad_serial(const ParameterLayout& layout, const Dataset& data,
                           std::span<const double> params, std::span<double> grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const std::size_t D = layout.num_characteristics();
    double total = 0.0;
    for (std::size_t n = 0; n < data.size(); ++n) {
        const double tau = data.tau(n);
        const auto levels = data.levels(n);
        const auto values = data.values(n);
        const auto observed = data.observed(n);
        for (std::size_t d = 0; d < D; ++d) {
            if (!observed[d]) continue;
            double rate = params[layout.beta0_index(d)];
            for (const auto& term : layout.terms(d)) {
                const auto idx = term.index_of(levels[term.covariate]);
                if (idx >= 0) rate += params[static_cast<std::size_t>(idx)];
            }
            const double z = params[layout.gamma_index(d)] + tau * rate;
            const double y = values[d];
            total += bernoulli_log_lik(y, z);
            const double r = y - sigmoid(z);
            grad[layout.gamma_index(d)] += r;
            grad[layout.beta0_index(d)] += r * tau;
            for (const auto& term : layout.terms(d)) {
                const auto idx = term.index_of(levels[term.covariate]);
                if (idx >= 0) grad[static_cast<std::size_t>(idx)] += r * tau;
            }
        }
    }
    return total;
}

void case_loglik_grid_serial(const ParameterLayout& layout, std::span<const double> draws,
                             std::size_t num_draws, const GridCase& c,
                             std::span<const double> tau_grid, std::span<double> out) {
    const std::size_t P = layout.size();
    const std::size_t G = tau_grid.size();
    const std::size_t D = layout.num_characteristics();
    for (std::size_t i = 0; i < num_draws; ++i) {
        const auto params = draws.subspan(i * P, P);
        double* row = out.data() + i * G;
        std::fill(row, row + G, 0.0);
        for (std::size_t d = 0; d < D; ++d) {
            if (!c.observed[d]) continue;
            const double gamma = params[layout.gamma_index(d)];
            const double rate = total_rate(layout, params, c.levels, d);
            const double y = c.values[d];
            for (std::size_t g = 0; g < G; ++g)
                row[g] += bernoulli_log_lik(y, gamma + tau_grid[g] * rate);
        }
    }
}

}  // namespace decomp::kernels
