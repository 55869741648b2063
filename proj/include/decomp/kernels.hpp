#pragma once

// Hot loops, each in two flavours: a plain serial reference used as the
// test oracle, and an OpenMP version whose reductions run in a fixed block
// order so results do not depend on the thread count.

#include <cstddef>
#include <cstdint>
#include <span>

#include "decomp/model.hpp"

namespace decomp::kernels {

// Cases per reduction block in the parallel likelihood.
inline constexpr std::size_t kCaseBlock = 256;

double log_lik_grad_serial(const ParameterLayout& layout, const Dataset& data,
                           std::span<const double> params, std::span<double> grad);
double log_lik_grad_parallel(const ParameterLayout& layout, const Dataset& data,
                             std::span<const double> params, std::span<double> grad);

// Log-likelihood of one case's observed characteristics at every tau in the
// grid, for every draw. draws is row-major (num_draws x layout.size());
// out is row-major (num_draws x tau_grid.size()) and is overwritten.
struct GridCase {
    std::span<const std::uint16_t> levels;
    std::span<const double> values;
    std::span<const std::uint8_t> observed;
};

void case_loglik_grid_serial(const ParameterLayout& layout, std::span<const double> draws,
                             std::size_t num_draws, const GridCase& c,
                             std::span<const double> tau_grid, std::span<double> out);
void case_loglik_grid_parallel(const ParameterLayout& layout, std::span<const double> draws,
                               std::size_t num_draws, const GridCase& c,
                               std::span<const double> tau_grid, std::span<double> out);

}  // namespace decomp::kernels
