// Serial reference vs OpenMP kernels on a synthetic strict-variant dataset.

#include <benchmark/benchmark.h>

#include "decomp/data_io.hpp"
#include "decomp/kernels.hpp"
#include "decomp/pmi.hpp"
#include "decomp/schema.hpp"

namespace {

using namespace decomp;

struct Fixture {
    Schema schema = default_schema();
    InteractionMask mask = build_mask(Variant::strict, schema);
    ParameterLayout layout{schema, mask};
    std::vector<double> coef = demo_coefficients(layout, schema);
    Dataset data;
    std::vector<double> draws;
    std::size_t num_draws = 200;
    std::vector<double> grid;
    CaseDesign probe;

    explicit Fixture(std::size_t cases) {
        SyntheticSpec spec;
        spec.coefficients = coef;
        spec.num_cases = cases;
        data = to_dataset(generate_synthetic(spec, schema, layout, 3), schema);
        draws.reserve(num_draws * layout.size());
        for (std::size_t i = 0; i < num_draws; ++i)
            for (std::size_t j = 0; j < layout.size(); ++j) draws.push_back(coef[j] + 0.01 * static_cast<double>(i % 7));
        grid = make_tau_grid(PmiPrior{}, PmiGridConfig{});
        probe = data.case_at(0);
    }

};

Fixture& fixture(std::size_t cases) {
    static Fixture small(2529);
    static Fixture large(20000);
    return cases <= 2529 ? small : large;
}

template <bool Parallel>
void BM_LogLikGrad(benchmark::State& state) {
    Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
    std::vector<double> grad(f.layout.size());
    for (auto _ : state) {
        const double v = Parallel ? kernels::log_lik_grad_parallel(f.layout, f.data, f.coef, grad)
                                  : kernels::log_lik_grad_serial(f.layout, f.data, f.coef, grad);
        benchmark::DoNotOptimize(v);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.data.size()));
}

template <bool Parallel>
void BM_CaseGrid(benchmark::State& state) {
    Fixture& f = fixture(2529);
    std::vector<double> out(f.num_draws * f.grid.size());
    kernels::GridCase c{f.probe.levels, f.probe.values, f.probe.observed};
    for (auto _ : state) {
        if (Parallel)
            kernels::case_loglik_grid_parallel(f.layout, f.draws, f.num_draws, c, f.grid, out);
        else
            kernels::case_loglik_grid_serial(f.layout, f.draws, f.num_draws, c, f.grid, out);
        benchmark::DoNotOptimize(out.data());
    }
}

}  // namespace

BENCHMARK(BM_LogLikGrad<false>)->Name("log_lik_grad/serial")->Arg(2529)->Arg(20000);
BENCHMARK(BM_LogLikGrad<true>)->Name("log_lik_grad/parallel")->Arg(2529)->Arg(20000);
BENCHMARK(BM_CaseGrid<false>)->Name("case_loglik_grid/serial");
BENCHMARK(BM_CaseGrid<true>)->Name("case_loglik_grid/parallel");

BENCHMARK_MAIN();
