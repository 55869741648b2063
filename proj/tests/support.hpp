#pragma once

// Shared fixtures for the test binaries.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "decomp/bundle.hpp"
#include "decomp/data_io.hpp"
#include "decomp/model.hpp"
#include "decomp/random.hpp"
#include "decomp/sampler.hpp"
#include "decomp/schema.hpp"

namespace decomp::testing {

inline std::vector<CaseRecord> synthetic_cases(const Schema& schema, const ParameterLayout& layout,
                                               std::size_t n, std::uint64_t seed, double missing = 0.0,
                                               std::vector<double> coefficients = {}) {
    SyntheticSpec spec;
    spec.coefficients = coefficients.empty() ? demo_coefficients(layout, schema) : std::move(coefficients);
    spec.num_cases = n;
    spec.missing_rate = missing;
    return generate_synthetic(spec, schema, layout, seed);
}

// Stand-in posterior: iid normal draws around `center`. Diagnostics are
// computed for real, so the result passes the gates.
inline PosteriorSamples fake_posterior(const ParameterLayout& layout, const std::vector<double>& center,
                                       double sd, int chains = 4, int per_chain = 250, std::uint64_t seed = 3) {
    PosteriorSamples s;
    s.names = layout.names();
    s.num_chains = chains;
    s.draws_per_chain = per_chain;
    s.draws.resize(chains * per_chain, static_cast<Eigen::Index>(layout.size()));
    Rng rng = make_rng(seed);
    for (Eigen::Index r = 0; r < s.draws.rows(); ++r)
        for (Eigen::Index c = 0; c < s.draws.cols(); ++c)
            s.draws(r, c) = center[static_cast<std::size_t>(c)] + sd * standard_normal(rng);
    s.chain_stats.resize(static_cast<std::size_t>(chains));
    s.diagnostics = diagnostics(s);
    return s;
}

inline std::shared_ptr<ModelBundle> fake_bundle(Variant variant = Variant::strict, double sd = 0.1) {
    Schema schema = default_schema();
    InteractionMask mask = build_mask(variant, schema);
    ParameterLayout layout(schema, mask);
    auto center = demo_coefficients(layout, schema);
    auto samples = fake_posterior(layout, center, sd);
    return std::make_shared<ModelBundle>(make_bundle(schema, mask, samples, SamplerConfig{}));
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace decomp::testing
