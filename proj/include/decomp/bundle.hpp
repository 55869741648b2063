#pragma once

// A fitted model on disk: a directory holding schema.json, mask.csv,
// samples.csv (one draw per line), diagnostics.json, model.json and,
// optionally, the training cases in cases.csv.

#include <string>
#include <vector>

#include "decomp/model.hpp"
#include "decomp/pmi.hpp"
#include "decomp/sampler.hpp"
#include "decomp/schema.hpp"

namespace decomp {

struct ModelBundle {
    Schema schema;
    InteractionMask mask;
    ParameterLayout layout;
    PosteriorSamples samples;
    PriorSpec prior;
    PmiPrior pmi_prior;
    SamplerConfig sampler;
    std::vector<CaseRecord> cases;  // may be empty
    std::string version;            // content hash of the draws
};

ModelBundle make_bundle(Schema schema, InteractionMask mask, PosteriorSamples samples, SamplerConfig sampler,
                        std::vector<CaseRecord> cases = {}, PriorSpec prior = {}, PmiPrior pmi_prior = {});

void save_bundle(const ModelBundle& bundle, const std::string& dir);
ModelBundle load_bundle(const std::string& dir);

std::string samples_to_csv(const PosteriorSamples& samples);
// Rebuilds draws and chain layout; diagnostics are recomputed.
PosteriorSamples samples_from_csv(std::string_view text);
std::string diagnostics_to_json(const PosteriorSamples& samples);

}  // namespace decomp
