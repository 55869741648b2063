#include "decomp/model.hpp"

#include <algorithm>

#include "decomp/error.hpp"
#include "decomp/kernels.hpp"

namespace decomp {

ParameterLayout::ParameterLayout(const Schema& schema, const InteractionMask& mask)
    : num_characteristics_(schema.characteristics.size()), num_covariates_(schema.covariates.size()) {
    if (mask.num_characteristics() != num_characteristics_ || mask.num_covariates() != num_covariates_)
        throw ValidationError("layout: mask shape does not match schema");
    const std::size_t D = num_characteristics_;
    for (std::size_t d = 0; d < D; ++d) {
        ParameterInfo p;
        p.kind = ParameterKind::gamma;
        p.characteristic = d;
        p.name = "gamma[" + schema.characteristics[d] + "]";
        info_.push_back(p);
    }
    for (std::size_t d = 0; d < D; ++d) {
        ParameterInfo p;
        p.kind = ParameterKind::beta0;
        p.characteristic = d;
        p.name = "beta0[" + schema.characteristics[d] + "]";
        info_.push_back(p);
    }
    term_offsets_.push_back(0);
    for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t c = 0; c < num_covariates_; ++c) {
            if (!mask.allowed(d, c)) continue;
            const auto& cov = schema.covariates[c];
            EffectTerm term;
            term.covariate = static_cast<std::uint32_t>(c);
            term.reference = static_cast<std::uint32_t>(cov.reference);
            term.first_index = static_cast<std::uint32_t>(info_.size());
            terms_.push_back(term);
            for (std::size_t l = 0; l < cov.num_levels(); ++l) {
                if (l == cov.reference) continue;
                ParameterInfo p;
                p.kind = ParameterKind::beta;
                p.characteristic = d;
                p.covariate = c;
                p.level = l;
                p.name = "beta[" + schema.characteristics[d] + "|" + cov.name + "=" + cov.levels[l] + "]";
                info_.push_back(p);
            }
        }
        term_offsets_.push_back(terms_.size());
    }
    names_.reserve(info_.size());
    for (const auto& p : info_) names_.push_back(p.name);
}

std::optional<std::size_t> ParameterLayout::beta_index(std::size_t d, std::size_t c, std::size_t level) const {
    for (const auto& term : terms(d)) {
        if (term.covariate != c) continue;
        const auto idx = term.index_of(static_cast<std::uint32_t>(level));
        if (idx < 0) return std::nullopt;
        return static_cast<std::size_t>(idx);
    }
    return std::nullopt;
}

std::optional<std::size_t> ParameterLayout::find(std::string_view name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
}

std::vector<std::size_t> ParameterLayout::parameters_of(std::size_t d) const {
    std::vector<std::size_t> out{gamma_index(d), beta0_index(d)};
    for (std::size_t i = 2 * num_characteristics_; i < info_.size(); ++i)
        if (info_[i].characteristic == d) out.push_back(i);
    return out;
}

std::vector<double> ParameterLayout::prior_means(const PriorSpec& prior) const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) {
        switch (info_[i].kind) {
            case ParameterKind::gamma: out[i] = prior.gamma_mean; break;
            case ParameterKind::beta0: out[i] = prior.beta0_mean; break;
            case ParameterKind::beta: out[i] = prior.beta_mean; break;
        }
    }
    return out;
}

std::vector<double> ParameterLayout::prior_sds(const PriorSpec& prior) const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) {
        switch (info_[i].kind) {
            case ParameterKind::gamma: out[i] = prior.gamma_sd; break;
            case ParameterKind::beta0: out[i] = prior.beta0_sd; break;
            case ParameterKind::beta: out[i] = prior.beta_sd; break;
        }
    }
    return out;
}

Dataset Dataset::from_cases(std::span<const CaseDesign> cases, std::size_t num_covariates,
                            std::size_t num_characteristics) {
    Dataset out(num_covariates, num_characteristics);
    for (const auto& c : cases) out.add(c);
    return out;
}

void Dataset::add(const CaseDesign& design) {
    if (!design.has_pmi) throw ValidationError("dataset: every training case needs a PMI");
    if (design.levels.size() != num_covariates_ || design.values.size() != num_characteristics_ ||
        design.observed.size() != num_characteristics_)
        throw ValidationError("dataset: case shape does not match dataset");
    if (!(design.log1p_pmi >= 0.0)) throw ValidationError("dataset: log1p_pmi must be nonnegative");
    tau_.push_back(design.log1p_pmi);
    levels_.insert(levels_.end(), design.levels.begin(), design.levels.end());
    values_.insert(values_.end(), design.values.begin(), design.values.end());
    observed_.insert(observed_.end(), design.observed.begin(), design.observed.end());
}

CaseDesign Dataset::case_at(std::size_t n) const {
    CaseDesign c;
    c.has_pmi = true;
    c.log1p_pmi = tau_[n];
    auto lv = levels(n);
    auto vv = values(n);
    auto ov = observed(n);
    c.levels.assign(lv.begin(), lv.end());
    c.values.assign(vv.begin(), vv.end());
    c.observed.assign(ov.begin(), ov.end());
    return c;
}

double total_rate(const ParameterLayout& layout, std::span<const double> params,
                  std::span<const std::uint16_t> levels, std::size_t d) {
    double rate = params[layout.beta0_index(d)];
    for (const auto& term : layout.terms(d)) {
        const auto idx = term.index_of(levels[term.covariate]);
        if (idx >= 0) rate += params[static_cast<std::size_t>(idx)];
    }
    return rate;
}

double char_log_odds(const ParameterLayout& layout, std::span<const double> params,
                     std::span<const std::uint16_t> levels, double tau, std::size_t d) {
    return params[layout.gamma_index(d)] + tau * total_rate(layout, params, levels, d);
}

double char_log_odds(const ParameterLayout& layout, std::span<const double> params,
                     const CaseDesign& design, std::size_t d) {
    return char_log_odds(layout, params, design.levels, design.log1p_pmi, d);
}

double case_log_lik(const ParameterLayout& layout, std::span<const double> params,
                    const CaseDesign& design) {
    double total = 0.0;
    for (std::size_t d = 0; d < layout.num_characteristics(); ++d) {
        if (!design.observed[d]) continue;
        total += bernoulli_log_lik(design.values[d], char_log_odds(layout, params, design, d));
    }
    return total;
}

double log_prior(const ParameterLayout& layout, std::span<const double> params,
                 std::span<double> grad, const PriorSpec& prior) {
    constexpr double kLogSqrt2Pi = 0.91893853320467274178;
    double total = 0.0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        double mean = prior.beta_mean, sd = prior.beta_sd;
        switch (layout.info(i).kind) {
            case ParameterKind::gamma: mean = prior.gamma_mean; sd = prior.gamma_sd; break;
            case ParameterKind::beta0: mean = prior.beta0_mean; sd = prior.beta0_sd; break;
            case ParameterKind::beta: break;
        }
        const double z = (params[i] - mean) / sd;
        total += -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
        if (!grad.empty()) grad[i] += -z / sd;
    }
    return total;
}

double log_likelihood_and_grad(const ParameterLayout& layout, const Dataset& data,
                               std::span<const double> params, std::span<double> grad,
                               Execution exec) {
    if (params.size() != layout.size() || grad.size() != layout.size())
        throw ValidationError("log_likelihood_and_grad: parameter vector has the wrong size");
    return exec == Execution::serial_reference ? kernels::log_lik_grad_serial(layout, data, params, grad)
                                               : kernels::log_lik_grad_parallel(layout, data, params, grad);
}

double log_posterior_and_grad(const ParameterLayout& layout, const Dataset& data,
                              std::span<const double> params, std::span<double> grad,
                              Execution exec, const PriorSpec& prior) {
    const double ll = log_likelihood_and_grad(layout, data, params, grad, exec);
    return ll + log_prior(layout, params, grad, prior);
}

CharacteristicBlock::CharacteristicBlock(const ParameterLayout& layout, const Dataset& data, std::size_t d,
                                         const PriorSpec& prior)
    : d_(d), params_(layout.parameters_of(d)) {
    const auto means = layout.prior_means(prior);
    const auto sds = layout.prior_sds(prior);
    std::vector<std::uint32_t> local_of(layout.size(), 0);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        prior_mean_.push_back(means[params_[k]]);
        prior_sd_.push_back(sds[params_[k]]);
        local_of[params_[k]] = static_cast<std::uint32_t>(k);
    }
    offsets_.push_back(0);
    for (std::size_t n = 0; n < data.size(); ++n) {
        if (!data.observed(n)[d]) continue;
        tau_.push_back(data.tau(n));
        y_.push_back(data.values(n)[d]);
        const auto levels = data.levels(n);
        for (const auto& term : layout.terms(d)) {
            const auto idx = term.index_of(levels[term.covariate]);
            if (idx >= 0) effects_.push_back(local_of[static_cast<std::size_t>(idx)]);
        }
        offsets_.push_back(static_cast<std::uint32_t>(effects_.size()));
    }
}

double CharacteristicBlock::log_posterior_and_grad(std::span<const double> local, std::span<double> grad) const {
    constexpr double kLogSqrt2Pi = 0.91893853320467274178;
    double total = 0.0;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const double z = (local[k] - prior_mean_[k]) / prior_sd_[k];
        total += -0.5 * z * z - std::log(prior_sd_[k]) - kLogSqrt2Pi;
        grad[k] = -z / prior_sd_[k];
    }
    const double gamma = local[0];
    double g_gamma = 0.0, g_beta0 = 0.0;
    for (std::size_t n = 0; n < tau_.size(); ++n) {
        double rate = local[1];
        for (std::uint32_t j = offsets_[n]; j < offsets_[n + 1]; ++j) rate += local[effects_[j]];
        const double tau = tau_[n];
        const double z = gamma + tau * rate;
        const double y = y_[n];
        const double e = std::exp(-std::abs(z));
        const double l1 = std::log1p(e);
        total += y * z - std::max(z, 0.0) - l1;
        const double r = y - (z >= 0.0 ? 1.0 : e) / (1.0 + e);
        g_gamma += r;
        g_beta0 += r * tau;
        for (std::uint32_t j = offsets_[n]; j < offsets_[n + 1]; ++j) grad[effects_[j]] += r * tau;
    }
    grad[0] += g_gamma;
    grad[1] += g_beta0;
    return total;
}

}  // namespace decomp
