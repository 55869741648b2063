#pragma once

// Decomposition likelihood: for characteristic d of a case with
// tau = log(1 + pmi_days),
//
//   logit P(y_d = 1) = gamma_d + tau * B_d,
//   B_d = beta0_d + sum over mask-allowed covariates c of beta_{d,c,level(c)},
//
// with beta at the reference level fixed to zero. Priors are independent
// normals: gamma ~ N(-2, 2), beta0 ~ N(0, 2), beta ~ N(0, 2).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "decomp/schema.hpp"

namespace decomp {

struct PriorSpec {
    double gamma_mean = -2.0;
    double gamma_sd = 2.0;
    double beta0_mean = 0.0;
    double beta0_sd = 2.0;
    double beta_mean = 0.0;
    double beta_sd = 2.0;
};

enum class ParameterKind { gamma, beta0, beta };

struct ParameterInfo {
    ParameterKind kind = ParameterKind::gamma;
    std::size_t characteristic = 0;
    std::size_t covariate = 0;  // beta only
    std::size_t level = 0;      // beta only
    std::string name;
};

// One mask-allowed covariate in the rate coefficient of a characteristic.
// Free parameters of its non-reference levels are contiguous, starting at
// first_index and skipping the reference level.
struct EffectTerm {
    std::uint32_t covariate = 0;
    std::uint32_t reference = 0;
    std::uint32_t first_index = 0;

    // Parameter index for `level`, or -1 for the reference level.
    std::int64_t index_of(std::uint32_t level) const noexcept {
        if (level == reference) return -1;
        return static_cast<std::int64_t>(first_index) + (level < reference ? level : level - 1);
    }
};

// Packing of the free parameters: gamma block, beta0 block, then the beta
// block ordered by characteristic, covariate (schema order) and level.
class ParameterLayout {
public:
    ParameterLayout() = default;
    ParameterLayout(const Schema& schema, const InteractionMask& mask);

    std::size_t size() const noexcept { return info_.size(); }
    std::size_t num_characteristics() const noexcept { return num_characteristics_; }
    std::size_t num_covariates() const noexcept { return num_covariates_; }

    std::size_t gamma_index(std::size_t d) const noexcept { return d; }
    std::size_t beta0_index(std::size_t d) const noexcept { return num_characteristics_ + d; }
    std::optional<std::size_t> beta_index(std::size_t d, std::size_t c, std::size_t level) const;

    std::span<const EffectTerm> terms(std::size_t d) const noexcept {
        return {terms_.data() + term_offsets_[d], term_offsets_[d + 1] - term_offsets_[d]};
    }

    const ParameterInfo& info(std::size_t i) const { return info_.at(i); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    std::optional<std::size_t> find(std::string_view name) const;
    // Indices of every parameter belonging to characteristic d.
    std::vector<std::size_t> parameters_of(std::size_t d) const;

    std::vector<double> prior_means(const PriorSpec& prior = {}) const;
    std::vector<double> prior_sds(const PriorSpec& prior = {}) const;

private:
    std::size_t num_characteristics_ = 0;
    std::size_t num_covariates_ = 0;
    std::vector<EffectTerm> terms_;
    std::vector<std::size_t> term_offsets_;
    std::vector<ParameterInfo> info_;
    std::vector<std::string> names_;
};

// Structure-of-arrays storage of encoded cases; every case must carry a PMI.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::size_t num_covariates, std::size_t num_characteristics)
        : num_covariates_(num_covariates), num_characteristics_(num_characteristics) {}

    static Dataset from_cases(std::span<const CaseDesign> cases, std::size_t num_covariates,
                              std::size_t num_characteristics);

    void add(const CaseDesign& design);

    std::size_t size() const noexcept { return tau_.size(); }
    bool empty() const noexcept { return tau_.empty(); }
    std::size_t num_covariates() const noexcept { return num_covariates_; }
    std::size_t num_characteristics() const noexcept { return num_characteristics_; }

    double tau(std::size_t n) const noexcept { return tau_[n]; }
    std::span<const std::uint16_t> levels(std::size_t n) const noexcept {
        return {levels_.data() + n * num_covariates_, num_covariates_};
    }
    std::span<const double> values(std::size_t n) const noexcept {
        return {values_.data() + n * num_characteristics_, num_characteristics_};
    }
    std::span<const std::uint8_t> observed(std::size_t n) const noexcept {
        return {observed_.data() + n * num_characteristics_, num_characteristics_};
    }
    CaseDesign case_at(std::size_t n) const;

private:
    std::size_t num_covariates_ = 0;
    std::size_t num_characteristics_ = 0;
    std::vector<double> tau_;
    std::vector<std::uint16_t> levels_;
    std::vector<double> values_;
    std::vector<std::uint8_t> observed_;
};

// Branch-stable log(sigmoid(x)); finite for any finite x.
inline double log_sigmoid(double x) noexcept {
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Bernoulli log-likelihood of a (possibly fractional) outcome y at logit z.
inline double bernoulli_log_lik(double y, double z) noexcept {
    const double e = std::log1p(std::exp(-std::abs(z)));
    const double log_p = -std::max(-z, 0.0) - e;
    const double log_q = -std::max(z, 0.0) - e;
    return y * log_p + (1.0 - y) * log_q;
}

double total_rate(const ParameterLayout& layout, std::span<const double> params,
                  std::span<const std::uint16_t> levels, std::size_t d);
double char_log_odds(const ParameterLayout& layout, std::span<const double> params,
                     std::span<const std::uint16_t> levels, double tau, std::size_t d);
double char_log_odds(const ParameterLayout& layout, std::span<const double> params,
                     const CaseDesign& design, std::size_t d);
double case_log_lik(const ParameterLayout& layout, std::span<const double> params,
                    const CaseDesign& design);

// Adds d/dparams of the log prior into grad when grad is non-empty.
double log_prior(const ParameterLayout& layout, std::span<const double> params,
                 std::span<double> grad = {}, const PriorSpec& prior = {});

enum class Execution { serial_reference, parallel };

// Unnormalized log posterior and its exact gradient (grad is overwritten).
double log_posterior_and_grad(const ParameterLayout& layout, const Dataset& data,
                              std::span<const double> params, std::span<double> grad,
                              Execution exec = Execution::parallel, const PriorSpec& prior = {});

// The likelihood and prior of characteristic d involve only gamma_d, beta0_d
// and the beta_{d,.}, so the posterior factorizes into one block per
// characteristic. Local order follows ParameterLayout::parameters_of(d).
class CharacteristicBlock {
public:
    CharacteristicBlock(const ParameterLayout& layout, const Dataset& data, std::size_t d,
                        const PriorSpec& prior = {});

    std::size_t characteristic() const noexcept { return d_; }
    const std::vector<std::size_t>& parameters() const noexcept { return params_; }
    std::size_t size() const noexcept { return params_.size(); }
    std::size_t num_cases() const noexcept { return tau_.size(); }

    // Log prior plus log-likelihood of the block; grad is overwritten.
    double log_posterior_and_grad(std::span<const double> local, std::span<double> grad) const;

private:
    std::size_t d_;
    std::vector<std::size_t> params_;
    std::vector<double> prior_mean_;
    std::vector<double> prior_sd_;
    std::vector<double> tau_;
    std::vector<double> y_;
    // Local indices of the active non-reference effects, per case.
    std::vector<std::uint32_t> offsets_;
    std::vector<std::uint32_t> effects_;
};

// Log-likelihood only (no prior), value and gradient.
double log_likelihood_and_grad(const ParameterLayout& layout, const Dataset& data,
                               std::span<const double> params, std::span<double> grad,
                               Execution exec = Execution::parallel);

}  // namespace decomp
