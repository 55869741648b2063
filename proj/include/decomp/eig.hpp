#pragma once

// Expected information gain of a design for a set of target parameters,
// by nested Monte Carlo. The naive estimator samples outcomes; the
// low-variance estimator sums over an enumerable outcome space instead.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "decomp/model.hpp"
#include "decomp/mvn.hpp"
#include "decomp/random.hpp"
#include "decomp/sampler.hpp"

namespace decomp {

enum class EigEstimator { naive, low_variance };

std::string to_string(EigEstimator e);
EigEstimator parse_estimator(std::string_view text);

struct EigBudget {
    std::size_t n = 10000;        // outer samples
    std::size_t m = 5000;         // conditional nuisance samples per outer sample
    std::size_t m_prime = 5000;   // joint samples for the marginal likelihood
    std::uint64_t seed = 1;
    // Adds log(M'/M) to every term. It does not depend on the design, so it
    // only matters for absolute values.
    bool include_offset = true;

    void validate() const;
};

struct EigEstimate {
    double value = 0.0;
    double mc_standard_error = 0.0;
    EigEstimator estimator = EigEstimator::naive;
    std::size_t n = 0, m = 0, m_prime = 0;
    std::size_t outcomes = 0;  // enumerated outcomes (low-variance only)
};

// A model as seen by the estimators. A "point" is a model-defined vector
// that holds the target value and whatever else log_lik needs.
class EigModel {
public:
    virtual ~EigModel() = default;

    virtual std::size_t point_size() const = 0;
    virtual std::size_t outcome_size() const = 0;

    // Joint draw of (theta, phi).
    virtual void draw_joint(Rng& rng, std::span<double> point) const = 0;
    // Same theta as `joint`, fresh phi from p(phi | theta).
    virtual void draw_nuisance(std::span<const double> joint, Rng& rng, std::span<double> point) const = 0;
    virtual void simulate(std::span<const double> point, Rng& rng, std::span<double> y) const = 0;
    virtual double log_lik(std::span<const double> y, std::span<const double> point) const = 0;

    // Size of the discrete outcome space, or 0 when it is not enumerable.
    virtual std::size_t num_outcomes() const { return 0; }
    virtual void outcome(std::size_t /*k*/, std::span<double> /*y*/) const {}
};

EigEstimate eig_naive(const EigModel& model, const EigBudget& budget);
EigEstimate eig_low_variance(const EigModel& model, const EigBudget& budget);

// ---- toy linear regression --------------------------------------------

enum class ToyTarget { slope, intercept };

struct ToyParams {
    double sigma = 0.5;
    double sigma_theta = 1.0;  // slope prior sd
    double sigma_phi = 1.0;    // intercept prior sd
};

double toy_exact_eig(double x, const ToyParams& p, ToyTarget target);

// y ~ N(slope * x + intercept, sigma) with independent normal priors.
class ToyEigModel final : public EigModel {
public:
    ToyEigModel(double x, ToyParams params, ToyTarget target);

    std::size_t point_size() const override { return 2; }
    std::size_t outcome_size() const override { return 1; }
    void draw_joint(Rng& rng, std::span<double> point) const override;
    void draw_nuisance(std::span<const double> joint, Rng& rng, std::span<double> point) const override;
    void simulate(std::span<const double> point, Rng& rng, std::span<double> y) const override;
    double log_lik(std::span<const double> y, std::span<const double> point) const override;

private:
    double x_;
    ToyParams p_;
    ToyTarget target_;
};

// ---- decomposition model ------------------------------------------------

// Cadavers of a design; each is observed once at observation_day.
struct DesignSpec {
    std::size_t num_cadavers = 1;
    // One level vector shared by all cadavers, or one per cadaver.
    std::vector<std::vector<std::uint16_t>> assignments;
    double observation_day = 0.0;
    std::string label;

    void validate(const Schema& schema) const;
};

// Level names by covariate; covariates not listed sit at their reference.
std::vector<std::uint16_t> design_levels(const Schema& schema,
                                         const std::vector<std::pair<std::string, std::string>>& levels);

inline constexpr std::size_t kOutcomeCap = 4096;

// Design-independent part: targets, the characteristics they belong to and
// the normal approximation of the relevant coefficients.
class EigContext {
public:
    EigContext(const ParameterLayout& layout, const DrawMatrix& draws, std::vector<std::size_t> theta);

    const ParameterLayout& layout() const noexcept { return *layout_; }
    const DrawMatrix& draws() const noexcept { return *draws_; }
    const std::vector<std::size_t>& theta() const noexcept { return theta_; }
    const std::vector<std::size_t>& tracked() const noexcept { return tracked_; }
    // Coefficients of the tracked characteristics that are not targets.
    const std::vector<std::size_t>& phi() const noexcept { return phi_; }
    const MvnApproximation& mvn() const noexcept { return mvn_; }
    const ConditionalMvn& conditional() const noexcept { return *cond_; }

private:
    const ParameterLayout* layout_;
    const DrawMatrix* draws_;
    std::vector<std::size_t> theta_;
    std::vector<std::size_t> tracked_;
    std::vector<std::size_t> phi_;
    MvnApproximation mvn_;
    std::unique_ptr<ConditionalMvn> cond_;
};

// Outcomes are counts of cadavers showing each tracked characteristic,
// per group of identically prepared cadavers. Counts are sufficient for
// the target, so the enumeration is over prod(n_g + 1) count vectors.
class DecompositionEigModel final : public EigModel {
public:
    DecompositionEigModel(const EigContext& ctx, const DesignSpec& design,
                          std::size_t outcome_cap = kOutcomeCap);

    std::size_t point_size() const override { return t_ + 3 * k_; }
    std::size_t outcome_size() const override { return k_; }
    void draw_joint(Rng& rng, std::span<double> point) const override;
    void draw_nuisance(std::span<const double> joint, Rng& rng, std::span<double> point) const override;
    void simulate(std::span<const double> point, Rng& rng, std::span<double> y) const override;
    double log_lik(std::span<const double> y, std::span<const double> point) const override;
    std::size_t num_outcomes() const override { return num_outcomes_; }
    void outcome(std::size_t k, std::span<double> y) const override;

    std::size_t num_groups() const noexcept { return group_sizes_.size(); }

private:
    void finish_point(std::span<double> point) const;

    const EigContext* ctx_;
    std::size_t t_ = 0;  // targets
    std::size_t k_ = 0;  // projected logits: groups x tracked characteristics
    std::vector<std::size_t> group_sizes_;
    std::vector<std::size_t> trials_;             // per logit
    std::vector<std::vector<double>> log_choose_; // per logit, index by count
    Eigen::MatrixXd a_full_;     // k x P over all parameters
    Eigen::MatrixXd slope_;      // k x t: d E[z | theta] / d theta
    Eigen::VectorXd intercept_;  // k
    Eigen::MatrixXd root_;       // k x k
    std::size_t num_outcomes_ = 0;
};

// ---- design scan and before/after ---------------------------------------

struct ScanRow {
    DesignSpec design;
    EigEstimate estimate;
    double eig_per_cadaver = 0.0;
    double se_per_cadaver = 0.0;
};

struct ScanResult {
    std::vector<ScanRow> rows;
    std::size_t best = 0;  // argmax of EIG per cadaver
};

// estimator unset picks low_variance when the outcome space is enumerable.
ScanResult design_scan(const EigContext& ctx, std::span<const DesignSpec> designs, const EigBudget& budget,
                       std::optional<EigEstimator> estimator = std::nullopt);

struct EffectDensity {
    std::string name;
    std::vector<double> grid;
    std::vector<double> before;
    std::vector<double> after;
    double mean = 0.0;
    double before_variance = 0.0;
    double after_variance = 0.0;
};

struct BeforeAfter {
    std::vector<EffectDensity> effects;
    bool refit = false;
};

// Gaussian kernel density of values on grid (Silverman bandwidth).
std::vector<double> kernel_density(std::span<const double> values, std::span<const double> grid);

// Refits on data augmented with the design's expected outcomes at the
// posterior-mean coefficients; the "after" marginals are shifted back to
// the "before" means.
BeforeAfter before_after_posterior(const Dataset& data, const ParameterLayout& layout,
                                   const PosteriorSamples& samples, std::span<const std::size_t> theta,
                                   const DesignSpec& design, const SamplerConfig& config,
                                   std::size_t grid_points = 201);

}  // namespace decomp
