#include "decomp/eig.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>

#include <omp.h>

#include "decomp/csv.hpp"
#include "decomp/error.hpp"

namespace decomp {

namespace {

constexpr std::uint64_t kSaltOuter = 0x6f75746572ULL;
constexpr std::uint64_t kSaltMarginal = 0x6d617267ULL;

double log_sum_exp(std::span<const double> v) {
    double peak = -std::numeric_limits<double>::infinity();
    for (double x : v) peak = std::max(peak, x);
    if (!std::isfinite(peak)) return peak;
    double s = 0.0;
    for (double x : v) s += std::exp(x - peak);
    return peak + std::log(s);
}

struct TermStats {
    double mean = 0.0;
    double se = 0.0;
};

TermStats summarize_terms(const std::vector<double>& terms) {
    TermStats s;
    const double n = static_cast<double>(terms.size());
    for (double t : terms) s.mean += t;
    s.mean /= n;
    double ss = 0.0;
    for (double t : terms) ss += (t - s.mean) * (t - s.mean);
    s.se = terms.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    return s;
}

// M' joint draws shared by every outer term.
std::vector<double> marginal_points(const EigModel& model, const EigBudget& budget) {
    const std::size_t P = model.point_size();
    std::vector<double> pts(budget.m_prime * P);
    Rng rng = make_rng(budget.seed, 0, kSaltMarginal);
    for (std::size_t i = 0; i < budget.m_prime; ++i) model.draw_joint(rng, {pts.data() + i * P, P});
    return pts;
}

template <class Body>
void parallel_terms(std::size_t n, Body&& body) {
    std::exception_ptr error;
#pragma omp parallel
    {
        auto state = body.make_state();
#pragma omp for schedule(dynamic, 16)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
            try {
                body(static_cast<std::size_t>(i), state);
            } catch (...) {
#pragma omp critical(decomp_eig_error)
                if (!error) error = std::current_exception();
            }
        }
    }
    if (error) std::rethrow_exception(error);
}

}  // namespace

std::string to_string(EigEstimator e) { return e == EigEstimator::naive ? "naive" : "low_variance"; }

EigEstimator parse_estimator(std::string_view text) {
    const std::string t = csv::to_lower(csv::trim(text));
    if (t == "naive") return EigEstimator::naive;
    if (t == "low_variance" || t == "low-variance") return EigEstimator::low_variance;
    throw ValidationError("unknown estimator '" + std::string(text) + "'");
}

void EigBudget::validate() const {
    if (n < 2 || m < 2 || m_prime < 2) throw ValidationError("EIG sample sizes N, M and M' must be at least 2");
}

EigEstimate eig_naive(const EigModel& model, const EigBudget& budget) {
    budget.validate();
    const std::size_t P = model.point_size();
    const std::size_t Y = model.outcome_size();
    const std::vector<double> marg = marginal_points(model, budget);
    const double offset = budget.include_offset
                              ? std::log(static_cast<double>(budget.m_prime) / static_cast<double>(budget.m))
                              : 0.0;
    std::vector<double> terms(budget.n);

    struct State {
        std::vector<double> joint, point, y, inner, outer;
    };
    struct Body {
        const EigModel& model;
        const EigBudget& budget;
        const std::vector<double>& marg;
        std::vector<double>& terms;
        std::size_t P, Y;
        double offset;
        State make_state() const {
            return {std::vector<double>(P), std::vector<double>(P), std::vector<double>(Y),
                    std::vector<double>(budget.m), std::vector<double>(budget.m_prime)};
        }
        void operator()(std::size_t n, State& s) const {
            Rng rng = make_rng(budget.seed, n, kSaltOuter);
            model.draw_joint(rng, s.joint);
            model.simulate(s.joint, rng, s.y);
            for (std::size_t m = 0; m < budget.m; ++m) {
                model.draw_nuisance(s.joint, rng, s.point);
                s.inner[m] = model.log_lik(s.y, s.point);
            }
            for (std::size_t m = 0; m < budget.m_prime; ++m)
                s.outer[m] = model.log_lik(s.y, {marg.data() + m * P, P});
            terms[n] = log_sum_exp(s.inner) - log_sum_exp(s.outer) + offset;
        }
    };
    parallel_terms(budget.n, Body{model, budget, marg, terms, P, Y, offset});

    const TermStats st = summarize_terms(terms);
    if (!std::isfinite(st.mean)) throw NumericalError("EIG estimate is not finite");
    EigEstimate out;
    out.value = st.mean;
    out.mc_standard_error = st.se;
    out.estimator = EigEstimator::naive;
    out.n = budget.n;
    out.m = budget.m;
    out.m_prime = budget.m_prime;
    return out;
}

EigEstimate eig_low_variance(const EigModel& model, const EigBudget& budget) {
    budget.validate();
    const std::size_t K = model.num_outcomes();
    if (K == 0) throw BudgetError("outcome space is not enumerable for this design; use the naive estimator");
    const std::size_t P = model.point_size();
    const std::size_t Y = model.outcome_size();
    const std::vector<double> marg = marginal_points(model, budget);
    const double offset = budget.include_offset
                              ? std::log(static_cast<double>(budget.m_prime) / static_cast<double>(budget.m))
                              : 0.0;

    std::vector<double> outcomes(K * Y);
    for (std::size_t k = 0; k < K; ++k) model.outcome(k, {outcomes.data() + k * Y, Y});

    // The marginal term depends on the outcome only.
    std::vector<double> denom(K);
    {
        std::vector<double> buf(budget.m_prime);
        for (std::size_t k = 0; k < K; ++k) {
            std::span<const double> y(outcomes.data() + k * Y, Y);
            for (std::size_t m = 0; m < budget.m_prime; ++m) buf[m] = model.log_lik(y, {marg.data() + m * P, P});
            denom[k] = log_sum_exp(buf);
        }
    }

    std::vector<double> terms(budget.n);
    struct State {
        std::vector<double> joint, points, inner;
    };
    struct Body {
        const EigModel& model;
        const EigBudget& budget;
        const std::vector<double>& outcomes;
        const std::vector<double>& denom;
        std::vector<double>& terms;
        std::size_t P, Y, K;
        double offset;
        State make_state() const {
            return {std::vector<double>(P), std::vector<double>(budget.m * P), std::vector<double>(budget.m)};
        }
        void operator()(std::size_t n, State& s) const {
            // Same random stream layout as the naive estimator, minus the
            // simulated outcome.
            Rng rng = make_rng(budget.seed, n, kSaltOuter);
            model.draw_joint(rng, s.joint);
            for (std::size_t m = 0; m < budget.m; ++m) model.draw_nuisance(s.joint, rng, {s.points.data() + m * P, P});
            double term = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                std::span<const double> y(outcomes.data() + k * Y, Y);
                const double w = std::exp(model.log_lik(y, s.joint));
                if (w == 0.0) continue;
                for (std::size_t m = 0; m < budget.m; ++m) s.inner[m] = model.log_lik(y, {s.points.data() + m * P, P});
                term += w * (log_sum_exp(s.inner) - denom[k] + offset);
            }
            terms[n] = term;
        }
    };
    parallel_terms(budget.n, Body{model, budget, outcomes, denom, terms, P, Y, K, offset});

    const TermStats st = summarize_terms(terms);
    if (!std::isfinite(st.mean)) throw NumericalError("EIG estimate is not finite");
    EigEstimate out;
    out.value = st.mean;
    out.mc_standard_error = st.se;
    out.estimator = EigEstimator::low_variance;
    out.n = budget.n;
    out.m = budget.m;
    out.m_prime = budget.m_prime;
    out.outcomes = K;
    return out;
}

// ---- toy ------------------------------------------------------------------

double toy_exact_eig(double x, const ToyParams& p, ToyTarget target) {
    if (!(p.sigma > 0.0 && p.sigma_theta > 0.0 && p.sigma_phi > 0.0))
        throw ValidationError("toy model scales must be positive");
    const double sx = p.sigma_theta * x;
    if (target == ToyTarget::slope) return 0.5 * std::log1p(sx * sx / (p.sigma * p.sigma + p.sigma_phi * p.sigma_phi));
    return 0.5 * std::log1p(p.sigma_phi * p.sigma_phi / (p.sigma * p.sigma + sx * sx));
}

ToyEigModel::ToyEigModel(double x, ToyParams params, ToyTarget target) : x_(x), p_(params), target_(target) {
    toy_exact_eig(x, params, target);  // validates the scales
}

// Point layout: [target, nuisance].
void ToyEigModel::draw_joint(Rng& rng, std::span<double> point) const {
    const double slope = p_.sigma_theta * standard_normal(rng);
    const double intercept = p_.sigma_phi * standard_normal(rng);
    point[0] = target_ == ToyTarget::slope ? slope : intercept;
    point[1] = target_ == ToyTarget::slope ? intercept : slope;
}

void ToyEigModel::draw_nuisance(std::span<const double> joint, Rng& rng, std::span<double> point) const {
    point[0] = joint[0];
    point[1] = (target_ == ToyTarget::slope ? p_.sigma_phi : p_.sigma_theta) * standard_normal(rng);
}

void ToyEigModel::simulate(std::span<const double> point, Rng& rng, std::span<double> y) const {
    const double slope = target_ == ToyTarget::slope ? point[0] : point[1];
    const double intercept = target_ == ToyTarget::slope ? point[1] : point[0];
    y[0] = slope * x_ + intercept + p_.sigma * standard_normal(rng);
}

double ToyEigModel::log_lik(std::span<const double> y, std::span<const double> point) const {
    const double slope = target_ == ToyTarget::slope ? point[0] : point[1];
    const double intercept = target_ == ToyTarget::slope ? point[1] : point[0];
    const double r = (y[0] - slope * x_ - intercept) / p_.sigma;
    return -0.5 * r * r - std::log(p_.sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

// ---- decomposition ---------------------------------------------------------

void DesignSpec::validate(const Schema& schema) const {
    if (assignments.size() != 1 && assignments.size() != num_cadavers)
        throw ValidationError("design needs one shared covariate assignment or one per cadaver");
    for (const auto& levels : assignments) {
        if (levels.size() != schema.covariates.size())
            throw ValidationError("design assignment has the wrong number of covariates");
        for (std::size_t c = 0; c < levels.size(); ++c)
            if (levels[c] >= schema.covariates[c].num_levels())
                throw ValidationError("design level out of range for '" + schema.covariates[c].name + "'");
    }
    if (!(observation_day >= 0.0) || !std::isfinite(observation_day))
        throw ValidationError("observation day must be a nonnegative number");
}

std::vector<std::uint16_t> design_levels(const Schema& schema,
                                         const std::vector<std::pair<std::string, std::string>>& levels) {
    std::vector<std::uint16_t> out(schema.covariates.size());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = static_cast<std::uint16_t>(schema.covariates[c].reference);
    for (const auto& [cov, level] : levels) {
        const auto c = schema.covariates.find(cov);
        if (!c) throw ValidationError("unknown covariate '" + cov + "'");
        const auto l = schema.covariates[*c].find_level(level);
        if (!l) throw ValidationError("unknown level '" + level + "' for covariate '" + cov + "'");
        out[*c] = static_cast<std::uint16_t>(*l);
    }
    return out;
}

EigContext::EigContext(const ParameterLayout& layout, const DrawMatrix& draws, std::vector<std::size_t> theta)
    : layout_(&layout), draws_(&draws), theta_(std::move(theta)) {
    if (static_cast<std::size_t>(draws.cols()) != layout.size())
        throw ValidationError("draws do not match the parameter layout");
    if (theta_.empty()) throw ValidationError("no target parameters selected");
    std::vector<char> is_target(layout.size(), 0);
    for (std::size_t i : theta_) {
        if (i >= layout.size()) throw ValidationError("target index out of range");
        if (is_target[i]) throw ValidationError("target parameter repeated");
        is_target[i] = 1;
        const std::size_t d = layout.info(i).characteristic;
        if (std::find(tracked_.begin(), tracked_.end(), d) == tracked_.end()) tracked_.push_back(d);
    }
    std::sort(tracked_.begin(), tracked_.end());
    // The posterior factorizes over characteristics, so only coefficients
    // of tracked characteristics enter the nuisance set.
    for (std::size_t d : tracked_)
        for (std::size_t i : layout.parameters_of(d))
            if (!is_target[i]) phi_.push_back(i);
    mvn_ = fit_mvn(draws, TargetSelection{theta_, phi_});
    cond_ = std::make_unique<ConditionalMvn>(mvn_);
}

DecompositionEigModel::DecompositionEigModel(const EigContext& ctx, const DesignSpec& design,
                                             std::size_t outcome_cap)
    : ctx_(&ctx), t_(ctx.theta().size()) {
    if (design.num_cadavers < 1) throw ValidationError("design needs at least one cadaver");
    const ParameterLayout& layout = ctx.layout();

    std::vector<std::vector<std::uint16_t>> groups;
    if (design.assignments.size() == 1) {
        groups.push_back(design.assignments[0]);
        group_sizes_.push_back(design.num_cadavers);
    } else if (design.assignments.size() == design.num_cadavers) {
        for (const auto& a : design.assignments) {
            auto it = std::find(groups.begin(), groups.end(), a);
            if (it == groups.end()) {
                groups.push_back(a);
                group_sizes_.push_back(1);
            } else {
                ++group_sizes_[static_cast<std::size_t>(it - groups.begin())];
            }
        }
    } else {
        throw ValidationError("design needs one shared covariate assignment or one per cadaver");
    }
    for (const auto& g : groups)
        if (g.size() != layout.num_covariates()) throw ValidationError("design assignment has the wrong size");
    if (!(design.observation_day >= 0.0) || !std::isfinite(design.observation_day))
        throw ValidationError("observation day must be a nonnegative number");

    const double tau = std::log1p(design.observation_day);
    const auto& tracked = ctx.tracked();
    k_ = groups.size() * tracked.size();
    const auto P = static_cast<Eigen::Index>(layout.size());
    a_full_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k_), P);
    std::size_t row = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::size_t d : tracked) {
            const auto r = static_cast<Eigen::Index>(row);
            a_full_(r, static_cast<Eigen::Index>(layout.gamma_index(d))) = 1.0;
            a_full_(r, static_cast<Eigen::Index>(layout.beta0_index(d))) = tau;
            for (const EffectTerm& term : layout.terms(d)) {
                const auto idx = term.index_of(groups[g][term.covariate]);
                if (idx >= 0) a_full_(r, static_cast<Eigen::Index>(idx)) = tau;
            }
            const std::size_t n = group_sizes_[g];
            trials_.push_back(n);
            std::vector<double> lc(n + 1);
            for (std::size_t c = 0; c <= n; ++c)
                lc[c] = std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(c) + 1.0) -
                        std::lgamma(static_cast<double>(n - c) + 1.0);
            log_choose_.push_back(std::move(lc));
            ++row;
        }
    }

    const auto& theta = ctx.theta();
    const auto& phi = ctx.phi();
    Eigen::MatrixXd a_theta(static_cast<Eigen::Index>(k_), static_cast<Eigen::Index>(theta.size()));
    Eigen::MatrixXd a_phi(static_cast<Eigen::Index>(k_), static_cast<Eigen::Index>(phi.size()));
    for (std::size_t j = 0; j < theta.size(); ++j)
        a_theta.col(static_cast<Eigen::Index>(j)) = a_full_.col(static_cast<Eigen::Index>(theta[j]));
    for (std::size_t j = 0; j < phi.size(); ++j)
        a_phi.col(static_cast<Eigen::Index>(j)) = a_full_.col(static_cast<Eigen::Index>(phi[j]));

    // z | theta is normal: an affine map of phi | theta.
    const ConditionalMvn& cond = ctx.conditional();
    const MvnApproximation& mvn = ctx.mvn();
    slope_ = a_theta + a_phi * cond.gain();
    intercept_ = a_phi * (mvn.mean_phi - cond.gain() * mvn.mean_theta);
    Eigen::MatrixXd zcov = a_phi * cond.cov() * a_phi.transpose();
    zcov = 0.5 * (zcov + zcov.transpose());
    root_ = psd_root(zcov);

    double count = 1.0;
    for (std::size_t n : trials_) count *= static_cast<double>(n + 1);
    num_outcomes_ = count <= static_cast<double>(outcome_cap) ? static_cast<std::size_t>(count) : 0;
}

// Point layout: [theta (t), z (k), log sigmoid(z) (k), log sigmoid(-z) (k)].
void DecompositionEigModel::finish_point(std::span<double> point) const {
    for (std::size_t j = 0; j < k_; ++j) {
        const double z = point[t_ + j];
        point[t_ + k_ + j] = log_sigmoid(z);
        point[t_ + 2 * k_ + j] = log_sigmoid(-z);
    }
}

void DecompositionEigModel::draw_joint(Rng& rng, std::span<double> point) const {
    const DrawMatrix& draws = ctx_->draws();
    std::uniform_int_distribution<Eigen::Index> pick(0, draws.rows() - 1);
    const Eigen::Index i = pick(rng);
    const auto& theta = ctx_->theta();
    for (std::size_t j = 0; j < t_; ++j) point[j] = draws(i, static_cast<Eigen::Index>(theta[j]));
    const Eigen::VectorXd z = a_full_ * draws.row(i).transpose();
    for (std::size_t j = 0; j < k_; ++j) point[t_ + j] = z[static_cast<Eigen::Index>(j)];
    finish_point(point);
}

void DecompositionEigModel::draw_nuisance(std::span<const double> joint, Rng& rng, std::span<double> point) const {
    Eigen::Map<const Eigen::VectorXd> theta(joint.data(), static_cast<Eigen::Index>(t_));
    Eigen::VectorXd e(static_cast<Eigen::Index>(k_));
    for (Eigen::Index j = 0; j < e.size(); ++j) e[j] = standard_normal(rng);
    const Eigen::VectorXd z = intercept_ + slope_ * theta + root_ * e;
    std::copy(joint.begin(), joint.begin() + static_cast<std::ptrdiff_t>(t_), point.begin());
    for (std::size_t j = 0; j < k_; ++j) point[t_ + j] = z[static_cast<Eigen::Index>(j)];
    finish_point(point);
}

void DecompositionEigModel::simulate(std::span<const double> point, Rng& rng, std::span<double> y) const {
    for (std::size_t j = 0; j < k_; ++j) {
        std::binomial_distribution<int> draw(static_cast<int>(trials_[j]), sigmoid(point[t_ + j]));
        y[j] = static_cast<double>(draw(rng));
    }
}

double DecompositionEigModel::log_lik(std::span<const double> y, std::span<const double> point) const {
    double s = 0.0;
    for (std::size_t j = 0; j < k_; ++j) {
        const double c = y[j];
        const double n = static_cast<double>(trials_[j]);
        s += log_choose_[j][static_cast<std::size_t>(c)] + c * point[t_ + k_ + j] + (n - c) * point[t_ + 2 * k_ + j];
    }
    return s;
}

void DecompositionEigModel::outcome(std::size_t k, std::span<double> y) const {
    for (std::size_t j = 0; j < k_; ++j) {
        const std::size_t base = trials_[j] + 1;
        y[j] = static_cast<double>(k % base);
        k /= base;
    }
}

// ---- scan --------------------------------------------------------------------

ScanResult design_scan(const EigContext& ctx, std::span<const DesignSpec> designs, const EigBudget& budget,
                       std::optional<EigEstimator> estimator) {
    budget.validate();
    ScanResult out;
    for (const DesignSpec& design : designs) {
        DecompositionEigModel model(ctx, design);
        EigEstimator which = estimator.value_or(model.num_outcomes() > 0 ? EigEstimator::low_variance
                                                                         : EigEstimator::naive);
        ScanRow row;
        row.design = design;
        row.estimate = which == EigEstimator::low_variance ? eig_low_variance(model, budget) : eig_naive(model, budget);
        const double n = static_cast<double>(design.num_cadavers);
        row.eig_per_cadaver = row.estimate.value / n;
        row.se_per_cadaver = row.estimate.mc_standard_error / n;
        out.rows.push_back(std::move(row));
    }
    for (std::size_t i = 1; i < out.rows.size(); ++i)
        if (out.rows[i].eig_per_cadaver > out.rows[out.best].eig_per_cadaver) out.best = i;
    return out;
}

// ---- before / after --------------------------------------------------------

std::vector<double> kernel_density(std::span<const double> values, std::span<const double> grid) {
    const std::size_t n = values.size();
    std::vector<double> out(grid.size(), 0.0);
    if (n == 0) return out;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    auto q = [&](double p) {
        const double pos = p * static_cast<double>(n - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, n - 1);
        return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    };
    double spread = sd;
    const double iqr = (q(0.75) - q(0.25)) / 1.34;
    if (iqr > 0.0) spread = std::min(spread, iqr);
    double h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
    if (!(h > 0.0)) h = 1e-3 * std::max(1.0, std::abs(mean));
    const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double s = 0.0;
        for (double v : values) {
            const double u = (grid[g] - v) / h;
            s += std::exp(-0.5 * u * u);
        }
        out[g] = s * norm;
    }
    return out;
}

namespace {

std::pair<double, double> mean_var(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, v.size() > 1 ? ss / static_cast<double>(v.size() - 1) : 0.0};
}

std::vector<double> column(const DrawMatrix& draws, std::size_t j) {
    std::vector<double> v(static_cast<std::size_t>(draws.rows()));
    for (Eigen::Index i = 0; i < draws.rows(); ++i) v[static_cast<std::size_t>(i)] = draws(i, static_cast<Eigen::Index>(j));
    return v;
}

}  // namespace

BeforeAfter before_after_posterior(const Dataset& data, const ParameterLayout& layout,
                                   const PosteriorSamples& samples, std::span<const std::size_t> theta,
                                   const DesignSpec& design, const SamplerConfig& config, std::size_t grid_points) {
    if (theta.empty()) throw ValidationError("no target parameters selected");
    if (samples.dim() != layout.size()) throw ValidationError("samples do not match the parameter layout");
    if (grid_points < 2) throw ValidationError("density grid needs at least two points");
    for (std::size_t i : theta)
        if (i >= layout.size()) throw ValidationError("target index out of range");

    BeforeAfter out;
    std::vector<std::vector<double>> after_values(theta.size());
    if (design.num_cadavers > 0) {
        if (design.assignments.size() != 1 && design.assignments.size() != design.num_cadavers)
            throw ValidationError("design needs one shared covariate assignment or one per cadaver");
        const Eigen::VectorXd mean = samples.draws.colwise().mean().transpose();
        std::span<const double> mean_span(mean.data(), static_cast<std::size_t>(mean.size()));
        Dataset augmented = data;
        const std::size_t D = layout.num_characteristics();
        for (std::size_t i = 0; i < design.num_cadavers; ++i) {
            CaseDesign c;
            c.levels = design.assignments.size() == 1 ? design.assignments[0] : design.assignments[i];
            if (c.levels.size() != layout.num_covariates())
                throw ValidationError("design assignment has the wrong size");
            c.log1p_pmi = std::log1p(design.observation_day);
            c.has_pmi = true;
            c.values.resize(D);
            c.observed.assign(D, 1);
            for (std::size_t d = 0; d < D; ++d) c.values[d] = sigmoid(char_log_odds(layout, mean_span, c, d));
            augmented.add(c);
        }
        PosteriorSamples refit = sample_posterior(augmented, layout, config);
        require_passing(refit);
        for (std::size_t j = 0; j < theta.size(); ++j) after_values[j] = column(refit.draws, theta[j]);
        out.refit = true;
    }

    for (std::size_t j = 0; j < theta.size(); ++j) {
        EffectDensity e;
        e.name = layout.names()[theta[j]];
        const std::vector<double> before = column(samples.draws, theta[j]);
        const auto [m_before, v_before] = mean_var(before);
        std::vector<double> after = out.refit ? after_values[j] : before;
        auto [m_after, v_after] = mean_var(after);
        for (double& x : after) x += m_before - m_after;
        e.mean = m_before;
        e.before_variance = v_before;
        e.after_variance = v_after;
        const double half = 5.0 * std::sqrt(std::max({v_before, v_after, 1e-12}));
        e.grid.resize(grid_points);
        for (std::size_t g = 0; g < grid_points; ++g)
            e.grid[g] = m_before - half + 2.0 * half * static_cast<double>(g) / static_cast<double>(grid_points - 1);
        e.before = kernel_density(before, e.grid);
        e.after = out.refit ? kernel_density(after, e.grid) : e.before;
        out.effects.push_back(std::move(e));
    }
    return out;
}

}  // namespace decomp
