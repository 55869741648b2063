#include "decomp/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>

#include <omp.h>

#include "decomp/error.hpp"
#include "decomp/random.hpp"

namespace decomp {

void SamplerConfig::validate() const {
    if (num_chains < 2) throw ValidationError("sampler: at least two chains are needed for diagnostics");
    if (warmup_iterations < 0) throw ValidationError("sampler: warmup must be nonnegative");
    if (samples_per_chain < 4) throw ValidationError("sampler: at least 4 samples per chain are needed");
    if (!(target_accept > 0.0 && target_accept < 1.0))
        throw ValidationError("sampler: target_accept must lie in (0, 1)");
    if (max_tree_depth < 1) throw ValidationError("sampler: max_tree_depth must be positive");
}

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Windowed adaptation schedule: fast initial buffer, doubling slow windows
// for the metric, final fast buffer for the step size.
class WindowSchedule {
public:
    explicit WindowSchedule(int warmup) : warmup_(warmup) {
        if (warmup < 20) {
            enabled_ = false;
            return;
        }
        if (init_buffer_ + term_buffer_ + base_window_ > warmup) {
            init_buffer_ = static_cast<int>(0.15 * warmup);
            term_buffer_ = static_cast<int>(0.1 * warmup);
            base_window_ = warmup - (init_buffer_ + term_buffer_);
        }
        window_size_ = base_window_;
        next_window_ = init_buffer_ + window_size_ - 1;
    }

    bool in_window() const {
        return enabled_ && counter_ >= init_buffer_ && counter_ < warmup_ - term_buffer_ &&
               counter_ != warmup_;
    }
    bool window_end() const { return enabled_ && counter_ == next_window_ && counter_ != warmup_; }

    void advance_window() {
        if (next_window_ == warmup_ - term_buffer_ - 1) return;
        window_size_ *= 2;
        next_window_ = counter_ + window_size_;
        if (next_window_ != warmup_ - term_buffer_ - 1) {
            const int boundary = next_window_ + 2 * window_size_;
            if (boundary >= warmup_ - term_buffer_) next_window_ = warmup_ - term_buffer_ - 1;
        }
    }
    void tick() { ++counter_; }

private:
    int warmup_;
    bool enabled_ = true;
    int init_buffer_ = 75;
    int term_buffer_ = 50;
    int base_window_ = 25;
    int window_size_ = 25;
    int next_window_ = 0;
    int counter_ = 0;
};

class DualAveraging {
public:
    explicit DualAveraging(double delta) : delta_(delta) {}
    void restart(double step) {
        mu_ = std::log(10.0 * step);
        counter_ = 0;
        s_bar_ = 0.0;
        x_bar_ = 0.0;
    }
    double learn(double accept_stat) {
        ++counter_;
        accept_stat = std::min(1.0, accept_stat);
        const double eta = 1.0 / (counter_ + t0_);
        s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
        const double x = mu_ - s_bar_ * std::sqrt(counter_) / gamma_;
        const double x_eta = std::pow(counter_, -kappa_);
        x_bar_ = x_eta * x + (1.0 - x_eta) * x_bar_;
        return std::exp(x);
    }
    double final_step() const { return std::exp(x_bar_); }

private:
    double delta_;
    double mu_ = 0.0;
    double counter_ = 0.0;
    double s_bar_ = 0.0;
    double x_bar_ = 0.0;
    static constexpr double gamma_ = 0.05;
    static constexpr double kappa_ = 0.75;
    static constexpr double t0_ = 10.0;
};

// Welford accumulator for the metric estimate.
class CovarianceEstimator {
public:
    explicit CovarianceEstimator(std::size_t dim) : mean_(Vec::Zero(dim)), m2_(Mat::Zero(dim, dim)) {}
    void add(const Vec& q) {
        ++n_;
        const Vec delta = q - mean_;
        mean_ += delta / static_cast<double>(n_);
        m2_.noalias() += (q - mean_) * delta.transpose();
    }
    std::size_t count() const { return n_; }
    Mat covariance() const { return n_ > 1 ? Mat(m2_ / static_cast<double>(n_ - 1)) : Mat(m2_); }
    void restart() {
        n_ = 0;
        mean_.setZero();
        m2_.setZero();
    }

private:
    std::size_t n_ = 0;
    Vec mean_;
    Mat m2_;
};

struct Point {
    Vec q;
    Vec p;
    Vec g;
    double logp = 0.0;
};

class MetricState {
public:
    MetricState(std::size_t dim, Metric kind)
        : kind_(kind), inv_(Mat::Identity(dim, dim)), chol_(Mat::Identity(dim, dim)) {}

    void set_inverse(const Mat& inv_metric) {
        if (kind_ == Metric::diagonal) {
            inv_ = inv_metric.diagonal().asDiagonal();
            chol_ = inv_.diagonal().cwiseSqrt().asDiagonal();
            return;
        }
        Eigen::LLT<Mat> llt(inv_metric);
        if (llt.info() != Eigen::Success) {
            inv_ = inv_metric.diagonal().asDiagonal();
            chol_ = inv_.diagonal().cwiseSqrt().asDiagonal();
            return;
        }
        inv_ = inv_metric;
        chol_ = llt.matrixL();
    }

    Vec velocity(const Vec& p) const {
        if (kind_ == Metric::diagonal) return inv_.diagonal().cwiseProduct(p);
        return inv_ * p;
    }
    double kinetic(const Vec& p) const { return 0.5 * p.dot(velocity(p)); }

    // p ~ N(0, M) with M the inverse of the stored inverse metric.
    Vec sample_momentum(Rng& rng) const {
        Vec z(inv_.rows());
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
        if (kind_ == Metric::diagonal) return z.cwiseQuotient(chol_.diagonal());
        return chol_.transpose().triangularView<Eigen::Upper>().solve(z);
    }

private:
    Metric kind_;
    Mat inv_;
    Mat chol_;
};

class Hamiltonian {
public:
    Hamiltonian(const LogDensityFn& fn, const MetricState& metric) : fn_(fn), metric_(metric) {}

    void update(Point& z) {
        std::span<const double> q(z.q.data(), static_cast<std::size_t>(z.q.size()));
        std::span<double> g(z.g.data(), static_cast<std::size_t>(z.g.size()));
        z.logp = fn_(q, g);
        ++evaluations;
        if (!std::isfinite(z.logp)) z.logp = kNegInf;
    }
    double energy(const Point& z) const { return -z.logp + metric_.kinetic(z.p); }
    Vec dtau_dp(const Point& z) const { return metric_.velocity(z.p); }

    void leapfrog(Point& z, double eps) {
        z.p += 0.5 * eps * z.g;
        z.q += eps * metric_.velocity(z.p);
        update(z);
        z.p += 0.5 * eps * z.g;
    }

    std::size_t evaluations = 0;

private:
    const LogDensityFn& fn_;
    const MetricState& metric_;
};

class NutsChain {
public:
    NutsChain(const LogDensityFn& fn, std::size_t dim, const SamplerConfig& cfg, Rng& rng)
        : cfg_(cfg), rng_(rng), metric_(dim, cfg.metric), ham_(fn, metric_) {}

    void init(const Vec& q0) {
        z_.q = q0;
        z_.p = Vec::Zero(q0.size());
        z_.g = Vec::Zero(q0.size());
        ham_.update(z_);
        if (!std::isfinite(z_.logp)) throw NumericalError("sampler: non-finite log density at initialization");
    }
    bool finite() const { return std::isfinite(z_.logp); }

    void init_stepsize() {
        const Point start = z_;
        z_.p = metric_.sample_momentum(rng_);
        double h0 = ham_.energy(z_);
        ham_.leapfrog(z_, eps_);
        double h = ham_.energy(z_);
        if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
        double delta_h = h0 - h;
        const int direction = delta_h > std::log(0.8) ? 1 : -1;
        while (true) {
            z_ = start;
            z_.p = metric_.sample_momentum(rng_);
            h0 = ham_.energy(z_);
            ham_.leapfrog(z_, eps_);
            h = ham_.energy(z_);
            if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
            delta_h = h0 - h;
            if (direction == 1 && !(delta_h > std::log(0.8))) break;
            if (direction == -1 && !(delta_h < std::log(0.8))) break;
            eps_ = direction == 1 ? 2.0 * eps_ : 0.5 * eps_;
            if (eps_ > 1e7) throw NumericalError("sampler: step size diverged during initialization");
            if (eps_ < 1e-12) throw NumericalError("sampler: step size collapsed during initialization");
        }
        z_ = start;
    }

    // One NUTS transition with multinomial sampling and the generalized
    // no-U-turn criterion checked across subtree boundaries.
    double transition() {
        z_.p = metric_.sample_momentum(rng_);
        Point z_fwd = z_, z_bck = z_, z_sample = z_, z_propose = z_;

        Vec p_sharp_fwd_fwd = ham_.dtau_dp(z_);
        Vec p_sharp_fwd_bck = p_sharp_fwd_fwd;
        Vec p_sharp_bck_fwd = p_sharp_fwd_fwd;
        Vec p_sharp_bck_bck = p_sharp_fwd_fwd;
        Vec p_fwd_fwd = z_.p, p_fwd_bck = z_.p, p_bck_fwd = z_.p, p_bck_bck = z_.p;
        Vec rho = z_.p;

        double log_sum_weight = 0.0;
        const double h0 = ham_.energy(z_);
        int n_leapfrog = 0;
        double sum_metro_prob = 0.0;
        divergent_ = false;
        depth_ = 0;

        while (depth_ < cfg_.max_tree_depth) {
            Vec rho_fwd = Vec::Zero(rho.size());
            Vec rho_bck = Vec::Zero(rho.size());
            bool valid_subtree = false;
            double log_sum_weight_subtree = kNegInf;

            if (uniform01(rng_) > 0.5) {
                z_ = z_fwd;
                rho_bck = rho;
                p_bck_fwd = p_fwd_bck;
                p_sharp_bck_fwd = p_sharp_fwd_bck;
                valid_subtree = build_tree(depth_, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd,
                                           p_fwd_bck, p_fwd_fwd, h0, 1.0, n_leapfrog,
                                           log_sum_weight_subtree, sum_metro_prob);
                z_fwd = z_;
            } else {
                z_ = z_bck;
                rho_fwd = rho;
                p_fwd_bck = p_bck_fwd;
                p_sharp_fwd_bck = p_sharp_bck_fwd;
                valid_subtree = build_tree(depth_, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck,
                                           p_bck_fwd, p_bck_bck, h0, -1.0, n_leapfrog,
                                           log_sum_weight_subtree, sum_metro_prob);
                z_bck = z_;
            }
            if (!valid_subtree) break;
            ++depth_;

            if (log_sum_weight_subtree > log_sum_weight) {
                z_sample = z_propose;
            } else if (uniform01(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
                z_sample = z_propose;
            }
            log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
            rho = rho_bck + rho_fwd;

            bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
            Vec rho_ext = rho_bck + p_fwd_bck;
            persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_ext);
            rho_ext = rho_fwd + p_bck_fwd;
            persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_ext);
            if (!persist) break;
        }
        z_ = z_sample;
        return n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
    }

    const Point& state() const { return z_; }
    double step_size() const { return eps_; }
    void set_step_size(double eps) { eps_ = eps; }
    bool divergent() const { return divergent_; }
    int depth() const { return depth_; }
    MetricState& metric() { return metric_; }
    std::size_t evaluations() const { return ham_.evaluations; }

private:
    static bool criterion(const Vec& p_sharp_minus, const Vec& p_sharp_plus, const Vec& rho) {
        return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
    }

    bool build_tree(int depth, Point& z_propose, Vec& p_sharp_beg, Vec& p_sharp_end, Vec& rho, Vec& p_beg,
                    Vec& p_end, double h0, double sign, int& n_leapfrog, double& log_sum_weight,
                    double& sum_metro_prob) {
        if (depth == 0) {
            ham_.leapfrog(z_, sign * eps_);
            ++n_leapfrog;
            double h = ham_.energy(z_);
            if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
            if (h - h0 > 1000.0) divergent_ = true;
            log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
            sum_metro_prob += h0 - h > 0 ? 1.0 : std::exp(h0 - h);
            z_propose = z_;
            p_sharp_beg = ham_.dtau_dp(z_);
            p_sharp_end = p_sharp_beg;
            rho += z_.p;
            p_beg = z_.p;
            p_end = p_beg;
            return !divergent_;
        }

        Vec p_sharp_init_end(z_.q.size()), p_init_end(z_.q.size());
        Vec rho_init = Vec::Zero(rho.size());
        double log_sum_weight_init = kNegInf;
        if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, h0,
                        sign, n_leapfrog, log_sum_weight_init, sum_metro_prob))
            return false;

        Point z_propose_final = z_;
        Vec rho_final = Vec::Zero(rho.size());
        Vec p_final_beg(z_.q.size()), p_sharp_final_beg(z_.q.size());
        double log_sum_weight_final = kNegInf;
        if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg,
                        p_end, h0, sign, n_leapfrog, log_sum_weight_final, sum_metro_prob))
            return false;

        const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
        log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
        if (log_sum_weight_final > log_sum_weight_subtree) {
            z_propose = z_propose_final;
        } else if (uniform01(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
            z_propose = z_propose_final;
        }

        const Vec rho_subtree = rho_init + rho_final;
        rho += rho_subtree;
        bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
        Vec rho_ext = rho_init + p_final_beg;
        persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_ext);
        rho_ext = rho_final + p_init_end;
        persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_ext);
        return persist;
    }

    const SamplerConfig& cfg_;
    Rng& rng_;
    MetricState metric_;
    Hamiltonian ham_;
    Point z_;
    double eps_ = 0.1;
    bool divergent_ = false;
    int depth_ = 0;
};

Mat regularized_covariance(const CovarianceEstimator& est, Metric kind) {
    const double n = static_cast<double>(est.count());
    Mat cov = est.covariance();
    if (kind == Metric::diagonal) {
        cov = Mat(cov.diagonal().asDiagonal());
    } else {
        // Shrink toward the diagonal when the window is short relative to
        // the dimension; a raw estimate would be (near) singular.
        const double d = static_cast<double>(cov.rows());
        const double lambda = d / (n + d);
        const Vec diag = cov.diagonal();
        cov *= 1.0 - lambda;
        cov.diagonal() += lambda * diag;
    }
    cov *= n / (n + 5.0);
    cov.diagonal().array() += 1e-3 * (5.0 / (n + 5.0));
    return cov;
}

Vec initial_point(const GradientTarget& target, const SamplerConfig& cfg, Rng& rng) {
    Vec q(static_cast<Eigen::Index>(target.dim));
    for (std::size_t i = 0; i < target.dim; ++i) {
        const double mean = target.init_mean.empty() ? 0.0 : target.init_mean[i];
        q[static_cast<Eigen::Index>(i)] = mean + cfg.init_jitter * standard_normal(rng);
    }
    return q;
}

Vec find_finite_start(const GradientTarget& target, const SamplerConfig& cfg, Rng& rng) {
    Vec grad(static_cast<Eigen::Index>(target.dim));
    for (int attempt = 0; attempt < 20; ++attempt) {
        Vec q = initial_point(target, cfg, rng);
        const double lp = target.log_density({q.data(), target.dim}, {grad.data(), target.dim});
        if (std::isfinite(lp) && grad.allFinite()) return q;
    }
    throw NumericalError("sampler: non-finite log density at initialization");
}

ChainStats run_nuts_chain(const GradientTarget& target, const SamplerConfig& cfg, Rng& rng,
                          double* out_rows) {
    const std::size_t dim = target.dim;
    NutsChain chain(target.log_density, dim, cfg, rng);
    chain.init(find_finite_start(target, cfg, rng));
    chain.init_stepsize();

    DualAveraging dual(cfg.target_accept);
    dual.restart(chain.step_size());
    WindowSchedule windows(cfg.warmup_iterations);
    CovarianceEstimator estimator(dim);

    for (int it = 0; it < cfg.warmup_iterations; ++it) {
        const double accept = chain.transition();
        chain.set_step_size(dual.learn(accept));
        if (!std::isfinite(chain.step_size()) || chain.step_size() < 1e-10)
            throw NumericalError("sampler: step-size adaptation diverged");
        if (windows.in_window()) estimator.add(chain.state().q);
        if (windows.window_end()) {
            windows.advance_window();
            chain.metric().set_inverse(regularized_covariance(estimator, cfg.metric));
            estimator.restart();
            chain.init_stepsize();
            dual.restart(chain.step_size());
        }
        windows.tick();
    }
    if (cfg.warmup_iterations > 0) chain.set_step_size(dual.final_step());

    ChainStats stats;
    stats.step_size = chain.step_size();
    double accept_sum = 0.0, depth_sum = 0.0;
    for (int it = 0; it < cfg.samples_per_chain; ++it) {
        accept_sum += chain.transition();
        depth_sum += chain.depth();
        if (chain.divergent()) ++stats.divergences;
        const Vec& q = chain.state().q;
        std::copy(q.data(), q.data() + dim, out_rows + static_cast<std::size_t>(it) * dim);
    }
    stats.mean_accept = accept_sum / cfg.samples_per_chain;
    stats.mean_tree_depth = depth_sum / cfg.samples_per_chain;
    stats.gradient_evaluations = chain.evaluations();
    return stats;
}

// Adaptive random-walk Metropolis: proposal covariance refreshed on the NUTS
// window schedule, global scale tuned toward an acceptance rate of 0.234.
ChainStats run_random_walk_chain(const GradientTarget& target, const SamplerConfig& cfg, Rng& rng,
                                 double* out_rows) {
    const std::size_t dim = target.dim;
    Vec q = find_finite_start(target, cfg, rng);
    Vec grad(static_cast<Eigen::Index>(dim));
    std::size_t evals = 0;
    auto logp_of = [&](const Vec& x) {
        ++evals;
        const double lp = target.log_density({x.data(), dim}, {grad.data(), dim});
        return std::isfinite(lp) ? lp : kNegInf;
    };
    double logp = logp_of(q);
    Mat chol = Mat::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    double log_scale = 0.0;
    WindowSchedule windows(cfg.warmup_iterations);
    CovarianceEstimator estimator(dim);

    auto step = [&]() {
        Vec z(static_cast<Eigen::Index>(dim));
        for (std::size_t i = 0; i < dim; ++i) z[static_cast<Eigen::Index>(i)] = standard_normal(rng);
        const Vec proposal = q + std::exp(log_scale) * (chol * z) * (2.38 / std::sqrt(static_cast<double>(dim)));
        const double lp = logp_of(proposal);
        const double accept = lp == kNegInf ? 0.0 : std::min(1.0, std::exp(lp - logp));
        if (uniform01(rng) < accept) {
            q = proposal;
            logp = lp;
        }
        return accept;
    };

    for (int it = 0; it < cfg.warmup_iterations; ++it) {
        const double accept = step();
        log_scale += (accept - 0.234) / std::pow(it + 1.0, 0.6);
        if (windows.in_window()) estimator.add(q);
        if (windows.window_end()) {
            windows.advance_window();
            // Cumulative estimate: short windows of a slowly mixing walk
            // would otherwise shrink the proposal.
            Eigen::LLT<Mat> llt(regularized_covariance(estimator, Metric::dense));
            if (llt.info() == Eigen::Success) chol = llt.matrixL();
        }
        windows.tick();
    }
    ChainStats stats;
    stats.step_size = std::exp(log_scale);
    double accept_sum = 0.0;
    for (int it = 0; it < cfg.samples_per_chain; ++it) {
        accept_sum += step();
        std::copy(q.data(), q.data() + dim, out_rows + static_cast<std::size_t>(it) * dim);
    }
    stats.mean_accept = accept_sum / cfg.samples_per_chain;
    stats.gradient_evaluations = evals;
    return stats;
}

}  // namespace

PosteriorSamples run_sampler(const GradientTarget& target, const SamplerConfig& config,
                             std::vector<std::string> names) {
    config.validate();
    if (target.dim == 0) throw ValidationError("sampler: target has no parameters");
    PosteriorSamples out;
    out.names = std::move(names);
    if (out.names.empty())
        for (std::size_t i = 0; i < target.dim; ++i) out.names.push_back("x" + std::to_string(i));
    out.num_chains = config.num_chains;
    out.draws_per_chain = config.samples_per_chain;
    out.draws.resize(static_cast<Eigen::Index>(config.num_chains) * config.samples_per_chain,
                     static_cast<Eigen::Index>(target.dim));
    out.chain_stats.resize(static_cast<std::size_t>(config.num_chains));

    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.num_chains));
    const int threads = config.threads > 0 ? config.threads : omp_get_max_threads();

#pragma omp parallel for schedule(static, 1) num_threads(threads)
    for (int chain = 0; chain < config.num_chains; ++chain) {
        try {
            Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(chain), 0x5a3d);
            double* rows = out.draws.data() +
                           static_cast<std::size_t>(chain) * config.samples_per_chain * target.dim;
            out.chain_stats[static_cast<std::size_t>(chain)] =
                config.algorithm == Algorithm::nuts ? run_nuts_chain(target, config, rng, rows)
                                                    : run_random_walk_chain(target, config, rng, rows);
        } catch (...) {
            errors[static_cast<std::size_t>(chain)] = std::current_exception();
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    if (config.num_chains >= 2)
        out.diagnostics = compute_diagnostics(out.draws, out.num_chains, out.draws_per_chain);
    return out;
}

PosteriorSamples sample_posterior(const Dataset& data, const ParameterLayout& layout,
                                  const SamplerConfig& config, const PriorSpec& prior) {
    config.validate();
    if (!config.blockwise) {
        GradientTarget target;
        target.dim = layout.size();
        target.init_mean = layout.prior_means(prior);
        target.log_density = [&data, &layout, prior](std::span<const double> q, std::span<double> g) {
            return log_posterior_and_grad(layout, data, q, g, Execution::parallel, prior);
        };
        return run_sampler(target, config, layout.names());
    }

    const std::size_t D = layout.num_characteristics();
    std::vector<PosteriorSamples> parts(D);
    std::vector<std::vector<std::size_t>> columns(D);
    std::vector<std::exception_ptr> errors(D);
    const int threads = config.threads > 0 ? config.threads : omp_get_max_threads();

#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (std::size_t d = 0; d < D; ++d) {
        try {
            const CharacteristicBlock block(layout, data, d, prior);
            columns[d] = block.parameters();
            GradientTarget target;
            target.dim = block.size();
            const auto means = layout.prior_means(prior);
            for (std::size_t i : block.parameters()) target.init_mean.push_back(means[i]);
            target.log_density = [&block](std::span<const double> q, std::span<double> g) {
                return block.log_posterior_and_grad(q, g);
            };
            SamplerConfig local = config;
            local.seed = derive_seed(config.seed, d, 0x626c6b);
            local.threads = 1;
            parts[d] = run_sampler(target, local);
        } catch (...) {
            errors[d] = std::current_exception();
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    PosteriorSamples out;
    out.names = layout.names();
    out.num_chains = config.num_chains;
    out.draws_per_chain = config.samples_per_chain;
    out.draws.resize(static_cast<Eigen::Index>(config.num_chains) * config.samples_per_chain,
                     static_cast<Eigen::Index>(layout.size()));
    out.chain_stats.assign(static_cast<std::size_t>(config.num_chains), ChainStats{});
    for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t k = 0; k < columns[d].size(); ++k)
            out.draws.col(static_cast<Eigen::Index>(columns[d][k])) = parts[d].draws.col(static_cast<Eigen::Index>(k));
        // Per chain: mean step size and tree depth over blocks, summed counts.
        for (std::size_t c = 0; c < out.chain_stats.size(); ++c) {
            const ChainStats& s = parts[d].chain_stats[c];
            ChainStats& t = out.chain_stats[c];
            t.step_size += s.step_size / static_cast<double>(D);
            t.mean_accept += s.mean_accept / static_cast<double>(D);
            t.mean_tree_depth += s.mean_tree_depth / static_cast<double>(D);
            t.divergences += s.divergences;
            t.gradient_evaluations += s.gradient_evaluations;
        }
    }
    out.diagnostics = compute_diagnostics(out.draws, out.num_chains, out.draws_per_chain);
    return out;
}

}  // namespace decomp
