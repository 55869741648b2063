#pragma once

// Multivariate normal approximation of a posterior, partitioned into target
// coordinates (theta) and nuisance coordinates (phi), with the conditional
// law of phi given theta.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "decomp/random.hpp"
#include "decomp/sampler.hpp"

namespace decomp {

struct TargetSelection {
    std::vector<std::size_t> theta;
    std::vector<std::size_t> phi;

    // phi becomes the complement of theta in [0, dim).
    static TargetSelection complement(std::vector<std::size_t> theta, std::size_t dim);
    void validate(std::size_t dim) const;
};

struct MvnApproximation {
    Eigen::VectorXd mean_phi;
    Eigen::VectorXd mean_theta;
    Eigen::MatrixXd cov_phi;
    Eigen::MatrixXd cov_phi_theta;  // |phi| x |theta|
    Eigen::MatrixXd cov_theta;
    bool degenerate = false;  // every sampled coordinate constant
};

// Relative ridge added to the target covariance before inversion.
inline constexpr double kThetaRidge = 1e-9;

// Sample mean and unbiased covariance of the selected columns of draws.
MvnApproximation fit_mvn(const DrawMatrix& draws, const TargetSelection& selection);

// phi | theta ~ N(mean + gain (theta - mean_theta), cov).
class ConditionalMvn {
public:
    explicit ConditionalMvn(const MvnApproximation& mvn);

    std::size_t phi_dim() const noexcept { return static_cast<std::size_t>(shift_.size()); }
    std::size_t theta_dim() const noexcept { return static_cast<std::size_t>(mean_theta_.size()); }

    Eigen::VectorXd mean(const Eigen::VectorXd& theta) const;
    const Eigen::MatrixXd& cov() const noexcept { return cov_; }
    const Eigen::MatrixXd& gain() const noexcept { return gain_; }
    // Symmetric square root of cov (clamped eigenvalues).
    const Eigen::MatrixXd& root() const noexcept { return root_; }

    void sample(const Eigen::VectorXd& theta, Rng& rng, Eigen::Ref<Eigen::VectorXd> out) const;

private:
    Eigen::VectorXd shift_;       // mean_phi
    Eigen::VectorXd mean_theta_;
    Eigen::MatrixXd gain_;        // cov_phi_theta * cov_theta^-1
    Eigen::MatrixXd cov_;
    Eigen::MatrixXd root_;
};

// PSD square root via eigen-decomposition. Throws NumericalError when an
// eigenvalue is negative beyond round-off.
Eigen::MatrixXd psd_root(const Eigen::MatrixXd& cov);

// count x |phi| matrix of conditional draws.
Eigen::MatrixXd conditional_nuisance_sample(const MvnApproximation& mvn, const Eigen::VectorXd& theta,
                                            std::size_t count, std::uint64_t seed);

}  // namespace decomp
