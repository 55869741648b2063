#include "decomp/mvn.hpp"

#include <algorithm>
#include <cmath>

#include "decomp/error.hpp"

namespace decomp {

TargetSelection TargetSelection::complement(std::vector<std::size_t> theta, std::size_t dim) {
    TargetSelection s;
    std::vector<char> used(dim, 0);
    for (std::size_t i : theta) {
        if (i >= dim) throw ValidationError("target index out of range");
        used[i] = 1;
    }
    s.theta = std::move(theta);
    for (std::size_t i = 0; i < dim; ++i)
        if (!used[i]) s.phi.push_back(i);
    return s;
}

void TargetSelection::validate(std::size_t dim) const {
    if (theta.empty()) throw ValidationError("target selection is empty");
    std::vector<int> seen(dim, 0);
    for (std::size_t i : theta) {
        if (i >= dim) throw ValidationError("target index out of range");
        if (seen[i]++) throw ValidationError("target index repeated");
    }
    for (std::size_t i : phi) {
        if (i >= dim) throw ValidationError("nuisance index out of range");
        if (seen[i]++) throw ValidationError("target and nuisance overlap");
    }
}

MvnApproximation fit_mvn(const DrawMatrix& draws, const TargetSelection& selection) {
    const auto L = draws.rows();
    if (L < 2) throw ValidationError("fit_mvn: need at least two draws");
    selection.validate(static_cast<std::size_t>(draws.cols()));

    std::vector<std::size_t> order = selection.phi;
    order.insert(order.end(), selection.theta.begin(), selection.theta.end());
    const auto k = static_cast<Eigen::Index>(order.size());
    Eigen::MatrixXd x(L, k);
    for (Eigen::Index j = 0; j < k; ++j) x.col(j) = draws.col(static_cast<Eigen::Index>(order[j]));

    const Eigen::VectorXd mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    const Eigen::MatrixXd sigma = (centered.transpose() * centered) / static_cast<double>(L - 1);

    const auto p = static_cast<Eigen::Index>(selection.phi.size());
    const auto t = static_cast<Eigen::Index>(selection.theta.size());
    MvnApproximation out;
    out.mean_phi = mu.head(p);
    out.mean_theta = mu.tail(t);
    out.cov_phi = sigma.topLeftCorner(p, p);
    out.cov_phi_theta = sigma.topRightCorner(p, t);
    out.cov_theta = sigma.bottomRightCorner(t, t);
    out.degenerate = sigma.diagonal().maxCoeff() <= 0.0;
    return out;
}

Eigen::MatrixXd psd_root(const Eigen::MatrixXd& cov) {
    if (cov.size() == 0) return cov;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericalError("covariance eigen-decomposition failed");
    Eigen::VectorXd ev = eig.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < -1e-8 * scale) throw NumericalError("conditional covariance is not positive semidefinite");
        ev[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

ConditionalMvn::ConditionalMvn(const MvnApproximation& mvn)
    : shift_(mvn.mean_phi), mean_theta_(mvn.mean_theta) {
    const auto t = mvn.cov_theta.rows();
    Eigen::MatrixXd st = mvn.cov_theta;
    const double ridge = kThetaRidge * (t > 0 ? std::max(st.trace() / static_cast<double>(t), 1e-300) : 0.0);
    st.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(st);
    if (ldlt.info() != Eigen::Success) throw NumericalError("target covariance is singular");
    // gain = S_pt * S_t^-1, computed as (S_t^-1 S_pt^T)^T.
    gain_ = ldlt.solve(mvn.cov_phi_theta.transpose()).transpose();
    cov_ = mvn.cov_phi - gain_ * mvn.cov_phi_theta.transpose();
    cov_ = 0.5 * (cov_ + cov_.transpose());
    root_ = psd_root(cov_);
}

Eigen::VectorXd ConditionalMvn::mean(const Eigen::VectorXd& theta) const {
    return shift_ + gain_ * (theta - mean_theta_);
}

void ConditionalMvn::sample(const Eigen::VectorXd& theta, Rng& rng, Eigen::Ref<Eigen::VectorXd> out) const {
    Eigen::VectorXd z(shift_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
    out = mean(theta) + root_ * z;
}

Eigen::MatrixXd conditional_nuisance_sample(const MvnApproximation& mvn, const Eigen::VectorXd& theta,
                                            std::size_t count, std::uint64_t seed) {
    if (theta.size() != mvn.mean_theta.size()) throw ValidationError("theta has the wrong dimension");
    ConditionalMvn cond(mvn);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(cond.phi_dim()));
    Rng rng = make_rng(seed);
    Eigen::VectorXd row(cond.phi_dim());
    for (std::size_t i = 0; i < count; ++i) {
        cond.sample(theta, rng, row);
        out.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return out;
}

}  // namespace decomp
