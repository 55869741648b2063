#include <doctest.h>

#include <cmath>

#include "decomp/error.hpp"
#include "decomp/mvn.hpp"
#include "decomp/random.hpp"

using namespace decomp;

namespace {

MvnApproximation two_dim(double rho) {
    MvnApproximation m;
    m.mean_phi = Eigen::VectorXd::Zero(1);
    m.mean_theta = Eigen::VectorXd::Zero(1);
    m.cov_phi = Eigen::MatrixXd::Constant(1, 1, 1.0);
    m.cov_theta = Eigen::MatrixXd::Constant(1, 1, 1.0);
    m.cov_phi_theta = Eigen::MatrixXd::Constant(1, 1, rho);
    return m;
}

DrawMatrix draws_from(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov, Eigen::Index n, std::uint64_t seed) {
    const Eigen::MatrixXd l = cov.llt().matrixL();
    DrawMatrix d(n, mu.size());
    Rng rng = make_rng(seed);
    Eigen::VectorXd z(mu.size());
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
        d.row(r) = (mu + l * z).transpose();
    }
    return d;
}

}  // namespace

TEST_CASE("Schur complement in two dimensions") {
    const ConditionalMvn c(two_dim(0.5));
    Eigen::VectorXd theta(1);
    theta << 1.0;
    CHECK(c.mean(theta)[0] == doctest::Approx(0.5));
    CHECK(c.cov()(0, 0) == doctest::Approx(0.75));
}

TEST_CASE("independent blocks give the marginal") {
    MvnApproximation m;
    m.mean_phi = Eigen::Vector2d(1.0, -1.0);
    m.mean_theta = Eigen::VectorXd::Constant(1, 3.0);
    m.cov_phi = Eigen::Matrix2d{{2.0, 0.3}, {0.3, 1.0}};
    m.cov_theta = Eigen::MatrixXd::Constant(1, 1, 4.0);
    m.cov_phi_theta = Eigen::MatrixXd::Zero(2, 1);
    const ConditionalMvn c(m);
    Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, -7.0);
    CHECK((c.mean(theta) - m.mean_phi).norm() < 1e-12);
    CHECK((c.cov() - m.cov_phi).norm() < 1e-12);
    CHECK((c.root() * c.root() - m.cov_phi).norm() < 1e-12);
}

TEST_CASE("conditional samples match the analytic moments") {
    Eigen::Matrix3d cov{{2.0, 0.6, 0.8}, {0.6, 1.0, 0.3}, {0.8, 0.3, 1.5}};
    MvnApproximation m;
    m.mean_phi = Eigen::Vector2d(0.5, -0.2);
    m.mean_theta = Eigen::VectorXd::Constant(1, 1.0);
    m.cov_phi = cov.topLeftCorner(2, 2);
    m.cov_phi_theta = cov.topRightCorner(2, 1);
    m.cov_theta = cov.bottomRightCorner(1, 1);
    Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 2.0);

    const Eigen::Vector2d mu = m.mean_phi + m.cov_phi_theta * (theta - m.mean_theta) / 1.5;
    const Eigen::Matrix2d s = m.cov_phi - m.cov_phi_theta * m.cov_phi_theta.transpose() / 1.5;

    const std::size_t n = 100000;
    const Eigen::MatrixXd x = conditional_nuisance_sample(m, theta, n, 5);
    const Eigen::VectorXd xm = x.colwise().mean().transpose();
    const Eigen::MatrixXd c = x.rowwise() - xm.transpose();
    const Eigen::MatrixXd xs = c.transpose() * c / static_cast<double>(n - 1);
    for (int i = 0; i < 2; ++i) {
        CHECK(std::abs(xm[i] - mu[i]) < 3.0 * std::sqrt(s(i, i) / n));
        for (int j = 0; j < 2; ++j) {
            const double se = std::sqrt((s(i, j) * s(i, j) + s(i, i) * s(j, j)) / n);
            CHECK(std::abs(xs(i, j) - s(i, j)) < 3.0 * se);
        }
    }
    CHECK((conditional_nuisance_sample(m, theta, 10, 5) - x.topRows(10)).norm() == 0.0);
}

TEST_CASE("fit_mvn recovers a known normal") {
    Eigen::Matrix3d cov{{1.0, 0.4, -0.2}, {0.4, 2.0, 0.5}, {-0.2, 0.5, 0.7}};
    const Eigen::Vector3d mu(1.0, 2.0, -3.0);
    const DrawMatrix d = draws_from(mu, cov, 100000, 8);
    const MvnApproximation m = fit_mvn(d, TargetSelection::complement({1}, 3));
    CHECK(m.mean_theta.size() == 1);
    CHECK(std::abs(m.mean_theta[0] - 2.0) < 3.0 * std::sqrt(2.0 / 1e5));
    CHECK(std::abs(m.mean_phi[0] - 1.0) < 3.0 * std::sqrt(1.0 / 1e5));
    CHECK(std::abs(m.mean_phi[1] + 3.0) < 3.0 * std::sqrt(0.7 / 1e5));
    CHECK(m.cov_phi_theta(0, 0) == doctest::Approx(0.4).epsilon(0.05));
    CHECK(m.cov_phi_theta(1, 0) == doctest::Approx(0.5).epsilon(0.05));
    CHECK_FALSE(m.degenerate);
}

TEST_CASE("cross covariance of independent draws shrinks with more draws") {
    const Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
    const Eigen::Vector2d mu = Eigen::Vector2d::Zero();
    const auto small = fit_mvn(draws_from(mu, cov, 1000, 1), TargetSelection::complement({0}, 2));
    const auto large = fit_mvn(draws_from(mu, cov, 100000, 1), TargetSelection::complement({0}, 2));
    CHECK(std::abs(large.cov_phi_theta(0, 0)) < std::abs(small.cov_phi_theta(0, 0)));
}

TEST_CASE("identical draws are degenerate but still usable") {
    DrawMatrix d = DrawMatrix::Constant(50, 3, 1.25);
    const MvnApproximation m = fit_mvn(d, TargetSelection::complement({2}, 3));
    CHECK(m.degenerate);
    CHECK(m.cov_phi.norm() == 0.0);
    const ConditionalMvn c(m);
    Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 1.25);
    CHECK((c.mean(theta) - m.mean_phi).norm() == 0.0);
}

TEST_CASE("target selections are validated") {
    CHECK_THROWS_AS(TargetSelection::complement({5}, 3), ValidationError);
    TargetSelection s{{0, 0}, {1}};
    CHECK_THROWS_AS(s.validate(3), ValidationError);
    s = {{0}, {0, 1}};
    CHECK_THROWS_AS(s.validate(3), ValidationError);
    s = {{}, {1}};
    CHECK_THROWS_AS(s.validate(3), ValidationError);
}

TEST_CASE("psd_root rejects indefinite matrices") {
    Eigen::Matrix2d bad{{1.0, 2.0}, {2.0, 1.0}};
    CHECK_THROWS_AS(psd_root(bad), NumericalError);
    Eigen::Matrix2d ok{{4.0, 0.0}, {0.0, 0.0}};
    const Eigen::MatrixXd r = psd_root(ok);
    CHECK((r * r - ok).norm() < 1e-12);
}
