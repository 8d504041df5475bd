#pragma once

#include "ugd/core.hpp"
#include "ugd/schedule.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ugd {

/// Multivariate normal with a cached Cholesky factor.
class Gaussian {
public:
    Gaussian(Vector mean, const Matrix& covariance) : mean_(std::move(mean)), llt_(covariance) {
        if (covariance.rows() != mean_.size() || covariance.cols() != mean_.size()) {
            throw DimensionMismatch("covariance shape does not match mean dimension");
        }
        if (llt_.info() != Eigen::Success) {
            throw NumericalError("covariance is not positive definite");
        }
        const Matrix l = llt_.matrixL();
        log_norm_ = -0.5 * static_cast<double>(mean_.size()) * std::log(2.0 * std::numbers::pi) -
                    l.diagonal().array().log().sum();
    }

    const Vector& mean() const { return mean_; }
    Matrix covariance() const { return llt_.reconstructedMatrix(); }
    Matrix cholesky() const { return llt_.matrixL(); }
    Eigen::Index dimension() const { return mean_.size(); }

    double log_pdf(const Vector& x) const {
        const Vector diff = x - mean_;
        const Vector white = llt_.matrixL().solve(diff);
        return log_norm_ - 0.5 * white.squaredNorm();
    }

    /// Covariance^{-1} v.
    Vector solve(const Vector& v) const { return llt_.solve(v); }
    Matrix solve(const Matrix& m) const { return llt_.solve(m); }

    Vector sample(Rng& rng) const {
        return mean_ + llt_.matrixL() * standard_normal(mean_.size(), rng);
    }

private:
    Vector mean_;
    Eigen::LLT<Matrix> llt_;
    double log_norm_ = 0.0;
};

/// Finite Gaussian mixture over R^d; the stand-in data distribution.
class GaussianMixture {
public:
    GaussianMixture(std::vector<double> weights, std::vector<Vector> means,
                    std::vector<Matrix> covariances)
        : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)) {
        const std::size_t k = weights_.size();
        if (k == 0) throw InvalidRange("mixture needs at least one component");
        if (means_.size() != k || covariances_.size() != k) {
            throw DimensionMismatch("weights, means and covariances differ in length");
        }
        double total = 0.0;
        for (double w : weights_) {
            if (!(w >= 0.0)) throw InvalidRange("mixture weights must be nonnegative");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-12) throw InvalidRange("mixture weights must sum to 1");
        const Eigen::Index d = means_.front().size();
        if (d < 1) throw DimensionMismatch("mixture dimension must be >= 1");
        for (std::size_t i = 0; i < k; ++i) {
            require_dim(means_[i], d, "mixture mean");
            const Matrix& c = covariances_[i];
            if (c.rows() != d || c.cols() != d) throw DimensionMismatch("covariance must be d x d");
            if (!c.isApprox(c.transpose(), 1e-12)) throw InvalidRange("covariance must be symmetric");
            Eigen::SelfAdjointEigenSolver<Matrix> eig(c, Eigen::EigenvaluesOnly);
            if (eig.eigenvalues().minCoeff() <= 1e-10) {
                throw InvalidRange("covariance " + std::to_string(i) + " is not positive definite");
            }
            components_.emplace_back(means_[i], c);
        }
    }

    /// Equal-weight mixture with isotropic covariance `variance * I`.
    static GaussianMixture isotropic(std::vector<Vector> means, double variance) {
        const std::size_t k = means.size();
        const Eigen::Index d = k == 0 ? 0 : means.front().size();
        std::vector<double> w(k, 1.0 / static_cast<double>(k));
        std::vector<Matrix> cov(k, variance * Matrix::Identity(d, d));
        return {std::move(w), std::move(means), std::move(cov)};
    }

    /// d = 2, means (-3, 0) and (3, 0), covariance 0.25 I, equal weights.
    static GaussianMixture default_world() {
        Vector a(2), b(2);
        a << -3.0, 0.0;
        b << 3.0, 0.0;
        return isotropic({a, b}, 0.25);
    }

    Eigen::Index dimension() const { return means_.front().size(); }
    std::size_t size() const { return weights_.size(); }
    const std::vector<double>& weights() const { return weights_; }
    const std::vector<Vector>& means() const { return means_; }
    const std::vector<Matrix>& covariances() const { return covariances_; }
    const Gaussian& component(std::size_t i) const { return components_.at(i); }

    Vector log_weights() const {
        Vector out(static_cast<Eigen::Index>(size()));
        for (std::size_t i = 0; i < size(); ++i) {
            out[static_cast<Eigen::Index>(i)] = std::log(weights_[i]);
        }
        return out;
    }

private:
    std::vector<double> weights_;
    std::vector<Vector> means_;
    std::vector<Matrix> covariances_;
    std::vector<Gaussian> components_;
};

/// log sum_i w_i N(z; mu_i, Sigma_i).
inline double gmm_log_density(const GaussianMixture& gmm, const Vector& z) {
    require_dim(z, gmm.dimension(), "gmm_log_density point");
    Vector terms = gmm.log_weights();
    for (std::size_t i = 0; i < gmm.size(); ++i) {
        terms[static_cast<Eigen::Index>(i)] += gmm.component(i).log_pdf(z);
    }
    return log_sum_exp(terms);
}

/// Log posterior component probabilities of a clean point.
inline Vector gmm_log_responsibilities(const GaussianMixture& gmm, const Vector& z) {
    Vector terms = gmm.log_weights();
    for (std::size_t i = 0; i < gmm.size(); ++i) {
        terms[static_cast<Eigen::Index>(i)] += gmm.component(i).log_pdf(z);
    }
    return terms.array() - log_sum_exp(terms);
}

/// i.i.d. draws, one per row.
inline Matrix gmm_sample(const GaussianMixture& gmm, std::size_t n, Rng& rng) {
    std::discrete_distribution<std::size_t> pick(gmm.weights().begin(), gmm.weights().end());
    Matrix out(static_cast<Eigen::Index>(n), gmm.dimension());
    for (std::size_t r = 0; r < n; ++r) {
        out.row(static_cast<Eigen::Index>(r)) = gmm.component(pick(rng)).sample(rng).transpose();
    }
    return out;
}

/// Per-component quantities of the noisy marginal p(z_t) at signal level alpha.
///
/// Component i has marginal N(sqrt(a) mu_i, a Sigma_i + (1 - a) I) and conditional mean
/// m_i(z) = mu_i + gain_i (z - sqrt(a) mu_i) with gain_i = sqrt(a) Sigma_i C_i^{-1}.
class NoisyMarginals {
public:
    NoisyMarginals(const GaussianMixture& gmm, double alpha) : alpha_(alpha) {
        if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidRange("signal level must lie in (0, 1]");
        const Eigen::Index d = gmm.dimension();
        const double root = std::sqrt(alpha);
        log_weights_ = gmm.log_weights();
        means_ = gmm.means();
        for (std::size_t i = 0; i < gmm.size(); ++i) {
            const Matrix& sigma = gmm.covariances()[i];
            const Matrix marginal_cov = alpha * sigma + (1.0 - alpha) * Matrix::Identity(d, d);
            marginals_.emplace_back(root * gmm.means()[i], marginal_cov);
            // C_i is symmetric, so Sigma_i C_i^{-1} = (C_i^{-1} Sigma_i)^T.
            gains_.push_back(root * marginals_.back().solve(sigma).transpose());
        }
    }

    double alpha() const { return alpha_; }
    std::size_t size() const { return marginals_.size(); }
    const Gaussian& marginal(std::size_t i) const { return marginals_[i]; }
    const Matrix& gain(std::size_t i) const { return gains_[i]; }

    /// Unnormalized log w_i + log N_i(z_t).
    Vector log_joint(const Vector& zt) const {
        Vector terms = log_weights_;
        for (std::size_t i = 0; i < size(); ++i) {
            terms[static_cast<Eigen::Index>(i)] += marginals_[i].log_pdf(zt);
        }
        return terms;
    }

    Vector responsibilities(const Vector& zt) const { return softmax(log_joint(zt)); }

    Vector conditional_mean(std::size_t i, const Vector& zt) const {
        return means_[i] + gains_[i] * (zt - marginals_[i].mean());
    }

    /// Gradient of log N_i(z_t) with respect to z_t.
    Vector score(std::size_t i, const Vector& zt) const {
        return -marginals_[i].solve(Vector(zt - marginals_[i].mean()));
    }

private:
    double alpha_;
    Vector log_weights_;
    std::vector<Vector> means_;
    std::vector<Gaussian> marginals_;
    std::vector<Matrix> gains_;
};

/// E[z_0 | z_t] under the mixture prior at signal level alpha.
inline Vector gmm_posterior_mean(const Vector& zt, double alpha, const GaussianMixture& gmm) {
    require_dim(zt, gmm.dimension(), "gmm_posterior_mean point");
    const NoisyMarginals marg(gmm, alpha);
    const Vector w = marg.responsibilities(zt);
    Vector mean = Vector::Zero(zt.size());
    for (std::size_t i = 0; i < marg.size(); ++i) {
        mean += w[static_cast<Eigen::Index>(i)] * marg.conditional_mean(i, zt);
    }
    return mean;
}

inline Vector gmm_posterior_mean(const Vector& zt, int t, const GaussianMixture& gmm,
                                 const NoiseSchedule& schedule) {
    schedule.check_index(t, 1);
    return gmm_posterior_mean(zt, schedule.alpha(t), gmm);
}

}  // namespace ugd
