#pragma once

#include "ugd/core.hpp"
#include "ugd/gmm.hpp"
#include "ugd/schedule.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace ugd {

struct DenoiserOutput {
    Vector eps_hat;                 // predicted noise eps(z_t, t)
    std::optional<Matrix> jacobian;  // d eps_hat / d z_t
};

/// Noise-prediction contract: eps(z_t, t) approximates the noise that produced z_t.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Eigen::Index dimension() const = 0;
    virtual const NoiseSchedule& schedule() const = 0;
    virtual DenoiserOutput evaluate(const Vector& zt, int t, bool want_jacobian) const = 0;
};

/// z0_hat = (z_t - sqrt(1 - a) eps) / sqrt(a).
inline Vector predict_z0(const Vector& zt, const Vector& eps_hat, double alpha) {
    require_dim(eps_hat, zt.size(), "predict_z0 noise");
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw DegenerateSchedule("predict_z0 needs alpha_t strictly inside (0, 1)");
    }
    return (zt - std::sqrt(1.0 - alpha) * eps_hat) / std::sqrt(alpha);
}

inline Vector predict_z0(const Vector& zt, const Vector& eps_hat, int t,
                         const NoiseSchedule& schedule) {
    schedule.check_index(t, 1);
    return predict_z0(zt, eps_hat, schedule.alpha(t));
}

namespace detail {

inline DenoiserOutput denoise_exact(const NoisyMarginals& marg, const Vector& zt,
                                    bool want_jacobian) {
    const double alpha = marg.alpha();
    if (alpha >= 1.0) throw DegenerateSchedule("analytic denoiser: alpha_t = 1 carries no noise");
    const Eigen::Index d = zt.size();
    const double root_a = std::sqrt(alpha);
    const double root_n = std::sqrt(1.0 - alpha);

    const Vector w = marg.responsibilities(zt);
    std::vector<Vector> cond;
    cond.reserve(marg.size());
    Vector mean = Vector::Zero(d);
    for (std::size_t i = 0; i < marg.size(); ++i) {
        cond.push_back(marg.conditional_mean(i, zt));
        mean += w[static_cast<Eigen::Index>(i)] * cond.back();
    }

    DenoiserOutput out;
    out.eps_hat = (zt - root_a * mean) / root_n;
    if (!want_jacobian) return out;

    // dE/dz = sum_i w_i gain_i + m_i (grad w_i)^T, grad w_i = w_i (s_i - sum_j w_j s_j).
    std::vector<Vector> scores;
    scores.reserve(marg.size());
    Vector mean_score = Vector::Zero(d);
    for (std::size_t i = 0; i < marg.size(); ++i) {
        scores.push_back(marg.score(i, zt));
        mean_score += w[static_cast<Eigen::Index>(i)] * scores.back();
    }
    Matrix dmean = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < marg.size(); ++i) {
        const double wi = w[static_cast<Eigen::Index>(i)];
        dmean += wi * marg.gain(i);
        dmean += cond[i] * (wi * (scores[i] - mean_score)).transpose();
    }
    out.jacobian = (Matrix::Identity(d, d) - root_a * dmean) / root_n;
    return out;
}

}  // namespace detail

/// Exact eps for a mixture prior, with its Jacobian. Builds the per-step factors on the fly.
inline DenoiserOutput analytic_denoiser(const Vector& zt, int t, const GaussianMixture& gmm,
                                        const NoiseSchedule& schedule, bool want_jacobian) {
    schedule.check_index(t, 1);
    require_dim(zt, gmm.dimension(), "analytic_denoiser point");
    return detail::denoise_exact(NoisyMarginals(gmm, schedule.alpha(t)), zt, want_jacobian);
}

/// Bayes-optimal denoiser of a Gaussian mixture. Per-step factorizations are computed once
/// at construction; the object is immutable afterwards.
class AnalyticDenoiser final : public Denoiser {
public:
    AnalyticDenoiser(GaussianMixture gmm, NoiseSchedule schedule)
        : gmm_(std::move(gmm)), schedule_(std::move(schedule)) {
        steps_.reserve(static_cast<std::size_t>(schedule_.steps()));
        for (int t = 1; t <= schedule_.steps(); ++t) steps_.emplace_back(gmm_, schedule_.alpha(t));
    }

    Eigen::Index dimension() const override { return gmm_.dimension(); }
    const NoiseSchedule& schedule() const override { return schedule_; }
    const GaussianMixture& mixture() const { return gmm_; }
    const NoisyMarginals& marginals(int t) const {
        schedule_.check_index(t, 1);
        return steps_[static_cast<std::size_t>(t) - 1];
    }

    DenoiserOutput evaluate(const Vector& zt, int t, bool want_jacobian) const override {
        require_dim(zt, dimension(), "denoiser input");
        return detail::denoise_exact(marginals(t), zt, want_jacobian);
    }

private:
    GaussianMixture gmm_;
    NoiseSchedule schedule_;
    std::vector<NoisyMarginals> steps_;
};

/// Adds a fixed, bounded, smooth error amplitude * sin(W z + b) to another denoiser's output.
/// W and b are drawn once from `seed`; the Jacobian stays exact.
class PerturbedDenoiser final : public Denoiser {
public:
    PerturbedDenoiser(std::shared_ptr<const Denoiser> base, double amplitude, std::uint64_t seed)
        : base_(std::move(base)), amplitude_(amplitude) {
        Rng rng(seed);
        const Eigen::Index d = base_->dimension();
        freq_ = Matrix(d, d);
        for (Eigen::Index c = 0; c < d; ++c) freq_.col(c) = standard_normal(d, rng);
        std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
        phase_ = Vector(d);
        for (Eigen::Index i = 0; i < d; ++i) phase_[i] = phase(rng);
    }

    Eigen::Index dimension() const override { return base_->dimension(); }
    const NoiseSchedule& schedule() const override { return base_->schedule(); }

    DenoiserOutput evaluate(const Vector& zt, int t, bool want_jacobian) const override {
        DenoiserOutput out = base_->evaluate(zt, t, want_jacobian);
        const Vector arg = freq_ * zt + phase_;
        out.eps_hat += amplitude_ * arg.array().sin().matrix();
        if (out.jacobian) {
            *out.jacobian += amplitude_ * arg.array().cos().matrix().asDiagonal() * freq_;
        }
        return out;
    }

private:
    std::shared_ptr<const Denoiser> base_;
    double amplitude_;
    Matrix freq_;
    Vector phase_;
};

}  // namespace ugd
