#pragma once

#include "ugd/core.hpp"
#include "ugd/denoiser.hpp"
#include "ugd/guidance.hpp"
#include "ugd/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace ugd {

enum class SamplerKind { ddim, ddpm };

struct SamplerConfig {
    SamplerKind kind = SamplerKind::ddim;
    int recurrence_k = 1;
    std::uint64_t seed = 0;
    bool record_trajectory = false;
};

struct TrajectoryRecord {
    int t = 0;
    int n = 0;  // recurrence index, 1-based
    Vector zt;
    Vector eps_unguided;
    Vector eps_guided;
    Vector z0_hat;
    Vector delta;
    std::vector<double> losses;
};

using Trajectory = std::vector<TrajectoryRecord>;

struct ChainResult {
    Vector z0;
    Trajectory trajectory;
    std::size_t denoiser_calls = 0;
    std::size_t recurrence_draws = 0;
};

/// sqrt(a_prev) z0_hat + sqrt(1 - a_prev - sigma^2) eps + sigma xi.
/// sigma = 0 is deterministic DDIM; sigma^2 = (1 - a/a_prev)(1 - a_prev)/(1 - a) is DDPM.
inline Vector generalized_ddim_step(const Vector& zt, const Vector& eps_hat, double alpha,
                                    double alpha_prev, double sigma, const Vector& xi) {
    const Vector z0_hat = predict_z0(zt, eps_hat, alpha);
    const double dir = std::max(0.0, 1.0 - alpha_prev - sigma * sigma);
    Vector out = std::sqrt(alpha_prev) * z0_hat + std::sqrt(dir) * eps_hat;
    if (sigma != 0.0) out += sigma * xi;
    return out;
}

inline Vector ddim_step(const Vector& zt, const Vector& eps_hat, double alpha, double alpha_prev) {
    const Vector z0_hat = predict_z0(zt, eps_hat, alpha);
    return std::sqrt(alpha_prev) * z0_hat + std::sqrt(1.0 - alpha_prev) * eps_hat;
}

inline Vector ddim_step(const Vector& zt, const Vector& eps_hat, int t, const NoiseSchedule& schedule) {
    schedule.check_index(t, 1);
    return ddim_step(zt, eps_hat, schedule.alpha(t), schedule.alpha(t - 1));
}

inline double ddpm_sigma(double alpha, double alpha_prev) {
    return std::sqrt((1.0 - alpha / alpha_prev) * (1.0 - alpha_prev) / (1.0 - alpha));
}

/// Mean of q(z_{t-1} | z_t, z0_hat).
inline Vector ddpm_mean(const Vector& zt, const Vector& eps_hat, double alpha, double alpha_prev) {
    const Vector z0_hat = predict_z0(zt, eps_hat, alpha);
    const double beta = 1.0 - alpha / alpha_prev;
    return std::sqrt(alpha_prev) * beta / (1.0 - alpha) * z0_hat +
           std::sqrt(alpha / alpha_prev) * (1.0 - alpha_prev) / (1.0 - alpha) * zt;
}

/// Ancestral step; sigma_1 = 0 so the final step returns z0_hat.
inline Vector ddpm_step(const Vector& zt, const Vector& eps_hat, int t, const NoiseSchedule& schedule,
                        Rng& rng) {
    schedule.check_index(t, 1);
    const double alpha = schedule.alpha(t);
    const double alpha_prev = schedule.alpha(t - 1);
    Vector mean = ddpm_mean(zt, eps_hat, alpha, alpha_prev);
    if (t == 1) return mean;
    return mean + ddpm_sigma(alpha, alpha_prev) * standard_normal(zt.size(), rng);
}

/// z'_t = sqrt(r) z_{t-1} + sqrt(1 - r) eps', r = alpha_t / alpha_{t-1}.
inline Vector self_recur(const Vector& z_prev, double ratio, const Vector& noise) {
    require_dim(noise, z_prev.size(), "self-recurrence noise");
    return std::sqrt(ratio) * z_prev + std::sqrt(1.0 - ratio) * noise;
}

/// Re-noises z_{t-1} back to scale t; at t = 1 this uses alpha_0 = 1.
inline Vector self_recur(const Vector& z_prev, int t, const NoiseSchedule& schedule, Rng& rng) {
    schedule.check_index(t, 1);
    return self_recur(z_prev, schedule.ratio(t), standard_normal(z_prev.size(), rng));
}

namespace detail {

inline bool needs_jacobian(const std::vector<GuidanceSpec>& specs) {
    return std::any_of(specs.begin(), specs.end(),
                       [](const GuidanceSpec& s) { return s.weight != 0.0 && s.w != 0.0; });
}

}  // namespace detail

/// One guided chain from z_T ~ N(0, I) down to z_0.
///
/// For t = T..1 and n = 1..k: evaluate the denoiser once, apply forward then backward
/// guidance through `combine_guidance`, step to z_{t-1}, and for n < k re-noise back to
/// scale t. The re-noise is skipped after the last inner iteration, so each chain makes
/// exactly k T denoiser calls and (k - 1) T recurrence draws.
inline ChainResult universal_guidance_sample(const SamplerConfig& config, const Denoiser& denoiser,
                                             const std::vector<GuidanceSpec>& specs, Rng& rng) {
    if (config.recurrence_k < 1) throw InvalidRange("recurrence count k must be >= 1");
    const NoiseSchedule& schedule = denoiser.schedule();
    const bool want_jacobian = detail::needs_jacobian(specs);
    ChainResult out;
    Vector z = standard_normal(denoiser.dimension(), rng);

    for (int t = schedule.steps(); t >= 1; --t) {
        for (int n = 1; n <= config.recurrence_k; ++n) {
            const std::string where = "step t=" + std::to_string(t) + ", n=" + std::to_string(n) + ": ";
            try {
                const DenoiserOutput den = denoiser.evaluate(z, t, want_jacobian);
                ++out.denoiser_calls;
                require_finite(den.eps_hat, "denoiser output");

                Vector eps = den.eps_hat;
                CombinedGuidance guided;
                if (!specs.empty()) {
                    guided = combine_guidance(specs, z, t, den, schedule);
                    eps = guided.eps;
                }

                Vector next = config.kind == SamplerKind::ddim ? ddim_step(z, eps, t, schedule)
                                                               : ddpm_step(z, eps, t, schedule, rng);
                require_finite(next, "sampler state");

                if (config.record_trajectory) {
                    TrajectoryRecord rec;
                    rec.t = t;
                    rec.n = n;
                    rec.zt = z;
                    rec.eps_unguided = den.eps_hat;
                    rec.eps_guided = eps;
                    rec.z0_hat = specs.empty() ? predict_z0(z, eps, t, schedule) : guided.z0_hat;
                    rec.delta = specs.empty() ? Vector::Zero(z.size()) : guided.delta;
                    rec.losses = guided.losses;
                    out.trajectory.push_back(std::move(rec));
                }

                if (n < config.recurrence_k) {
                    z = self_recur(next, t, schedule, rng);
                    ++out.recurrence_draws;
                } else {
                    z = std::move(next);
                }
            } catch (const NumericalError& e) {
                throw NumericalError(where + e.what());
            }
        }
    }
    out.z0 = std::move(z);
    return out;
}

struct ChainBatch {
    Matrix samples;  // one chain per row
    std::vector<Trajectory> trajectories;
};

/// Runs `n_chains` independent chains; chain i draws from chain_rng(config.seed, i), so the
/// output does not depend on `threads`.
inline ChainBatch sample_chains(const SamplerConfig& config, const Denoiser& denoiser,
                                const std::vector<GuidanceSpec>& specs, std::size_t n_chains,
                                unsigned threads = 1) {
    ChainBatch batch;
    batch.samples = Matrix(static_cast<Eigen::Index>(n_chains), denoiser.dimension());
    if (config.record_trajectory) batch.trajectories.resize(n_chains);
    std::vector<std::exception_ptr> errors(n_chains);

    auto run_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            try {
                Rng rng = chain_rng(config.seed, i);
                ChainResult r = universal_guidance_sample(config, denoiser, specs, rng);
                batch.samples.row(static_cast<Eigen::Index>(i)) = r.z0.transpose();
                if (config.record_trajectory) batch.trajectories[i] = std::move(r.trajectory);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n_chains, 1))));
    if (threads == 1) {
        run_range(0, n_chains);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n_chains + threads - 1) / threads;
        for (unsigned w = 0; w < threads; ++w) {
            const std::size_t begin = std::min(n_chains, w * chunk);
            const std::size_t end = std::min(n_chains, begin + chunk);
            pool.emplace_back(run_range, begin, end);
        }
        for (auto& th : pool) th.join();
    }

    for (std::size_t i = 0; i < n_chains; ++i) {
        if (!errors[i]) continue;
        const std::string prefix = "chain " + std::to_string(i) + ": ";
        try {
            std::rethrow_exception(errors[i]);
        } catch (const NumericalError& e) {
            throw NumericalError(prefix + e.what());
        } catch (const Error& e) {
            throw Error(prefix + e.what());
        }
    }
    return batch;
}

}  // namespace ugd
