#pragma once

#include "ugd/core.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace ugd {

/// Cumulative signal scales alpha_1 > alpha_2 > ... > alpha_T > 0.
///
/// alpha_t is the *cumulative* coefficient: z_t = sqrt(alpha_t) z_0 + sqrt(1 - alpha_t) eps.
/// (Much of the diffusion literature writes this as alpha-bar.) Storage is indexed by t
/// directly: slot 0 holds the clean-data convention alpha_0 = 1 and slots 1..T hold the
/// schedule, so `alpha(t)` is valid for t in [0, T].
class NoiseSchedule {
public:
    explicit NoiseSchedule(std::vector<double> alphas) {
        if (alphas.empty()) throw InvalidRange("noise schedule needs at least one step");
        for (std::size_t i = 0; i < alphas.size(); ++i) {
            const double a = alphas[i];
            if (!(a > 0.0 && a <= 1.0)) {
                throw InvalidRange("alpha_" + std::to_string(i + 1) + " must lie in (0, 1]");
            }
            if (i > 0 && !(a < alphas[i - 1])) {
                throw InvalidRange("alphas must be strictly decreasing (t = " +
                                   std::to_string(i + 1) + ")");
            }
        }
        alphas_.reserve(alphas.size() + 1);
        alphas_.push_back(1.0);
        alphas_.insert(alphas_.end(), alphas.begin(), alphas.end());
    }

    int steps() const { return static_cast<int>(alphas_.size()) - 1; }

    /// alpha_t for t in [0, T]; alpha_0 = 1.
    double alpha(int t) const {
        check_index(t, 0);
        return alphas_[static_cast<std::size_t>(t)];
    }

    /// alpha_t / alpha_{t-1} for t in [1, T].
    double ratio(int t) const {
        check_index(t, 1);
        return alphas_[static_cast<std::size_t>(t)] / alphas_[static_cast<std::size_t>(t) - 1];
    }

    /// alpha_1..alpha_T (without the t = 0 slot).
    std::vector<double> alphas() const { return {alphas_.begin() + 1, alphas_.end()}; }

    void check_index(int t, int lowest) const {
        if (t < lowest || t > steps()) {
            throw IndexOutOfRange("time index " + std::to_string(t) + " outside [" +
                                  std::to_string(lowest) + ", " + std::to_string(steps()) + "]");
        }
    }

private:
    std::vector<double> alphas_;
};

/// alpha_t = prod_{s <= t} (1 - beta_s), beta linearly spaced in [beta_min, beta_max].
inline NoiseSchedule build_linear_schedule(int steps, double beta_min, double beta_max) {
    if (steps < 1) throw InvalidRange("step count must be >= 1");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
        throw InvalidRange("need 0 < beta_min <= beta_max < 1");
    }
    std::vector<double> alphas(static_cast<std::size_t>(steps));
    double running = 1.0;
    for (int s = 0; s < steps; ++s) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(s) / (steps - 1);
        const double beta = beta_min + (beta_max - beta_min) * frac;
        running *= 1.0 - beta;
        alphas[static_cast<std::size_t>(s)] = running;
    }
    return NoiseSchedule(std::move(alphas));
}

/// A noisy point z_t; t = 0 is clean data.
struct DiffusionState {
    Vector z;
    int t = 0;
};

inline Vector forward_diffuse(const Vector& z0, const Vector& eps, double alpha) {
    require_dim(eps, z0.size(), "forward_diffuse noise");
    return std::sqrt(alpha) * z0 + std::sqrt(1.0 - alpha) * eps;
}

inline Vector forward_diffuse(const Vector& z0, int t, const Vector& eps,
                              const NoiseSchedule& schedule) {
    schedule.check_index(t, 1);
    return forward_diffuse(z0, eps, schedule.alpha(t));
}

inline Vector true_noise_from(const Vector& zt, const Vector& z0, double alpha) {
    require_dim(z0, zt.size(), "true_noise_from clean point");
    if (alpha >= 1.0) throw DegenerateSchedule("true_noise_from: alpha_t = 1 carries no noise");
    return (zt - std::sqrt(alpha) * z0) / std::sqrt(1.0 - alpha);
}

inline Vector true_noise_from(const Vector& zt, const Vector& z0, int t,
                              const NoiseSchedule& schedule) {
    schedule.check_index(t, 1);
    return true_noise_from(zt, z0, schedule.alpha(t));
}

}  // namespace ugd
