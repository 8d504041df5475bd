#pragma once

#include "ugd/core.hpp"
#include "ugd/denoiser.hpp"
#include "ugd/gmm.hpp"
#include "ugd/schedule.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ugd {

enum class GuidanceKind { component_classifier, linear_inverse, label_field, embedding_match, custom };

inline const char* to_string(GuidanceKind kind) {
    switch (kind) {
        case GuidanceKind::component_classifier: return "component-classifier";
        case GuidanceKind::linear_inverse: return "linear-inverse";
        case GuidanceKind::label_field: return "label-field";
        case GuidanceKind::embedding_match: return "embedding-match";
        case GuidanceKind::custom: return "custom";
    }
    return "unknown";
}

/// A differentiable feature map f paired with a loss l(c, f(x)).
///
/// Implementations provide f, the pullback J_f(x)^T v, the loss and its gradient in
/// f-space. `composed_loss` and `composed_gradient` may be overridden with fused,
/// numerically safer forms; they must agree with the chained pieces.
class GuidanceFunction {
public:
    virtual ~GuidanceFunction() = default;

    virtual GuidanceKind kind() const { return GuidanceKind::custom; }
    virtual Vector output(const Vector& x) const = 0;
    virtual Vector pullback(const Vector& x, const Vector& v) const = 0;
    virtual double loss(const Vector& prompt, const Vector& fx) const = 0;
    virtual Vector loss_gradient(const Vector& prompt, const Vector& fx) const = 0;

    virtual double composed_loss(const Vector& prompt, const Vector& x) const {
        return loss(prompt, output(x));
    }
    virtual Vector composed_gradient(const Vector& prompt, const Vector& x) const {
        return pullback(x, loss_gradient(prompt, output(x)));
    }
};

/// Adapts user callbacks to the GuidanceFunction contract.
class CallbackGuidance final : public GuidanceFunction {
public:
    struct Callbacks {
        std::function<Vector(const Vector&)> output;
        std::function<Vector(const Vector&, const Vector&)> pullback;
        std::function<double(const Vector&, const Vector&)> loss;
        std::function<Vector(const Vector&, const Vector&)> loss_gradient;
    };

    explicit CallbackGuidance(Callbacks cb) : cb_(std::move(cb)) {}

    Vector output(const Vector& x) const override { return cb_.output(x); }
    Vector pullback(const Vector& x, const Vector& v) const override {
        if (!cb_.pullback) throw GradientUnavailable("guidance callback has no pullback");
        return cb_.pullback(x, v);
    }
    double loss(const Vector& c, const Vector& fx) const override { return cb_.loss(c, fx); }
    Vector loss_gradient(const Vector& c, const Vector& fx) const override {
        if (!cb_.loss_gradient) throw GradientUnavailable("loss callback has no gradient");
        return cb_.loss_gradient(c, fx);
    }

private:
    Callbacks cb_;
};

/// One guidance term: (f, l, c), strength s(t) = w sqrt(1 - alpha_t), backward step count m.
struct GuidanceSpec {
    std::shared_ptr<const GuidanceFunction> function;
    Vector prompt;
    double w = 0.0;
    int backward_steps = 0;
    double backward_step_size = 1.0;
    double weight = 1.0;
    std::string name;

    double strength(double alpha) const { return w * std::sqrt(1.0 - alpha); }
    double strength(int t, const NoiseSchedule& schedule) const { return strength(schedule.alpha(t)); }

    double loss_at(const Vector& x) const { return function->composed_loss(prompt, x); }
    Vector gradient_at(const Vector& x) const { return function->composed_gradient(prompt, x); }
};

inline void require_finite(double value, const std::string& what) {
    if (!std::isfinite(value)) throw NumericalError(what + " is not finite");
}

inline void require_finite(const Vector& value, const std::string& what) {
    if (!value.allFinite()) throw NumericalError(what + " is not finite");
}

/// grad_{z_t} l(c, f(z0_hat(z_t))) through the predicted clean point.
/// d z0_hat / d z_t = (I - sqrt(1 - a) J_eps) / sqrt(a).
inline Vector gradient_through_prediction(const Vector& zt, int t, const DenoiserOutput& den,
                                          const GuidanceSpec& spec, const NoiseSchedule& schedule) {
    if (!den.jacobian) throw MissingJacobian("forward guidance needs the denoiser Jacobian");
    const double alpha = schedule.alpha(t);
    const Vector z0_hat = predict_z0(zt, den.eps_hat, t, schedule);
    const Vector g = spec.gradient_at(z0_hat);
    require_finite(g, "guidance gradient");
    const Vector jt_g = den.jacobian->transpose() * g;
    return (g - std::sqrt(1.0 - alpha) * jt_g) / std::sqrt(alpha);
}

/// eps + s(t) grad_{z_t} l(c, f(z0_hat)).
inline Vector forward_guided_eps(const Vector& zt, int t, const DenoiserOutput& den,
                                 const GuidanceSpec& spec, const NoiseSchedule& schedule) {
    schedule.check_index(t, 1);
    const double s = spec.strength(t, schedule);
    if (s == 0.0) return den.eps_hat;
    Vector out = den.eps_hat + s * gradient_through_prediction(zt, t, den, spec, schedule);
    require_finite(out, "forward-guided prediction");
    return out;
}

struct BackwardResult {
    Vector delta;
    std::vector<double> losses;  // loss at delta = 0, then after each outer step
};

/// m steps of gradient descent on delta -> l(c, f(z0_hat + delta)) from delta = 0.
/// A step that raises the loss is retried with the step size halved, at most 10 times;
/// if every retry fails the step is rejected and delta is left unchanged.
inline BackwardResult backward_delta(const Vector& z0_hat, const GuidanceSpec& spec) {
    constexpr int max_halvings = 10;
    BackwardResult out;
    out.delta = Vector::Zero(z0_hat.size());
    double current = spec.loss_at(z0_hat);
    require_finite(current, "backward guidance loss");
    out.losses.push_back(current);
    for (int step = 0; step < spec.backward_steps; ++step) {
        const Vector g = spec.gradient_at(z0_hat + out.delta);
        require_finite(g, "backward guidance gradient");
        double eta = spec.backward_step_size;
        for (int halving = 0; halving <= max_halvings; ++halving, eta *= 0.5) {
            const Vector trial = out.delta - eta * g;
            const double value = spec.loss_at(z0_hat + trial);
            require_finite(value, "backward guidance loss");
            if (value <= current) {
                out.delta = trial;
                current = value;
                break;
            }
        }
        out.losses.push_back(current);
    }
    return out;
}

/// eps - sqrt(a / (1 - a)) delta, so that z_t = sqrt(a)(z0_hat + delta) + sqrt(1 - a) eps~.
inline Vector backward_guided_eps(const Vector& eps_hat, const Vector& delta, double alpha) {
    require_dim(delta, eps_hat.size(), "backward guidance delta");
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw DegenerateSchedule("backward guidance needs alpha_t strictly inside (0, 1)");
    }
    return eps_hat - std::sqrt(alpha / (1.0 - alpha)) * delta;
}

inline Vector backward_guided_eps(const Vector& eps_hat, const Vector& delta, int t,
                                  const NoiseSchedule& schedule) {
    schedule.check_index(t, 1);
    return backward_guided_eps(eps_hat, delta, schedule.alpha(t));
}

/// Classifier that sees noisy inputs: log p(c | z_t) for every class, with gradients.
class NoisyClassifier {
public:
    virtual ~NoisyClassifier() = default;
    virtual Vector log_probabilities(const Vector& zt, int t) const = 0;
    /// Rows are grad_{z_t} log p(c | z_t); nullopt when the classifier is not differentiable.
    virtual std::optional<Matrix> log_probability_jacobian(const Vector& zt, int t) const = 0;
};

/// Exact p(component | z_t) of a mixture under the forward process.
class MixtureNoisyClassifier final : public NoisyClassifier {
public:
    MixtureNoisyClassifier(GaussianMixture gmm, NoiseSchedule schedule)
        : gmm_(std::move(gmm)), schedule_(std::move(schedule)) {}

    Vector log_probabilities(const Vector& zt, int t) const override {
        schedule_.check_index(t, 1);
        const Vector joint = NoisyMarginals(gmm_, schedule_.alpha(t)).log_joint(zt);
        return joint.array() - log_sum_exp(joint);
    }

    std::optional<Matrix> log_probability_jacobian(const Vector& zt, int t) const override {
        schedule_.check_index(t, 1);
        const NoisyMarginals marg(gmm_, schedule_.alpha(t));
        const Vector p = marg.responsibilities(zt);
        Matrix scores(static_cast<Eigen::Index>(marg.size()), zt.size());
        for (std::size_t i = 0; i < marg.size(); ++i) {
            scores.row(static_cast<Eigen::Index>(i)) = marg.score(i, zt).transpose();
        }
        const Vector mean_score = scores.transpose() * p;
        return Matrix(scores.rowwise() - mean_score.transpose());
    }

    /// Class probabilities (the f_cl output) and their Jacobian, computed directly from
    /// the mixture scores rather than from the log-probability rows.
    Vector probabilities(const Vector& zt, int t) const {
        return NoisyMarginals(gmm_, schedule_.alpha(t)).responsibilities(zt);
    }

    Matrix probability_jacobian(const Vector& zt, int t) const {
        const NoisyMarginals marg(gmm_, schedule_.alpha(t));
        const Vector p = marg.responsibilities(zt);
        Matrix scores(static_cast<Eigen::Index>(marg.size()), zt.size());
        for (std::size_t i = 0; i < marg.size(); ++i) {
            scores.row(static_cast<Eigen::Index>(i)) = marg.score(i, zt).transpose();
        }
        const Matrix dsoftmax = Matrix(p.asDiagonal()) - p * p.transpose();
        return dsoftmax * scores;
    }

private:
    GaussianMixture gmm_;
    NoiseSchedule schedule_;
};

/// Classifier guidance in its log-probability form: eps - sqrt(1 - a) grad log p(c | z_t).
inline Vector classifier_guidance_eps(const Vector& zt, int t, const Denoiser& denoiser,
                                      const NoisyClassifier& classifier, std::size_t c,
                                      const NoiseSchedule& schedule) {
    schedule.check_index(t, 1);
    const auto jac = classifier.log_probability_jacobian(zt, t);
    if (!jac) throw GradientUnavailable("noisy classifier provides no gradient");
    if (c >= static_cast<std::size_t>(jac->rows())) throw IndexOutOfRange("class index out of range");
    const Vector grad_log_p = jac->row(static_cast<Eigen::Index>(c)).transpose();
    const Vector eps = denoiser.evaluate(zt, t, false).eps_hat;
    return eps - std::sqrt(1.0 - schedule.alpha(t)) * grad_log_p;
}

/// Classifier guidance in its cross-entropy form: eps + sqrt(1 - a) grad l_ce(c, f_cl(z_t)),
/// with f_cl the class-probability vector and l_ce = -log f_cl[c].
inline Vector classifier_guidance_eps_cross_entropy(const Vector& zt, int t,
                                                    const Denoiser& denoiser,
                                                    const MixtureNoisyClassifier& classifier,
                                                    std::size_t c, const NoiseSchedule& schedule) {
    schedule.check_index(t, 1);
    const Vector p = classifier.probabilities(zt, t);
    if (c >= static_cast<std::size_t>(p.size())) throw IndexOutOfRange("class index out of range");
    const Matrix jp = classifier.probability_jacobian(zt, t);
    const Vector grad_ce = -jp.row(static_cast<Eigen::Index>(c)).transpose() / p[static_cast<Eigen::Index>(c)];
    const Vector eps = denoiser.evaluate(zt, t, false).eps_hat;
    return eps + std::sqrt(1.0 - schedule.alpha(t)) * grad_ce;
}

struct CombinedGuidance {
    Vector eps;                       // fully guided prediction
    Vector z0_hat;                    // clean prediction of the unguided eps
    Vector delta;                     // summed backward change (zero when no spec has m > 0)
    std::vector<double> losses;       // per-spec loss at the guided clean prediction
};

namespace detail {

template <class Fn>
auto with_spec_context(std::size_t index, Fn&& fn) -> decltype(fn()) {
    const std::string prefix = "guidance spec " + std::to_string(index) + ": ";
    try {
        return fn();
    } catch (const NumericalError& e) {
        throw NumericalError(prefix + e.what());
    } catch (const MissingJacobian& e) {
        throw MissingJacobian(prefix + e.what());
    } catch (const GradientUnavailable& e) {
        throw GradientUnavailable(prefix + e.what());
    } catch (const DimensionMismatch& e) {
        throw DimensionMismatch(prefix + e.what());
    } catch (const Error& e) {
        throw Error(prefix + e.what());
    }
}

}  // namespace detail

/// Applies every spec to one denoiser evaluation.
///
/// Forward terms are summed as sum_j weight_j s_j(t) grad_j. Backward changes are solved
/// independently per spec (each with its own m) starting from the clean prediction of the
/// forward-guided eps, summed as sum_j weight_j delta_j, and translated once.
inline CombinedGuidance combine_guidance(const std::vector<GuidanceSpec>& specs, const Vector& zt,
                                         int t, const DenoiserOutput& den,
                                         const NoiseSchedule& schedule) {
    schedule.check_index(t, 1);
    CombinedGuidance out;
    out.eps = den.eps_hat;
    out.z0_hat = predict_z0(zt, den.eps_hat, t, schedule);
    out.delta = Vector::Zero(zt.size());

    for (std::size_t j = 0; j < specs.size(); ++j) {
        const GuidanceSpec& spec = specs[j];
        const double s = spec.weight * spec.strength(t, schedule);
        if (s == 0.0) continue;
        detail::with_spec_context(j, [&] {
            out.eps += s * gradient_through_prediction(zt, t, den, spec, schedule);
            require_finite(out.eps, "forward-guided prediction");
        });
    }

    bool any_backward = false;
    const Vector z0_forward = predict_z0(zt, out.eps, t, schedule);
    for (std::size_t j = 0; j < specs.size(); ++j) {
        const GuidanceSpec& spec = specs[j];
        if (spec.backward_steps <= 0 || spec.weight == 0.0) continue;
        any_backward = true;
        detail::with_spec_context(j, [&] {
            out.delta += spec.weight * backward_delta(z0_forward, spec).delta;
        });
    }
    if (any_backward) {
        out.eps = backward_guided_eps(out.eps, out.delta, t, schedule);
        require_finite(out.eps, "backward-guided prediction");
    }

    const Vector z0_final = predict_z0(zt, out.eps, t, schedule);
    out.losses.reserve(specs.size());
    for (const GuidanceSpec& spec : specs) out.losses.push_back(spec.loss_at(z0_final));
    return out;
}

}  // namespace ugd
