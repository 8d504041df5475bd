#pragma once

#include "ugd/core.hpp"
#include "ugd/gmm.hpp"
#include "ugd/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace ugd {

class ZeroEmbedding : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// A built-in guidance function with its prompt.
struct GuidanceLibraryEntry {
    GuidanceKind kind = GuidanceKind::custom;
    std::shared_ptr<const GuidanceFunction> function;
    Vector prompt;
    std::vector<std::string> warnings;
};

inline GuidanceSpec make_spec(const GuidanceLibraryEntry& entry, double w, int backward_steps = 0,
                              double backward_step_size = 1.0, double weight = 1.0,
                              std::string name = {}) {
    GuidanceSpec spec;
    spec.function = entry.function;
    spec.prompt = entry.prompt;
    spec.w = w;
    spec.backward_steps = backward_steps;
    spec.backward_step_size = backward_step_size;
    spec.weight = weight;
    spec.name = name.empty() ? to_string(entry.kind) : std::move(name);
    return spec;
}

namespace detail {

constexpr double tiny = std::numeric_limits<double>::min();

// log(sigmoid(u)) = -softplus(-u)
inline double log_sigmoid(double u) {
    return u >= 0.0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u));
}

inline double sigmoid(double u) {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
}

}  // namespace detail

/// f(x) = softmax(log-responsibilities of x under the clean mixture / temperature);
/// l = cross-entropy -sum_j c_j log f_j against a one-hot (or soft) class vector c.
class ComponentClassifier final : public GuidanceFunction {
public:
    ComponentClassifier(GaussianMixture gmm, double temperature)
        : gmm_(std::move(gmm)), temperature_(temperature) {
        if (!(temperature > 0.0)) throw InvalidRange("classifier temperature must be positive");
    }

    GuidanceKind kind() const override { return GuidanceKind::component_classifier; }
    const GaussianMixture& mixture() const { return gmm_; }
    double temperature() const { return temperature_; }

    Vector logits(const Vector& x) const {
        require_dim(x, gmm_.dimension(), "classifier input");
        Vector out = gmm_.log_weights();
        for (std::size_t i = 0; i < gmm_.size(); ++i) {
            out[static_cast<Eigen::Index>(i)] += gmm_.component(i).log_pdf(x);
        }
        return out / temperature_;
    }

    Vector output(const Vector& x) const override { return softmax(logits(x)); }

    Vector pullback(const Vector& x, const Vector& v) const override {
        const Vector p = output(x);
        const Vector dlogits = p.cwiseProduct(v) - p * p.dot(v);
        return logit_pullback(x, dlogits);
    }

    double loss(const Vector& c, const Vector& fx) const override {
        require_dim(c, fx.size(), "classifier prompt");
        return -(c.array() * fx.array().max(detail::tiny).log()).sum();
    }

    Vector loss_gradient(const Vector& c, const Vector& fx) const override {
        require_dim(c, fx.size(), "classifier prompt");
        return -(c.array() / fx.array().max(detail::tiny)).matrix();
    }

    double composed_loss(const Vector& c, const Vector& x) const override {
        const Vector z = logits(x);
        require_dim(c, z.size(), "classifier prompt");
        const Vector log_p = z.array() - log_sum_exp(z);
        return -c.dot(log_p);
    }

    Vector composed_gradient(const Vector& c, const Vector& x) const override {
        const Vector p = output(x);
        require_dim(c, p.size(), "classifier prompt");
        return logit_pullback(x, p * c.sum() - c);
    }

private:
    // (d logits / dx)^T u, where row i of d logits / dx is -(Sigma_i^{-1}(x - mu_i))^T / T.
    Vector logit_pullback(const Vector& x, const Vector& u) const {
        Vector out = Vector::Zero(x.size());
        for (std::size_t i = 0; i < gmm_.size(); ++i) {
            const Gaussian& comp = gmm_.component(i);
            out -= u[static_cast<Eigen::Index>(i)] * comp.solve(Vector(x - comp.mean()));
        }
        return out / temperature_;
    }

    GaussianMixture gmm_;
    double temperature_;
};

/// f(x) = A x, l(y, f) = 0.5 ||y - f||^2.
class LinearInverse final : public GuidanceFunction {
public:
    explicit LinearInverse(Matrix a) : a_(std::move(a)) {}

    GuidanceKind kind() const override { return GuidanceKind::linear_inverse; }
    const Matrix& matrix() const { return a_; }

    Vector output(const Vector& x) const override {
        require_dim(x, a_.cols(), "linear-inverse input");
        return a_ * x;
    }
    Vector pullback(const Vector&, const Vector& v) const override { return a_.transpose() * v; }
    double loss(const Vector& y, const Vector& fx) const override {
        require_dim(y, fx.size(), "linear-inverse observation");
        return 0.5 * (y - fx).squaredNorm();
    }
    Vector loss_gradient(const Vector& y, const Vector& fx) const override { return fx - y; }

    double residual(const Vector& y, const Vector& x) const { return (y - output(x)).norm(); }

private:
    Matrix a_;
};

/// f(x)_i = sigmoid(x_i / T), l = sum_i BCE(labels_i, f_i).
class LabelField final : public GuidanceFunction {
public:
    explicit LabelField(double temperature) : temperature_(temperature) {
        if (!(temperature > 0.0)) throw InvalidRange("label-field temperature must be positive");
    }

    GuidanceKind kind() const override { return GuidanceKind::label_field; }
    double temperature() const { return temperature_; }

    Vector output(const Vector& x) const override {
        return (x / temperature_).unaryExpr([](double u) { return detail::sigmoid(u); });
    }
    Vector pullback(const Vector& x, const Vector& v) const override {
        const Vector f = output(x);
        return (f.array() * (1.0 - f.array()) * v.array()).matrix() / temperature_;
    }
    double loss(const Vector& labels, const Vector& fx) const override {
        require_dim(labels, fx.size(), "label-field labels");
        const auto p = fx.array().max(detail::tiny);
        const auto q = (1.0 - fx.array()).max(detail::tiny);
        return -(labels.array() * p.log() + (1.0 - labels.array()) * q.log()).sum();
    }
    Vector loss_gradient(const Vector& labels, const Vector& fx) const override {
        require_dim(labels, fx.size(), "label-field labels");
        const auto p = fx.array().max(detail::tiny);
        const auto q = (1.0 - fx.array()).max(detail::tiny);
        return (-labels.array() / p + (1.0 - labels.array()) / q).matrix();
    }

    double composed_loss(const Vector& labels, const Vector& x) const override {
        require_dim(labels, x.size(), "label-field labels");
        double total = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double u = x[i] / temperature_;
            total -= labels[i] * detail::log_sigmoid(u) + (1.0 - labels[i]) * detail::log_sigmoid(-u);
        }
        return total;
    }
    Vector composed_gradient(const Vector& labels, const Vector& x) const override {
        require_dim(labels, x.size(), "label-field labels");
        return (output(x) - labels) / temperature_;
    }

private:
    double temperature_;
};

enum class EmbeddingMode { cosine, l1 };

/// f(x) = W x; l = -cos(f, target) or ||f - target||_1 (sign subgradient, sign(0) = 0).
class EmbeddingMatch final : public GuidanceFunction {
public:
    EmbeddingMatch(Matrix w, EmbeddingMode mode) : w_(std::move(w)), mode_(mode) {}

    GuidanceKind kind() const override { return GuidanceKind::embedding_match; }
    EmbeddingMode mode() const { return mode_; }
    const Matrix& matrix() const { return w_; }

    Vector output(const Vector& x) const override {
        require_dim(x, w_.cols(), "embedding input");
        return w_ * x;
    }
    Vector pullback(const Vector&, const Vector& v) const override { return w_.transpose() * v; }

    double loss(const Vector& target, const Vector& fx) const override {
        require_dim(target, fx.size(), "embedding target");
        if (mode_ == EmbeddingMode::l1) return (fx - target).lpNorm<1>();
        const double nf = checked_norm(fx);
        return -fx.dot(target) / (nf * target.norm());
    }

    Vector loss_gradient(const Vector& target, const Vector& fx) const override {
        require_dim(target, fx.size(), "embedding target");
        if (mode_ == EmbeddingMode::l1) {
            return (fx - target).unaryExpr([](double r) { return double((r > 0.0) - (r < 0.0)); });
        }
        const double nf = checked_norm(fx);
        const double nt = target.norm();
        const double cosine = fx.dot(target) / (nf * nt);
        return -(target / (nf * nt) - cosine * fx / (nf * nf));
    }

    static double cosine(const Vector& a, const Vector& b) { return a.dot(b) / (a.norm() * b.norm()); }

private:
    static double checked_norm(const Vector& fx) {
        const double n = fx.norm();
        if (n < 1e-12) throw ZeroEmbedding("embedding norm below 1e-12 in cosine mode");
        return n;
    }

    Matrix w_;
    EmbeddingMode mode_;
};

inline GuidanceLibraryEntry make_component_classifier(const GaussianMixture& gmm, double temperature,
                                                      std::size_t target) {
    if (gmm.size() < 2) throw InvalidRange("component classifier needs at least two components");
    if (target >= gmm.size()) throw IndexOutOfRange("target component out of range");
    GuidanceLibraryEntry entry;
    entry.kind = GuidanceKind::component_classifier;
    entry.function = std::make_shared<ComponentClassifier>(gmm, temperature);
    entry.prompt = Vector::Zero(static_cast<Eigen::Index>(gmm.size()));
    entry.prompt[static_cast<Eigen::Index>(target)] = 1.0;
    return entry;
}

inline GuidanceLibraryEntry make_linear_inverse(const Matrix& a, const Vector& y) {
    require_dim(y, a.rows(), "linear-inverse observation");
    GuidanceLibraryEntry entry;
    entry.kind = GuidanceKind::linear_inverse;
    entry.function = std::make_shared<LinearInverse>(a);
    entry.prompt = y;
    Eigen::FullPivLU<Matrix> lu(a);
    if (lu.rank() < a.rows()) {
        entry.warnings.push_back("observation matrix is rank deficient (rank " +
                                 std::to_string(lu.rank()) + " < " + std::to_string(a.rows()) + ")");
    }
    return entry;
}

/// Rows of the identity selecting `coords`: the coordinate-mask (inpainting) observation.
inline Matrix coordinate_mask(Eigen::Index dimension, const std::vector<Eigen::Index>& coords) {
    Matrix a = Matrix::Zero(static_cast<Eigen::Index>(coords.size()), dimension);
    for (std::size_t r = 0; r < coords.size(); ++r) {
        if (coords[r] < 0 || coords[r] >= dimension) throw IndexOutOfRange("mask coordinate out of range");
        a(static_cast<Eigen::Index>(r), coords[r]) = 1.0;
    }
    return a;
}

inline GuidanceLibraryEntry make_label_field(const Vector& labels, double temperature) {
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0.0 && labels[i] != 1.0) throw InvalidRange("labels must be 0 or 1");
    }
    GuidanceLibraryEntry entry;
    entry.kind = GuidanceKind::label_field;
    entry.function = std::make_shared<LabelField>(temperature);
    entry.prompt = labels;
    return entry;
}

inline GuidanceLibraryEntry make_embedding_match(const Matrix& w, const Vector& target,
                                                 EmbeddingMode mode) {
    require_dim(target, w.rows(), "embedding target");
    if (mode == EmbeddingMode::cosine && target.norm() == 0.0) {
        throw InvalidRange("cosine embedding target must be nonzero");
    }
    GuidanceLibraryEntry entry;
    entry.kind = GuidanceKind::embedding_match;
    entry.function = std::make_shared<EmbeddingMatch>(w, mode);
    entry.prompt = target;
    return entry;
}

}  // namespace ugd
