#include "support/oracles.hpp"
#include "ugd/library.hpp"
#include "ugd/sampler.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>

using ugd::GaussianMixture;
using ugd::Matrix;
using ugd::Vector;
using ugd::testing::random_vector;
using ugd::testing::relative_error;

namespace {

Vector vec2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

const ugd::NoiseSchedule& schedule() {
    static const auto s = ugd::build_linear_schedule(100, 1e-3, 0.2);
    return s;
}

}  // namespace

TEST(DdimStep, FinalStepReturnsPrediction) {
    const Vector zt = vec2(0.7, -1.2);
    const Vector eps = vec2(0.1, 0.4);
    const Vector expected = ugd::predict_z0(zt, eps, 1, schedule());
    EXPECT_LT((ugd::ddim_step(zt, eps, 1, schedule()) - expected).norm(), 1e-15);
}

TEST(DdimStep, StaysOnDeterministicPath) {
    std::mt19937_64 rng(61);
    for (int t = 2; t <= 100; t += 7) {
        const Vector z0 = random_vector(3, rng, 2.0);
        const Vector eps = random_vector(3, rng);
        const Vector zt = ugd::forward_diffuse(z0, t, eps, schedule());
        const Vector expected = ugd::forward_diffuse(z0, t - 1, eps, schedule());
        EXPECT_LT(relative_error(ugd::ddim_step(zt, eps, t, schedule()), expected), 1e-12) << t;
    }
}

TEST(DdimStep, FlatSegmentIsIdentity) {
    const Vector zt = vec2(0.3, 2.0);
    EXPECT_LT((ugd::ddim_step(zt, vec2(-0.5, 0.2), 0.6, 0.6) - zt).norm(), 1e-15);
}

TEST(DdpmStep, FinalStepIsDeterministic) {
    ugd::Rng a(1), b(2);
    const Vector zt = vec2(0.7, -1.2);
    const Vector eps = vec2(0.1, 0.4);
    const Vector out = ugd::ddpm_step(zt, eps, 1, schedule(), a);
    EXPECT_EQ(out, ugd::ddpm_step(zt, eps, 1, schedule(), b));
    EXPECT_LT((out - ugd::predict_z0(zt, eps, 1, schedule())).norm(), 1e-14);
}

TEST(DdpmStep, VarianceMatchesSigma) {
    const int t = 40;
    const double sigma = ugd::ddpm_sigma(schedule().alpha(t), schedule().alpha(t - 1));
    const Vector zt = vec2(0.5, -0.5);
    const Vector eps = vec2(0.2, 0.1);
    constexpr int n = 100000;
    ugd::Rng rng(3);
    Matrix draws(n, 2);
    for (int i = 0; i < n; ++i) draws.row(i) = ugd::ddpm_step(zt, eps, t, schedule(), rng).transpose();
    for (int c = 0; c < 2; ++c) {
        const double mean = draws.col(c).mean();
        const double var = (draws.col(c).array() - mean).square().sum() / (n - 1);
        EXPECT_NEAR(var, sigma * sigma, 0.03 * sigma * sigma);
    }
}

// DDPM is the member of the generalized DDIM family with sigma = sigma_DDPM; sigma = 0 gives DDIM.
TEST(DdpmStep, GeneralizedFamilyLimits) {
    std::mt19937_64 rng(67);
    for (int t = 2; t <= 100; t += 9) {
        const double a = schedule().alpha(t), ap = schedule().alpha(t - 1);
        const Vector zt = random_vector(2, rng, 1.5);
        const Vector eps = random_vector(2, rng);
        const Vector xi = random_vector(2, rng);
        const Vector ddpm = ugd::ddpm_mean(zt, eps, a, ap) + ugd::ddpm_sigma(a, ap) * xi;
        const Vector family = ugd::generalized_ddim_step(zt, eps, a, ap, ugd::ddpm_sigma(a, ap), xi);
        EXPECT_LT(relative_error(family, ddpm), 1e-10) << t;
        EXPECT_LT(relative_error(ugd::generalized_ddim_step(zt, eps, a, ap, 0.0, xi), ugd::ddim_step(zt, eps, a, ap)),
                  1e-14);
    }
}

TEST(SelfRecur, UnitRatioIsIdentity) {
    const Vector z = vec2(1.0, 2.0);
    EXPECT_EQ(ugd::self_recur(z, 1.0, vec2(5, 5)), z);
}

TEST(SelfRecur, ZeroInput) {
    const Vector noise = vec2(0.4, -1.0);
    const Vector out = ugd::self_recur(Vector::Zero(2), 0.25, noise);
    EXPECT_LT((out - std::sqrt(0.75) * noise).norm(), 1e-15);
}

TEST(SelfRecur, PreservesForwardMarginal) {
    const int t = 30;
    const double ap = schedule().alpha(t - 1), a = schedule().alpha(t);
    const Vector z0 = vec2(2.0, -1.0);
    constexpr int n = 100000;
    ugd::Rng rng(71);
    Matrix draws(n, 2);
    for (int i = 0; i < n; ++i) {
        const Vector prev = ugd::forward_diffuse(z0, ugd::standard_normal(2, rng), ap);
        draws.row(i) = ugd::self_recur(prev, t, schedule(), rng).transpose();
    }
    for (int c = 0; c < 2; ++c) {
        const double mean = draws.col(c).mean();
        const double var = (draws.col(c).array() - mean).square().sum() / (n - 1);
        EXPECT_NEAR(mean, std::sqrt(a) * z0[c], 0.03 * std::abs(std::sqrt(a) * z0[c]));
        EXPECT_NEAR(var, 1.0 - a, 0.03 * (1.0 - a));
    }
}

TEST(UniversalSample, DeterministicGivenSeed) {
    const ugd::AnalyticDenoiser den(GaussianMixture::default_world(), schedule());
    const auto spec = ugd::make_spec(ugd::make_component_classifier(den.mixture(), 1.0, 1), 2.0, 2, 0.5);
    ugd::SamplerConfig cfg;
    cfg.recurrence_k = 3;
    cfg.record_trajectory = true;
    for (auto kind : {ugd::SamplerKind::ddim, ugd::SamplerKind::ddpm}) {
        cfg.kind = kind;
        ugd::Rng a(9), b(9);
        const auto ra = ugd::universal_guidance_sample(cfg, den, {spec}, a);
        const auto rb = ugd::universal_guidance_sample(cfg, den, {spec}, b);
        EXPECT_EQ(ra.z0, rb.z0);
        ASSERT_EQ(ra.trajectory.size(), rb.trajectory.size());
        for (std::size_t i = 0; i < ra.trajectory.size(); ++i) {
            EXPECT_EQ(ra.trajectory[i].zt, rb.trajectory[i].zt);
            EXPECT_EQ(ra.trajectory[i].eps_guided, rb.trajectory[i].eps_guided);
        }
    }
}

TEST(UniversalSample, NoOpSpecsMatchUnguidedBitwise) {
    const ugd::AnalyticDenoiser den(GaussianMixture::default_world(), schedule());
    auto spec = ugd::make_spec(ugd::make_component_classifier(den.mixture(), 1.0, 1), 0.0, 0);
    ugd::SamplerConfig cfg;
    cfg.recurrence_k = 2;
    const auto plain = ugd::sample_chains(cfg, den, {}, 50);
    const auto noop = ugd::sample_chains(cfg, den, {spec, spec}, 50);
    EXPECT_EQ(plain.samples, noop.samples);
}

TEST(UniversalSample, StructuralCounts) {
    const ugd::AnalyticDenoiser den(GaussianMixture::default_world(), schedule());
    const auto spec = ugd::make_spec(ugd::make_linear_inverse(Matrix::Identity(2, 2), vec2(3, 0)), 1.0, 2, 0.5);
    for (int k : {1, 2, 5}) {
        ugd::SamplerConfig cfg;
        cfg.recurrence_k = k;
        cfg.record_trajectory = true;
        ugd::Rng rng(5);
        const auto r = ugd::universal_guidance_sample(cfg, den, {spec}, rng);
        EXPECT_EQ(r.denoiser_calls, static_cast<std::size_t>(k * 100));
        EXPECT_EQ(r.recurrence_draws, static_cast<std::size_t>((k - 1) * 100));
        EXPECT_EQ(r.trajectory.size(), static_cast<std::size_t>(k * 100));
        EXPECT_EQ(r.trajectory.front().t, 100);
        EXPECT_EQ(r.trajectory.back().t, 1);
        EXPECT_EQ(r.trajectory.back().n, k);
    }
}

TEST(UniversalSample, ThreadCountDoesNotChangeOutput) {
    const ugd::AnalyticDenoiser den(GaussianMixture::default_world(), schedule());
    ugd::SamplerConfig cfg;
    cfg.seed = 77;
    EXPECT_EQ(ugd::sample_chains(cfg, den, {}, 37, 1).samples, ugd::sample_chains(cfg, den, {}, 37, 4).samples);
}

TEST(UniversalSample, RejectsZeroRecurrence) {
    const ugd::AnalyticDenoiser den(GaussianMixture::default_world(), schedule());
    ugd::SamplerConfig cfg;
    cfg.recurrence_k = 0;
    ugd::Rng rng(1);
    EXPECT_THROW(ugd::universal_guidance_sample(cfg, den, {}, rng), ugd::InvalidRange);
}

TEST(UniversalSample, NonFiniteAbortsWithLocation) {
    const ugd::AnalyticDenoiser den(GaussianMixture::default_world(), schedule());
    auto fn = std::make_shared<ugd::CallbackGuidance>(ugd::CallbackGuidance::Callbacks{
        [](const Vector& x) { return x; },
        [](const Vector&, const Vector& v) { return v; },
        [](const Vector&, const Vector&) { return 0.0; },
        [](const Vector&, const Vector& fx) { return Vector(fx.array() * std::nan("")); },
    });
    ugd::GuidanceSpec spec;
    spec.function = fn;
    spec.prompt = vec2(0, 0);
    spec.w = 1.0;
    ugd::SamplerConfig cfg;
    try {
        ugd::sample_chains(cfg, den, {spec}, 3);
        FAIL() << "expected NumericalError";
    } catch (const ugd::NumericalError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("chain 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("t=100, n=1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("guidance spec 0"), std::string::npos) << msg;
    }
}

// Gaussian data: the final samples should reproduce its mean and covariance.
TEST(UniversalSample, UnguidedDdimSingleGaussianMoments) {
    Vector mu = vec2(1.0, -2.0);
    Matrix cov(2, 2);
    cov << 0.5, 0.2, 0.2, 0.8;
    const GaussianMixture gmm({1.0}, {mu}, {cov});
    const ugd::AnalyticDenoiser den(gmm, schedule());
    ugd::SamplerConfig cfg;
    cfg.seed = 123;
    constexpr int n = 10000;
    const Matrix s = ugd::sample_chains(cfg, den, {}, n).samples;
    const Vector mean = s.colwise().mean();
    const Matrix centered = s.rowwise() - mean.transpose();
    const Matrix sample_cov = centered.transpose() * centered / (n - 1);
    for (int c = 0; c < 2; ++c) {
        EXPECT_NEAR(mean[c], mu[c], 5.0 * std::sqrt(cov(c, c) / n));
        // Var of a sample variance is 2 s^4 / (n - 1).
        EXPECT_NEAR(sample_cov(c, c), cov(c, c), 5.0 * cov(c, c) * std::sqrt(2.0 / (n - 1)));
    }
    const double off_sd = std::sqrt((cov(0, 0) * cov(1, 1) + cov(0, 1) * cov(0, 1)) / (n - 1));
    EXPECT_NEAR(sample_cov(0, 1), cov(0, 1), 5.0 * off_sd);
}
