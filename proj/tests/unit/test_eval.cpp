#include "support/oracles.hpp"
#include "ugd/eval.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using ugd::GaussianMixture;
using ugd::Matrix;
using ugd::Vector;
using ugd::testing::normal_pdf;

namespace {

Vector vec2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

Vector vec1(double a) { return Vector::Constant(1, a); }

const ugd::NoiseSchedule& schedule() {
    static const auto s = ugd::build_linear_schedule(100, 1e-3, 0.2);
    return s;
}

/// Total variation between two densities tabulated on the same uniform grid.
double total_variation(const std::vector<double>& p, const std::vector<double>& q, double dx) {
    double tv = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
    return 0.5 * tv * dx;
}

double mixture_pdf_1d(const GaussianMixture& g, double x) {
    return std::exp(ugd::gmm_log_density(g, vec1(x)));
}

}  // namespace

TEST(ComponentOracle, MomentsMatchComponent) {
    Matrix cov(2, 2);
    cov << 0.5, 0.3, 0.3, 0.9;
    const GaussianMixture gmm({0.3, 0.7}, {vec2(-1, 2), vec2(4, 0)}, {Matrix::Identity(2, 2), cov});
    constexpr int n = 100000;
    ugd::Rng rng(17);
    const Matrix s = ugd::oracle_component_sampler(gmm, 1, n, rng);
    const Vector mean = s.colwise().mean();
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(mean[c], gmm.means()[1][c], 5.0 * std::sqrt(cov(c, c) / n));
    const Matrix centered = s.rowwise() - mean.transpose();
    const Matrix est = centered.transpose() * centered / (n - 1);
    EXPECT_LT((est - cov).norm() / cov.norm(), 0.1);
}

TEST(ComponentOracle, RejectsBadIndex) {
    ugd::Rng rng(1);
    EXPECT_THROW(ugd::oracle_component_sampler(GaussianMixture::default_world(), 2, 5, rng), ugd::IndexOutOfRange);
}

TEST(ComponentOracle, SingleComponentMatchesMixtureSampler) {
    const GaussianMixture gmm({1.0}, {vec2(1, 1)}, {0.5 * Matrix::Identity(2, 2)});
    ugd::Rng a(3), b(3);
    EXPECT_EQ(ugd::oracle_component_sampler(gmm, 0, 200, a), ugd::gmm_sample(gmm, 200, b));
}

TEST(LinearPosterior, FullObservationConcentratesAtY) {
    const Vector y = vec2(2.5, -0.3);
    ugd::Rng rng(5);
    const Matrix s = ugd::oracle_linear_posterior(GaussianMixture::default_world(), Matrix::Identity(2, 2), y,
                                                  1e-6, 500, rng);
    for (Eigen::Index r = 0; r < s.rows(); ++r) EXPECT_LT((s.row(r).transpose() - y).norm(), 0.01);
}

TEST(LinearPosterior, SingleGaussianMatchesQuadrature) {
    const double mu = 0.7, var = 1.3, a = 0.8, y = 1.9, noise = 0.2;
    const GaussianMixture prior({1.0}, {vec1(mu)}, {Matrix::Constant(1, 1, var)});
    Matrix am(1, 1);
    am << a;
    const GaussianMixture post = ugd::linear_posterior(prior, am, vec1(y), noise);
    const double lo = -8.0, hi = 10.0;
    const int n = 20001;
    const double dx = (hi - lo) / (n - 1);
    std::vector<double> grid(n), closed(n);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = lo + i * dx;
        grid[i] = normal_pdf(x, mu, var) * normal_pdf(y, a * x, noise);
        z += grid[i] * dx;
        closed[i] = mixture_pdf_1d(post, x);
    }
    for (double& v : grid) v /= z;
    EXPECT_LT(total_variation(grid, closed, dx), 1e-4);
}

TEST(LinearPosterior, SymmetricObservationSplitsWeights) {
    Matrix a(1, 2);
    a << 1.0, 0.0;
    const GaussianMixture post = ugd::linear_posterior(GaussianMixture::default_world(), a, vec1(0.0), 0.01);
    EXPECT_NEAR(post.weights()[0], 0.5, 1e-12);
    EXPECT_NEAR(post.weights()[1], 0.5, 1e-12);
}

TEST(LinearPosterior, RejectsNonPositiveNoise) {
    Matrix a(1, 2);
    a << 1.0, 0.0;
    EXPECT_THROW(ugd::linear_posterior(GaussianMixture::default_world(), a, vec1(0.0), 0.0), ugd::InvalidRange);
}

// Observing z0 with tiny noise must reproduce direct conditioning of the mixture on z0.
TEST(LinearPosterior, AgreesWithDirectConditioning) {
    Matrix c0(2, 2), c1(2, 2);
    c0 << 0.6, 0.35, 0.35, 0.8;
    c1 << 0.4, -0.2, -0.2, 0.5;
    const GaussianMixture gmm({0.4, 0.6}, {vec2(-1, 1), vec2(1.5, -0.5)}, {c0, c1});
    const double y = 0.3;
    const GaussianMixture post = ugd::linear_posterior(gmm, ugd::coordinate_mask(2, {0}), vec1(y), 1e-8);

    // x1 marginal of the posterior.
    std::vector<double> w = post.weights();
    std::vector<Vector> means;
    std::vector<Matrix> vars;
    for (std::size_t i = 0; i < post.size(); ++i) {
        means.push_back(vec1(post.means()[i][1]));
        vars.push_back(Matrix::Constant(1, 1, post.covariances()[i](1, 1)));
    }
    const GaussianMixture marginal(w, means, vars);

    const double lo = -6.0, hi = 6.0;
    const int n = 12001;
    const double dx = (hi - lo) / (n - 1);
    std::vector<double> direct(n), closed(n);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x1 = lo + i * dx;
        direct[i] = std::exp(ugd::gmm_log_density(gmm, vec2(y, x1)));
        z += direct[i] * dx;
        closed[i] = mixture_pdf_1d(marginal, x1);
    }
    for (double& v : direct) v /= z;
    EXPECT_LT(total_variation(direct, closed, dx), 1e-3);
}

TEST(EnergyDistance, IdenticalSetsGiveZero) {
    ugd::Rng rng(2);
    const Matrix a = ugd::gmm_sample(GaussianMixture::default_world(), 500, rng);
    EXPECT_LT(ugd::energy_distance(a, a), 1e-12);
}

TEST(EnergyDistance, Symmetric) {
    ugd::Rng rng(4);
    const Matrix a = ugd::gmm_sample(GaussianMixture::default_world(), 300, rng);
    const Matrix b = ugd::gmm_sample(GaussianMixture::default_world(), 400, rng);
    EXPECT_NEAR(ugd::energy_distance(a, b), ugd::energy_distance(b, a), 1e-12);
    EXPECT_GE(ugd::energy_distance(a, b), 0.0);
}

TEST(EnergyDistance, RejectsEmptyAndMismatched) {
    EXPECT_THROW(ugd::energy_distance(Matrix(0, 2), Matrix::Zero(3, 2)), ugd::InvalidRange);
    EXPECT_THROW(ugd::energy_distance(Matrix::Zero(3, 2), Matrix::Zero(3, 3)), ugd::DimensionMismatch);
}

TEST(EnergyDistance, SameDistributionBelowPermutationQuantile) {
    const GaussianMixture g({1.0}, {vec2(0, 0)}, {Matrix::Identity(2, 2)});
    ugd::Rng rng(8);
    const Matrix a = ugd::gmm_sample(g, 10000, rng);
    const Matrix b = ugd::gmm_sample(g, 10000, rng);
    const auto test = ugd::energy_permutation_test(a, b, 200, rng);
    EXPECT_EQ(test.null_statistics.size(), 200u);
    EXPECT_LT(test.statistic, test.threshold);
    EXPECT_GT(test.p_value, 0.01);
}

TEST(EnergyDistance, SeparatedGaussians) {
    const GaussianMixture ga({1.0}, {vec2(0, 0)}, {Matrix::Identity(2, 2)});
    const GaussianMixture gb({1.0}, {vec2(10, 0)}, {Matrix::Identity(2, 2)});
    ugd::Rng rng(12);
    const Matrix a = ugd::gmm_sample(ga, 3000, rng);
    const Matrix b = ugd::gmm_sample(gb, 3000, rng);
    // E|a - b| ~ 10 and E|a - a'| = sqrt(pi) for a 2-D standard normal.
    const double expected = 2.0 * 10.0 - 2.0 * std::sqrt(std::numbers::pi);
    EXPECT_NEAR(ugd::energy_distance(a, b), expected, 0.05 * expected);
}

TEST(EnergyDistance, LargeSetsAreStrided) {
    Matrix a = Matrix::Zero(9000, 1);
    for (Eigen::Index r = 0; r < a.rows(); ++r) a(r, 0) = static_cast<double>(r % 3);
    // Stride 9000/4000 keeps a mix of all three values; the result stays finite and small.
    EXPECT_LT(ugd::energy_distance(a, a), 1e-12);
    EXPECT_EQ(ugd::detail::stride_rows(a, ugd::energy_exact_limit).rows(), ugd::energy_exact_limit);
}

TEST(Metrics, QuantilesAndSummary) {
    const std::vector<double> v{5, 1, 4, 2, 3};
    EXPECT_DOUBLE_EQ(ugd::median(v), 3.0);
    EXPECT_DOUBLE_EQ(ugd::quantile(v, 0.25), 2.0);
    const auto s = ugd::summarize(v);
    EXPECT_DOUBLE_EQ(s.mean, 3.0);
    EXPECT_DOUBLE_EQ(s.q05, 1.2);
    EXPECT_DOUBLE_EQ(s.q95, 4.8);
}

TEST(Metrics, SatisfactionThresholds) {
    const auto gmm = GaussianMixture::default_world();
    const auto cls = ugd::make_spec(ugd::make_component_classifier(gmm, 1.0, 1), 1.0);
    EXPECT_TRUE(ugd::satisfied(cls, vec2(2, 0)));
    EXPECT_FALSE(ugd::satisfied(cls, vec2(-2, 0)));

    const auto lin = ugd::make_spec(ugd::make_linear_inverse(ugd::coordinate_mask(2, {0}), vec1(2.0)), 1.0);
    EXPECT_TRUE(ugd::satisfied(lin, vec2(2.05, 7)));
    EXPECT_FALSE(ugd::satisfied(lin, vec2(2.2, 0)));
    EXPECT_NEAR(ugd::final_loss(lin, vec2(2.2, 0)), 0.2, 1e-12);

    const auto lab = ugd::make_spec(ugd::make_label_field(vec2(1, 0), 1.0), 1.0);
    EXPECT_TRUE(ugd::satisfied(lab, vec2(0.1, -0.1)));
    EXPECT_FALSE(ugd::satisfied(lab, vec2(0.1, 0.1)));

    const auto cos = ugd::make_spec(
        ugd::make_embedding_match(Matrix::Identity(2, 2), vec2(1, 0), ugd::EmbeddingMode::cosine), 1.0);
    EXPECT_TRUE(ugd::satisfied(cos, vec2(3, 0.3)));
    EXPECT_FALSE(ugd::satisfied(cos, vec2(3, 3)));

    const auto l1 =
        ugd::make_spec(ugd::make_embedding_match(Matrix::Identity(2, 2), vec2(3, 1), ugd::EmbeddingMode::l1), 1.0);
    EXPECT_TRUE(ugd::satisfied(l1, vec2(3.1, 1.1)));
    EXPECT_FALSE(ugd::satisfied(l1, vec2(3.3, 1.2)));
}

TEST(Metrics, RatesAndRealness) {
    const auto gmm = GaussianMixture::default_world();
    const auto cls = ugd::make_spec(ugd::make_component_classifier(gmm, 1.0, 1), 1.0);
    const auto lab = ugd::make_spec(ugd::make_label_field(vec2(1, 1), 1.0), 1.0);
    Matrix s(4, 2);
    s << 3, 0.5, 3, -0.5, -3, 0.5, -3, -0.5;
    const auto m = ugd::compute_metrics(s, {cls, lab}, gmm);
    EXPECT_DOUBLE_EQ(m.specs[0].satisfaction_rate, 0.5);
    EXPECT_DOUBLE_EQ(m.specs[1].satisfaction_rate, 0.25);
    EXPECT_DOUBLE_EQ(m.joint_satisfaction_rate, 0.25);
    ASSERT_EQ(m.realness.size(), 4u);
    EXPECT_NEAR(m.realness[0], ugd::gmm_log_density(gmm, vec2(3, 0.5)), 1e-15);
}

TEST(Ablation, DuplicateCellsAreIdentical) {
    const auto gmm = GaussianMixture::default_world();
    const ugd::AnalyticDenoiser den(gmm, schedule());
    const auto base = ugd::make_spec(ugd::make_linear_inverse(ugd::coordinate_mask(2, {0}), vec1(2.0)), 1.0);
    ugd::SamplerConfig cfg;
    cfg.seed = 3;
    const auto r = ugd::ablation_forward_vs_backward(cfg, den, gmm, base, {1.0, 1.0}, {0, 0}, 40);
    ASSERT_EQ(r.rows.size(), 4u);
    for (const auto& row : r.rows) {
        EXPECT_EQ(row.median_loss, r.rows[0].median_loss);
        EXPECT_EQ(row.median_realness, r.rows[0].median_realness);
    }
    EXPECT_FALSE(r.backward_dominates.has_value());

    const auto rec = ugd::ablation_recurrence(cfg, den, gmm, {base}, {1, 1}, 40, nullptr);
    EXPECT_EQ(rec.rows[0].median_loss, rec.rows[1].median_loss);
}

TEST(Ablation, ZeroGuidanceMatchesUnguided) {
    const auto gmm = GaussianMixture::default_world();
    const ugd::AnalyticDenoiser den(gmm, schedule());
    const auto base = ugd::make_spec(ugd::make_linear_inverse(ugd::coordinate_mask(2, {0}), vec1(2.0)), 1.0);
    ugd::SamplerConfig cfg;
    cfg.seed = 4;
    const auto r = ugd::ablation_forward_vs_backward(cfg, den, gmm, base, {0.0}, {0}, 60);
    const Matrix plain = ugd::sample_chains(cfg, den, {}, 60).samples;
    const auto m = ugd::compute_metrics(plain, {base}, gmm);
    EXPECT_EQ(r.rows[0].median_loss, m.specs[0].loss_summary.median);
}

TEST(Ablation, BackwardLowersResidual) {
    const auto gmm = GaussianMixture::default_world();
    const ugd::AnalyticDenoiser den(gmm, schedule());
    const auto base = ugd::make_spec(ugd::make_linear_inverse(ugd::coordinate_mask(2, {0}), vec1(2.0)), 1.0);
    ugd::SamplerConfig cfg;
    cfg.seed = 5;
    const auto r = ugd::ablation_forward_vs_backward(cfg, den, gmm, base, {1.0}, {0, 5}, 50);
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_LT(r.rows[1].median_loss, r.rows[0].median_loss);
}

TEST(Ablation, RejectsUnsupportedKind) {
    const auto gmm = GaussianMixture::default_world();
    const ugd::AnalyticDenoiser den(gmm, schedule());
    const auto lab = ugd::make_spec(ugd::make_label_field(vec2(1, 1), 1.0), 1.0);
    EXPECT_THROW(ugd::ablation_forward_vs_backward({}, den, gmm, lab, {1.0}, {0}, 5), ugd::InvalidRange);
    EXPECT_THROW(ugd::ablation_recurrence({}, den, gmm, {lab}, {}, 5, nullptr), ugd::InvalidRange);
}

TEST(Ablation, DominanceHelper) {
    std::vector<ugd::AblationRow> rows(2);
    rows[0].w = 1.0;
    rows[0].m = 0;
    rows[0].median_loss = 1.0;
    rows[0].median_realness = -2.0;
    rows[1] = rows[0];
    rows[1].m = 5;
    rows[1].median_loss = 0.1;
    rows[1].median_realness = -2.5;
    EXPECT_EQ(ugd::backward_dominance(rows), std::optional<bool>(true));
    rows[1].median_realness = -3.5;
    EXPECT_EQ(ugd::backward_dominance(rows), std::optional<bool>(false));
}
