#pragma once

#include "ugd/core.hpp"
#include "ugd/denoiser.hpp"
#include "ugd/gmm.hpp"
#include "ugd/guidance.hpp"
#include "ugd/library.hpp"
#include "ugd/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace ugd {

// ---------------------------------------------------------------------------
// Oracles

/// i.i.d. draws from component c alone: the ideal output of guidance toward class c.
inline Matrix oracle_component_sampler(const GaussianMixture& gmm, std::size_t c, std::size_t n,
                                       Rng& rng) {
    if (c >= gmm.size()) throw IndexOutOfRange("oracle component index out of range");
    Matrix out(static_cast<Eigen::Index>(n), gmm.dimension());
    for (std::size_t r = 0; r < n; ++r) {
        out.row(static_cast<Eigen::Index>(r)) = gmm.component(c).sample(rng).transpose();
    }
    return out;
}

/// Exact posterior of a mixture prior under y = A z + N(0, noise_var I).
///
/// Component i is conditioned with the gain K_i = Sigma_i A^T (A Sigma_i A^T + s I)^{-1}
/// and reweighted by its evidence N(y; A mu_i, A Sigma_i A^T + s I).
inline GaussianMixture linear_posterior(const GaussianMixture& gmm, const Matrix& a, const Vector& y,
                                        double noise_var) {
    if (!(noise_var > 0.0)) throw InvalidRange("observation noise variance must be positive");
    if (a.cols() != gmm.dimension()) throw DimensionMismatch("observation matrix width != dimension");
    require_dim(y, a.rows(), "observation");
    const Eigen::Index m = a.rows();
    std::vector<Vector> means;
    std::vector<Matrix> covs;
    Vector log_w(static_cast<Eigen::Index>(gmm.size()));
    for (std::size_t i = 0; i < gmm.size(); ++i) {
        const Matrix& sigma = gmm.covariances()[i];
        const Vector& mu = gmm.means()[i];
        const Matrix s = a * sigma * a.transpose() + noise_var * Matrix::Identity(m, m);
        const Gaussian evidence(a * mu, s);
        const Matrix gain = evidence.solve(Matrix(a * sigma)).transpose();
        means.push_back(mu + gain * (y - a * mu));
        Matrix post = sigma - gain * a * sigma;
        covs.push_back(0.5 * (post + post.transpose()));
        log_w[static_cast<Eigen::Index>(i)] = std::log(gmm.weights()[i]) + evidence.log_pdf(y);
    }
    const Vector w = softmax(log_w);
    std::vector<double> weights(w.data(), w.data() + w.size());
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (double& v : weights) v /= total;
    return {std::move(weights), std::move(means), std::move(covs)};
}

inline Matrix oracle_linear_posterior(const GaussianMixture& gmm, const Matrix& a, const Vector& y,
                                      double noise_var, std::size_t n, Rng& rng) {
    return gmm_sample(linear_posterior(gmm, a, y, noise_var), n, rng);
}

// ---------------------------------------------------------------------------
// Energy distance

namespace detail {

/// Evenly strided subset of at most `cap` rows.
inline Matrix stride_rows(const Matrix& x, Eigen::Index cap) {
    if (x.rows() <= cap) return x;
    Matrix out(cap, x.cols());
    for (Eigen::Index r = 0; r < cap; ++r) out.row(r) = x.row(r * x.rows() / cap);
    return out;
}

inline double mean_pair_distance(const Matrix& a, const Matrix& b) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        total += (b.rowwise() - a.row(i)).rowwise().norm().sum();
    }
    return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

}  // namespace detail

/// Largest set size used as-is; larger sets are reduced to this many evenly strided rows.
constexpr Eigen::Index energy_exact_limit = 4000;

/// V-statistic 2 E|a - b| - E|a - a'| - E|b - b'| over all pairs, diagonal included, so a set
/// compared with itself gives exactly 0 and the value is always >= 0.
inline double energy_distance(const Matrix& a, const Matrix& b) {
    if (a.rows() == 0 || b.rows() == 0) throw InvalidRange("energy distance needs nonempty sets");
    if (a.cols() != b.cols()) throw DimensionMismatch("energy distance sets differ in dimension");
    const Matrix sa = detail::stride_rows(a, energy_exact_limit);
    const Matrix sb = detail::stride_rows(b, energy_exact_limit);
    const double value = 2.0 * detail::mean_pair_distance(sa, sb) - detail::mean_pair_distance(sa, sa) -
                         detail::mean_pair_distance(sb, sb);
    return std::max(0.0, value);
}

struct PermutationTest {
    double statistic = 0.0;
    double threshold = 0.0;  // `level` quantile of the permutation null
    double p_value = 1.0;
    std::vector<double> null_statistics;
};

/// Permutation null for the energy statistic. Each side is first strided down to at most
/// `cap` rows; the statistic and its null are computed on those rows.
inline PermutationTest energy_permutation_test(const Matrix& a, const Matrix& b, int permutations,
                                               Rng& rng, double level = 0.99,
                                               Eigen::Index cap = energy_exact_limit) {
    if (a.cols() != b.cols()) throw DimensionMismatch("energy test sets differ in dimension");
    const Matrix sa = detail::stride_rows(a, cap);
    const Matrix sb = detail::stride_rows(b, cap);
    const Eigen::Index na = sa.rows();
    const Eigen::Index nb = sb.rows();
    const Eigen::Index n = na + nb;
    Matrix pooled(n, sa.cols());
    pooled << sa, sb;

    Eigen::MatrixXf dist(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        dist.col(i) = (pooled.rowwise() - pooled.row(i)).rowwise().norm().cast<float>();
    }
    const double total = dist.cast<double>().sum();

    std::vector<char> in_a(static_cast<std::size_t>(n), 0);
    std::vector<Eigen::Index> a_rows(static_cast<std::size_t>(na));
    auto statistic = [&]() {
        double s_aa = 0.0, s_ab = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double row = 0.0;
            const float* col = dist.col(i).data();
            for (Eigen::Index j : a_rows) row += col[j];
            if (in_a[static_cast<std::size_t>(i)]) {
                s_aa += row;
            } else {
                s_ab += row;
            }
        }
        const double s_bb = total - s_aa - 2.0 * s_ab;
        const double fa = static_cast<double>(na), fb = static_cast<double>(nb);
        return 2.0 * s_ab / (fa * fb) - s_aa / (fa * fa) - s_bb / (fb * fb);
    };

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    auto assign = [&]() {
        std::fill(in_a.begin(), in_a.end(), 0);
        for (Eigen::Index k = 0; k < na; ++k) {
            const Eigen::Index idx = order[static_cast<std::size_t>(k)];
            in_a[static_cast<std::size_t>(idx)] = 1;
            a_rows[static_cast<std::size_t>(k)] = idx;
        }
        std::sort(a_rows.begin(), a_rows.end());
    };

    PermutationTest out;
    assign();
    out.statistic = statistic();
    int exceed = 0;
    for (int p = 0; p < permutations; ++p) {
        std::shuffle(order.begin(), order.end(), rng);
        assign();
        const double s = statistic();
        out.null_statistics.push_back(s);
        if (s >= out.statistic) ++exceed;
    }
    std::vector<double> sorted = out.null_statistics;
    std::sort(sorted.begin(), sorted.end());
    if (!sorted.empty()) {
        const double pos = level * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(sorted.size() - 1, lo + 1);
        out.threshold = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    }
    out.p_value = (1.0 + exceed) / (1.0 + permutations);
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct Summary {
    double mean = 0.0;
    double median = 0.0;
    double q05 = 0.0;
    double q95 = 0.0;
};

/// Quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) return std::nan("");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(values.size() - 1, lo + 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

inline Summary summarize(const std::vector<double>& values) {
    Summary s;
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    s.median = quantile(values, 0.5);
    s.q05 = quantile(values, 0.05);
    s.q95 = quantile(values, 0.95);
    return s;
}

/// Satisfaction thresholds per guidance kind.
namespace thresholds {
constexpr double linear_residual = 0.1;
constexpr double cosine = 0.95;
constexpr double l1_relative = 0.1;  // ||Wx - target||_1 < 0.1 max(1, ||target||_1)
constexpr double custom_loss = 1e-2;
}  // namespace thresholds

/// Whether x meets the constraint of `spec`.
inline bool satisfied(const GuidanceSpec& spec, const Vector& x) {
    const GuidanceFunction& f = *spec.function;
    switch (f.kind()) {
        case GuidanceKind::component_classifier: {
            Eigen::Index got = 0, want = 0;
            f.output(x).maxCoeff(&got);
            spec.prompt.maxCoeff(&want);
            return got == want;
        }
        case GuidanceKind::linear_inverse:
            return (spec.prompt - f.output(x)).norm() < thresholds::linear_residual;
        case GuidanceKind::label_field:
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                if ((x[i] > 0.0) != (spec.prompt[i] == 1.0)) return false;
            }
            return true;
        case GuidanceKind::embedding_match: {
            const auto& emb = static_cast<const EmbeddingMatch&>(f);
            const Vector fx = f.output(x);
            if (emb.mode() == EmbeddingMode::cosine) {
                return EmbeddingMatch::cosine(fx, spec.prompt) > thresholds::cosine;
            }
            return (fx - spec.prompt).lpNorm<1>() <
                   thresholds::l1_relative * std::max(1.0, spec.prompt.lpNorm<1>());
        }
        case GuidanceKind::custom:
            return spec.loss_at(x) < thresholds::custom_loss;
    }
    return false;
}

/// Loss reported for a final sample. Linear-inverse reports the residual norm ||y - Ax||
/// rather than half its square; every other kind reports its loss.
inline double final_loss(const GuidanceSpec& spec, const Vector& x) {
    if (spec.function->kind() == GuidanceKind::linear_inverse) {
        return (spec.prompt - spec.function->output(x)).norm();
    }
    return spec.loss_at(x);
}

struct SpecMetrics {
    std::string name;
    std::vector<double> losses;
    Summary loss_summary;
    double satisfaction_rate = 0.0;
};

struct RunMetrics {
    std::vector<SpecMetrics> specs;
    std::vector<double> realness;
    Summary realness_summary;
    double joint_satisfaction_rate = 0.0;  // all specs satisfied at once
    std::optional<double> energy_distance;
    std::optional<PermutationTest> energy_test;
};

inline RunMetrics compute_metrics(const Matrix& samples, const std::vector<GuidanceSpec>& specs,
                                  const GaussianMixture& gmm) {
    RunMetrics out;
    const auto n = static_cast<std::size_t>(samples.rows());
    out.specs.resize(specs.size());
    std::size_t joint = 0;
    for (std::size_t j = 0; j < specs.size(); ++j) out.specs[j].name = specs[j].name;
    for (std::size_t r = 0; r < n; ++r) {
        const Vector x = samples.row(static_cast<Eigen::Index>(r)).transpose();
        out.realness.push_back(gmm_log_density(gmm, x));
        bool all = true;
        for (std::size_t j = 0; j < specs.size(); ++j) {
            out.specs[j].losses.push_back(final_loss(specs[j], x));
            const bool ok = satisfied(specs[j], x);
            if (ok) out.specs[j].satisfaction_rate += 1.0;
            all = all && ok;
        }
        if (all) ++joint;
    }
    for (auto& s : out.specs) {
        s.loss_summary = summarize(s.losses);
        if (n > 0) s.satisfaction_rate /= static_cast<double>(n);
    }
    out.realness_summary = summarize(out.realness);
    out.joint_satisfaction_rate = n > 0 ? static_cast<double>(joint) / static_cast<double>(n) : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
    double w = 0.0;
    int m = 0;
    int k = 1;
    double median_loss = 0.0;
    double median_realness = 0.0;
    double satisfaction_rate = 0.0;
    std::optional<double> energy_distance;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    /// Forward/backward grid only: at every w the m > 0 cell has lower median loss than m = 0
    /// while its median realness is no more than `realness_tolerance` nats worse.
    std::optional<bool> backward_dominates;
};

constexpr double realness_tolerance = 1.0;

inline AblationRow run_ablation_cell(const SamplerConfig& config, const Denoiser& denoiser,
                                     const GaussianMixture& gmm, const std::vector<GuidanceSpec>& specs,
                                     std::size_t scored, std::size_t n_chains, const Matrix* oracle,
                                     unsigned threads) {
    const ChainBatch batch = sample_chains(config, denoiser, specs, n_chains, threads);
    const RunMetrics metrics = compute_metrics(batch.samples, specs, gmm);
    AblationRow row;
    row.k = config.recurrence_k;
    row.median_realness = metrics.realness_summary.median;
    if (scored < specs.size()) {
        row.median_loss = metrics.specs[scored].loss_summary.median;
        row.satisfaction_rate = metrics.specs[scored].satisfaction_rate;
        row.w = specs[scored].w;
        row.m = specs[scored].backward_steps;
    }
    if (oracle != nullptr) row.energy_distance = energy_distance(batch.samples, *oracle);
    return row;
}

/// Whether every m > 0 row beats the m = 0 row of equal w and k on median loss while losing at
/// most `realness_tolerance` nats of median realness. Empty when no such pair exists.
inline std::optional<bool> backward_dominance(const std::vector<AblationRow>& rows) {
    bool dominates = true;
    bool compared = false;
    for (const AblationRow& fwd : rows) {
        if (fwd.m != 0) continue;
        for (const AblationRow& bwd : rows) {
            if (bwd.m == 0 || bwd.w != fwd.w || bwd.k != fwd.k) continue;
            compared = true;
            dominates = dominates && bwd.median_loss < fwd.median_loss &&
                        bwd.median_realness >= fwd.median_realness - realness_tolerance;
        }
    }
    if (!compared) return std::nullopt;
    return dominates;
}

/// Grid over w x {0, m_star}; every cell reuses config.seed so cells differ only in guidance.
inline AblationReport ablation_forward_vs_backward(const SamplerConfig& config, const Denoiser& denoiser,
                                                   const GaussianMixture& gmm,
                                                   const GuidanceSpec& base,
                                                   const std::vector<double>& w_grid,
                                                   const std::vector<int>& m_grid,
                                                   std::size_t n_chains, unsigned threads = 1) {
    const auto kind = base.function->kind();
    if (kind != GuidanceKind::linear_inverse && kind != GuidanceKind::component_classifier) {
        throw InvalidRange("forward/backward ablation expects linear-inverse or classifier guidance");
    }
    AblationReport report;
    for (double w : w_grid) {
        for (int m : m_grid) {
            GuidanceSpec spec = base;
            spec.w = w;
            spec.backward_steps = m;
            report.rows.push_back(run_ablation_cell(config, denoiser, gmm, {spec}, 0, n_chains, nullptr, threads));
        }
    }
    report.backward_dominates = backward_dominance(report.rows);
    return report;
}

/// Per-k run of the same specs; scores spec 0 and, when given, the energy distance to `oracle`.
inline AblationReport ablation_recurrence(SamplerConfig config, const Denoiser& denoiser,
                                          const GaussianMixture& gmm,
                                          const std::vector<GuidanceSpec>& specs,
                                          const std::vector<int>& k_grid, std::size_t n_chains,
                                          const Matrix* oracle, unsigned threads = 1) {
    if (k_grid.empty()) throw InvalidRange("recurrence ablation needs at least one k");
    AblationReport report;
    for (int k : k_grid) {
        config.recurrence_k = k;
        report.rows.push_back(run_ablation_cell(config, denoiser, gmm, specs, 0, n_chains, oracle, threads));
    }
    return report;
}

}  // namespace ugd
