#pragma once

#include "ugd/config.hpp"
#include "ugd/denoiser.hpp"
#include "ugd/eval.hpp"
#include "ugd/sampler.hpp"
#include "ugd/svg.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace ugd {

// Stream offsets so oracle and permutation draws never share state with the chains.
constexpr std::uint64_t oracle_stream = 0x6f7261636c65ULL;
constexpr std::uint64_t permutation_stream = 0x7065726d7574ULL;

struct RunArtifacts {
    ChainBatch batch;
    RunMetrics metrics;
    OracleKind oracle = OracleKind::none;
};

/// The oracle actually used: `auto` picks the mixture for unguided runs, the component
/// sampler for a lone classifier and the linear posterior for a lone linear-inverse spec.
inline OracleKind resolve_oracle(const RunConfig& cfg) {
    if (cfg.evaluation.oracle != OracleKind::automatic) return cfg.evaluation.oracle;
    if (cfg.guidance.empty()) return OracleKind::mixture;
    if (cfg.guidance.size() == 1) {
        if (cfg.guidance[0].kind == GuidanceKind::component_classifier) return OracleKind::component;
        if (cfg.guidance[0].kind == GuidanceKind::linear_inverse) return OracleKind::linear_posterior;
    }
    return OracleKind::none;
}

inline std::optional<Matrix> draw_oracle(const RunConfig& cfg, const GaussianMixture& gmm, OracleKind kind,
                                         std::size_t n) {
    Rng rng(splitmix64(cfg.seed ^ oracle_stream));
    switch (kind) {
        case OracleKind::mixture:
            return gmm_sample(gmm, n, rng);
        case OracleKind::component: {
            std::size_t c = cfg.evaluation.component.value_or(0);
            if (!cfg.evaluation.component) {
                for (const auto& g : cfg.guidance) {
                    if (g.kind == GuidanceKind::component_classifier) {
                        c = g.target;
                        break;
                    }
                }
            }
            return oracle_component_sampler(gmm, c, n, rng);
        }
        case OracleKind::linear_posterior:
            for (const auto& g : cfg.guidance) {
                if (g.kind == GuidanceKind::linear_inverse) {
                    return oracle_linear_posterior(gmm, observation_matrix(g, gmm.dimension()), g.observation,
                                                   cfg.evaluation.noise_var, n, rng);
                }
            }
            return std::nullopt;
        case OracleKind::automatic:
        case OracleKind::none:
            break;
    }
    return std::nullopt;
}

/// Samples every chain of `cfg` and scores the batch.
inline RunArtifacts execute(const RunConfig& cfg) {
    const NoiseSchedule schedule = make_schedule(cfg);
    const GaussianMixture gmm = make_world(cfg);
    const std::vector<GuidanceSpec> specs = make_specs(cfg, gmm);
    const AnalyticDenoiser denoiser(gmm, schedule);

    RunArtifacts out;
    out.batch = sample_chains(make_sampler_config(cfg), denoiser, specs, cfg.evaluation.n_chains,
                              cfg.sampler.threads);
    out.metrics = compute_metrics(out.batch.samples, specs, gmm);
    out.oracle = resolve_oracle(cfg);
    if (auto oracle = draw_oracle(cfg, gmm, out.oracle, cfg.evaluation.n_chains)) {
        out.metrics.energy_distance = energy_distance(out.batch.samples, *oracle);
        if (cfg.evaluation.permutations > 0) {
            Rng rng(splitmix64(cfg.seed ^ permutation_stream));
            out.metrics.energy_test =
                energy_permutation_test(out.batch.samples, *oracle, cfg.evaluation.permutations, rng);
            out.metrics.energy_test->null_statistics.clear();
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string samples_csv(const Matrix& samples, const RunMetrics& metrics) {
    std::string out = "chain_index";
    for (Eigen::Index c = 0; c < samples.cols(); ++c) out += ",z" + std::to_string(c);
    for (const auto& s : metrics.specs) out += ",loss_" + s.name;
    out += ",realness\n";
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
        out += std::to_string(r);
        for (Eigen::Index c = 0; c < samples.cols(); ++c) out += "," + format_number(samples(r, c));
        for (const auto& s : metrics.specs) out += "," + format_number(s.losses[static_cast<std::size_t>(r)]);
        out += "," + format_number(metrics.realness[static_cast<std::size_t>(r)]) + "\n";
    }
    return out;
}

inline Json summary_json(const Summary& s) {
    return {{"mean", s.mean}, {"median", s.median}, {"q05", s.q05}, {"q95", s.q95}};
}

inline Json metrics_json(const RunConfig& cfg, const RunArtifacts& run) {
    Json j;
    j["name"] = cfg.name;
    j["seed"] = cfg.seed;
    j["n_chains"] = run.batch.samples.rows();
    j["realness"] = summary_json(run.metrics.realness_summary);
    j["joint_satisfaction_rate"] = run.metrics.joint_satisfaction_rate;
    j["specs"] = Json::array();
    for (std::size_t i = 0; i < run.metrics.specs.size(); ++i) {
        const auto& s = run.metrics.specs[i];
        const auto& g = cfg.guidance[i];
        Json e;
        e["name"] = s.name;
        e["kind"] = to_string(g.kind);
        e["w"] = g.w;
        if (g.paper_w) e["paper_w"] = *g.paper_w;
        e["backward_steps"] = g.backward_steps;
        e["loss"] = summary_json(s.loss_summary);
        e["satisfaction_rate"] = s.satisfaction_rate;
        j["specs"].push_back(e);
    }
    j["oracle"] = to_string(run.oracle);
    if (run.metrics.energy_distance) j["energy_distance"] = *run.metrics.energy_distance;
    if (run.metrics.energy_test) {
        const auto& t = *run.metrics.energy_test;
        j["energy_test"] = {{"statistic", t.statistic},
                            {"threshold", t.threshold},
                            {"p_value", t.p_value},
                            {"permutations", cfg.evaluation.permutations},
                            {"below_threshold", t.statistic < t.threshold}};
    }
    return j;
}

inline std::string metrics_tsv(const RunConfig& cfg, const RunArtifacts& run) {
    std::string out = "metric\tvalue\n";
    auto row = [&](const std::string& k, double v) { out += k + "\t" + format_number(v) + "\n"; };
    row("n_chains", static_cast<double>(run.batch.samples.rows()));
    row("realness_median", run.metrics.realness_summary.median);
    row("realness_mean", run.metrics.realness_summary.mean);
    row("joint_satisfaction_rate", run.metrics.joint_satisfaction_rate);
    for (std::size_t i = 0; i < run.metrics.specs.size(); ++i) {
        const auto& s = run.metrics.specs[i];
        row(s.name + ".loss_median", s.loss_summary.median);
        row(s.name + ".loss_q05", s.loss_summary.q05);
        row(s.name + ".loss_q95", s.loss_summary.q95);
        row(s.name + ".satisfaction_rate", s.satisfaction_rate);
        row(s.name + ".w", cfg.guidance[i].w);
    }
    if (run.metrics.energy_distance) row("energy_distance", *run.metrics.energy_distance);
    if (run.metrics.energy_test) {
        row("energy_threshold", run.metrics.energy_test->threshold);
        row("energy_p_value", run.metrics.energy_test->p_value);
    }
    return out;
}

inline std::string trajectory_jsonl(const ChainBatch& batch) {
    using detail::to_json;
    std::string out;
    for (std::size_t chain = 0; chain < batch.trajectories.size(); ++chain) {
        for (const auto& rec : batch.trajectories[chain]) {
            Json j;
            j["chain"] = chain;
            j["t"] = rec.t;
            j["n"] = rec.n;
            j["zt"] = to_json(rec.zt);
            j["eps_unguided"] = to_json(rec.eps_unguided);
            j["eps_guided"] = to_json(rec.eps_guided);
            j["z0_hat"] = to_json(rec.z0_hat);
            j["delta"] = to_json(rec.delta);
            j["losses"] = rec.losses;
            out += j.dump() + "\n";
        }
    }
    return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << content;
    out.close();
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw IoError("cannot create output directory '" + dir.string() + "'");
    }
}

/// Samples, scores and writes every artifact of one run into `output_dir`.
inline RunArtifacts run_scenario(const RunConfig& cfg, const std::filesystem::path& output_dir) {
    ensure_directory(output_dir);
    RunArtifacts run = execute(cfg);
    RunConfig resolved = cfg;
    resolved.output_dir = output_dir.string();
    write_file(output_dir / "resolved_config.json", resolved_json(resolved).dump(2) + "\n");
    write_file(output_dir / "samples.csv", samples_csv(run.batch.samples, run.metrics));
    write_file(output_dir / "metrics.json", metrics_json(cfg, run).dump(2) + "\n");
    write_file(output_dir / "metrics.tsv", metrics_tsv(cfg, run));
    if (cfg.sampler.record_trajectory) write_file(output_dir / "trajectory.jsonl", trajectory_jsonl(run.batch));
    if (cfg.evaluation.scatter && cfg.world.means.front().size() == 2) {
        const GaussianMixture gmm = make_world(cfg);
        write_file(output_dir / "scatter.svg", emit_scatter_svg(run.batch.samples, gmm, make_specs(cfg, gmm)));
    }
    return run;
}

// ---------------------------------------------------------------------------
// Ablation grids

/// Axes of an ablation grid; an empty axis keeps the config's value.
struct AblationGrid {
    std::vector<double> w;
    std::vector<int> m;
    std::vector<int> k;
};

/// Parses "w=0.5,1,2;m=0,5;k=1,4".
inline AblationGrid parse_grid(const std::string& text) {
    AblationGrid grid;
    std::stringstream axes(text);
    std::string axis;
    auto number = [](const std::string& s, auto& out) {
        const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
            throw ConfigError("grid value '" + s + "' is not a number");
        }
    };
    while (std::getline(axes, axis, ';')) {
        if (axis.empty()) continue;
        const auto eq = axis.find('=');
        if (eq == std::string::npos) throw ConfigError("grid axis '" + axis + "' needs name=values");
        const std::string name = axis.substr(0, eq);
        std::stringstream values(axis.substr(eq + 1));
        std::string v;
        while (std::getline(values, v, ',')) {
            if (name == "w") {
                double x = 0;
                number(v, x);
                grid.w.push_back(x);
            } else if (name == "m" || name == "k") {
                int x = 0;
                number(v, x);
                if (x < (name == "k" ? 1 : 0)) throw ConfigError("grid value " + v + " out of range for " + name);
                (name == "m" ? grid.m : grid.k).push_back(x);
            } else {
                throw ConfigError("unknown grid axis '" + name + "' (expected w, m or k)");
            }
        }
    }
    if (grid.w.empty() && grid.m.empty() && grid.k.empty()) throw ConfigError("grid has no axes");
    return grid;
}

/// Every (w, m, k) cell on guidance spec `spec_index`, all with the config's seed.
inline AblationReport run_ablation_grid(const RunConfig& cfg, const AblationGrid& grid, std::size_t spec_index) {
    if (spec_index >= cfg.guidance.size()) throw ConfigError("ablation needs guidance spec " + std::to_string(spec_index));
    const NoiseSchedule schedule = make_schedule(cfg);
    const GaussianMixture gmm = make_world(cfg);
    const std::vector<GuidanceSpec> base = make_specs(cfg, gmm);
    const AnalyticDenoiser denoiser(gmm, schedule);
    const auto oracle = draw_oracle(cfg, gmm, resolve_oracle(cfg), cfg.evaluation.n_chains);

    const auto ws = grid.w.empty() ? std::vector<double>{base[spec_index].w} : grid.w;
    const auto ms = grid.m.empty() ? std::vector<int>{base[spec_index].backward_steps} : grid.m;
    const auto ks = grid.k.empty() ? std::vector<int>{cfg.sampler.recurrence_k} : grid.k;
    AblationReport report;
    for (int k : ks) {
        for (double w : ws) {
            for (int m : ms) {
                std::vector<GuidanceSpec> specs = base;
                specs[spec_index].w = w;
                specs[spec_index].backward_steps = m;
                SamplerConfig sc = make_sampler_config(cfg);
                sc.recurrence_k = k;
                sc.record_trajectory = false;
                report.rows.push_back(run_ablation_cell(sc, denoiser, gmm, specs, spec_index, cfg.evaluation.n_chains,
                                                        oracle ? &*oracle : nullptr, cfg.sampler.threads));
            }
        }
    }
    report.backward_dominates = backward_dominance(report.rows);
    return report;
}

inline std::string ablation_tsv(const AblationReport& report) {
    std::string out = "w\tm\tk\tmedian_loss\tmedian_realness\tsatisfaction_rate\tenergy_distance\n";
    for (const auto& r : report.rows) {
        out += format_number(r.w) + "\t" + std::to_string(r.m) + "\t" + std::to_string(r.k) + "\t" +
               format_number(r.median_loss) + "\t" + format_number(r.median_realness) + "\t" +
               format_number(r.satisfaction_rate) + "\t" +
               (r.energy_distance ? format_number(*r.energy_distance) : std::string("NA")) + "\n";
    }
    return out;
}

inline Json ablation_json(const AblationReport& report) {
    Json j;
    j["rows"] = Json::array();
    for (const auto& r : report.rows) {
        Json e = {{"w", r.w},
                  {"m", r.m},
                  {"k", r.k},
                  {"median_loss", r.median_loss},
                  {"median_realness", r.median_realness},
                  {"satisfaction_rate", r.satisfaction_rate}};
        if (r.energy_distance) e["energy_distance"] = *r.energy_distance;
        j["rows"].push_back(e);
    }
    if (report.backward_dominates) j["backward_dominates"] = *report.backward_dominates;
    j["realness_tolerance"] = realness_tolerance;
    return j;
}

// ---------------------------------------------------------------------------
// Reading samples back

/// The z columns of a samples.csv file.
inline Matrix read_samples_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open samples file '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw IoError("samples file '" + path.string() + "' is empty");
    std::vector<std::size_t> z_cols;
    {
        std::stringstream header(line);
        std::string name;
        for (std::size_t i = 0; std::getline(header, name, ','); ++i) {
            if (name.size() > 1 && name[0] == 'z' && name.find_first_not_of("0123456789", 1) == std::string::npos) {
                z_cols.push_back(i);
            }
        }
    }
    if (z_cols.empty()) throw IoError("samples file '" + path.string() + "' has no z columns");
    std::vector<std::vector<double>> rows;
    for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        std::vector<double> row;
        for (std::size_t c : z_cols) {
            double v = 0.0;
            if (c >= cells.size() ||
                std::from_chars(cells[c].data(), cells[c].data() + cells[c].size(), v).ec != std::errc()) {
                throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed sample row");
            }
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(z_cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < z_cols.size(); ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    return out;
}

}  // namespace ugd
