// ugd: run guided-sampling scenarios, ablation grids and scatter plots.
//
//   ugd run <config> [--out DIR] [--seed N] [--dry-run]
//   ugd ablate <config> --grid "w=1,4;m=0,5;k=1" [--spec J] [--out DIR] [--seed N]
//   ugd plot <samples.csv> --world <config> [--out FILE]
//
// UGD_OUTPUT_DIR overrides the config's output directory; --out overrides both.
// Exit codes: 0 success, 2 config error, 3 numerical abort, 4 I/O error.

#include "ugd/scenario.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int exit_config = 2;
constexpr int exit_numerical = 3;
constexpr int exit_io = 4;

std::filesystem::path output_dir(const ugd::RunConfig& cfg, const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("UGD_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
    return cfg.output_dir;
}

ugd::RunConfig load(const std::string& path, std::optional<std::uint64_t> seed) {
    ugd::RunConfig cfg = ugd::load_config(path);
    if (seed) cfg.seed = *seed;
    return cfg;
}

void print_summary(const ugd::RunConfig& cfg, const ugd::RunArtifacts& run, const std::filesystem::path& dir) {
    std::cout << cfg.name << ": " << run.batch.samples.rows() << " chains -> " << dir.string() << "\n";
    for (const auto& s : run.metrics.specs) {
        std::cout << "  " << s.name << ": median loss " << ugd::format_number(s.loss_summary.median)
                  << ", satisfied " << ugd::format_number(s.satisfaction_rate) << "\n";
    }
    if (!run.metrics.specs.empty()) {
        std::cout << "  joint satisfaction " << ugd::format_number(run.metrics.joint_satisfaction_rate) << "\n";
    }
    std::cout << "  median realness " << ugd::format_number(run.metrics.realness_summary.median) << "\n";
    if (run.metrics.energy_distance) {
        std::cout << "  energy distance to " << ugd::to_string(run.oracle) << " oracle "
                  << ugd::format_number(*run.metrics.energy_distance);
        if (run.metrics.energy_test) {
            std::cout << " (99% null threshold " << ugd::format_number(run.metrics.energy_test->threshold) << ")";
        }
        std::cout << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Universal guidance for diffusion sampling on analytic Gaussian-mixture worlds"};
    app.require_subcommand(1);

    std::string config_path, out_flag, grid_spec, samples_path, world_path;
    std::optional<std::uint64_t> seed;
    bool dry_run = false;
    std::size_t spec_index = 0;

    auto* run = app.add_subcommand("run", "sample a scenario and write its artifacts");
    run->add_option("config", config_path, "scenario config (JSON)")->required();
    run->add_option("--out", out_flag, "output directory");
    run->add_option("--seed", seed, "override the config seed");
    run->add_flag("--dry-run", dry_run, "validate and print the resolved config without sampling");

    auto* ablate = app.add_subcommand("ablate", "run a (w, m, k) grid on one guidance spec");
    ablate->add_option("config", config_path, "scenario config (JSON)")->required();
    ablate->add_option("--grid", grid_spec, "axes, e.g. \"w=1,4;m=0,5;k=1,4,10\"")->required();
    ablate->add_option("--spec", spec_index, "index of the guidance spec to vary");
    ablate->add_option("--out", out_flag, "output directory");
    ablate->add_option("--seed", seed, "override the config seed");

    auto* plot = app.add_subcommand("plot", "draw a samples.csv over its world as SVG");
    plot->add_option("samples", samples_path, "samples.csv from a run")->required();
    plot->add_option("--world", world_path, "config providing the world and overlays")->required();
    plot->add_option("--out", out_flag, "output SVG path (default: scatter.svg next to the samples)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        if (*run) {
            const ugd::RunConfig cfg = load(config_path, seed);
            const auto dir = output_dir(cfg, out_flag);
            if (dry_run) {
                ugd::RunConfig resolved = cfg;
                resolved.output_dir = dir.string();
                std::cout << ugd::resolved_json(resolved).dump(2) << "\n";
                return 0;
            }
            const auto artifacts = ugd::run_scenario(cfg, dir);
            print_summary(cfg, artifacts, dir);
        } else if (*ablate) {
            const ugd::RunConfig cfg = load(config_path, seed);
            const auto grid = ugd::parse_grid(grid_spec);
            const auto dir = output_dir(cfg, out_flag);
            ugd::ensure_directory(dir);
            const auto report = ugd::run_ablation_grid(cfg, grid, spec_index);
            const std::string tsv = ugd::ablation_tsv(report);
            ugd::write_file(dir / "ablation.tsv", tsv);
            ugd::write_file(dir / "ablation.json", ugd::ablation_json(report).dump(2) + "\n");
            std::cout << tsv;
            if (report.backward_dominates) {
                std::cout << "backward dominates: " << (*report.backward_dominates ? "yes" : "no") << "\n";
            }
        } else if (*plot) {
            const ugd::RunConfig cfg = ugd::load_config(world_path);
            const ugd::GaussianMixture gmm = ugd::make_world(cfg);
            const ugd::Matrix samples = ugd::read_samples_csv(samples_path);
            if (samples.cols() != gmm.dimension()) {
                throw ugd::ConfigError("samples have " + std::to_string(samples.cols()) +
                                       " dimensions but the world has " + std::to_string(gmm.dimension()));
            }
            if (gmm.dimension() != 2) throw ugd::ConfigError("plot needs a 2-dimensional world");
            const std::filesystem::path target =
                out_flag.empty() ? std::filesystem::path(samples_path).parent_path() / "scatter.svg"
                                 : std::filesystem::path(out_flag);
            ugd::write_file(target, ugd::emit_scatter_svg(samples, gmm, ugd::make_specs(cfg, gmm)));
            std::cout << target.string() << "\n";
        }
    } catch (const ugd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const ugd::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return exit_io;
    } catch (const ugd::NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return exit_numerical;
    } catch (const ugd::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
