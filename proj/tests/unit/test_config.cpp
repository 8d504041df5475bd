#include "ugd/config.hpp"
#include "ugd/scenario.hpp"
#include "ugd/svg.hpp"

#include <gtest/gtest.h>

#include <string>

using ugd::ConfigError;

namespace {

const std::string minimal = R"({
  "world": {"preset": "default"},
  "sampler": {"kind": "ddim"}
})";

std::string scenario(const std::string& name) { return std::string(UGD_SCENARIO_DIR) + "/" + name + ".json"; }

std::string error_of(const std::string& text) {
    try {
        ugd::parse_config(text, "cfg.json");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

std::size_t count(const std::string& text, const std::string& pattern) {
    std::size_t n = 0;
    for (auto pos = text.find(pattern); pos != std::string::npos; pos = text.find(pattern, pos + 1)) ++n;
    return n;
}

}  // namespace

TEST(Config, MinimalIsUnguidedBaseline) {
    const auto cfg = ugd::parse_config(minimal);
    EXPECT_TRUE(cfg.guidance.empty());
    EXPECT_EQ(cfg.schedule.steps, 100);
    EXPECT_EQ(cfg.sampler.recurrence_k, 1);
    EXPECT_EQ(cfg.sampler.kind, ugd::SamplerKind::ddim);
    EXPECT_EQ(ugd::resolve_oracle(cfg), ugd::OracleKind::mixture);
    const auto gmm = ugd::make_world(cfg);
    EXPECT_EQ(gmm.size(), 2u);
    EXPECT_EQ(gmm.dimension(), 2);
}

TEST(Config, UnknownKeyIsNamed) {
    const std::string msg = error_of(R"({"world": {"preset": "default"}, "sampler": {}, "gudance": []})");
    EXPECT_NE(msg.find("gudance"), std::string::npos) << msg;
    const std::string nested =
        error_of(R"({"world": {"preset": "default"}, "sampler": {"recurence_k": 2}})");
    EXPECT_NE(nested.find("recurence_k"), std::string::npos) << nested;
    EXPECT_NE(nested.find("sampler"), std::string::npos) << nested;
}

TEST(Config, ParseErrorHasLineAndColumn) {
    const std::string msg = error_of("{\n  \"world\": {\"preset\": \"default\"},\n  \"sampler\": {,}\n}");
    EXPECT_NE(msg.find("cfg.json:3:"), std::string::npos) << msg;
}

TEST(Config, ValidationNamesOffendingKey) {
    EXPECT_NE(error_of(R"({"world": {"preset": "default"}, "sampler": {"recurrence_k": 0}})").find(
                  "sampler.recurrence_k"),
              std::string::npos);
    const std::string bad_dim = error_of(R"({"world": {"preset": "default"}, "sampler": {},
        "guidance": [{"kind": "label-field", "labels": [1, 1, 1]}]})");
    EXPECT_NE(bad_dim.find("guidance[0]"), std::string::npos) << bad_dim;
    const std::string bad_kind = error_of(R"({"world": {"preset": "default"}, "sampler": {},
        "guidance": [{"kind": "clip"}]})");
    EXPECT_NE(bad_kind.find("guidance[0].kind"), std::string::npos) << bad_kind;
    const std::string bad_type = error_of(R"({"world": {"preset": "default"}, "sampler": {"threads": "two"}})");
    EXPECT_NE(bad_type.find("sampler.threads"), std::string::npos) << bad_type;
    EXPECT_NE(error_of(R"({"sampler": {}})").find("world"), std::string::npos);
    EXPECT_NE(error_of(R"({"world": {"means": [[0, 0]], "variance": -1}, "sampler": {}})").find("world"),
              std::string::npos);
}

TEST(Config, BundledClassifierResolvesWithDefaults) {
    const auto cfg = ugd::load_config(scenario("classifier"));
    ASSERT_EQ(cfg.guidance.size(), 1u);
    EXPECT_EQ(cfg.guidance[0].kind, ugd::GuidanceKind::component_classifier);
    EXPECT_DOUBLE_EQ(cfg.guidance[0].w, 0.8);
    EXPECT_EQ(cfg.guidance[0].paper_w, std::optional<double>(400.0));
    EXPECT_EQ(cfg.sampler.recurrence_k, 1);
    EXPECT_EQ(cfg.sampler.paper_k, std::optional<int>(10));
    EXPECT_EQ(ugd::resolve_oracle(cfg), ugd::OracleKind::component);
}

TEST(Config, AllBundledScenariosLoad) {
    for (const char* name : {"unguided", "classifier", "segmentation_analog", "clip_analog", "face_analog",
                             "object_location_analog", "inpainting_multi"}) {
        EXPECT_NO_THROW(ugd::load_config(scenario(name))) << name;
    }
}

TEST(Config, ResolvedDumpRoundTrips) {
    for (const char* name : {"classifier", "inpainting_multi", "face_analog", "object_location_analog"}) {
        const auto cfg = ugd::load_config(scenario(name));
        const std::string dumped = ugd::resolved_json(cfg).dump(2);
        const auto again = ugd::parse_config(dumped);
        EXPECT_EQ(ugd::resolved_json(again).dump(2), dumped) << name;
    }
}

TEST(Config, MissingFileIsIoError) {
    EXPECT_THROW(ugd::load_config("/nonexistent/config.json"), ugd::IoError);
}

TEST(Grid, ParsesAxes) {
    const auto g = ugd::parse_grid("w=0.5,2;m=0,5;k=1,4,10");
    EXPECT_EQ(g.w, (std::vector<double>{0.5, 2.0}));
    EXPECT_EQ(g.m, (std::vector<int>{0, 5}));
    EXPECT_EQ(g.k, (std::vector<int>{1, 4, 10}));
    EXPECT_THROW(ugd::parse_grid("q=1"), ConfigError);
    EXPECT_THROW(ugd::parse_grid("k=0"), ConfigError);
    EXPECT_THROW(ugd::parse_grid("w=abc"), ConfigError);
    EXPECT_THROW(ugd::parse_grid(""), ConfigError);
}

TEST(Svg, DefaultWorldStructure) {
    const auto gmm = ugd::GaussianMixture::default_world();
    const std::string svg = ugd::emit_scatter_svg(ugd::Matrix(0, 2), gmm);
    EXPECT_EQ(count(svg, "class=\"mean\""), 2u);
    EXPECT_EQ(count(svg, "<ellipse"), 4u);
    EXPECT_EQ(count(svg, "class=\"sample\""), 0u);
    EXPECT_EQ(svg.rfind("</svg>\n"), svg.size() - 7);
}

TEST(Svg, DeterministicWithOverlays) {
    const auto cfg = ugd::load_config(scenario("object_location_analog"));
    const auto gmm = ugd::make_world(cfg);
    const auto specs = ugd::make_specs(cfg, gmm);
    ugd::Rng rng(3);
    const ugd::Matrix s = ugd::gmm_sample(gmm, 50, rng);
    const std::string a = ugd::emit_scatter_svg(s, gmm, specs);
    EXPECT_EQ(a, ugd::emit_scatter_svg(s, gmm, specs));
    EXPECT_EQ(count(a, "class=\"sample\""), 50u);
    EXPECT_EQ(count(a, "class=\"mask\""), 1u);

    const auto seg = ugd::load_config(scenario("segmentation_analog"));
    const std::string b = ugd::emit_scatter_svg(s, gmm, ugd::make_specs(seg, gmm));
    EXPECT_EQ(count(b, "class=\"halfplane\""), 2u);
}

TEST(Svg, RefusesOtherDimensions) {
    const auto cfg = ugd::load_config(scenario("inpainting_multi"));
    EXPECT_THROW(ugd::emit_scatter_svg(ugd::Matrix(0, 4), ugd::make_world(cfg)), ugd::DimensionMismatch);
}

TEST(SamplesCsv, SchemaAndRoundTrip) {
    const auto gmm = ugd::GaussianMixture::default_world();
    const auto cfg = ugd::load_config(scenario("classifier"));
    const auto specs = ugd::make_specs(cfg, gmm);
    ugd::Rng rng(9);
    const ugd::Matrix s = ugd::gmm_sample(gmm, 5, rng);
    const std::string csv = ugd::samples_csv(s, ugd::compute_metrics(s, specs, gmm));
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "chain_index,z0,z1,loss_classifier,realness");
    std::size_t lines = 0;
    for (std::size_t pos = 0; (pos = csv.find('\n', pos)) != std::string::npos; ++pos) ++lines;
    EXPECT_EQ(lines, 6u);
    const std::string row = csv.substr(csv.find('\n') + 1, csv.find('\n', csv.find('\n') + 1) - csv.find('\n') - 1);
    EXPECT_EQ(count(row, ",") + 1, 5u);  // 2 + d + |specs| columns

    const auto path = std::filesystem::temp_directory_path() / "ugd_test_samples.csv";
    ugd::write_file(path, csv);
    const ugd::Matrix back = ugd::read_samples_csv(path);
    EXPECT_EQ(back, s);
    std::filesystem::remove(path);
}
