#pragma once

#include "ugd/core.hpp"
#include "ugd/gmm.hpp"
#include "ugd/guidance.hpp"
#include "ugd/library.hpp"
#include "ugd/sampler.hpp"
#include "ugd/schedule.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ugd {

using Json = nlohmann::ordered_json;

struct ScheduleConfig {
    int steps = 100;
    double beta_min = 1e-3;
    double beta_max = 0.2;
};

struct WorldConfig {
    std::vector<double> weights;
    std::vector<Vector> means;
    std::vector<Matrix> covariances;
};

struct SamplerSection {
    SamplerKind kind = SamplerKind::ddim;
    int recurrence_k = 1;
    std::optional<int> paper_k;
    bool record_trajectory = false;
    unsigned threads = 1;
};

/// One guidance declaration. Only the fields of `kind` are meaningful.
struct GuidanceConfig {
    GuidanceKind kind = GuidanceKind::custom;
    std::string name;
    double w = 0.0;
    std::optional<double> paper_w;
    int backward_steps = 5;
    double step_size = 1.0;
    double weight = 1.0;

    std::size_t target = 0;     // component_classifier
    double temperature = 1.0;   // component_classifier, label_field
    Matrix matrix;              // linear_inverse, embedding_match
    std::vector<Eigen::Index> mask;  // linear_inverse, alternative to matrix
    Vector observation;         // linear_inverse
    Vector labels;              // label_field
    Vector embedding_target;    // embedding_match
    EmbeddingMode mode = EmbeddingMode::cosine;
};

enum class OracleKind { automatic, none, mixture, component, linear_posterior };

struct EvaluationConfig {
    std::size_t n_chains = 1000;
    OracleKind oracle = OracleKind::automatic;
    std::optional<std::size_t> component;
    double noise_var = 0.01;
    int permutations = 200;
    bool scatter = true;
};

struct RunConfig {
    std::string name = "run";
    std::string description;
    std::uint64_t seed = 0;
    std::string output_dir = "runs";
    ScheduleConfig schedule;
    WorldConfig world;
    SamplerSection sampler;
    std::vector<GuidanceConfig> guidance;
    EvaluationConfig evaluation;
};

inline std::string to_string(OracleKind k) {
    switch (k) {
        case OracleKind::automatic: return "auto";
        case OracleKind::none: return "none";
        case OracleKind::mixture: return "mixture";
        case OracleKind::component: return "component";
        case OracleKind::linear_posterior: return "linear_posterior";
    }
    return "none";
}

inline std::string to_string(SamplerKind k) { return k == SamplerKind::ddim ? "ddim" : "ddpm"; }
inline std::string to_string(EmbeddingMode m) { return m == EmbeddingMode::cosine ? "cosine" : "l1"; }

namespace detail {

/// Walks one JSON object, remembering which keys were read so leftovers can be rejected.
class ObjectReader {
public:
    ObjectReader(const Json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) throw ConfigError(where() + " must be an object");
    }

    bool has(const std::string& key) const { return node_.contains(key); }

    const Json& at(const std::string& key) {
        used_.insert(key);
        return node_.at(key);
    }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    T get(const std::string& key, T fallback) {
        if (!has(key)) return fallback;
        return convert<T>(at(key), key_path(key));
    }

    template <class T>
    T require(const std::string& key) {
        if (!has(key)) throw ConfigError("missing required key '" + key_path(key) + "'");
        return convert<T>(at(key), key_path(key));
    }

    void finish() const {
        for (const auto& item : node_.items()) {
            if (!used_.count(item.key())) {
                throw ConfigError("unknown key '" + item.key() + "' in " + where());
            }
        }
    }

    template <class T>
    static T convert(const Json& v, const std::string& path) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("'" + path + "' must be true or false");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("'" + path + "' must be a string");
            return v.get<std::string>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("'" + path + "' must be an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
                throw ConfigError("'" + path + "' must be nonnegative");
            } else {
                return static_cast<T>(v.get<std::int64_t>());
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("'" + path + "' must be a number");
            return v.get<double>();
        } else if constexpr (std::is_same_v<T, Vector>) {
            if (!v.is_array()) throw ConfigError("'" + path + "' must be an array of numbers");
            Vector out(static_cast<Eigen::Index>(v.size()));
            for (std::size_t i = 0; i < v.size(); ++i) {
                out[static_cast<Eigen::Index>(i)] = convert<double>(v[i], path + "[" + std::to_string(i) + "]");
            }
            return out;
        } else if constexpr (std::is_same_v<T, Matrix>) {
            if (!v.is_array() || v.empty()) throw ConfigError("'" + path + "' must be a nonempty array of rows");
            std::size_t cols = 0;
            Matrix out;
            for (std::size_t r = 0; r < v.size(); ++r) {
                const Vector row = convert<Vector>(v[r], path + "[" + std::to_string(r) + "]");
                if (r == 0) {
                    cols = static_cast<std::size_t>(row.size());
                    out.resize(static_cast<Eigen::Index>(v.size()), row.size());
                } else if (static_cast<std::size_t>(row.size()) != cols) {
                    throw ConfigError("'" + path + "' rows differ in length");
                }
                out.row(static_cast<Eigen::Index>(r)) = row.transpose();
            }
            return out;
        } else {
            static_assert(sizeof(T) == 0, "unsupported config type");
        }
    }

private:
    std::string where() const { return path_.empty() ? "top level" : "'" + path_ + "'"; }

    const Json& node_;
    std::string path_;
    std::set<std::string> used_;
};

inline GuidanceKind parse_guidance_kind(const std::string& s, const std::string& path) {
    for (auto k : {GuidanceKind::component_classifier, GuidanceKind::linear_inverse, GuidanceKind::label_field,
                   GuidanceKind::embedding_match}) {
        if (s == to_string(k)) return k;
    }
    throw ConfigError("'" + path + "' has unknown guidance kind '" + s + "'");
}

inline WorldConfig read_world(ObjectReader& r) {
    WorldConfig world;
    if (r.has("preset")) {
        const auto preset = r.get<std::string>("preset", "");
        if (preset != "default") throw ConfigError("'world.preset' must be \"default\"");
        const auto gmm = GaussianMixture::default_world();
        world.weights = gmm.weights();
        world.means = gmm.means();
        world.covariances = gmm.covariances();
        r.finish();
        return world;
    }
    const Json& means = r.at("means");
    if (!means.is_array() || means.empty()) throw ConfigError("'world.means' must be a nonempty array");
    for (std::size_t i = 0; i < means.size(); ++i) {
        world.means.push_back(ObjectReader::convert<Vector>(means[i], "world.means[" + std::to_string(i) + "]"));
        if (world.means.back().size() != world.means.front().size()) {
            throw ConfigError("'world.means[" + std::to_string(i) + "]' has a different dimension");
        }
    }
    const std::size_t k = world.means.size();
    const Eigen::Index d = world.means.front().size();
    if (d == 0) throw ConfigError("'world.means' entries must be nonempty");
    if (r.has("weights")) {
        const Vector w = r.get<Vector>("weights", Vector());
        if (static_cast<std::size_t>(w.size()) != k) throw ConfigError("'world.weights' needs one entry per mean");
        world.weights.assign(w.data(), w.data() + w.size());
    } else {
        world.weights.assign(k, 1.0 / static_cast<double>(k));
    }
    if (r.has("covariances") == r.has("variance")) {
        throw ConfigError("'world' needs exactly one of 'covariances' or 'variance'");
    }
    if (r.has("variance")) {
        const double v = r.get<double>("variance", 0.0);
        world.covariances.assign(k, v * Matrix::Identity(d, d));
    } else {
        const Json& covs = r.at("covariances");
        if (!covs.is_array() || covs.size() != k) throw ConfigError("'world.covariances' needs one matrix per mean");
        for (std::size_t i = 0; i < k; ++i) {
            const std::string path = "world.covariances[" + std::to_string(i) + "]";
            Matrix c = ObjectReader::convert<Matrix>(covs[i], path);
            if (c.rows() != d || c.cols() != d) throw ConfigError("'" + path + "' must be " + std::to_string(d) + "x" + std::to_string(d));
            world.covariances.push_back(std::move(c));
        }
    }
    r.finish();
    return world;
}

inline GuidanceConfig read_guidance(const Json& node, const std::string& path) {
    ObjectReader r(node, path);
    GuidanceConfig g;
    g.kind = parse_guidance_kind(r.require<std::string>("kind"), r.key_path("kind"));
    g.name = r.get<std::string>("name", to_string(g.kind));
    g.w = r.get<double>("w", 0.0);
    if (r.has("paper_w")) g.paper_w = r.get<double>("paper_w", 0.0);
    g.backward_steps = r.get<int>("backward_steps", 5);
    g.step_size = r.get<double>("step_size", 1.0);
    g.weight = r.get<double>("weight", 1.0);
    switch (g.kind) {
        case GuidanceKind::component_classifier:
            g.target = r.require<std::size_t>("target");
            g.temperature = r.get<double>("temperature", 1.0);
            break;
        case GuidanceKind::linear_inverse:
            if (r.has("mask") == r.has("matrix")) {
                throw ConfigError("'" + path + "' needs exactly one of 'mask' or 'matrix'");
            }
            if (r.has("mask")) {
                const Vector m = r.get<Vector>("mask", Vector());
                for (Eigen::Index i = 0; i < m.size(); ++i) {
                    if (m[i] != std::floor(m[i])) throw ConfigError("'" + r.key_path("mask") + "' must hold integers");
                    g.mask.push_back(static_cast<Eigen::Index>(m[i]));
                }
            } else {
                g.matrix = r.get<Matrix>("matrix", Matrix());
            }
            g.observation = r.require<Vector>("observation");
            break;
        case GuidanceKind::label_field:
            g.labels = r.require<Vector>("labels");
            g.temperature = r.get<double>("temperature", 1.0);
            break;
        case GuidanceKind::embedding_match: {
            g.matrix = r.require<Matrix>("matrix");
            g.embedding_target = r.require<Vector>("target");
            const auto mode = r.get<std::string>("mode", "cosine");
            if (mode == "cosine") {
                g.mode = EmbeddingMode::cosine;
            } else if (mode == "l1") {
                g.mode = EmbeddingMode::l1;
            } else {
                throw ConfigError("'" + r.key_path("mode") + "' must be \"cosine\" or \"l1\"");
            }
            break;
        }
        case GuidanceKind::custom:
            break;
    }
    r.finish();
    return g;
}

inline std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace detail

/// Matrix of the linear-inverse observation, built from the mask when one is given.
inline Matrix observation_matrix(const GuidanceConfig& g, Eigen::Index dimension) {
    return g.mask.empty() ? g.matrix : coordinate_mask(dimension, g.mask);
}

inline NoiseSchedule make_schedule(const RunConfig& cfg) {
    return build_linear_schedule(cfg.schedule.steps, cfg.schedule.beta_min, cfg.schedule.beta_max);
}

inline GaussianMixture make_world(const RunConfig& cfg) {
    return {cfg.world.weights, cfg.world.means, cfg.world.covariances};
}

inline GuidanceLibraryEntry make_entry(const GuidanceConfig& g, const GaussianMixture& gmm) {
    const Eigen::Index d = gmm.dimension();
    switch (g.kind) {
        case GuidanceKind::component_classifier:
            return make_component_classifier(gmm, g.temperature, g.target);
        case GuidanceKind::linear_inverse: {
            const Matrix a = observation_matrix(g, d);
            if (a.cols() != d) throw DimensionMismatch("observation matrix must have " + std::to_string(d) + " columns");
            return make_linear_inverse(a, g.observation);
        }
        case GuidanceKind::label_field:
            require_dim(g.labels, d, "labels");
            return make_label_field(g.labels, g.temperature);
        case GuidanceKind::embedding_match:
            if (g.matrix.cols() != d) throw DimensionMismatch("embedding matrix must have " + std::to_string(d) + " columns");
            return make_embedding_match(g.matrix, g.embedding_target, g.mode);
        case GuidanceKind::custom:
            break;
    }
    throw ConfigError("custom guidance cannot be declared in a config file");
}

inline std::vector<GuidanceSpec> make_specs(const RunConfig& cfg, const GaussianMixture& gmm) {
    std::vector<GuidanceSpec> specs;
    for (const auto& g : cfg.guidance) {
        specs.push_back(make_spec(make_entry(g, gmm), g.w, g.backward_steps, g.step_size, g.weight, g.name));
    }
    return specs;
}

inline SamplerConfig make_sampler_config(const RunConfig& cfg) {
    SamplerConfig s;
    s.kind = cfg.sampler.kind;
    s.recurrence_k = cfg.sampler.recurrence_k;
    s.seed = cfg.seed;
    s.record_trajectory = cfg.sampler.record_trajectory;
    return s;
}

/// Range and cross-reference checks; builds every model object once so errors surface at load.
inline void validate(const RunConfig& cfg) {
    auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("'" + key + "': " + why); };
    try {
        make_schedule(cfg);
    } catch (const Error& e) {
        fail("schedule", e.what());
    }
    GaussianMixture gmm = [&] {
        try {
            return make_world(cfg);
        } catch (const Error& e) {
            fail("world", e.what());
        }
        throw ConfigError("unreachable");
    }();
    if (cfg.sampler.recurrence_k < 1) fail("sampler.recurrence_k", "must be at least 1");
    if (cfg.sampler.threads < 1) fail("sampler.threads", "must be at least 1");
    if (cfg.evaluation.n_chains < 1) fail("evaluation.n_chains", "must be at least 1");
    if (cfg.evaluation.permutations < 0) fail("evaluation.permutations", "must be nonnegative");
    if (!(cfg.evaluation.noise_var > 0.0)) fail("evaluation.noise_var", "must be positive");
    if (cfg.evaluation.component && *cfg.evaluation.component >= gmm.size()) {
        fail("evaluation.component", "out of range for the world");
    }
    std::set<std::string> names;
    for (std::size_t j = 0; j < cfg.guidance.size(); ++j) {
        const auto& g = cfg.guidance[j];
        const std::string key = "guidance[" + std::to_string(j) + "]";
        if (!names.insert(g.name).second) fail(key + ".name", "duplicate guidance name '" + g.name + "'");
        if (!std::isfinite(g.w)) fail(key + ".w", "must be finite");
        if (g.backward_steps < 0) fail(key + ".backward_steps", "must be nonnegative");
        if (!(g.step_size > 0.0)) fail(key + ".step_size", "must be positive");
        if (!(g.weight >= 0.0)) fail(key + ".weight", "must be nonnegative");
        try {
            make_entry(g, gmm);
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            fail(key, e.what());
        }
    }
    if (cfg.evaluation.oracle == OracleKind::component) {
        const bool has_classifier = std::any_of(cfg.guidance.begin(), cfg.guidance.end(), [](const auto& g) {
            return g.kind == GuidanceKind::component_classifier;
        });
        if (!cfg.evaluation.component && !has_classifier) {
            fail("evaluation.component", "required for the component oracle without a classifier spec");
        }
    }
    if (cfg.evaluation.oracle == OracleKind::linear_posterior &&
        std::none_of(cfg.guidance.begin(), cfg.guidance.end(),
                     [](const auto& g) { return g.kind == GuidanceKind::linear_inverse; })) {
        fail("evaluation.oracle", "linear_posterior needs a linear_inverse guidance spec");
    }
}

/// Parses and validates config text. `source` names the origin in error messages.
inline RunConfig parse_config(const std::string& text, const std::string& source = "<config>") {
    Json root;
    try {
        root = Json::parse(text);
    } catch (const Json::parse_error& e) {
        const auto [line, col] = detail::line_column(text, e.byte == 0 ? 0 : e.byte - 1);
        std::string what = e.what();
        const auto cut = what.find("syntax error");
        throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " +
                          (cut == std::string::npos ? what : what.substr(cut)));
    }

    RunConfig cfg;
    try {
        detail::ObjectReader top(root, "");
        cfg.name = top.get<std::string>("name", cfg.name);
        cfg.description = top.get<std::string>("description", "");
        cfg.seed = top.get<std::uint64_t>("seed", 0);
        cfg.output_dir = top.get<std::string>("output_dir", cfg.output_dir);

        if (top.has("schedule")) {
            detail::ObjectReader r(top.at("schedule"), "schedule");
            cfg.schedule.steps = r.get<int>("steps", cfg.schedule.steps);
            cfg.schedule.beta_min = r.get<double>("beta_min", cfg.schedule.beta_min);
            cfg.schedule.beta_max = r.get<double>("beta_max", cfg.schedule.beta_max);
            r.finish();
        }

        if (!top.has("world")) throw ConfigError("missing required key 'world'");
        {
            detail::ObjectReader r(top.at("world"), "world");
            cfg.world = detail::read_world(r);
        }

        if (!top.has("sampler")) throw ConfigError("missing required key 'sampler'");
        {
            detail::ObjectReader r(top.at("sampler"), "sampler");
            const auto kind = r.get<std::string>("kind", "ddim");
            if (kind == "ddim") {
                cfg.sampler.kind = SamplerKind::ddim;
            } else if (kind == "ddpm") {
                cfg.sampler.kind = SamplerKind::ddpm;
            } else {
                throw ConfigError("'sampler.kind' must be \"ddim\" or \"ddpm\"");
            }
            cfg.sampler.recurrence_k = r.get<int>("recurrence_k", 1);
            if (r.has("paper_k")) cfg.sampler.paper_k = r.get<int>("paper_k", 1);
            cfg.sampler.record_trajectory = r.get<bool>("record_trajectory", false);
            cfg.sampler.threads = r.get<unsigned>("threads", 1);
            r.finish();
        }

        if (top.has("guidance")) {
            const Json& list = top.at("guidance");
            if (!list.is_array()) throw ConfigError("'guidance' must be an array");
            for (std::size_t j = 0; j < list.size(); ++j) {
                cfg.guidance.push_back(detail::read_guidance(list[j], "guidance[" + std::to_string(j) + "]"));
            }
        }

        if (top.has("evaluation")) {
            detail::ObjectReader r(top.at("evaluation"), "evaluation");
            cfg.evaluation.n_chains = r.get<std::size_t>("n_chains", cfg.evaluation.n_chains);
            const auto oracle = r.get<std::string>("oracle", "auto");
            bool known = false;
            for (auto k : {OracleKind::automatic, OracleKind::none, OracleKind::mixture, OracleKind::component,
                           OracleKind::linear_posterior}) {
                if (oracle == to_string(k)) {
                    cfg.evaluation.oracle = k;
                    known = true;
                }
            }
            if (!known) throw ConfigError("'evaluation.oracle' has unknown value '" + oracle + "'");
            if (r.has("component")) cfg.evaluation.component = r.get<std::size_t>("component", 0);
            cfg.evaluation.noise_var = r.get<double>("noise_var", cfg.evaluation.noise_var);
            cfg.evaluation.permutations = r.get<int>("permutations", cfg.evaluation.permutations);
            cfg.evaluation.scatter = r.get<bool>("scatter", cfg.evaluation.scatter);
            r.finish();
        }
        top.finish();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    } catch (const Json::exception& e) {
        throw ConfigError(source + ": " + e.what());
    }
    try {
        validate(cfg);
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), path);
}

namespace detail {

inline Json to_json(const Vector& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline Json to_json(const Matrix& m) {
    Json out = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(to_json(Vector(m.row(r).transpose())));
    return out;
}

}  // namespace detail

/// The config with every default filled in. It parses back to the same RunConfig.
inline Json resolved_json(const RunConfig& cfg) {
    using detail::to_json;
    Json j;
    j["name"] = cfg.name;
    if (!cfg.description.empty()) j["description"] = cfg.description;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["schedule"] = {{"steps", cfg.schedule.steps},
                     {"beta_min", cfg.schedule.beta_min},
                     {"beta_max", cfg.schedule.beta_max}};
    Json world;
    world["weights"] = cfg.world.weights;
    world["means"] = Json::array();
    for (const auto& m : cfg.world.means) world["means"].push_back(to_json(m));
    world["covariances"] = Json::array();
    for (const auto& c : cfg.world.covariances) world["covariances"].push_back(to_json(c));
    j["world"] = world;
    Json sampler;
    sampler["kind"] = to_string(cfg.sampler.kind);
    sampler["recurrence_k"] = cfg.sampler.recurrence_k;
    if (cfg.sampler.paper_k) sampler["paper_k"] = *cfg.sampler.paper_k;
    sampler["record_trajectory"] = cfg.sampler.record_trajectory;
    sampler["threads"] = cfg.sampler.threads;
    j["sampler"] = sampler;
    j["guidance"] = Json::array();
    for (const auto& g : cfg.guidance) {
        Json e;
        e["kind"] = to_string(g.kind);
        e["name"] = g.name;
        e["w"] = g.w;
        if (g.paper_w) e["paper_w"] = *g.paper_w;
        e["backward_steps"] = g.backward_steps;
        e["step_size"] = g.step_size;
        e["weight"] = g.weight;
        switch (g.kind) {
            case GuidanceKind::component_classifier:
                e["target"] = g.target;
                e["temperature"] = g.temperature;
                break;
            case GuidanceKind::linear_inverse:
                if (!g.mask.empty()) {
                    e["mask"] = g.mask;
                } else {
                    e["matrix"] = to_json(g.matrix);
                }
                e["observation"] = to_json(g.observation);
                break;
            case GuidanceKind::label_field:
                e["labels"] = to_json(g.labels);
                e["temperature"] = g.temperature;
                break;
            case GuidanceKind::embedding_match:
                e["matrix"] = to_json(g.matrix);
                e["target"] = to_json(g.embedding_target);
                e["mode"] = to_string(g.mode);
                break;
            case GuidanceKind::custom:
                break;
        }
        j["guidance"].push_back(e);
    }
    Json ev;
    ev["n_chains"] = cfg.evaluation.n_chains;
    ev["oracle"] = to_string(cfg.evaluation.oracle);
    if (cfg.evaluation.component) ev["component"] = *cfg.evaluation.component;
    ev["noise_var"] = cfg.evaluation.noise_var;
    ev["permutations"] = cfg.evaluation.permutations;
    ev["scatter"] = cfg.evaluation.scatter;
    j["evaluation"] = ev;
    return j;
}

}  // namespace ugd
