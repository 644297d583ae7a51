#include "slbfgs/harness.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace slbfgs {

namespace {

using Keys = std::set<std::string>;

void reject_unknown(const YAML::Node& node, const Keys& allowed, const std::string& where) {
    if (!node.IsMap()) throw ConfigError("'" + where + "' must be a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in '" + where + "'");
    }
}

template <class T>
T get(const YAML::Node& node, const std::string& key, const std::string& where) {
    try {
        return node[key].as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("bad value for '" + where + "." + key + "'");
    }
}

template <class T>
void maybe(const YAML::Node& node, const std::string& key, const std::string& where, T& out) {
    if (node[key]) out = get<T>(node, key, where);
}

/// A scalar or a sequence of scalars.
template <class T>
std::vector<T> list(const YAML::Node& node, const std::string& key, const std::string& where) {
    const YAML::Node v = node[key];
    std::vector<T> out;
    try {
        if (v.IsSequence()) {
            for (const auto& e : v) out.push_back(e.as<T>());
        } else {
            out.push_back(v.as<T>());
        }
    } catch (const YAML::Exception&) {
        throw ConfigError("bad value for '" + where + "." + key + "'");
    }
    if (out.empty()) throw ConfigError("'" + where + "." + key + "' is empty");
    return out;
}

SynthKind synth_kind(const std::string& s) {
    if (s == "logistic") return SynthKind::Logistic;
    if (s == "least_squares" || s == "least-squares") return SynthKind::LeastSquares;
    if (s == "multiclass") return SynthKind::Multiclass;
    throw ConfigError("unknown synthetic kind '" + s + "'");
}

ProblemConfig parse_problem(const YAML::Node& node) {
    reject_unknown(node, {"kind", "reg", "hidden", "ggn_mode", "holdout", "data"}, "problem");
    ProblemConfig p;
    if (!node["kind"]) throw ConfigError("missing 'problem.kind'");
    p.spec.kind = problem_kind_from_string(get<std::string>(node, "kind", "problem"));
    maybe(node, "reg", "problem", p.spec.reg);
    maybe(node, "hidden", "problem", p.spec.hidden);
    maybe(node, "holdout", "problem", p.holdout);
    if (node["ggn_mode"]) {
        const auto m = get<std::string>(node, "ggn_mode", "problem");
        if (m == "logits") p.spec.ggn_mode = GgnMode::Logits;
        else if (m == "probabilities") p.spec.ggn_mode = GgnMode::Probabilities;
        else throw ConfigError("unknown ggn_mode '" + m + "'");
    }
    const YAML::Node data = node["data"];
    if (!data) throw ConfigError("missing 'problem.data'");
    reject_unknown(data, {"path", "synthetic"}, "problem.data");
    if (data["path"] && data["synthetic"]) throw ConfigError("'problem.data' takes either path or synthetic");
    if (data["path"]) {
        p.data.path = get<std::string>(data, "path", "problem.data");
    } else if (data["synthetic"]) {
        const YAML::Node s = data["synthetic"];
        reject_unknown(s, {"kind", "n", "d", "seed", "noise", "classes"}, "problem.data.synthetic");
        auto& sp = p.data.synthetic;
        if (s["kind"]) sp.kind = synth_kind(get<std::string>(s, "kind", "problem.data.synthetic"));
        maybe(s, "n", "problem.data.synthetic", sp.n);
        maybe(s, "d", "problem.data.synthetic", sp.d);
        maybe(s, "seed", "problem.data.synthetic", sp.seed);
        maybe(s, "noise", "problem.data.synthetic", sp.noise);
        maybe(s, "classes", "problem.data.synthetic", sp.num_classes);
    } else {
        throw ConfigError("'problem.data' needs path or synthetic");
    }
    return p;
}

OptimizerGrid parse_grid_entry(const YAML::Node& node, std::size_t index) {
    const std::string where = "optimizers[" + std::to_string(index) + "]";
    reject_unknown(node,
                   {"variant", "alpha", "batch", "memory", "schedule", "offset", "scaling", "epsilon", "beta1",
                    "beta2", "momentum", "curvature_at"},
                   where);
    OptimizerGrid g;
    if (!node["variant"]) throw ConfigError("missing '" + where + ".variant'");
    for (const auto& v : list<std::string>(node, "variant", where)) g.variants.push_back(variant_from_string(v));
    g.alphas = node["alpha"] ? list<double>(node, "alpha", where) : std::vector<double>{1e-2};
    g.batches = node["batch"] ? list<Index>(node, "batch", where) : std::vector<Index>{64};
    g.memories = node["memory"] ? list<std::size_t>(node, "memory", where) : std::vector<std::size_t>{10};
    auto& b = g.base;
    if (node["schedule"]) {
        const auto s = get<std::string>(node, "schedule", where);
        if (s == "constant") b.lr.kind = LrSchedule::Kind::Constant;
        else if (s == "decaying") b.lr.kind = LrSchedule::Kind::Decaying;
        else throw ConfigError("unknown schedule '" + s + "'");
    }
    maybe(node, "offset", where, b.lr.offset);
    if (node["scaling"]) b.scaling = scaling_from_string(get<std::string>(node, "scaling", where));
    maybe(node, "epsilon", where, b.cautious_eps);
    maybe(node, "beta1", where, b.beta1);
    maybe(node, "beta2", where, b.beta2);
    maybe(node, "momentum", where, b.sgd_momentum);
    if (node["curvature_at"]) {
        const auto s = get<std::string>(node, "curvature_at", where);
        if (s == "current") b.curvature_at_next_iterate = false;
        else if (s == "next") b.curvature_at_next_iterate = true;
        else throw ConfigError("curvature_at must be current or next");
    }
    return g;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (grid.empty()) throw ConfigError("at least one optimizer entry is required");
    if (seeds.empty()) throw ConfigError("the seed list is empty");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (threads < 0) throw ConfigError("threads must be >= 0");
    if (!(problem.holdout >= 0.0 && problem.holdout < 1.0)) throw ConfigError("holdout must lie in [0, 1)");
    for (const auto& g : grid) {
        if (g.variants.empty() || g.alphas.empty() || g.batches.empty() || g.memories.empty())
            throw ConfigError("empty optimizer grid list");
    }
}

ExperimentConfig parse_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config is not valid YAML: ") + e.what());
    }
    if (!root.IsMap()) throw ConfigError("config must be a mapping");
    reject_unknown(root,
                   {"problem", "optimizers", "epochs", "seeds", "output", "workers", "placement", "threads",
                    "trace_steps", "format", "theory"},
                   "config");
    ExperimentConfig c;
    if (!root["problem"]) throw ConfigError("missing 'problem'");
    c.problem = parse_problem(root["problem"]);
    const YAML::Node opts = root["optimizers"];
    if (!opts || !opts.IsSequence()) throw ConfigError("'optimizers' must be a list");
    for (std::size_t i = 0; i < opts.size(); ++i) c.grid.push_back(parse_grid_entry(opts[i], i));
    maybe(root, "epochs", "config", c.epochs);
    if (root["seeds"]) {
        const YAML::Node s = root["seeds"];
        if (s.IsMap()) {
            reject_unknown(s, {"count", "first"}, "seeds");
            const auto count = get<std::uint64_t>(s, "count", "seeds");
            const std::uint64_t first = s["first"] ? get<std::uint64_t>(s, "first", "seeds") : 1;
            c.seeds.clear();
            for (std::uint64_t i = 0; i < count; ++i) c.seeds.push_back(first + i);
        } else {
            c.seeds = list<std::uint64_t>(root, "seeds", "config");
        }
    }
    if (root["output"]) c.output = get<std::string>(root, "output", "config");
    maybe(root, "workers", "config", c.workers);
    maybe(root, "threads", "config", c.threads);
    maybe(root, "trace_steps", "config", c.trace_steps);
    if (root["placement"]) {
        const auto s = get<std::string>(root, "placement", "config");
        if (s == "round-robin") c.placement = PairPlacement::RoundRobin;
        else if (s == "per-dot-product") c.placement = PairPlacement::PerDotProduct;
        else throw ConfigError("unknown placement '" + s + "'");
    }
    if (root["format"]) {
        const auto s = get<std::string>(root, "format", "config");
        if (s == "csv") c.format = OutputFormat::Csv;
        else if (s == "json") c.format = OutputFormat::Json;
        else throw ConfigError("format must be csv or json");
    }
    if (root["theory"]) {
        const YAML::Node t = root["theory"];
        reject_unknown(t, {"eigen_bounds", "sampling_bounds", "neighborhood", "eigen_iterations"}, "theory");
        maybe(t, "eigen_bounds", "theory", c.theory.eigen_bounds);
        maybe(t, "sampling_bounds", "theory", c.theory.sampling_bounds);
        maybe(t, "neighborhood", "theory", c.theory.neighborhood);
        maybe(t, "eigen_iterations", "theory", c.theory.eigen_iterations);
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    ExperimentConfig c = parse_config(ss.str());
    // data paths are relative to the config file
    if (c.problem.data.path && std::filesystem::path(*c.problem.data.path).is_relative())
        c.problem.data.path = (path.parent_path() / *c.problem.data.path).lexically_normal().string();
    return c;
}

}  // namespace slbfgs
