#pragma once

// Run configuration and the train / benchmark / gradcheck / predict commands.
// Commands return process exit codes: 0 success, 1 configuration or input
// error, 2 numeric failure, 3 gradient audit failure.

#include "gvidgp/checkpoint.hpp"
#include "gvidgp/data.hpp"
#include "gvidgp/dgp.hpp"
#include "gvidgp/presets.hpp"
#include "gvidgp/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace gvidgp {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitNumeric = 2, kExitGradCheck = 3 };

inline constexpr const char* kOutputDirEnv = "GVIDGP_OUTPUT_DIR";
inline constexpr const char* kDefaultOutputDir = "gvidgp_out";

struct SyntheticData {
    Eigen::Index n = 200;
    double noise = 0.1;
    std::uint64_t seed = 1;
};

struct DataConfig {
    std::filesystem::path path;
    std::optional<SyntheticData> synthetic;
    bool has_header = true;
    TargetSpec target;
    double test_fraction = 0.1;
    std::optional<Contamination> contamination;
};

struct Method {
    LossSpec loss;
    std::vector<QuantifierSpec> quantifiers{QuantifierSpec::kld()};  // one entry is shared by every layer

    [[nodiscard]] std::vector<QuantifierSpec> per_layer(std::size_t layers) const {
        return quantifiers.size() == 1 ? std::vector<QuantifierSpec>(layers, quantifiers.front()) : quantifiers;
    }

    [[nodiscard]] std::string quantifier_name() const {
        std::string q = quantifiers.front().name();
        for (std::size_t l = 1; l < quantifiers.size(); ++l) q += "+" + quantifiers[l].name();
        return q;
    }

    [[nodiscard]] std::string label() const { return loss.name() + "/" + quantifier_name(); }
};

struct GradCheckConfig {
    double tolerance = 1e-4;
    std::uint64_t seed = 7;
    std::size_t samples = 3;
};

struct RunConfig {
    std::optional<DataConfig> data;
    ModelOptions model;
    std::vector<Method> methods{Method{}};
    TrainConfig train;
    std::size_t train_samples = 10;
    std::size_t test_samples = 100;
    std::size_t n_splits = 1;
    std::optional<std::string> output_dir;
    GradCheckConfig gradcheck;
};

/// Flags that may override the file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<std::size_t> iterations;
};

namespace detail {

using nlohmann::json;

/// Typed access to one JSON object that rejects unknown keys and reports the
/// full key path on any error.
class ConfigReader {
public:
    ConfigReader(const json& j, std::string path, std::set<std::string> allowed) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(display(), "expected an object");
        for (const auto& [key, _] : j_.items())
            if (!allowed.contains(key)) throw ConfigError(field(key), "unknown key");
    }

    [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    [[nodiscard]] const json& raw(const std::string& key) const { return j_.at(key); }
    [[nodiscard]] std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    [[nodiscard]] ConfigReader child(const std::string& key, std::set<std::string> allowed) const {
        return ConfigReader(j_.at(key), field(key), std::move(allowed));
    }

    void get(const std::string& key, double& out) const {
        if (!has(key)) return;
        if (!j_.at(key).is_number()) throw ConfigError(field(key), "expected a number");
        out = j_.at(key).get<double>();
        if (!std::isfinite(out)) throw ConfigError(field(key), "must be finite");
    }
    void get(const std::string& key, bool& out) const {
        if (!has(key)) return;
        if (!j_.at(key).is_boolean()) throw ConfigError(field(key), "expected true or false");
        out = j_.at(key).get<bool>();
    }
    void get(const std::string& key, std::string& out) const {
        if (!has(key)) return;
        if (!j_.at(key).is_string()) throw ConfigError(field(key), "expected a string");
        out = j_.at(key).get<std::string>();
    }
    template <class I>
        requires std::is_integral_v<I>
    void get(const std::string& key, I& out) const {
        if (!has(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer");
        if constexpr (std::is_unsigned_v<I>) {
            if (!v.is_number_unsigned()) throw ConfigError(field(key), "must be >= 0");
            out = v.get<I>();
        } else {
            out = v.get<I>();
        }
    }

private:
    [[nodiscard]] std::string display() const { return path_.empty() ? "<root>" : path_; }

    const json& j_;
    std::string path_;
};

inline LossSpec parse_loss(const ConfigReader& r) {
    std::string kind = "nll";
    r.get("kind", kind);
    LossSpec s;
    if (kind == "nll") s.kind = LossSpec::Kind::nll;
    else if (kind == "beta") s.kind = LossSpec::Kind::beta;
    else if (kind == "gamma") s.kind = LossSpec::Kind::gamma;
    else throw ConfigError(r.field("kind"), "expected one of nll, beta, gamma; got '" + kind + "'");
    r.get("beta", s.beta);
    r.get("gamma", s.gamma);
    r.get("weight", s.weight);
    std::string norm = "fujisawa_eguchi";
    r.get("gamma_normalization", norm);
    if (norm == "fujisawa_eguchi") s.gamma_normalization = LossSpec::GammaNormalization::fujisawa_eguchi;
    else if (norm == "theorem_display") s.gamma_normalization = LossSpec::GammaNormalization::theorem_display;
    else throw ConfigError(r.field("gamma_normalization"), "expected fujisawa_eguchi or theorem_display");
    if (s.kind == LossSpec::Kind::beta && !(s.beta > 1.0)) throw ConfigError(r.field("beta"), "must be > 1");
    if (s.kind == LossSpec::Kind::gamma && !(s.gamma > 1.0)) throw ConfigError(r.field("gamma"), "must be > 1");
    if (!(s.weight > 0.0)) throw ConfigError(r.field("weight"), "must be > 0");
    return s;
}

inline QuantifierSpec parse_quantifier(const ConfigReader& r) {
    std::string kind = "kld";
    r.get("kind", kind);
    QuantifierSpec q;
    if (kind == "kld") q.kind = QuantifierSpec::Kind::kld;
    else if (kind == "scaled_kld") q.kind = QuantifierSpec::Kind::scaled_kld;
    else if (kind == "renyi") q.kind = QuantifierSpec::Kind::renyi;
    else throw ConfigError(r.field("kind"), "expected one of kld, scaled_kld, renyi; got '" + kind + "'");
    r.get("w", q.w);
    r.get("alpha", q.alpha);
    if (q.kind == QuantifierSpec::Kind::scaled_kld && !(q.w > 0.0)) throw ConfigError(r.field("w"), "must be > 0");
    if (q.kind == QuantifierSpec::Kind::renyi && !(q.alpha > 0.0 && q.alpha < 1.0)) {
        std::ostringstream os;
        os << "must lie in the open interval (0,1), got " << q.alpha;
        throw ConfigError(r.field("alpha"), os.str());
    }
    return q;
}

inline const std::set<std::string> kLossKeys{"kind", "beta", "gamma", "weight", "gamma_normalization"};
inline const std::set<std::string> kQuantifierKeys{"kind", "w", "alpha"};

/// "quantifier" may be one object (shared by all layers) or one per layer.
inline std::vector<QuantifierSpec> parse_quantifiers(const ConfigReader& parent, const std::string& key) {
    const auto& j = parent.raw(key);
    std::vector<QuantifierSpec> out;
    if (j.is_array()) {
        if (j.empty()) throw ConfigError(parent.field(key), "needs at least one entry");
        for (std::size_t i = 0; i < j.size(); ++i)
            out.push_back(parse_quantifier(ConfigReader(j[i], parent.field(key) + "[" + std::to_string(i) + "]",
                                                        kQuantifierKeys)));
    } else {
        out.push_back(parse_quantifier(parent.child(key, kQuantifierKeys)));
    }
    return out;
}

inline Method parse_method(const ConfigReader& r) {
    Method m;
    if (r.has("loss")) m.loss = parse_loss(r.child("loss", kLossKeys));
    if (r.has("quantifier")) m.quantifiers = parse_quantifiers(r, "quantifier");
    return m;
}

inline DataConfig parse_data(const ConfigReader& r, const std::filesystem::path& base) {
    DataConfig d;
    std::string path;
    r.get("path", path);
    if (r.has("synthetic")) {
        const auto s = r.child("synthetic", {"n", "noise", "seed"});
        SyntheticData syn;
        s.get("n", syn.n);
        s.get("noise", syn.noise);
        s.get("seed", syn.seed);
        if (syn.n < kMinRows) throw ConfigError(s.field("n"), "needs at least " + std::to_string(kMinRows) + " rows");
        if (!(syn.noise >= 0.0)) throw ConfigError(s.field("noise"), "must be >= 0");
        d.synthetic = syn;
    }
    if (path.empty() == !d.synthetic) throw ConfigError(r.field("path"), "give exactly one of path or synthetic");
    if (!path.empty()) {
        d.path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base / path;
        if (!std::filesystem::exists(d.path)) throw ConfigError(r.field("path"), "file not found: " + d.path.string());
    }
    r.get("has_header", d.has_header);
    if (r.has("target")) {
        const auto& t = r.raw("target");
        const auto items = t.is_array() ? t : json::array({t});
        if (items.empty()) throw ConfigError(r.field("target"), "needs at least one column");
        d.target.indices.clear();
        for (const auto& item : items) {
            if (item.is_number_integer()) d.target.indices.push_back(item.get<long>());
            else if (item.is_string()) d.target.names.push_back(item.get<std::string>());
            else throw ConfigError(r.field("target"), "entries must be column indices or header names");
        }
        if (!d.target.names.empty() && !d.target.indices.empty())
            throw ConfigError(r.field("target"), "mix of names and indices");
    }
    r.get("test_fraction", d.test_fraction);
    if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0))
        throw ConfigError(r.field("test_fraction"), "must lie in (0,1)");
    if (r.has("contamination")) {
        const auto c = r.child("contamination", {"fraction", "magnitude", "symmetric"});
        Contamination con;
        c.get("fraction", con.fraction);
        c.get("magnitude", con.magnitude);
        c.get("symmetric", con.symmetric);
        if (!(con.fraction >= 0.0 && con.fraction < 1.0)) throw ConfigError(c.field("fraction"), "must lie in [0,1)");
        d.contamination = con;
    }
    return d;
}

}  // namespace detail

/// Parses and validates a configuration. Relative data paths resolve against
/// `base` (normally the config file's directory).
inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base = {}) {
    using detail::ConfigReader;
    const ConfigReader root(j, "",
                            {"data", "model", "loss", "quantifier", "methods", "train", "predict", "benchmark",
                             "gradcheck", "output_dir"});
    RunConfig cfg;
    if (root.has("data")) {
        cfg.data = detail::parse_data(
            root.child("data", {"path", "synthetic", "has_header", "target", "test_fraction", "contamination"}), base);
    }
    if (root.has("model")) {
        const auto m = root.child("model", {"layers", "width", "num_inducing", "whiten", "noise_variance", "q_sqrt_scale"});
        m.get("layers", cfg.model.layers);
        m.get("width", cfg.model.width);
        m.get("num_inducing", cfg.model.num_inducing);
        m.get("whiten", cfg.model.whiten);
        m.get("noise_variance", cfg.model.noise_variance);
        m.get("q_sqrt_scale", cfg.model.q_sqrt_scale);
        if (cfg.model.layers < 1) throw ConfigError(m.field("layers"), "must be >= 1");
        if (cfg.model.width < 0) throw ConfigError(m.field("width"), "must be >= 0 (0 selects min(30, D))");
        if (cfg.model.num_inducing < 1) throw ConfigError(m.field("num_inducing"), "must be >= 1");
        if (!(cfg.model.noise_variance > 0.0)) throw ConfigError(m.field("noise_variance"), "must be > 0");
        if (!(cfg.model.q_sqrt_scale > 0.0)) throw ConfigError(m.field("q_sqrt_scale"), "must be > 0");
    }
    if (root.has("methods")) {
        if (root.has("loss") || root.has("quantifier"))
            throw ConfigError("methods", "give either methods or a top-level loss/quantifier, not both");
        const auto& arr = root.raw("methods");
        if (!arr.is_array() || arr.empty()) throw ConfigError("methods", "expected a non-empty array");
        cfg.methods.clear();
        for (std::size_t i = 0; i < arr.size(); ++i)
            cfg.methods.push_back(detail::parse_method(
                ConfigReader(arr[i], "methods[" + std::to_string(i) + "]", {"loss", "quantifier"})));
    } else {
        cfg.methods = {detail::parse_method(root)};
    }
    const auto layers = static_cast<std::size_t>(cfg.model.layers);
    for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
        const auto n = cfg.methods[i].quantifiers.size();
        if (n != 1 && n != layers)
            throw ConfigError(root.has("methods") ? "methods[" + std::to_string(i) + "].quantifier" : "quantifier",
                              "expected 1 or " + std::to_string(layers) + " entries, got " + std::to_string(n));
    }
    if (root.has("train")) {
        const auto t = root.child("train", {"learning_rate", "iterations", "batch_size", "seed", "adam_beta1", "adam_beta2",
                                            "adam_eps", "grad_clip", "samples", "freeze"});
        auto& tc = cfg.train;
        t.get("learning_rate", tc.learning_rate);
        t.get("iterations", tc.iterations);
        t.get("batch_size", tc.batch_size);
        t.get("seed", tc.seed);
        t.get("adam_beta1", tc.adam_beta1);
        t.get("adam_beta2", tc.adam_beta2);
        t.get("adam_eps", tc.adam_eps);
        if (t.has("grad_clip")) {
            double clip = 0.0;
            t.get("grad_clip", clip);
            if (!(clip > 0.0)) throw ConfigError(t.field("grad_clip"), "must be > 0");
            tc.grad_clip = clip;
        }
        t.get("samples", cfg.train_samples);
        if (t.has("freeze")) {
            const auto f = t.child("freeze", {"inducing", "hyperparameters", "variational"});
            bool fi = false, fh = false, fv = false;
            f.get("inducing", fi);
            f.get("hyperparameters", fh);
            f.get("variational", fv);
            tc.mask = TrainableMask{!fi, !fh, !fv};
            if (fi && fh && fv) throw ConfigError(f.field("variational"), "every parameter block is frozen");
        }
        if (!(tc.learning_rate > 0.0)) throw ConfigError(t.field("learning_rate"), "must be > 0");
        if (tc.iterations < 1) throw ConfigError(t.field("iterations"), "must be >= 1");
        if (!(tc.adam_beta1 >= 0.0 && tc.adam_beta1 < 1.0)) throw ConfigError(t.field("adam_beta1"), "must lie in [0,1)");
        if (!(tc.adam_beta2 >= 0.0 && tc.adam_beta2 < 1.0)) throw ConfigError(t.field("adam_beta2"), "must lie in [0,1)");
        if (!(tc.adam_eps > 0.0)) throw ConfigError(t.field("adam_eps"), "must be > 0");
        if (cfg.train_samples < 1) throw ConfigError(t.field("samples"), "must be >= 1");
    }
    if (root.has("predict")) {
        const auto p = root.child("predict", {"samples"});
        p.get("samples", cfg.test_samples);
        if (cfg.test_samples < 1) throw ConfigError(p.field("samples"), "must be >= 1");
    }
    if (root.has("benchmark")) {
        const auto b = root.child("benchmark", {"n_splits"});
        b.get("n_splits", cfg.n_splits);
        if (cfg.n_splits < 1) throw ConfigError(b.field("n_splits"), "must be >= 1");
    }
    if (root.has("gradcheck")) {
        const auto g = root.child("gradcheck", {"tolerance", "seed", "samples"});
        g.get("tolerance", cfg.gradcheck.tolerance);
        g.get("seed", cfg.gradcheck.seed);
        g.get("samples", cfg.gradcheck.samples);
        if (!(cfg.gradcheck.tolerance > 0.0)) throw ConfigError(g.field("tolerance"), "must be > 0");
        if (cfg.gradcheck.samples < 1) throw ConfigError(g.field("samples"), "must be >= 1");
    }
    if (root.has("output_dir")) {
        std::string dir;
        root.get("output_dir", dir);
        cfg.output_dir = dir;
    }
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j, path.parent_path());
}

inline void apply(RunConfig& cfg, const Overrides& o) {
    if (o.seed) cfg.train.seed = *o.seed;
    if (o.iterations) {
        if (*o.iterations < 1) throw ConfigError("train.iterations", "must be >= 1");
        cfg.train.iterations = *o.iterations;
    }
    if (o.output_dir) cfg.output_dir = *o.output_dir;
}

/// Flag, then config, then the environment variable, then a fixed default.
inline std::filesystem::path resolve_output_dir(const RunConfig& cfg) {
    if (cfg.output_dir && !cfg.output_dir->empty()) return *cfg.output_dir;
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
    return kDefaultOutputDir;
}

// -- shared pieces of the commands ----------------------------------------------------

struct MethodResult {
    TrainResult fit;
    double rmse = 0.0;
    double nll = 0.0;  // negative mean test log likelihood, original units
    double seconds = 0.0;
};

inline RawTable load_table(const DataConfig& d) {
    if (d.synthetic) return synthetic_sine(d.synthetic->n, d.synthetic->noise, d.synthetic->seed);
    return load_csv(d.path, d.has_header);
}

/// Checks everything that depends on the loaded data, before any training.
inline void validate_against_data(const RunConfig& cfg, const Dataset& ds) {
    const auto n = static_cast<std::size_t>(ds.train.size());
    if (cfg.train.batch_size > n)
        throw ConfigError("train.batch_size", "exceeds the " + std::to_string(n) + " training rows");
    try {
        cfg.train.validate(n);
    } catch (const PreconditionViolation& e) {
        throw ConfigError("train", e.what());
    }
}

inline MethodResult run_method(const RunConfig& cfg, const Method& method, const Dataset& ds, std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    const Eigen::MatrixXd x_train = ds.x_train(), y_train = ds.y_train();
    const Eigen::MatrixXd x_test = ds.x_test(), y_test = ds.y_test();
    DgpModel model = init_model(x_train, y_train.cols(), cfg.model, seed);
    const GviProblem problem{method.loss, method.per_layer(model.num_layers()), cfg.train_samples};
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    MethodResult r;
    r.fit = train(std::move(model), x_train, y_train, problem, tc);
    const Predictive pred = predict(r.fit.model, x_test, cfg.test_samples, seed);
    r.rmse = rmse(pred.mean, y_test, ds.stats);
    r.nll = -test_log_likelihood(
        [&](Eigen::Index i, const Eigen::RowVectorXd& y) { return pred.log_density(i, y.transpose()); }, y_test,
        ds.stats);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

inline std::string hyperparam_label(const Method& m) {
    std::ostringstream os;
    os << std::setprecision(6);
    if (m.loss.kind == LossSpec::Kind::beta) os << "beta=" << m.loss.beta << ';';
    if (m.loss.kind == LossSpec::Kind::gamma) os << "gamma=" << m.loss.gamma << ';';
    if (m.loss.weight != 1.0) os << "weight=" << m.loss.weight << ';';
    for (const auto& q : m.quantifiers) {
        if (q.kind == QuantifierSpec::Kind::scaled_kld) os << "w=" << q.w << ';';
        if (q.kind == QuantifierSpec::Kind::renyi) os << "alpha=" << q.alpha << ';';
    }
    std::string s = os.str();
    if (s.empty()) return "-";
    s.pop_back();
    return s;
}

/// Runs `body`, mapping library exceptions to exit codes with a message on `err`.
template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ParseError& e) {
        err << "input error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const EmptyFile& e) {
        err << "input error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const TooFewRows& e) {
        err << "input error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NonFiniteGradient& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const NonFiniteObjective& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const NotPositiveDefinite& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
}

// -- commands -------------------------------------------------------------------------

/// Trains one method on one split and writes checkpoint.json, trace.csv and
/// metrics.json. The metrics record holds no timings, so reruns match byte for byte.
inline int cmd_train(const std::filesystem::path& config_path, const Overrides& overrides = {},
                     std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        RunConfig cfg = load_config(config_path);
        apply(cfg, overrides);
        if (!cfg.data) throw ConfigError("data", "required by train");
        if (cfg.methods.size() != 1) throw ConfigError("methods", "train takes exactly one method");
        const RawTable table = load_table(*cfg.data);
        const Dataset ds = normalize_split(table, cfg.data->target, cfg.data->test_fraction, cfg.train.seed,
                                           cfg.data->contamination);
        validate_against_data(cfg, ds);
        for (const auto& w : ds.warnings) err << "warning: " << w << '\n';

        const auto dir = resolve_output_dir(cfg);
        std::filesystem::create_directories(dir);
        const Method& method = cfg.methods.front();
        const MethodResult r = run_method(cfg, method, ds, cfg.train.seed);

        save_checkpoint(dir / "checkpoint.json", Checkpoint{r.fit.model, cfg.train.seed, ds.stats});
        {
            std::ofstream trace(dir / "trace.csv");
            if (!trace) throw Error("cannot write trace.csv");
            r.fit.trace.write_csv(trace);
        }
        nlohmann::ordered_json metrics = {
            {"loss", method.loss.name()},
            {"quantifier", method.quantifier_name()},
            {"hyperparam", hyperparam_label(method)},
            {"seed", cfg.train.seed},
            {"iterations", cfg.train.iterations},
            {"n_train", ds.train.size()},
            {"n_test", ds.test.size()},
            {"rmse", r.rmse},
            {"nll", r.nll},
            {"final_objective", r.fit.trace.objective.back()},
            {"noise_variance", r.fit.model.lik.noise_variance()},
            {"snapshot_id", r.fit.trace.snapshot_id},
            {"warnings", ds.warnings},
        };
        write_text(dir / "metrics.json", metrics.dump(2) + "\n");
        out << method.label() << ": test rmse " << r.rmse << ", test nll " << r.nll << " (" << dir.string() << ")\n";
        return static_cast<int>(kExitOk);
    });
}

struct BenchmarkRow {
    std::size_t split;
    std::uint64_t seed;
    std::size_t method;
    double rmse, nll, seconds;
};

/// Mean and standard error (sample std / sqrt(n); 0 for a single value).
inline std::pair<double, double> mean_and_se(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

/// Runs every method on n_splits seeded splits (split s uses seed + s) and
/// writes results.csv, summary.csv and table.txt; with contamination and at
/// least two methods, also paired.csv comparing each method with the first.
inline int cmd_benchmark(const std::filesystem::path& config_path, const Overrides& overrides = {},
                         std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        RunConfig cfg = load_config(config_path);
        apply(cfg, overrides);
        if (!cfg.data) throw ConfigError("data", "required by benchmark");
        const RawTable table = load_table(*cfg.data);
        std::vector<Dataset> splits;
        for (std::size_t s = 0; s < cfg.n_splits; ++s) {
            splits.push_back(normalize_split(table, cfg.data->target, cfg.data->test_fraction, cfg.train.seed + s,
                                             cfg.data->contamination));
            validate_against_data(cfg, splits.back());
        }
        for (const auto& w : splits.front().warnings) err << "warning: " << w << '\n';
        const auto dir = resolve_output_dir(cfg);
        std::filesystem::create_directories(dir);

        std::vector<BenchmarkRow> rows;
        for (std::size_t s = 0; s < cfg.n_splits; ++s) {
            const std::uint64_t seed = cfg.train.seed + s;
            for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
                const auto r = run_method(cfg, cfg.methods[k], splits[s], seed);
                rows.push_back({s, seed, k, r.rmse, r.nll, r.seconds});
                out << "split " << s << ' ' << cfg.methods[k].label() << ": rmse " << r.rmse << ", nll " << r.nll
                    << '\n';
            }
        }

        std::ostringstream results, summary, table_txt;
        results << std::setprecision(17) << "split,seed,loss,quantifier,hyperparam,rmse,nll,seconds\n";
        summary << std::setprecision(17) << "loss,quantifier,hyperparam,n_splits,rmse_mean,rmse_se,nll_mean,nll_se\n";
        table_txt << std::left << std::setw(28) << "method" << std::setw(28) << "hyperparam" << std::setw(26)
                  << "test RMSE" << "test NLL\n";
        for (const auto& r : rows) {
            const Method& m = cfg.methods[r.method];
            results << r.split << ',' << r.seed << ',' << m.loss.name() << ',' << m.quantifier_name() << ','
                    << hyperparam_label(m) << ',' << r.rmse << ',' << r.nll << ',' << r.seconds << '\n';
        }
        for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
            const Method& m = cfg.methods[k];
            std::vector<double> rm, nl, sec;
            for (const auto& r : rows)
                if (r.method == k) {
                    rm.push_back(r.rmse);
                    nl.push_back(r.nll);
                    sec.push_back(r.seconds);
                }
            const auto [rmse_mean, rmse_se] = mean_and_se(rm);
            const auto [nll_mean, nll_se] = mean_and_se(nl);
            results << "mean,," << m.loss.name() << ',' << m.quantifier_name() << ',' << hyperparam_label(m) << ','
                    << rmse_mean << ',' << nll_mean << ',' << mean_and_se(sec).first << '\n';
            summary << m.loss.name() << ',' << m.quantifier_name() << ',' << hyperparam_label(m) << ','
                    << cfg.n_splits << ',' << rmse_mean << ',' << rmse_se << ',' << nll_mean << ',' << nll_se << '\n';
            std::ostringstream a, b;
            a << std::fixed << std::setprecision(4) << rmse_mean << " ± " << rmse_se;
            b << std::fixed << std::setprecision(4) << nll_mean << " ± " << nll_se;
            table_txt << std::left << std::setw(28) << m.label() << std::setw(28) << hyperparam_label(m)
                      << std::setw(26) << a.str() << b.str() << '\n';
        }
        write_text(dir / "results.csv", results.str());
        write_text(dir / "summary.csv", summary.str());

        if (cfg.data->contamination && cfg.methods.size() >= 2) {
            std::ostringstream paired;
            paired << std::setprecision(17)
                   << "split,seed,baseline,method,baseline_rmse,method_rmse,rmse_difference,method_wins\n";
            table_txt << "\nPaired clean-test RMSE against " << cfg.methods.front().label() << " ("
                      << cfg.data->contamination->fraction * 100.0 << "% contaminated training targets):\n";
            for (std::size_t k = 1; k < cfg.methods.size(); ++k) {
                std::size_t wins = 0;
                for (std::size_t s = 0; s < cfg.n_splits; ++s) {
                    const auto& base = rows[s * cfg.methods.size()];
                    const auto& other = rows[s * cfg.methods.size() + k];
                    const bool win = other.rmse < base.rmse;
                    wins += win;
                    paired << s << ',' << base.seed << ',' << cfg.methods.front().label() << ','
                           << cfg.methods[k].label() << ',' << base.rmse << ',' << other.rmse << ','
                           << other.rmse - base.rmse << ',' << (win ? 1 : 0) << '\n';
                }
                table_txt << "  " << cfg.methods[k].label() << " lower in " << wins << " of " << cfg.n_splits
                          << " splits\n";
            }
            write_text(dir / "paired.csv", paired.str());
        }
        write_text(dir / "table.txt", table_txt.str());
        out << table_txt.str();
        return static_cast<int>(kExitOk);
    });
}

/// Audits all nine loss × quantifier combinations on the reference model.
/// `hook`, if set, alters each analytic gradient before comparison.
inline int cmd_gradcheck(const std::filesystem::path& config_path, const Overrides& overrides = {},
                         std::ostream& out = std::cout, std::ostream& err = std::cerr, const GradientHook& hook = {}) {
    return guarded(err, [&] {
        RunConfig cfg = load_config(config_path);
        apply(cfg, overrides);
        if (overrides.seed) cfg.gradcheck.seed = *overrides.seed;
        const auto& g = cfg.gradcheck;
        const ReferenceProblem ref = reference_problem(g.seed);
        double worst = 0.0;
        std::string worst_name;
        out << std::scientific << std::setprecision(3);
        for (const auto& problem : reference_problems(ref.model.num_layers(), g.samples)) {
            const auto report = grad_check(ref.model, ref.x, ref.y, problem, g.seed, {}, hook);
            out << describe(problem) << ": max rel error " << report.max_rel_error << '\n';
            for (const auto& [block, e] : report.block_max) out << "    " << block << ' ' << e << '\n';
            const double e = std::isnan(report.max_rel_error) ? HUGE_VAL : report.max_rel_error;
            if (worst_name.empty() || e > worst) {
                worst = e;
                worst_name = describe(problem) + " " + report.worst_block + "[" + std::to_string(report.worst_index) + "]";
            }
        }
        if (!(worst < g.tolerance)) {
            err << "gradcheck failed: worst relative error " << worst << " at " << worst_name << " (tolerance "
                << g.tolerance << ")\n";
            return static_cast<int>(kExitGradCheck);
        }
        out << "gradcheck passed: worst relative error " << worst << " at " << worst_name << '\n';
        return static_cast<int>(kExitOk);
    });
}

/// Predictive mean and variance in original units for every row of a CSV of
/// raw features.
inline int cmd_predict(const std::filesystem::path& checkpoint_path, const std::filesystem::path& input,
                       bool has_header, const std::filesystem::path& output, std::size_t samples, std::uint64_t seed,
                       std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        if (samples < 1) throw ConfigError("samples", "must be >= 1");
        const Checkpoint ck = load_checkpoint(checkpoint_path);
        const RawTable t = load_csv(input, has_header);
        if (t.dropped_rows > 0) err << "warning: dropped " << t.dropped_rows << " rows with missing values\n";
        if (t.cols() != ck.model.input_dim())
            throw ConfigError("input", "expected " + std::to_string(ck.model.input_dim()) + " feature columns, found " +
                                           std::to_string(t.cols()));
        Eigen::MatrixXd x = t.values;
        if (ck.stats) x = ck.stats->normalize_features(x);
        const Predictive p = predict(ck.model, x, samples, seed);
        Eigen::MatrixXd mean = p.mean, var = p.variance;
        if (ck.stats) {
            mean = ck.stats->denormalize_targets(mean);
            var = var.array().rowwise() * ck.stats->target_stds.transpose().array().square();
        }
        Eigen::MatrixXd table(mean.rows(), 2 * mean.cols());
        table << mean, var;
        std::vector<std::string> header;
        for (Eigen::Index c = 0; c < mean.cols(); ++c) header.push_back("mean_" + std::to_string(c));
        for (Eigen::Index c = 0; c < mean.cols(); ++c) header.push_back("variance_" + std::to_string(c));
        write_csv(output, table, header);
        return static_cast<int>(kExitOk);
    });
}

}  // namespace gvidgp
