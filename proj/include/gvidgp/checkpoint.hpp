#pragma once

// Self-describing JSON checkpoint of a trained model. Doubles are written in
// shortest round-trip form, so save followed by load restores every bit.

#include "gvidgp/data.hpp"
#include "gvidgp/dgp.hpp"
#include "gvidgp/errors.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

namespace gvidgp {

inline constexpr const char* kCheckpointFormat = "gvidgp-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    DgpModel model;
    std::uint64_t seed = 0;
    std::optional<NormalizationStats> stats;
};

namespace detail {

using nlohmann::json;

inline json matrix_json(const Eigen::MatrixXd& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()},
            {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline Eigen::MatrixXd matrix_from(const json& j, const std::string& what) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw DimensionMismatch("checkpoint: " + what + " has inconsistent shape");
    return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

inline json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vector_from(const json& j) {
    const auto data = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace detail

inline nlohmann::json to_json(const Checkpoint& ck) {
    using detail::json;
    json layers = json::array();
    for (const auto& layer : ck.model.layers) {
        json q_sqrt = json::array();
        for (const auto& p : layer.q_sqrt) q_sqrt.push_back(detail::vector_json(p));
        layers.push_back({
            {"input_dim", layer.input_dim()},
            {"output_dim", layer.output_dim()},
            {"num_inducing", layer.num_inducing()},
            {"whiten", layer.whiten},
            {"mean_function", layer.mean_fn == MeanFunction::zero ? "zero" : "linear_projection"},
            {"projection", detail::matrix_json(layer.projection)},
            {"kernel", {{"log_variance", layer.kernel.log_variance},
                        {"log_lengthscales", detail::vector_json(layer.kernel.log_lengthscales)}}},
            {"inducing", detail::matrix_json(layer.inducing)},
            {"q_mu", detail::matrix_json(layer.q_mu)},
            {"q_sqrt", q_sqrt},
        });
    }
    json out = {
        {"format", kCheckpointFormat},
        {"version", kCheckpointVersion},
        {"seed", ck.seed},
        {"transforms",
         {{"kernel.log_variance", "log"},
          {"kernel.log_lengthscales", "log"},
          {"likelihood.log_variance", "log"},
          {"q_sqrt", "packed column-major lower triangle, diagonal stored as softplus pre-image"},
          {"matrices", "column-major"}}},
        {"likelihood", {{"log_variance", ck.model.lik.log_noise_variance}, {"output_dim", ck.model.lik.output_dim}}},
        {"layers", layers},
    };
    if (ck.stats) {
        out["normalization"] = {
            {"feature_means", detail::vector_json(ck.stats->feature_means)},
            {"feature_stds", detail::vector_json(ck.stats->feature_stds)},
            {"target_means", detail::vector_json(ck.stats->target_means)},
            {"target_stds", detail::vector_json(ck.stats->target_stds)},
        };
    }
    return out;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat) throw Error("checkpoint: unrecognized format");
        if (const int v = j.at("version").get<int>(); v != kCheckpointVersion)
            throw Error("checkpoint: unsupported version " + std::to_string(v));
        Checkpoint ck;
        ck.seed = j.at("seed").get<std::uint64_t>();
        ck.model.lik.log_noise_variance = j.at("likelihood").at("log_variance").get<double>();
        ck.model.lik.output_dim = j.at("likelihood").at("output_dim").get<Eigen::Index>();
        for (const auto& jl : j.at("layers")) {
            LayerState layer;
            layer.whiten = jl.at("whiten").get<bool>();
            const auto mf = jl.at("mean_function").get<std::string>();
            if (mf == "zero") layer.mean_fn = MeanFunction::zero;
            else if (mf == "linear_projection") layer.mean_fn = MeanFunction::linear_projection;
            else throw Error("checkpoint: unknown mean function '" + mf + "'");
            layer.projection = detail::matrix_from(jl.at("projection"), "projection");
            layer.kernel.log_variance = jl.at("kernel").at("log_variance").get<double>();
            layer.kernel.log_lengthscales = detail::vector_from(jl.at("kernel").at("log_lengthscales"));
            layer.inducing = detail::matrix_from(jl.at("inducing"), "inducing");
            layer.q_mu = detail::matrix_from(jl.at("q_mu"), "q_mu");
            for (const auto& p : jl.at("q_sqrt")) layer.q_sqrt.push_back(detail::vector_from(p));

            const Eigen::Index m = layer.num_inducing();
            if (layer.q_mu.rows() != m || layer.kernel.input_dim() != layer.input_dim() ||
                static_cast<Eigen::Index>(layer.q_sqrt.size()) != layer.output_dim() ||
                jl.at("input_dim").get<Eigen::Index>() != layer.input_dim() ||
                jl.at("output_dim").get<Eigen::Index>() != layer.output_dim() ||
                jl.at("num_inducing").get<Eigen::Index>() != m)
                throw DimensionMismatch("checkpoint: layer shapes are inconsistent");
            for (const auto& p : layer.q_sqrt)
                if (p.size() != packed_size(m)) throw DimensionMismatch("checkpoint: q_sqrt has wrong length");
            if (!ck.model.layers.empty() && ck.model.layers.back().output_dim() != layer.input_dim())
                throw DimensionMismatch("checkpoint: consecutive layer widths disagree");
            ck.model.layers.push_back(std::move(layer));
        }
        if (ck.model.layers.empty()) throw Error("checkpoint: no layers");
        if (ck.model.output_dim() != ck.model.lik.output_dim)
            throw DimensionMismatch("checkpoint: likelihood width disagrees with the last layer");
        if (j.contains("normalization")) {
            const auto& n = j.at("normalization");
            NormalizationStats s;
            s.feature_means = detail::vector_from(n.at("feature_means"));
            s.feature_stds = detail::vector_from(n.at("feature_stds"));
            s.target_means = detail::vector_from(n.at("target_means"));
            s.target_stds = detail::vector_from(n.at("target_stds"));
            ck.stats = std::move(s);
        }
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << to_json(ck).dump(1) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("checkpoint: " + std::string(e.what()));
    }
    return checkpoint_from_json(j);
}

}  // namespace gvidgp
