#pragma once

// Flat views of the trainable parameters of a model, in a fixed block order:
// per layer kernel.log_variance, kernel.log_lengthscales, inducing, q_mu,
// q_sqrt.<c>; then likelihood.log_variance.

#include "gvidgp/autodiff.hpp"
#include "gvidgp/dgp.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

namespace gvidgp {

enum class BlockKind { hyperparameter, inducing, variational };

struct TrainableMask {
    bool inducing = true;
    bool hyperparameters = true;  // kernel parameters and the noise variance
    bool variational = true;

    [[nodiscard]] bool includes(BlockKind k) const noexcept {
        switch (k) {
            case BlockKind::hyperparameter: return hyperparameters;
            case BlockKind::inducing: return inducing;
            case BlockKind::variational: return variational;
        }
        return false;
    }
};

struct ParamBlock {
    std::string name;
    BlockKind kind;
    Eigen::Index offset;
    Eigen::Index size;
};

/// Calls f(name, kind, pointer to first scalar, count) for every block of a
/// (possibly const) model. Blocks are contiguous in memory.
template <class Model, class F>
void for_each_block(Model& model, F&& f) {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        f(p + "kernel.log_variance", BlockKind::hyperparameter, &layer.kernel.log_variance, Eigen::Index{1});
        f(p + "kernel.log_lengthscales", BlockKind::hyperparameter, layer.kernel.log_lengthscales.data(),
          layer.kernel.log_lengthscales.size());
        f(p + "inducing", BlockKind::inducing, layer.inducing.data(), layer.inducing.size());
        f(p + "q_mu", BlockKind::variational, layer.q_mu.data(), layer.q_mu.size());
        for (std::size_t c = 0; c < layer.q_sqrt.size(); ++c)
            f(p + "q_sqrt." + std::to_string(c), BlockKind::variational, layer.q_sqrt[c].data(), layer.q_sqrt[c].size());
    }
    f(std::string("likelihood.log_variance"), BlockKind::hyperparameter, &model.lik.log_noise_variance, Eigen::Index{1});
}

struct ParamLayout {
    std::vector<ParamBlock> blocks;
    Eigen::Index total = 0;

    /// Block containing flat index k.
    [[nodiscard]] const ParamBlock& block_of(Eigen::Index k) const {
        for (const auto& b : blocks)
            if (k >= b.offset && k < b.offset + b.size) return b;
        throw PreconditionViolation("ParamLayout: index " + std::to_string(k) + " out of range");
    }
};

template <class T>
ParamLayout layout_of(const BasicDgp<T>& model, const TrainableMask& mask = {}) {
    ParamLayout layout;
    for_each_block(model, [&](const std::string& name, BlockKind kind, const T*, Eigen::Index n) {
        if (!mask.includes(kind)) return;
        layout.blocks.push_back({name, kind, layout.total, n});
        layout.total += n;
    });
    return layout;
}

inline Eigen::VectorXd pack(const DgpModel& model, const TrainableMask& mask = {}) {
    std::vector<double> flat;
    for_each_block(model, [&](const std::string&, BlockKind kind, const double* p, Eigen::Index n) {
        if (mask.includes(kind)) flat.insert(flat.end(), p, p + n);
    });
    return Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
}

inline void unpack(DgpModel& model, const Eigen::VectorXd& flat, const TrainableMask& mask = {}) {
    Eigen::Index k = 0;
    for_each_block(model, [&](const std::string&, BlockKind kind, double* p, Eigen::Index n) {
        if (!mask.includes(kind)) return;
        if (k + n > flat.size()) throw DimensionMismatch("unpack: flat vector is too short");
        for (Eigen::Index i = 0; i < n; ++i) p[i] = flat(k + i);
        k += n;
    });
    if (k != flat.size()) throw DimensionMismatch("unpack: flat vector is too long");
}

/// Copy of `model` on the active tape, with every trainable scalar a fresh
/// leaf. `leaves` receives their tape indices in layout order.
inline BasicDgp<Var> attach_leaves(const DgpModel& model, const TrainableMask& mask, std::vector<std::int32_t>& leaves) {
    BasicDgp<Var> out = cast_model<Var>(model);
    leaves.clear();
    for_each_block(out, [&](const std::string&, BlockKind kind, Var* p, Eigen::Index n) {
        if (!mask.includes(kind)) return;
        for (Eigen::Index i = 0; i < n; ++i) {
            p[i] = Var::leaf(p[i].value());
            leaves.push_back(p[i].index());
        }
    });
    return out;
}

/// FNV-1a hash of every parameter's bit pattern, as 16 hex digits.
inline std::string parameter_fingerprint(const DgpModel& model) {
    std::uint64_t h = 1469598103934665603ULL;
    for_each_block(model, [&](const std::string&, BlockKind, const double* p, Eigen::Index n) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    });
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = kHex[h & 0xF];
    return s;
}

}  // namespace gvidgp
