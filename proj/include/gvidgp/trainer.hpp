#pragma once

// Doubly-stochastic minibatch training with Adam, and a finite-difference
// audit of the tape gradients.

#include "gvidgp/autodiff.hpp"
#include "gvidgp/dgp.hpp"
#include "gvidgp/errors.hpp"
#include "gvidgp/params.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gvidgp {

/// Loss, per-layer quantifiers and the number of sample paths per evaluation.
struct GviProblem {
    LossSpec loss;
    std::vector<QuantifierSpec> specs;
    std::size_t n_samples = 10;

    void validate(std::size_t num_layers) const {
        loss.validate();
        if (specs.size() != num_layers)
            throw PreconditionViolation("need one quantifier per layer: got " + std::to_string(specs.size()) + " for " +
                                        std::to_string(num_layers) + " layers");
        for (const auto& s : specs) s.validate();
        if (n_samples < 1) throw PreconditionViolation("n_samples must be at least 1");
    }
};

struct TrainConfig {
    double learning_rate = 0.01;
    std::size_t iterations = 2000;
    std::size_t batch_size = 0;  // 0 selects min(1000, n)
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::optional<double> grad_clip;
    TrainableMask mask;

    static constexpr std::size_t kMaxBatch = 1000;

    [[nodiscard]] std::size_t effective_batch(std::size_t n) const {
        return batch_size == 0 ? std::min(kMaxBatch, n) : batch_size;
    }

    void validate(std::size_t n) const {
        if (!(learning_rate > 0.0 && std::isfinite(learning_rate)))
            throw PreconditionViolation("learning_rate must be finite and > 0");
        if (n == 0) throw PreconditionViolation("training data is empty");
        if (effective_batch(n) > n) throw PreconditionViolation("batch_size exceeds the number of training points");
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
            throw PreconditionViolation("Adam decay rates must lie in [0, 1)");
        if (!(adam_eps > 0.0)) throw PreconditionViolation("adam_eps must be > 0");
        if (grad_clip && !(*grad_clip > 0.0)) throw PreconditionViolation("grad_clip must be > 0");
    }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// -- objective evaluation ---------------------------------------------------------

inline double objective_value(const DgpModel& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                              const GviProblem& problem, std::uint64_t seed, std::size_t n_total) {
    return gvi_objective(model, x, y, problem.loss, std::span<const QuantifierSpec>(problem.specs), problem.n_samples,
                         seed, n_total);
}

/// Objective value; `grad` receives its gradient in the layout order of `mask`.
inline double objective_and_gradient(const DgpModel& model, const TrainableMask& mask, const Eigen::MatrixXd& x,
                                     const Eigen::MatrixXd& y, const GviProblem& problem, std::uint64_t seed,
                                     std::size_t n_total, Eigen::VectorXd& grad) {
    ad::Tape tape;
    ad::ScopedTape guard(tape);
    std::vector<std::int32_t> leaves;
    const BasicDgp<Var> vm = attach_leaves(model, mask, leaves);
    const Var obj = gvi_objective(vm, x, y, problem.loss, std::span<const QuantifierSpec>(problem.specs),
                                  problem.n_samples, seed, n_total);
    const std::vector<double> adj = tape.adjoints(obj.index());
    grad.resize(static_cast<Eigen::Index>(leaves.size()));
    for (std::size_t k = 0; k < leaves.size(); ++k) grad(static_cast<Eigen::Index>(k)) = adj[static_cast<std::size_t>(leaves[k])];
    return obj.value();
}

// -- Adam ---------------------------------------------------------------------------

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;

    static AdamState zeros(Eigen::Index n) { return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)}; }
};

/// One bias-corrected Adam update at iteration t ≥ 1. With a layout, a
/// non-finite gradient is reported by block name.
inline void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, const TrainConfig& cfg,
                      std::size_t t, const ParamLayout* layout = nullptr) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw DimensionMismatch("adam_step: parameter, gradient and state sizes differ");
    if (t < 1) throw PreconditionViolation("adam_step: iteration index starts at 1");
    for (Eigen::Index k = 0; k < grads.size(); ++k) {
        if (!std::isfinite(grads(k))) {
            const std::string block = layout != nullptr ? layout->block_of(k).name : "params";
            const Eigen::Index local = layout != nullptr ? k - layout->block_of(k).offset : k;
            throw NonFiniteGradient(block, static_cast<std::size_t>(local));
        }
    }
    Eigen::VectorXd g = grads;
    if (cfg.grad_clip) {
        const double norm = g.norm();
        if (norm > *cfg.grad_clip) g *= *cfg.grad_clip / norm;
    }
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    state.m = b1 * state.m + (1.0 - b1) * g;
    state.v = b2 * state.v + (1.0 - b2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (Eigen::Index k = 0; k < params.size(); ++k) {
        const double m_hat = state.m(k) / c1;
        const double v_hat = state.v(k) / c2;
        params(k) -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
}

// -- training -----------------------------------------------------------------------

struct TrainTrace {
    std::vector<double> objective;
    std::vector<double> grad_norm;
    std::vector<double> seconds;  // wall time since the start of training
    std::string snapshot_id;      // fingerprint of the final parameters

    [[nodiscard]] std::size_t size() const noexcept { return objective.size(); }

    void write_csv(std::ostream& os) const {
        os << "iteration,objective,grad_norm,seconds\n";
        os.precision(17);
        for (std::size_t i = 0; i < size(); ++i)
            os << i + 1 << ',' << objective[i] << ',' << grad_norm[i] << ',' << seconds[i] << '\n';
    }
};

struct TrainResult {
    DgpModel model;
    TrainTrace trace;
};

/// Minimizes the GVI objective on (x, y) with epoch-shuffled minibatches and
/// fresh sample-path noise each iteration. Deterministic given cfg.seed.
inline TrainResult train(DgpModel model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const GviProblem& problem,
                         const TrainConfig& cfg) {
    const auto n = static_cast<std::size_t>(x.rows());
    cfg.validate(n);
    problem.validate(model.num_layers());
    if (y.rows() != x.rows()) throw DimensionMismatch("train: X and Y have different row counts");

    const std::size_t batch = cfg.effective_batch(n);
    const ParamLayout layout = layout_of(model, cfg.mask);
    Eigen::VectorXd params = pack(model, cfg.mask);
    AdamState state = AdamState::zeros(params.size());

    std::mt19937_64 shuffle_rng(cfg.seed);
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::size_t cursor = n;  // forces a shuffle on the first iteration

    Eigen::MatrixXd xb(static_cast<Eigen::Index>(batch), x.cols());
    Eigen::MatrixXd yb(static_cast<Eigen::Index>(batch), y.cols());
    std::vector<Eigen::Index> batch_rows(batch);
    Eigen::VectorXd grad;

    TrainTrace trace;
    trace.objective.reserve(cfg.iterations);
    trace.grad_norm.reserve(cfg.iterations);
    trace.seconds.reserve(cfg.iterations);
    const auto start = std::chrono::steady_clock::now();

    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        for (std::size_t b = 0; b < batch; ++b) {
            if (cursor == n) {
                std::shuffle(order.begin(), order.end(), shuffle_rng);
                cursor = 0;
            }
            batch_rows[b] = order[cursor++];
            xb.row(static_cast<Eigen::Index>(b)) = x.row(batch_rows[b]);
            yb.row(static_cast<Eigen::Index>(b)) = y.row(batch_rows[b]);
        }
        const std::uint64_t path_seed = splitmix64(cfg.seed + it);
        const double obj = objective_and_gradient(model, cfg.mask, xb, yb, problem, path_seed, n, grad);
        if (!std::isfinite(obj)) {
            throw NonFiniteObjective(it, std::vector<std::size_t>(batch_rows.begin(), batch_rows.end()));
        }
        adam_step(params, grad, state, cfg, it, &layout);
        unpack(model, params, cfg.mask);
        trace.objective.push_back(obj);
        trace.grad_norm.push_back(grad.norm());
        trace.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    trace.snapshot_id = parameter_fingerprint(model);
    return {std::move(model), std::move(trace)};
}

// -- gradient audit -------------------------------------------------------------------

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr std::size_t kGradCheckMaxParams = 500;
/// Denominator floor of the relative error, scaled by max(1, |objective|); it
/// sits well above the finite-difference round-off of ~1e-16·|f|/h.
inline constexpr double kGradCheckFloor = 1e-6;

struct GradCheckEntry {
    std::string block;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    std::map<std::string, double> block_max;  // worst relative error per block
    double objective = 0.0;
    double max_rel_error = 0.0;
    std::string worst_block;
    std::size_t worst_index = 0;

    [[nodiscard]] bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Optional hook applied to the tape gradient before comparison (used to check
/// that the audit catches a wrong gradient).
using GradientHook = std::function<void(Eigen::VectorXd&)>;

/// Central differences at relative step 1e-5 with the same sample-path noise
/// for every evaluation, compared against the tape gradient.
inline GradCheckReport grad_check(const DgpModel& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                  const GviProblem& problem, std::uint64_t seed, const TrainableMask& mask = {},
                                  const GradientHook& hook = {}) {
    if (x.rows() == 0) throw PreconditionViolation("grad_check: empty batch");
    problem.validate(model.num_layers());
    const ParamLayout layout = layout_of(model, mask);
    if (static_cast<std::size_t>(layout.total) > kGradCheckMaxParams)
        throw PreconditionViolation("grad_check: model has " + std::to_string(layout.total) +
                                    " parameters; the audit is limited to " + std::to_string(kGradCheckMaxParams));
    const auto n_total = static_cast<std::size_t>(x.rows());

    Eigen::VectorXd analytic;
    GradCheckReport report;
    report.objective = objective_and_gradient(model, mask, x, y, problem, seed, n_total, analytic);
    if (hook) hook(analytic);

    const Eigen::VectorXd theta = pack(model, mask);
    DgpModel work = model;
    auto eval = [&](const Eigen::VectorXd& th) {
        unpack(work, th, mask);
        return objective_value(work, x, y, problem, seed, n_total);
    };
    const double floor = kGradCheckFloor * std::max(1.0, std::abs(report.objective));
    for (const auto& block : layout.blocks) {
        double worst = 0.0;
        for (Eigen::Index i = 0; i < block.size; ++i) {
            const Eigen::Index k = block.offset + i;
            const double h = kGradCheckStep * std::max(1.0, std::abs(theta(k)));
            Eigen::VectorXd tp = theta, tm = theta;
            tp(k) += h;
            tm(k) -= h;
            const double numeric = (eval(tp) - eval(tm)) / (2.0 * h);
            const double a = analytic(k);
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            report.entries.push_back({block.name, static_cast<std::size_t>(i), a, numeric, rel});
            worst = std::max(worst, rel);
            if (rel > report.max_rel_error || !std::isfinite(rel)) {
                report.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
                report.worst_block = block.name;
                report.worst_index = static_cast<std::size_t>(i);
            }
        }
        report.block_max[block.name] = worst;
    }
    return report;
}

}  // namespace gvidgp
