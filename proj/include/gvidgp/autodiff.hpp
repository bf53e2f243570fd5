#pragma once

// Reverse-mode automatic differentiation on a flat tape.
//
// Nodes may have any number of parents, so a dot product or a triangular
// solve step costs one node instead of one node per multiply-add. All model
// code is templated on the scalar type and instantiated with either `double`
// (plain evaluation) or `ad::Var` (gradient recording).

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace gvidgp::ad {

class Tape {
public:
    Tape() { offsets_.push_back(0); }

    [[nodiscard]] std::size_t num_nodes() const noexcept { return offsets_.size() - 1; }
    [[nodiscard]] std::size_t num_edges() const noexcept { return parents_.size(); }

    void clear() {
        offsets_.assign(1, 0);
        parents_.clear();
        partials_.clear();
    }

    void reserve(std::size_t nodes, std::size_t edges) {
        offsets_.reserve(nodes + 1);
        parents_.reserve(edges);
        partials_.reserve(edges);
    }

    // Streaming construction: push the edges of one node, then close it.
    void push_edge(std::int32_t parent, double partial) {
        parents_.push_back(static_cast<std::uint32_t>(parent));
        partials_.push_back(partial);
    }

    std::int32_t close_node() {
        offsets_.push_back(static_cast<std::uint32_t>(parents_.size()));
        return static_cast<std::int32_t>(offsets_.size() - 2);
    }

    /// d(output)/d(node) for every node recorded up to and including `output`.
    [[nodiscard]] std::vector<double> adjoints(std::int32_t output) const {
        std::vector<double> adj(num_nodes(), 0.0);
        if (output < 0) return adj;
        adj[static_cast<std::size_t>(output)] = 1.0;
        for (std::int64_t i = output; i >= 0; --i) {
            const double a = adj[static_cast<std::size_t>(i)];
            if (a == 0.0) continue;
            const std::uint32_t end = offsets_[static_cast<std::size_t>(i) + 1];
            for (std::uint32_t e = offsets_[static_cast<std::size_t>(i)]; e < end; ++e) {
                adj[parents_[e]] += a * partials_[e];
            }
        }
        return adj;
    }

private:
    std::vector<std::uint32_t> offsets_;
    std::vector<std::uint32_t> parents_;
    std::vector<double> partials_;
};

inline Tape*& active_tape() noexcept {
    thread_local Tape* tape = nullptr;
    return tape;
}

/// Makes `tape` the recording tape of the calling thread for the guard's lifetime.
class ScopedTape {
public:
    explicit ScopedTape(Tape& tape) : previous_(active_tape()) { active_tape() = &tape; }
    ~ScopedTape() { active_tape() = previous_; }
    ScopedTape(const ScopedTape&) = delete;
    ScopedTape& operator=(const ScopedTape&) = delete;

private:
    Tape* previous_;
};

class Var {
public:
    Var() noexcept = default;
    Var(double value) noexcept : value_(value) {}  // NOLINT: constants convert implicitly
    Var(double value, std::int32_t index) noexcept : value_(value), index_(index) {}

    /// New independent variable on the active tape.
    static Var leaf(double value) {
        Tape* tape = active_tape();
        if (tape == nullptr) throw std::logic_error("ad::Var::leaf called without an active tape");
        return Var(value, tape->close_node());
    }

    [[nodiscard]] double value() const noexcept { return value_; }
    [[nodiscard]] std::int32_t index() const noexcept { return index_; }
    [[nodiscard]] bool is_constant() const noexcept { return index_ < 0; }

    Var& operator+=(const Var& o);
    Var& operator-=(const Var& o);
    Var& operator*=(const Var& o);
    Var& operator/=(const Var& o);

private:
    double value_ = 0.0;
    std::int32_t index_ = -1;
};

/// Collects the parents of one node; constants contribute no edges.
class NodeBuilder {
public:
    NodeBuilder() : tape_(active_tape()) {}

    void add(const Var& parent, double partial) {
        if (parent.is_constant()) return;
        tape_->push_edge(parent.index(), partial);
        any_ = true;
    }

    Var finish(double value) {
        if (!any_) return Var(value);
        return Var(value, tape_->close_node());
    }

private:
    Tape* tape_;
    bool any_ = false;
};

inline Var unary(double value, const Var& a, double da) {
    if (a.is_constant()) return Var(value);
    NodeBuilder b;
    b.add(a, da);
    return b.finish(value);
}

inline Var binary(double value, const Var& a, double da, const Var& c, double dc) {
    if (a.is_constant() && c.is_constant()) return Var(value);
    NodeBuilder b;
    b.add(a, da);
    b.add(c, dc);
    return b.finish(value);
}

inline Var operator-(const Var& a) { return unary(-a.value(), a, -1.0); }
inline Var operator+(const Var& a) { return a; }

inline Var operator+(const Var& a, const Var& b) { return binary(a.value() + b.value(), a, 1.0, b, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return binary(a.value() - b.value(), a, 1.0, b, -1.0); }
inline Var operator*(const Var& a, const Var& b) {
    return binary(a.value() * b.value(), a, b.value(), b, a.value());
}
inline Var operator/(const Var& a, const Var& b) {
    const double q = a.value() / b.value();
    return binary(q, a, 1.0 / b.value(), b, -q / b.value());
}

inline Var operator+(const Var& a, double b) { return unary(a.value() + b, a, 1.0); }
inline Var operator+(double a, const Var& b) { return unary(a + b.value(), b, 1.0); }
inline Var operator-(const Var& a, double b) { return unary(a.value() - b, a, 1.0); }
inline Var operator-(double a, const Var& b) { return unary(a - b.value(), b, -1.0); }
inline Var operator*(const Var& a, double b) { return unary(a.value() * b, a, b); }
inline Var operator*(double a, const Var& b) { return unary(a * b.value(), b, a); }
inline Var operator/(const Var& a, double b) { return unary(a.value() / b, a, 1.0 / b); }
inline Var operator/(double a, const Var& b) {
    const double q = a / b.value();
    return unary(q, b, -q / b.value());
}

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }
inline bool operator==(const Var& a, const Var& b) { return a.value() == b.value(); }
inline bool operator!=(const Var& a, const Var& b) { return a.value() != b.value(); }

inline Var exp(const Var& a) {
    const double e = std::exp(a.value());
    return unary(e, a, e);
}
inline Var log(const Var& a) { return unary(std::log(a.value()), a, 1.0 / a.value()); }
inline Var log1p(const Var& a) { return unary(std::log1p(a.value()), a, 1.0 / (1.0 + a.value())); }
inline Var sqrt(const Var& a) {
    const double s = std::sqrt(a.value());
    return unary(s, a, 0.5 / s);
}
inline Var abs(const Var& a) { return unary(std::abs(a.value()), a, a.value() < 0.0 ? -1.0 : 1.0); }
inline Var pow(const Var& a, double p) {
    const double v = std::pow(a.value(), p);
    return unary(v, a, p * std::pow(a.value(), p - 1.0));
}
inline bool isfinite(const Var& a) { return std::isfinite(a.value()); }

}  // namespace gvidgp::ad

namespace Eigen {
template <>
struct NumTraits<gvidgp::ad::Var> : NumTraits<double> {
    using Real = gvidgp::ad::Var;
    using NonInteger = gvidgp::ad::Var;
    using Nested = gvidgp::ad::Var;
    using Literal = gvidgp::ad::Var;
    enum {
        IsComplex = 0,
        IsInteger = 0,
        IsSigned = 1,
        RequireInitialization = 1,
        ReadCost = 1,
        AddCost = 3,
        MulCost = 3
    };
};
}  // namespace Eigen

namespace gvidgp {

using ad::Var;

template <class T>
inline constexpr bool is_var_v = std::is_same_v<std::remove_cv_t<T>, ad::Var>;

template <class T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline double value(double x) noexcept { return x; }
inline double value(const ad::Var& x) noexcept { return x.value(); }

template <class Derived>
Eigen::MatrixXd values(const Eigen::MatrixBase<Derived>& m) {
    return m.unaryExpr([](const auto& x) { return value(x); }).template cast<double>();
}

template <class T>
T square(const T& x) {
    return x * x;
}

/// log(1 + e^x) without overflow.
template <class T>
T softplus(const T& x) {
    using std::exp;
    using std::log1p;
    if constexpr (is_var_v<T>) {
        const double v = x.value();
        const double s = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
        const double sig = 1.0 / (1.0 + std::exp(-v));
        return ad::unary(s, x, sig);
    } else {
        return x > 0.0 ? x + log1p(exp(-x)) : log1p(exp(x));
    }
}

inline double softplus_inverse(double y) {
    // log(e^y - 1), stable for small and large y.
    return y > 30.0 ? y : std::log(std::expm1(y));
}

/// max(x, floor); below the floor the result is the constant floor.
template <class T>
T clamp_below(const T& x, double floor) {
    if (value(x) < floor) return T(floor);
    return x;
}

namespace ad {

/// Σ a_k b_k as a single node.
template <class DA, class DB>
auto dot(const Eigen::DenseBase<DA>& a, const Eigen::DenseBase<DB>& b) {
    using T = typename DA::Scalar;
    const Eigen::Index n = a.size();
    if constexpr (is_var_v<T>) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) s += a.derived().coeff(k).value() * b.derived().coeff(k).value();
        NodeBuilder nb;
        for (Eigen::Index k = 0; k < n; ++k) {
            nb.add(a.derived().coeff(k), b.derived().coeff(k).value());
            nb.add(b.derived().coeff(k), a.derived().coeff(k).value());
        }
        return nb.finish(s);
    } else {
        T s = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) s += a.derived().coeff(k) * b.derived().coeff(k);
        return s;
    }
}

/// Σ a_k² as a single node.
template <class DA>
auto squared_norm(const Eigen::DenseBase<DA>& a) {
    using T = typename DA::Scalar;
    const Eigen::Index n = a.size();
    if constexpr (is_var_v<T>) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) s += square(a.derived().coeff(k).value());
        NodeBuilder nb;
        for (Eigen::Index k = 0; k < n; ++k) nb.add(a.derived().coeff(k), 2.0 * a.derived().coeff(k).value());
        return nb.finish(s);
    } else {
        T s = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) s += square(a.derived().coeff(k));
        return s;
    }
}

/// Σ a_k as a single node.
template <class DA>
auto sum(const Eigen::DenseBase<DA>& a) {
    using T = typename DA::Scalar;
    const Eigen::Index n = a.size();
    if constexpr (is_var_v<T>) {
        double s = 0.0;
        NodeBuilder nb;
        for (Eigen::Index k = 0; k < n; ++k) {
            s += a.derived().coeff(k).value();
            nb.add(a.derived().coeff(k), 1.0);
        }
        return nb.finish(s);
    } else {
        T s = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) s += a.derived().coeff(k);
        return s;
    }
}

template <class T>
T sum(const std::vector<T>& a) {
    return sum(Eigen::Map<const VectorX<T>>(a.data(), static_cast<Eigen::Index>(a.size())));
}

/// Σ w_k a_k with constant weights, as a single node.
template <class DW, class DA>
auto weighted_sum(const Eigen::DenseBase<DW>& w, const Eigen::DenseBase<DA>& a) {
    using T = typename DA::Scalar;
    const Eigen::Index n = a.size();
    if constexpr (is_var_v<T>) {
        double s = 0.0;
        NodeBuilder nb;
        for (Eigen::Index k = 0; k < n; ++k) {
            const double wk = w.derived().coeff(k);
            s += wk * a.derived().coeff(k).value();
            nb.add(a.derived().coeff(k), wk);
        }
        return nb.finish(s);
    } else {
        T s = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) s += w.derived().coeff(k) * a.derived().coeff(k);
        return s;
    }
}

/// (c − Σ a_k b_k) / d as a single node: one step of a triangular solve.
template <class T, class DA, class DB>
T solve_step(const T& c, const Eigen::DenseBase<DA>& a, const Eigen::DenseBase<DB>& b, const T& d) {
    const Eigen::Index n = a.size();
    if constexpr (is_var_v<T>) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) s += a.derived().coeff(k).value() * b.derived().coeff(k).value();
        const double dv = d.value();
        const double x = (c.value() - s) / dv;
        NodeBuilder nb;
        nb.add(c, 1.0 / dv);
        for (Eigen::Index k = 0; k < n; ++k) {
            nb.add(a.derived().coeff(k), -b.derived().coeff(k).value() / dv);
            nb.add(b.derived().coeff(k), -a.derived().coeff(k).value() / dv);
        }
        nb.add(d, -x / dv);
        return nb.finish(x);
    } else {
        T s = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) s += a.derived().coeff(k) * b.derived().coeff(k);
        return (c - s) / d;
    }
}

/// base − ‖a‖² + ‖b‖² as a single node.
template <class T, class DA, class DB>
T base_minus_plus_squares(const T& base, const Eigen::DenseBase<DA>& a, const Eigen::DenseBase<DB>& b) {
    if constexpr (is_var_v<T>) {
        double s = base.value();
        for (Eigen::Index k = 0; k < a.size(); ++k) s -= square(a.derived().coeff(k).value());
        for (Eigen::Index k = 0; k < b.size(); ++k) s += square(b.derived().coeff(k).value());
        NodeBuilder nb;
        nb.add(base, 1.0);
        for (Eigen::Index k = 0; k < a.size(); ++k) nb.add(a.derived().coeff(k), -2.0 * a.derived().coeff(k).value());
        for (Eigen::Index k = 0; k < b.size(); ++k) nb.add(b.derived().coeff(k), 2.0 * b.derived().coeff(k).value());
        return nb.finish(s);
    } else {
        T s = base;
        for (Eigen::Index k = 0; k < a.size(); ++k) s -= square(a.derived().coeff(k));
        for (Eigen::Index k = 0; k < b.size(); ++k) s += square(b.derived().coeff(k));
        return s;
    }
}

}  // namespace ad
}  // namespace gvidgp
