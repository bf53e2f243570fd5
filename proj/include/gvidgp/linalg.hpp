#pragma once

// Dense symmetric positive-definite linear algebra on generic scalars.

#include "gvidgp/autodiff.hpp"
#include "gvidgp/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>

namespace gvidgp {

/// Lower Cholesky factor. `jitter` records the diagonal shift that made the
/// factorization succeed; `identity` marks the implicit identity factor.
template <class T>
struct CholFactor {
    MatrixX<T> lower;
    double jitter = 0.0;
    bool identity = false;

    [[nodiscard]] Eigen::Index dim() const noexcept { return lower.rows(); }

    static CholFactor identity_factor(Eigen::Index n) {
        CholFactor f;
        f.lower = MatrixX<T>::Identity(n, n);
        f.identity = true;
        return f;
    }
};

enum class Transpose { no, yes };

inline constexpr int kJitterEscalations = 5;
inline constexpr double kSymmetryTolerance = 1e-12;

namespace detail {

template <class T>
void check_square_symmetric(const MatrixX<T>& a) {
    if (a.rows() != a.cols() || a.rows() == 0) {
        throw DimensionMismatch("cholesky_psd: expected a non-empty square matrix, got " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()));
    }
    double scale = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i) scale = std::max(scale, std::abs(value(a(i, j))));
    const double tol = kSymmetryTolerance * std::max(scale, 1.0);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = j + 1; i < a.rows(); ++i)
            if (!(std::abs(value(a(i, j)) - value(a(j, i))) <= tol))
                throw PreconditionViolation("cholesky_psd: matrix is not symmetric");
}

// Factors a + jitter·I from its lower triangle. Returns nullopt when a pivot is
// not strictly positive.
template <class T>
std::optional<MatrixX<T>> try_cholesky(const MatrixX<T>& a, double jitter) {
    const Eigen::Index n = a.rows();
    MatrixX<T> l = MatrixX<T>::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const T pivot = ad::base_minus_plus_squares(T(a(j, j) + jitter), l.row(j).head(j), l.row(j).head(0));
        if (!(value(pivot) > 0.0) || !std::isfinite(value(pivot))) return std::nullopt;
        using std::sqrt;
        l(j, j) = sqrt(pivot);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            l(i, j) = ad::solve_step(a(i, j), l.row(i).head(j), l.row(j).head(j), l(j, j));
        }
    }
    return l;
}

}  // namespace detail

/// Cholesky factor of `a + j·I` for the smallest j in {0, base_jitter·10^k : k = 0..4}
/// that yields strictly positive pivots.
template <class T>
CholFactor<T> cholesky_psd(const MatrixX<T>& a, double base_jitter) {
    if (!(base_jitter >= 0.0)) throw PreconditionViolation("cholesky_psd: base_jitter must be >= 0");
    detail::check_square_symmetric(a);

    auto jitter_at = [&](int k) { return k == 0 ? 0.0 : base_jitter * std::pow(10.0, k - 1); };

    if constexpr (is_var_v<T>) {
        // Find the level on plain values so the tape only records the successful attempt.
        const Eigen::MatrixXd av = values(a);
        for (int k = 0; k <= kJitterEscalations; ++k) {
            if (k > 0 && base_jitter == 0.0) break;
            if (detail::try_cholesky<double>(av, jitter_at(k))) {
                auto l = detail::try_cholesky<T>(a, jitter_at(k));
                return CholFactor<T>{std::move(*l), jitter_at(k), false};
            }
        }
    } else {
        for (int k = 0; k <= kJitterEscalations; ++k) {
            if (k > 0 && base_jitter == 0.0) break;
            if (auto l = detail::try_cholesky<T>(a, jitter_at(k))) return CholFactor<T>{std::move(*l), jitter_at(k), false};
        }
    }
    std::ostringstream msg;
    msg << "cholesky_psd: matrix of dimension " << a.rows() << " is not positive definite";
    if (base_jitter > 0.0) msg << " after jitter escalation to " << jitter_at(kJitterEscalations);
    throw NotPositiveDefinite(msg.str());
}

/// Solves L·x = b, or Lᵀ·x = b when `transposed` is Transpose::yes.
template <class T>
MatrixX<T> tri_solve(const CholFactor<T>& l, const MatrixX<T>& b, Transpose transposed = Transpose::no) {
    const Eigen::Index n = l.dim();
    if (b.rows() != n) {
        throw DimensionMismatch("tri_solve: factor has dimension " + std::to_string(n) + " but right-hand side has " +
                                std::to_string(b.rows()) + " rows");
    }
    if (l.identity) return b;
    const MatrixX<T>& lo = l.lower;
    MatrixX<T> x(n, b.cols());
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
        if (transposed == Transpose::no) {
            for (Eigen::Index i = 0; i < n; ++i)
                x(i, c) = ad::solve_step(b(i, c), lo.row(i).head(i), x.col(c).head(i), lo(i, i));
        } else {
            for (Eigen::Index i = n - 1; i >= 0; --i) {
                const Eigen::Index tail = n - i - 1;
                x(i, c) = ad::solve_step(b(i, c), lo.col(i).tail(tail), x.col(c).tail(tail), lo(i, i));
            }
        }
    }
    return x;
}

template <class T>
VectorX<T> tri_solve(const CholFactor<T>& l, const VectorX<T>& b, Transpose transposed = Transpose::no) {
    MatrixX<T> bm = b;
    return tri_solve(l, bm, transposed).col(0);
}

/// log|L·Lᵀ| = 2 Σ log L_ii.
template <class T>
T logdet(const CholFactor<T>& l) {
    if (l.identity) return T(0.0);
    using std::log;
    std::vector<T> logs;
    logs.reserve(static_cast<std::size_t>(l.dim()));
    for (Eigen::Index i = 0; i < l.dim(); ++i) logs.push_back(log(l.lower(i, i)));
    return 2.0 * ad::sum(logs);
}

/// L·Lᵀ.
template <class T>
MatrixX<T> reconstruct(const CholFactor<T>& l) {
    const Eigen::Index n = l.dim();
    MatrixX<T> out(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = j; i < n; ++i) {
            const Eigen::Index k = std::min(i, j) + 1;
            out(i, j) = ad::dot(l.lower.row(i).head(k), l.lower.row(j).head(k));
            out(j, i) = out(i, j);
        }
    }
    return out;
}

/// Aᵀ·B with one node per output entry.
template <class T>
MatrixX<T> matmul_tn(const MatrixX<T>& a, const MatrixX<T>& b) {
    if (a.rows() != b.rows()) throw DimensionMismatch("matmul_tn: inner dimensions differ");
    MatrixX<T> out(a.cols(), b.cols());
    for (Eigen::Index j = 0; j < b.cols(); ++j)
        for (Eigen::Index i = 0; i < a.cols(); ++i) out(i, j) = ad::dot(a.col(i), b.col(j));
    return out;
}

/// Lᵀ·B for a lower-triangular factor, skipping the structural zeros.
template <class T>
MatrixX<T> lower_transpose_times(const CholFactor<T>& l, const MatrixX<T>& b) {
    if (l.identity) return b;
    const Eigen::Index n = l.dim();
    if (b.rows() != n) throw DimensionMismatch("lower_transpose_times: dimension mismatch");
    MatrixX<T> out(n, b.cols());
    for (Eigen::Index c = 0; c < b.cols(); ++c)
        for (Eigen::Index k = 0; k < n; ++k) out(k, c) = ad::dot(l.lower.col(k).tail(n - k), b.col(c).tail(n - k));
    return out;
}

/// (L·Lᵀ)⁻¹ = L⁻ᵀ·L⁻¹.
template <class T>
MatrixX<T> inverse_from_factor(const CholFactor<T>& l) {
    const Eigen::Index n = l.dim();
    if (l.identity) return MatrixX<T>::Identity(n, n);
    const MatrixX<T> linv = tri_solve(l, MatrixX<T>(MatrixX<T>::Identity(n, n)));
    return matmul_tn(linv, linv);
}

}  // namespace gvidgp
