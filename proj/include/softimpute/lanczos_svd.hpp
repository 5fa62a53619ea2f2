#pragma once

// Truncated SVD of an implicit operator by Golub-Kahan-Lanczos
// bidiagonalization with thick restarts, and the rank-escalation loop used to
// emulate "all singular values above lambda".

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "softimpute/errors.hpp"
#include "softimpute/sparse_ops.hpp"

namespace softimpute {

/// Anything that can apply itself and its adjoint to a vector.
template <class Op>
concept LinearOperator = requires(const Op& op, const Vector& b, Vector& y) {
    { op.rows() } -> std::convertible_to<Index>;
    { op.cols() } -> std::convertible_to<Index>;
    op.apply(b, y);
    op.apply_adjoint(b, y);
};

struct SvdRequest {
    /// Number of leading singular triplets wanted, 1 <= k <= min(m, n).
    Index k = 1;
    /// A triplet is accepted once ||A'u - d v|| <= tol * d_1.
    double tol = 1e-10;
    /// Size of the Lanczos basis kept between restarts; 0 picks
    /// min(min(m, n), max(2k, k + 24)).
    Index max_lanczos_dim = 0;
    /// Thick restarts allowed before giving up.
    Index max_restarts = 300;
    std::uint64_t seed = 0x5eedULL;
};

struct SvdResult {
    LowRankFactors factors;
    /// Residual norm of each returned triplet.
    Vector residuals;
    /// Lanczos steps taken, i.e. operator/adjoint application pairs.
    Index iterations = 0;
    Index restarts = 0;
    /// Set by svd_above_threshold when the rank cap stopped escalation while
    /// every returned value was still above the threshold.
    bool capped = false;
};

/// The Lanczos process ran out of restarts. Carries the best triplets found.
class SvdNotConverged : public Error {
public:
    SvdNotConverged(const std::string& what, SvdResult best) : Error(what), best_(std::move(best)) {}
    const SvdResult& best() const noexcept { return best_; }

private:
    SvdResult best_;
};

namespace detail {

template <LinearOperator Op>
class Adjoint {
public:
    explicit Adjoint(const Op& op) : op_(op) {}
    Index rows() const { return op_.cols(); }
    Index cols() const { return op_.rows(); }
    void apply(const Eigen::Ref<const Vector>& b, Eigen::Ref<Vector> y) const { op_.apply_adjoint(b, y); }
    void apply_adjoint(const Eigen::Ref<const Vector>& b, Eigen::Ref<Vector> y) const { op_.apply(b, y); }

private:
    const Op& op_;
};

/// Two passes of classical Gram-Schmidt against `basis`.
inline void reorthogonalize(Eigen::Ref<Vector> w, const Eigen::Ref<const Matrix>& basis) {
    if (basis.cols() == 0) return;
    for (int pass = 0; pass < 2; ++pass) {
        const Vector c = basis.transpose() * w;
        w.noalias() -= basis * c;
    }
}

/// Random unit vector orthogonal to `basis`, or zero if `basis` already spans
/// the whole space.
template <class Rng>
void random_orthogonal(Eigen::Ref<Vector> w, const Eigen::Ref<const Matrix>& basis, Rng& rng) {
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    if (basis.cols() >= w.size()) {
        w.setZero();
        return;
    }
    for (int attempt = 0; attempt < 4; ++attempt) {
        for (Index i = 0; i < w.size(); ++i) w[i] = unif(rng);
        reorthogonalize(w, basis);
        const double nrm = w.norm();
        if (nrm > 1e-8) {
            w /= nrm;
            return;
        }
    }
    w.setZero();
}

/// Flips each (u_i, v_i) so the largest-magnitude entry of u_i is positive.
inline void fix_signs(Matrix& u, Matrix& v) {
    for (Index i = 0; i < u.cols(); ++i) {
        Index arg = 0;
        u.col(i).cwiseAbs().maxCoeff(&arg);
        if (u(arg, i) < 0.0) {
            u.col(i) = -u.col(i);
            v.col(i) = -v.col(i);
        }
    }
}

// Relative size below which a new Lanczos vector is treated as zero and
// replaced by a fresh random direction.
inline constexpr double kBreakdown = 1e-13;

/// Core routine for rows >= cols.
template <LinearOperator Op>
SvdResult lanczos_tall(const Op& op, const SvdRequest& req) {
    const Index m = op.rows();
    const Index n = op.cols();
    const Index full = n;  // min(m, n)
    const Index k = req.k;
    Index dim = req.max_lanczos_dim > 0 ? std::min(req.max_lanczos_dim, full)
                                        : std::min(full, std::max(2 * k, k + 24));
    if (dim < k)
        throw InvalidArgument("max_lanczos_dim (" + std::to_string(dim) +
                              ") must be at least k (" + std::to_string(k) + ")");
    if (dim == k && dim < full) ++dim;  // restarts need one spare column

    std::mt19937_64 rng(req.seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);

    Matrix P = Matrix::Zero(m, dim);
    Matrix Q = Matrix::Zero(n, dim + 1);
    Matrix B = Matrix::Zero(dim, dim);
    Vector w(m);
    Vector w2(n);

    for (Index i = 0; i < n; ++i) Q(i, 0) = unif(rng);
    Q.col(0).normalize();

    Index kept = 0;  // Ritz vectors carried over from the last restart
    Index steps = 0;
    Index restarts = 0;
    double anorm = 0.0;
    double beta_last = 0.0;

    Eigen::BDCSVD<Matrix> small;
    while (true) {
        for (Index j = kept; j < dim; ++j) {
            // Left vector: p_j = A q_j - (coupling to earlier left vectors).
            op.apply(Q.col(j), w);
            if (j == kept) {
                if (kept > 0) w.noalias() -= P.leftCols(kept) * B.col(kept).head(kept);
            } else {
                w -= B(j - 1, j) * P.col(j - 1);
            }
            anorm = std::max(anorm, w.norm());
            reorthogonalize(w, P.leftCols(j));
            double alpha = w.norm();
            if (alpha <= kBreakdown * anorm || alpha == 0.0) {
                alpha = 0.0;
                random_orthogonal(w, P.leftCols(j), rng);
            } else {
                w /= alpha;
            }
            P.col(j) = w;
            B(j, j) = alpha;

            // Right vector: q_{j+1} = A' p_j - alpha q_j.
            op.apply_adjoint(P.col(j), w2);
            w2 -= alpha * Q.col(j);
            anorm = std::max(anorm, w2.norm());
            reorthogonalize(w2, Q.leftCols(j + 1));
            double beta = w2.norm();
            if (beta <= kBreakdown * anorm || beta == 0.0) {
                beta = 0.0;
                random_orthogonal(w2, Q.leftCols(j + 1), rng);
            } else {
                w2 /= beta;
            }
            Q.col(j + 1) = w2;
            if (j + 1 < dim)
                B(j, j + 1) = beta;
            else
                beta_last = beta;
        }
        steps += dim - kept;

        small.compute(B, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Vector& sigma = small.singularValues();
        const Matrix& X = small.matrixU();
        const Matrix& Y = small.matrixV();

        Vector resid(k);
        for (Index i = 0; i < k; ++i) resid[i] = std::abs(beta_last * X(dim - 1, i));
        const double scale = sigma[0];
        const bool exhausted = dim == full;
        const bool converged =
            exhausted || scale == 0.0 || (resid.array() <= req.tol * scale).all();

        auto assemble = [&]() {
            Matrix U = P * X.leftCols(k);
            Matrix V = Q.leftCols(dim) * Y.leftCols(k);
            fix_signs(U, V);
            return SvdResult{LowRankFactors(std::move(U), sigma.head(k), std::move(V)), resid,
                             steps, restarts, false};
        };

        if (converged) return assemble();
        if (restarts >= req.max_restarts)
            throw SvdNotConverged("Lanczos SVD did not converge after " +
                                      std::to_string(restarts) + " restarts (" +
                                      std::to_string(steps) + " steps)",
                                  assemble());

        // Thick restart: keep the leading Ritz vectors plus the residual direction.
        kept = std::min(dim - 1, k + (dim - k) / 2);
        const Matrix newP = P * X.leftCols(kept);
        const Matrix newQ = Q.leftCols(dim) * Y.leftCols(kept);
        P.leftCols(kept) = newP;
        Q.col(kept) = Q.col(dim);
        Q.leftCols(kept) = newQ;
        B.setZero();
        for (Index i = 0; i < kept; ++i) {
            B(i, i) = sigma[i];
            B(i, kept) = beta_last * X(dim - 1, i);
        }
        ++restarts;
    }
}

}  // namespace detail

/// Leading `req.k` singular triplets of `op`.
///
/// Full reorthogonalization keeps both Lanczos bases orthonormal to working
/// precision, so the returned U and V are orthonormal to ~1e-15. Output is a
/// deterministic function of the request.
template <LinearOperator Op>
SvdResult truncated_svd(const Op& op, const SvdRequest& req) {
    const Index m = op.rows();
    const Index n = op.cols();
    if (m < 1 || n < 1) throw InvalidArgument("truncated_svd: operator has an empty dimension");
    if (req.k < 1 || req.k > std::min(m, n))
        throw InvalidArgument("truncated_svd: k = " + std::to_string(req.k) +
                              " outside [1, " + std::to_string(std::min(m, n)) + "]");
    if (!(req.tol > 0.0)) throw InvalidArgument("truncated_svd: tol must be positive");

    if (m >= n) return detail::lanczos_tall(op, req);

    auto swap_sides = [](SvdResult r) {
        Matrix u = r.factors.v();
        Matrix v = r.factors.u();
        detail::fix_signs(u, v);
        r.factors = LowRankFactors(std::move(u), r.factors.d(), std::move(v));
        return r;
    };
    try {
        return swap_sides(detail::lanczos_tall(detail::Adjoint<Op>(op), req));
    } catch (const SvdNotConverged& e) {
        throw SvdNotConverged(e.what(), swap_sides(e.best()));
    }
}

/// Controls how svd_above_threshold grows the number of requested triplets.
struct EscalationPolicy {
    /// Rank of the previous iterate; the first probe asks for max(min_start, previous_rank + 2).
    Index previous_rank = 0;
    Index min_start = 10;
    double growth = 1.5;
    /// Hard cap on the triplet count; 0 means min(m, n, 500).
    Index r_max = 0;
    double tol = 1e-10;
    Index max_restarts = 300;
    std::uint64_t seed = 0x5eedULL;
    /// Values within zero_tol * d_1 of the threshold count as reaching it, so
    /// numerically zero tails of rank-deficient operators stop escalation.
    double zero_tol = 1e-12;
};

inline Index resolve_rank_cap(Index r_max, Index m, Index n) {
    const Index full = std::min(m, n);
    return r_max > 0 ? std::min(r_max, full) : std::min<Index>(full, 500);
}

/// Every singular triplet with d_i > lambda, plus at least one at or below
/// lambda (up to zero_tol * d_1) unless the whole spectrum was computed or the
/// cap was reached (the latter sets `capped`).
template <LinearOperator Op>
SvdResult svd_above_threshold(const Op& op, double lambda, const EscalationPolicy& policy) {
    if (!(lambda >= 0.0)) throw InvalidArgument("svd_above_threshold: lambda must be >= 0");
    const Index full = std::min(op.rows(), op.cols());
    const Index cap = resolve_rank_cap(policy.r_max, op.rows(), op.cols());
    Index k = std::min(cap, std::max(policy.min_start, policy.previous_rank + 2));
    k = std::max<Index>(k, 1);

    SvdRequest req;
    req.tol = policy.tol;
    req.max_restarts = policy.max_restarts;
    req.seed = policy.seed;
    while (true) {
        req.k = k;
        SvdResult res = truncated_svd(op, req);
        const double smallest = res.factors.d()[k - 1];
        if (smallest <= lambda + policy.zero_tol * res.factors.d()[0] || k == full) return res;
        if (k >= cap) {
            res.capped = true;
            return res;
        }
        k = std::min(cap, static_cast<Index>(std::ceil(policy.growth * static_cast<double>(k))));
    }
}

}  // namespace softimpute
