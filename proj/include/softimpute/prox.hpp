#pragma once

// Spectral thresholding: soft (prox of lambda * nuclear norm), hard (prox of
// lambda * rank) and a fixed-rank truncation.

#include <cmath>
#include <string>
#include <type_traits>
#include <variant>

#include "softimpute/errors.hpp"
#include "softimpute/lanczos_svd.hpp"
#include "softimpute/sparse_ops.hpp"

namespace softimpute {

/// Singular values at or below this fraction of d_1 count as zero.
inline constexpr double kRankTol = 1e-12;

struct SoftThreshold {
    double lambda;
};
struct HardThreshold {
    double lambda;
};
/// Keep exactly the leading q singular values (rank-targeted Hard-Impute).
struct RankThreshold {
    Index q;
};

using ThresholdKind = std::variant<SoftThreshold, HardThreshold, RankThreshold>;

namespace detail {

inline void require_lambda(double lambda, const char* op) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw InvalidArgument(std::string(op) + ": lambda must be finite and >= 0");
}

inline LowRankFactors leading(const LowRankFactors& f, Index q, const Vector& d) {
    return LowRankFactors(f.u().leftCols(q), d.head(q), f.v().leftCols(q));
}

template <LinearOperator Op>
SvdResult spectrum_above(const Op& w, double threshold, const EscalationPolicy& policy, const char* op) {
    SvdResult res = svd_above_threshold(w, threshold, policy);
    if (res.capped)
        throw RankCapExceeded(std::string(op) + ": all " + std::to_string(res.factors.rank()) +
                              " computed singular values exceed the threshold; raise r_max");
    return res;
}

}  // namespace detail

/// S_lambda(W) = U diag((d - lambda)_+) V'. Triplets whose shrunken value is
/// below kRankTol * d_1 are dropped from the factors.
template <LinearOperator Op>
LowRankFactors soft_threshold(const Op& w, double lambda, const EscalationPolicy& policy = {}) {
    detail::require_lambda(lambda, "soft_threshold");
    const SvdResult res = detail::spectrum_above(w, lambda, policy, "soft_threshold");
    const Vector& d = res.factors.d();
    const double floor = kRankTol * d[0];
    Index q = 0;
    while (q < d.size() && d[q] - lambda > floor) ++q;
    const Vector shrunk = d.head(q).array() - lambda;
    return detail::leading(res.factors, q, shrunk);
}

/// Keeps singular values with d^2 > 2 lambda, unshrunk. This is the exact
/// per-value minimizer of 1/2 (d - z)^2 + lambda 1{z != 0}; ties are dropped,
/// which picks the lower-rank minimizer.
template <LinearOperator Op>
LowRankFactors hard_threshold(const Op& w, double lambda, const EscalationPolicy& policy = {}) {
    detail::require_lambda(lambda, "hard_threshold");
    const double cut = std::sqrt(2.0 * lambda);
    const SvdResult res = detail::spectrum_above(w, cut, policy, "hard_threshold");
    const Vector& d = res.factors.d();
    const double floor = kRankTol * d[0];
    Index q = 0;
    while (q < d.size() && d[q] * d[q] > 2.0 * lambda && d[q] > floor) ++q;
    return detail::leading(res.factors, q, d);
}

/// Best rank-q approximation (numerically zero values are still dropped).
template <LinearOperator Op>
LowRankFactors rank_threshold(const Op& w, Index q, const EscalationPolicy& policy = {}) {
    const Index full = std::min(w.rows(), w.cols());
    if (q < 0 || q > full)
        throw InvalidArgument("rank_threshold: q = " + std::to_string(q) + " outside [0, " +
                              std::to_string(full) + "]");
    if (q == 0) return LowRankFactors::zero(w.rows(), w.cols());
    SvdRequest req;
    req.k = q;
    req.tol = policy.tol;
    req.max_restarts = policy.max_restarts;
    req.seed = policy.seed;
    const SvdResult res = truncated_svd(w, req);
    const Vector& d = res.factors.d();
    Index keep = 0;
    while (keep < q && d[keep] > kRankTol * d[0]) ++keep;
    return detail::leading(res.factors, keep, d);
}

template <LinearOperator Op>
LowRankFactors apply_threshold(const Op& w, const ThresholdKind& kind, const EscalationPolicy& policy = {}) {
    return std::visit(
        [&](const auto& t) -> LowRankFactors {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, SoftThreshold>)
                return soft_threshold(w, t.lambda, policy);
            else if constexpr (std::is_same_v<T, HardThreshold>)
                return hard_threshold(w, t.lambda, policy);
            else
                return rank_threshold(w, t.q, policy);
        },
        kind);
}

/// The penalty term matching `kind`: lambda ||Z||_*, lambda rank(Z), or 0.
inline double penalty(const LowRankFactors& z, const ThresholdKind& kind) {
    return std::visit(
        [&](const auto& t) -> double {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, SoftThreshold>)
                return t.lambda * z.nuclear_norm();
            else if constexpr (std::is_same_v<T, HardThreshold>)
                return t.lambda * static_cast<double>(z.rank());
            else
                return 0.0;
        },
        kind);
}

}  // namespace softimpute
