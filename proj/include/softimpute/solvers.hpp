#pragma once

// Soft-Impute / Hard-Impute fixed-point iterations, the warm-started lambda
// path, objective and surrogate evaluation, and KKT diagnostics.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "softimpute/errors.hpp"
#include "softimpute/lanczos_svd.hpp"
#include "softimpute/prox.hpp"
#include "softimpute/sparse_ops.hpp"

namespace softimpute {

struct SolveOptions {
    /// Stop once ||Z_new - Z_old||_F^2 / max(||Z_old||_F^2, 1) < epsilon.
    double epsilon = 1e-4;
    int max_iters = 500;
    /// Rank cap for the thresholded SVDs; 0 means min(m, n, 500).
    Index r_max = 0;
    std::uint64_t seed = 0x5eedULL;
    /// Residual tolerance of each truncated SVD, relative to d_1.
    double svd_tol = 1e-11;
};

struct IterationRecord {
    /// f(Z^{k+1}) for the penalty being minimized.
    double objective;
    /// Q(Z^{k+1} | Z^k), the majorizer minimized at this step.
    double surrogate;
    Index rank;
    /// ||Z^{k+1} - Z^k||_F.
    double step_norm;
    /// step_norm^2 / max(||Z^k||_F^2, 1).
    double relative_change;
    double wall_ms;
};

struct SolveTrace {
    /// f(Z^0) at the warm start.
    double initial_objective = 0.0;
    std::vector<IterationRecord> iterations;
    bool converged = false;

    Index iters() const noexcept { return static_cast<Index>(iterations.size()); }
    double final_objective() const {
        return iterations.empty() ? initial_objective : iterations.back().objective;
    }
};

struct SolveResult {
    LowRankFactors factors;
    SolveTrace trace;
};

namespace detail {

inline double half_sse(const Vector& fitted, const ObservedMatrix& x) {
    CompensatedSum s;
    const Vector& xv = x.values();
    for (Index k = 0; k < xv.size(); ++k) {
        const double r = fitted[k] - xv[k];
        s.add(r * r);
    }
    return 0.5 * s.value();
}

inline double squared_distance(const Vector& a, const Vector& b) {
    CompensatedSum s;
    for (Index k = 0; k < a.size(); ++k) {
        const double r = a[k] - b[k];
        s.add(r * r);
    }
    return s.value();
}

inline EscalationPolicy policy_for(const SolveOptions& opts, Index previous_rank) {
    EscalationPolicy p;
    p.previous_rank = previous_rank;
    p.r_max = opts.r_max;
    p.tol = opts.svd_tol;
    p.seed = opts.seed;
    return p;
}

inline void require_options(const SolveOptions& opts) {
    if (!(opts.epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
    if (opts.max_iters < 1) throw InvalidArgument("max_iters must be at least 1");
    if (!(opts.svd_tol > 0.0)) throw InvalidArgument("svd_tol must be positive");
}

}  // namespace detail

/// f(Z) = 1/2 ||P_Omega(Z - X)||_F^2 + penalty(Z), penalty chosen by `kind`.
inline double penalized_objective(const LowRankFactors& z, const ObservedMatrix& x,
                                  const ThresholdKind& kind) {
    require_same_dims(z, x, "objective");
    return detail::half_sse(project_omega(z, x), x) + penalty(z, kind);
}

/// f_lambda(Z) = 1/2 ||P_Omega(Z - X)||_F^2 + lambda ||Z||_*, with the nuclear
/// norm read off the factors.
inline double objective(const LowRankFactors& z, const ObservedMatrix& x, double lambda) {
    return penalized_objective(z, x, SoftThreshold{lambda});
}

/// Q(Z | Z_old) = 1/2 ||P_Omega(X) + P_Omega^perp(Z_old) - Z||_F^2 + penalty(Z).
///
/// Uses ||P_perp(D)||^2 = ||D||^2 - ||P_Omega(D)||^2 for D = Z_old - Z.
inline double surrogate(const LowRankFactors& z, const LowRankFactors& z_old, const ObservedMatrix& x,
                        const ThresholdKind& kind) {
    require_same_dims(z, x, "surrogate");
    require_same_dims(z_old, x, "surrogate");
    const Vector pz = project_omega(z, x);
    const Vector pz_old = project_omega(z_old, x);
    const double step = frobenius_distance(z_old, z);
    const double off = std::max(0.0, step * step - detail::squared_distance(pz, pz_old));
    return detail::half_sse(pz, x) + 0.5 * off + penalty(z, kind);
}

/// Iterates Z <- threshold(P_Omega(X) + P_Omega^perp(Z)) from `warm` until
/// the relative iterate change drops below opts.epsilon or max_iters is hit.
/// Running out of iterations is reported through trace.converged, not thrown.
inline SolveResult impute(const ObservedMatrix& x, const ThresholdKind& kind, const LowRankFactors& warm,
                          const SolveOptions& opts) {
    require_same_dims(warm, x, "impute");
    detail::require_options(opts);
    if (const auto* s = std::get_if<SoftThreshold>(&kind)) detail::require_lambda(s->lambda, "impute");
    if (const auto* h = std::get_if<HardThreshold>(&kind)) detail::require_lambda(h->lambda, "impute");

    using clock = std::chrono::steady_clock;
    LowRankFactors z = warm;
    Vector pz = project_omega(z, x);
    SolveTrace trace;
    trace.initial_objective = detail::half_sse(pz, x) + penalty(z, kind);

    for (int it = 0; it < opts.max_iters; ++it) {
        const auto t0 = clock::now();
        const SparsePlusLowRank op(x.with_values(x.values() - pz), z);
        LowRankFactors next = apply_threshold(op, kind, detail::policy_for(opts, z.rank()));
        Vector p_next = project_omega(next, x);

        const double fit = detail::half_sse(p_next, x);
        const double pen = penalty(next, kind);
        const double step = frobenius_distance(z, next);
        const double off = std::max(0.0, step * step - detail::squared_distance(pz, p_next));
        const double z_norm = z.frobenius_norm();
        const double rel = step * step / std::max(z_norm * z_norm, 1.0);
        const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        trace.iterations.push_back({fit + pen, fit + 0.5 * off + pen, next.rank(), step, rel, ms});

        z = std::move(next);
        pz = std::move(p_next);
        if (rel < opts.epsilon) {
            trace.converged = true;
            break;
        }
    }
    return {std::move(z), std::move(trace)};
}

inline SolveResult soft_impute(const ObservedMatrix& x, double lambda, const LowRankFactors& warm,
                               const SolveOptions& opts = {}) {
    return impute(x, SoftThreshold{lambda}, warm, opts);
}

inline SolveResult hard_impute(const ObservedMatrix& x, double lambda, const LowRankFactors& warm,
                               const SolveOptions& opts = {}) {
    return impute(x, HardThreshold{lambda}, warm, opts);
}

/// Hard-Impute with the rank fixed at q instead of set through lambda.
inline SolveResult hard_impute_rank(const ObservedMatrix& x, Index q, const LowRankFactors& warm,
                                    const SolveOptions& opts = {}) {
    return impute(x, RankThreshold{q}, warm, opts);
}

/// Strictly decreasing, strictly positive regularization values.
class LambdaGrid {
public:
    explicit LambdaGrid(std::vector<double> values) : values_(std::move(values)) {
        if (values_.empty()) throw InvalidArgument("lambda grid must not be empty");
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (!(values_[i] > 0.0) || !std::isfinite(values_[i]))
                throw InvalidArgument("lambda grid values must be finite and positive");
            if (i > 0 && !(values_[i] < values_[i - 1]))
                throw InvalidArgument("lambda grid must be strictly decreasing");
        }
    }

    const std::vector<double>& values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }

private:
    std::vector<double> values_;
};

/// Largest singular value of P_Omega(X).
inline double top_singular_value(const ObservedMatrix& x, std::uint64_t seed = 0x5eedULL) {
    const SparsePlusLowRank op(x, LowRankFactors::zero(x.rows(), x.cols()));
    SvdRequest req;
    req.k = 1;
    req.tol = 1e-12;
    req.seed = seed;
    try {
        return truncated_svd(op, req).factors.d()[0];
    } catch (const SvdNotConverged& e) {
        return e.best().factors.d()[0];
    }
}

/// K geometric values from sigma_1(P_Omega(X)) down to ratio * sigma_1.
inline LambdaGrid default_grid(const ObservedMatrix& x, int count = 20, double ratio = 0.01,
                               std::uint64_t seed = 0x5eedULL) {
    if (count < 1) throw InvalidArgument("grid size must be at least 1");
    if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("grid ratio must lie in (0, 1)");
    const double top = top_singular_value(x, seed);
    if (!(top > 0.0)) throw InvalidArgument("observed values are all zero; lambda grid is degenerate");
    std::vector<double> values(static_cast<std::size_t>(count));
    values[0] = top;
    for (int k = 1; k < count; ++k)
        values[static_cast<std::size_t>(k)] =
            top * std::pow(ratio, static_cast<double>(k) / static_cast<double>(count - 1));
    return LambdaGrid(std::move(values));
}

/// Violation of 0 in -(P_Omega(X) - P_Omega(Z)) + lambda d||Z||_*.
struct KktResidual {
    /// max |U'GV - lambda I|, G = P_Omega(X) - P_Omega(Z).
    double gap_core = 0.0;
    /// max(|U'W|, |WV|) with W = (G - lambda UV') / lambda.
    double gap_orth = 0.0;
    /// max(0, ||W||_2 - 1).
    double spectral_excess = 0.0;
    /// lambda == 0: gap_core is |U'GV| and gap_orth is max(|U'G|, |GV|);
    /// spectral_excess is not defined and left at 0.
    bool unregularized = false;

    double max() const { return std::max({gap_core, gap_orth, spectral_excess}); }
};

inline KktResidual kkt_residual(const LowRankFactors& z, const ObservedMatrix& x, double lambda,
                                std::uint64_t seed = 0x5eedULL) {
    require_same_dims(z, x, "kkt_residual");
    detail::require_lambda(lambda, "kkt_residual");
    if (z.rank() > 0 && !(z.d()[z.rank() - 1] > 0.0))
        throw InvalidArgument("kkt_residual: singular values must be strictly positive");

    const Index r = z.rank();
    const Vector g = x.values() - project_omega(z, x);
    const auto rows = x.row_indices();
    const auto cols = x.col_indices();

    // U'G (r x n) and (GV)' (r x m), accumulated entry by entry.
    const Matrix ut = z.u().transpose();
    const Matrix vt = z.v().transpose();
    Matrix utg = Matrix::Zero(r, x.cols());
    Matrix gvt = Matrix::Zero(r, x.rows());
    for (Index k = 0; k < x.nnz(); ++k) {
        const auto u = static_cast<std::size_t>(k);
        utg.col(cols[u]) += g[k] * ut.col(rows[u]);
        gvt.col(rows[u]) += g[k] * vt.col(cols[u]);
    }

    KktResidual out;
    auto max_abs = [](const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); };
    const Matrix core = utg * z.v();
    if (lambda == 0.0) {
        out.unregularized = true;
        out.gap_core = max_abs(core);
        out.gap_orth = std::max(max_abs(utg), max_abs(gvt));
        return out;
    }

    out.gap_core = max_abs(core - lambda * Matrix::Identity(r, r));
    const Matrix utu = ut * z.u();
    const Matrix vtv = vt * z.v();
    out.gap_orth = std::max(max_abs((utg - lambda * utu * vt) / lambda),
                            max_abs((gvt - lambda * vtv * ut) / lambda));

    const SparsePlusLowRank w(x.with_values(g / lambda),
                              LowRankFactors(z.u(), Vector::Ones(r), -z.v()));
    SvdRequest req;
    req.k = 1;
    req.tol = 1e-9;
    req.seed = seed;
    double spectral = 0.0;
    try {
        spectral = truncated_svd(w, req).factors.d()[0];
    } catch (const SvdNotConverged& e) {
        spectral = e.best().factors.d()[0];
    }
    out.spectral_excess = std::max(0.0, spectral - 1.0);
    return out;
}

enum class Algorithm { Soft, Hard };

struct PathEntry {
    double lambda;
    LowRankFactors factors;
    SolveTrace trace;
    bool converged = false;
    /// Soft path only.
    std::optional<KktResidual> kkt;
    /// Non-empty when the solve at this lambda threw; factors then hold the
    /// warm start it began from.
    std::string failure;
    double wall_ms = 0.0;
};

struct PathSolution {
    std::vector<PathEntry> entries;

    bool all_converged() const {
        return std::all_of(entries.begin(), entries.end(),
                           [](const PathEntry& e) { return e.converged && e.failure.empty(); });
    }
};

/// Solves along `grid` in order, warm-starting each lambda from the previous
/// solution (the first from zero). For Algorithm::Hard, `warm_starts`
/// (one per grid value, typically a post-processed soft path) replaces the
/// previous-solution warm start when given.
inline PathSolution solve_path(const ObservedMatrix& x, const LambdaGrid& grid, Algorithm algo,
                               const SolveOptions& opts = {},
                               std::span<const LowRankFactors> warm_starts = {}) {
    detail::require_options(opts);
    if (!warm_starts.empty() && warm_starts.size() != grid.size())
        throw DimensionMismatch("solve_path: " + std::to_string(warm_starts.size()) +
                                " warm starts for " + std::to_string(grid.size()) + " lambdas");
    PathSolution path;
    path.entries.reserve(grid.size());
    LowRankFactors previous = LowRankFactors::zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double lambda = grid[i];
        const LowRankFactors& warm =
            (algo == Algorithm::Hard && !warm_starts.empty()) ? warm_starts[i] : previous;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const ThresholdKind kind = algo == Algorithm::Soft ? ThresholdKind{SoftThreshold{lambda}}
                                                               : ThresholdKind{HardThreshold{lambda}};
            SolveResult res = impute(x, kind, warm, opts);
            std::optional<KktResidual> kkt;
            if (algo == Algorithm::Soft) kkt = kkt_residual(res.factors, x, lambda, opts.seed);
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            const bool converged = res.trace.converged;
            previous = res.factors;
            path.entries.push_back(
                {lambda, std::move(res.factors), std::move(res.trace), converged, kkt, {}, ms});
        } catch (const Error& e) {
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            path.entries.push_back({lambda, warm, SolveTrace{}, false, std::nullopt, e.what(), ms});
        }
    }
    return path;
}

}  // namespace softimpute
