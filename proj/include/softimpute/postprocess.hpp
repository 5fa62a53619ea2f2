#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "softimpute/errors.hpp"
#include "softimpute/sparse_ops.hpp"

namespace softimpute {

struct UnshrinkResult {
    /// Input singular vectors (some columns sign-flipped) with d replaced by alpha.
    LowRankFactors factors;
    /// Refitted singular values, nonnegative, in the order of factors.d().
    Vector alpha;
    /// Training SSE on Omega of the refitted matrix.
    double residual_sse = 0.0;
    /// Training SSE on Omega of the input matrix.
    double input_sse = 0.0;
    /// The design matrix had numerical rank below r; alpha is the minimum-norm solution.
    bool rank_deficient = false;
    /// 2-norm condition number of the design matrix.
    double condition = 1.0;
};

/// Refits the singular values of `z` by least squares on the observed entries,
/// keeping its singular vectors:
///
///   alpha = argmin || X_Omega - sum_i alpha_i P_Omega(u_i v_i') ||^2.
///
/// The columns P_Omega(u_i v_i') are not orthogonal in general even though the
/// u_i v_i' are, so this is a genuine r-dimensional least-squares problem.
/// Negative alpha_i are made positive by flipping u_i.
inline UnshrinkResult unshrink(const LowRankFactors& z, const ObservedMatrix& x) {
    require_same_dims(z, x, "unshrink");
    const Index r = z.rank();
    if (r < 1) throw InvalidArgument("unshrink: input has rank 0");
    if (r > x.nnz())
        throw InvalidArgument("unshrink: rank " + std::to_string(r) + " exceeds the " +
                              std::to_string(x.nnz()) + " observed entries");

    const auto rows = x.row_indices();
    const auto cols = x.col_indices();
    Matrix design(x.nnz(), r);
    for (Index k = 0; k < x.nnz(); ++k) {
        const auto u = static_cast<std::size_t>(k);
        design.row(k) = z.u().row(rows[u]).cwiseProduct(z.v().row(cols[u]));
    }

    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(design);
    Vector alpha = cod.solve(x.values());
    const Vector fitted = design * alpha;

    detail::CompensatedSum sse, sse_in;
    const Vector input_fit = design * z.d();
    for (Index k = 0; k < x.nnz(); ++k) {
        const double a = x.values()[k] - fitted[k];
        const double b = x.values()[k] - input_fit[k];
        sse.add(a * a);
        sse_in.add(b * b);
    }

    const Eigen::SelfAdjointEigenSolver<Matrix> gram(design.transpose() * design, Eigen::EigenvaluesOnly);
    const double lo = std::max(gram.eigenvalues().minCoeff(), 0.0);
    const double hi = gram.eigenvalues().maxCoeff();

    Matrix u = z.u();
    for (Index i = 0; i < r; ++i) {
        if (alpha[i] < 0.0) {
            alpha[i] = -alpha[i];
            u.col(i) = -u.col(i);
        }
    }
    std::vector<Index> order(static_cast<std::size_t>(r));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return alpha[a] > alpha[b]; });
    Matrix u_sorted(u.rows(), r), v_sorted(z.v().rows(), r);
    Vector a_sorted(r);
    for (Index i = 0; i < r; ++i) {
        const Index src = order[static_cast<std::size_t>(i)];
        u_sorted.col(i) = u.col(src);
        v_sorted.col(i) = z.v().col(src);
        a_sorted[i] = alpha[src];
    }

    UnshrinkResult out{LowRankFactors(std::move(u_sorted), a_sorted, std::move(v_sorted)), a_sorted,
                       sse.value(), sse_in.value(), cod.rank() < r,
                       lo > 0.0 ? std::sqrt(hi / lo) : std::numeric_limits<double>::infinity()};
    return out;
}

}  // namespace softimpute
