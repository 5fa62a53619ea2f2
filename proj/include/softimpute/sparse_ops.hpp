#pragma once

// Observed-entry storage, the P_Omega projection, and the sparse-plus-low-rank
// operator that every thresholded SVD in the solvers is taken of.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "softimpute/errors.hpp"

namespace softimpute {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Tolerance on |U'U - I| and |V'V - I| accepted for factor matrices.
inline constexpr double kOrthonormalityTol = 1e-8;

/// One observed cell, 0-based.
struct Entry {
    Index row;
    Index col;
    double value;
};

namespace detail {

inline std::string dims_str(Index r, Index c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace detail

/// Coordinate store of the observed set Omega and its values X_Omega.
///
/// Entries are kept sorted by (row, col). The index pattern is shared between
/// copies and between matrices derived with with_values(), so residual
/// matrices on the same support cost one value vector each.
class ObservedMatrix {
public:
    ObservedMatrix(Index rows, Index cols, std::vector<Entry> entries) {
        if (rows < 1 || cols < 1)
            throw InvalidArgument("observed matrix dims must be positive, got " +
                                  detail::dims_str(rows, cols));
        if (entries.empty()) throw InvalidArgument("observed matrix needs at least one entry");
        for (const auto& e : entries) {
            if (e.row < 0 || e.row >= rows || e.col < 0 || e.col >= cols)
                throw InvalidArgument("entry (" + std::to_string(e.row) + ", " +
                                      std::to_string(e.col) + ") outside " +
                                      detail::dims_str(rows, cols));
        }
        std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
        auto pattern = std::make_shared<Pattern>();
        pattern->rows = rows;
        pattern->cols = cols;
        pattern->row.reserve(entries.size());
        pattern->col.reserve(entries.size());
        values_.resize(static_cast<Index>(entries.size()));
        for (std::size_t k = 0; k < entries.size(); ++k) {
            if (k > 0 && entries[k].row == entries[k - 1].row &&
                entries[k].col == entries[k - 1].col)
                throw InvalidArgument("duplicate entry (" + std::to_string(entries[k].row) +
                                      ", " + std::to_string(entries[k].col) + ")");
            pattern->row.push_back(entries[k].row);
            pattern->col.push_back(entries[k].col);
            values_[static_cast<Index>(k)] = entries[k].value;
        }
        pattern_ = std::move(pattern);
    }

    /// Every cell of `dense` becomes an observed entry, zeros included.
    static ObservedMatrix from_dense(const Matrix& dense) {
        std::vector<Entry> entries;
        entries.reserve(static_cast<std::size_t>(dense.size()));
        for (Index i = 0; i < dense.rows(); ++i)
            for (Index j = 0; j < dense.cols(); ++j) entries.push_back({i, j, dense(i, j)});
        return ObservedMatrix(dense.rows(), dense.cols(), std::move(entries));
    }

    Index rows() const noexcept { return pattern_->rows; }
    Index cols() const noexcept { return pattern_->cols; }
    Index nnz() const noexcept { return values_.size(); }

    std::span<const Index> row_indices() const noexcept { return pattern_->row; }
    std::span<const Index> col_indices() const noexcept { return pattern_->col; }
    const Vector& values() const noexcept { return values_; }

    Entry entry(Index k) const {
        const auto u = static_cast<std::size_t>(k);
        return {pattern_->row[u], pattern_->col[u], values_[k]};
    }

    /// Same support, new values.
    ObservedMatrix with_values(Vector values) const {
        if (values.size() != nnz())
            throw DimensionMismatch("with_values: expected " + std::to_string(nnz()) +
                                    " values, got " + std::to_string(values.size()));
        ObservedMatrix out(*this);
        out.values_ = std::move(values);
        return out;
    }

    /// Subset of the entries, selected by position.
    ObservedMatrix select(std::span<const Index> positions) const {
        std::vector<Entry> entries;
        entries.reserve(positions.size());
        for (Index k : positions) entries.push_back(entry(k));
        return ObservedMatrix(rows(), cols(), std::move(entries));
    }

    bool same_support(const ObservedMatrix& other) const {
        if (pattern_ == other.pattern_) return true;
        return rows() == other.rows() && cols() == other.cols() &&
               pattern_->row == other.pattern_->row && pattern_->col == other.pattern_->col;
    }

    /// Position of (i, j) in the entry list, if observed.
    std::optional<Index> find(Index i, Index j) const {
        const auto& r = pattern_->row;
        const auto& c = pattern_->col;
        auto lo = std::lower_bound(r.begin(), r.end(), i);
        auto hi = std::upper_bound(lo, r.end(), i);
        const auto first = c.begin() + (lo - r.begin());
        const auto last = c.begin() + (hi - r.begin());
        auto it = std::lower_bound(first, last, j);
        if (it == last || *it != j) return std::nullopt;
        return static_cast<Index>(it - c.begin());
    }

    /// P_Omega of this matrix as a dense array. Small problems only.
    Matrix to_dense() const {
        Matrix out = Matrix::Zero(rows(), cols());
        for (Index k = 0; k < nnz(); ++k) {
            const auto u = static_cast<std::size_t>(k);
            out(pattern_->row[u], pattern_->col[u]) = values_[k];
        }
        return out;
    }

    double squared_norm() const {
        detail::CompensatedSum s;
        for (Index k = 0; k < nnz(); ++k) s.add(values_[k] * values_[k]);
        return s.value();
    }

private:
    struct Pattern {
        Index rows = 0;
        Index cols = 0;
        std::vector<Index> row;
        std::vector<Index> col;
    };

    std::shared_ptr<const Pattern> pattern_;
    Vector values_;
};

/// U diag(d) V' with orthonormal U, V and nonincreasing nonnegative d.
/// Rank zero is the zero matrix.
class LowRankFactors {
public:
    LowRankFactors(Matrix u, Vector d, Matrix v) : u_(std::move(u)), d_(std::move(d)), v_(std::move(v)) {
        if (u_.cols() != d_.size() || v_.cols() != d_.size())
            throw DimensionMismatch("factor ranks disagree: U has " + std::to_string(u_.cols()) +
                                    " columns, d has " + std::to_string(d_.size()) +
                                    " entries, V has " + std::to_string(v_.cols()) + " columns");
        if (u_.rows() < 1 || v_.rows() < 1)
            throw InvalidArgument("factor dims must be positive");
        for (Index i = 0; i < d_.size(); ++i) {
            if (!std::isfinite(d_[i]) || d_[i] < 0.0)
                throw InvalidArgument("singular values must be finite and nonnegative");
            if (i > 0 && d_[i] > d_[i - 1])
                throw InvalidArgument("singular values must be nonincreasing");
        }
        check_orthonormal(u_, "U");
        check_orthonormal(v_, "V");
    }

    static LowRankFactors zero(Index rows, Index cols) {
        return LowRankFactors(Matrix(rows, 0), Vector(0), Matrix(cols, 0));
    }

    Index rows() const noexcept { return u_.rows(); }
    Index cols() const noexcept { return v_.rows(); }
    Index rank() const noexcept { return d_.size(); }

    const Matrix& u() const noexcept { return u_; }
    const Vector& d() const noexcept { return d_; }
    const Matrix& v() const noexcept { return v_; }

    double nuclear_norm() const { return d_.sum(); }
    double frobenius_norm() const { return d_.norm(); }

    Matrix to_dense() const { return u_ * d_.asDiagonal() * v_.transpose(); }

private:
    static void check_orthonormal(const Matrix& m, const char* name) {
        if (m.cols() == 0) return;
        const Matrix gram = m.transpose() * m;
        const double err = (gram - Matrix::Identity(m.cols(), m.cols())).cwiseAbs().maxCoeff();
        if (!(err <= kOrthonormalityTol))
            throw InvalidArgument(std::string(name) + " columns are not orthonormal (max |G - I| = " +
                                  std::to_string(err) + ")");
    }

    Matrix u_;
    Vector d_;
    Matrix v_;
};

inline void require_same_dims(const LowRankFactors& z, const ObservedMatrix& x, const char* op) {
    if (z.rows() != x.rows() || z.cols() != x.cols())
        throw DimensionMismatch(std::string(op) + ": factors are " +
                                detail::dims_str(z.rows(), z.cols()) + " but observed matrix is " +
                                detail::dims_str(x.rows(), x.cols()));
}

/// Values of U diag(d) V' at the observed positions of `omega`, in entry order.
/// Costs O(|Omega| r).
inline Vector project_omega(const LowRankFactors& z, const ObservedMatrix& omega) {
    require_same_dims(z, omega, "project_omega");
    Vector out = Vector::Zero(omega.nnz());
    if (z.rank() == 0) return out;
    // Row-major copies keep the per-entry dot products contiguous.
    const Matrix ut = z.u().transpose();
    const Matrix vdt = (z.v() * z.d().asDiagonal()).transpose();
    const auto rows = omega.row_indices();
    const auto cols = omega.col_indices();
    for (Index k = 0; k < omega.nnz(); ++k) {
        const auto u = static_cast<std::size_t>(k);
        out[k] = ut.col(rows[u]).dot(vdt.col(cols[u]));
    }
    return out;
}

/// ||A - B||_F for two factored matrices without forming either densely.
///
/// Writes A - B = L R' with L = [U_a D_a, -U_b D_b], R = [V_a, V_b] and takes
/// a QR of R, so the result is accurate to O(eps ||A||) even when A and B
/// nearly coincide. A Gram-trace expansion would lose everything below
/// sqrt(eps) ||A||.
inline double frobenius_distance(const LowRankFactors& a, const LowRankFactors& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionMismatch("frobenius_distance: " + detail::dims_str(a.rows(), a.cols()) +
                                " vs " + detail::dims_str(b.rows(), b.cols()));
    const Index s = a.rank() + b.rank();
    if (s == 0) return 0.0;
    if (a.rank() == 0) return b.frobenius_norm();
    if (b.rank() == 0) return a.frobenius_norm();
    Matrix left(a.rows(), s);
    left.leftCols(a.rank()) = a.u() * a.d().asDiagonal();
    left.rightCols(b.rank()) = -(b.u() * b.d().asDiagonal());
    Matrix right(a.cols(), s);
    right.leftCols(a.rank()) = a.v();
    right.rightCols(b.rank()) = b.v();
    Eigen::HouseholderQR<Matrix> qr(right);
    const Index t = std::min(a.cols(), s);
    const Matrix tri = qr.matrixQR().topRows(t).triangularView<Eigen::Upper>();
    return (left * tri.transpose()).norm();
}

/// Y = Y_sp + U diag(d) V', never materialized. matvec and rmatvec cost
/// O(|Omega|) + O((m + n) r).
class SparsePlusLowRank {
public:
    SparsePlusLowRank(ObservedMatrix sparse, LowRankFactors lowrank)
        : sparse_(std::move(sparse)), lowrank_(std::move(lowrank)) {
        require_same_dims(lowrank_, sparse_, "SparsePlusLowRank");
    }

    Index rows() const noexcept { return sparse_.rows(); }
    Index cols() const noexcept { return sparse_.cols(); }

    const ObservedMatrix& sparse_part() const noexcept { return sparse_; }
    const LowRankFactors& lowrank_part() const noexcept { return lowrank_; }

    /// y = Y b. Length checks are the caller's job.
    void apply(const Eigen::Ref<const Vector>& b, Eigen::Ref<Vector> y) const {
        const auto ri = sparse_.row_indices();
        const auto ci = sparse_.col_indices();
        const auto& val = sparse_.values();
        y.setZero();
        for (Index k = 0; k < val.size(); ++k) {
            const auto u = static_cast<std::size_t>(k);
            y[ri[u]] += val[k] * b[ci[u]];
        }
        if (lowrank_.rank() > 0) {
            const Vector coeff = lowrank_.d().cwiseProduct(lowrank_.v().transpose() * b);
            y.noalias() += lowrank_.u() * coeff;
        }
    }

    /// y = Y' b.
    void apply_adjoint(const Eigen::Ref<const Vector>& b, Eigen::Ref<Vector> y) const {
        const auto ri = sparse_.row_indices();
        const auto ci = sparse_.col_indices();
        const auto& val = sparse_.values();
        y.setZero();
        for (Index k = 0; k < val.size(); ++k) {
            const auto u = static_cast<std::size_t>(k);
            y[ci[u]] += val[k] * b[ri[u]];
        }
        if (lowrank_.rank() > 0) {
            const Vector coeff = lowrank_.d().cwiseProduct(lowrank_.u().transpose() * b);
            y.noalias() += lowrank_.v() * coeff;
        }
    }

    Vector matvec(const Vector& b) const {
        if (b.size() != cols())
            throw DimensionMismatch("matvec: operator has " + std::to_string(cols()) +
                                    " columns, vector has length " + std::to_string(b.size()));
        Vector y(rows());
        apply(b, y);
        return y;
    }

    Vector rmatvec(const Vector& b) const {
        if (b.size() != rows())
            throw DimensionMismatch("rmatvec: operator has " + std::to_string(rows()) +
                                    " rows, vector has length " + std::to_string(b.size()));
        Vector y(cols());
        apply_adjoint(b, y);
        return y;
    }

    /// Dense copy, for tests and small diagnostics.
    Matrix to_dense() const { return sparse_.to_dense() + lowrank_.to_dense(); }

private:
    ObservedMatrix sparse_;
    LowRankFactors lowrank_;
};

/// The operator P_Omega(X) + P_Omega^perp(Z_old), stored as
/// {X_Omega - P_Omega(Z_old)} (sparse) + Z_old (low rank).
inline SparsePlusLowRank build_iteration_operator(const ObservedMatrix& x, const LowRankFactors& z_old) {
    require_same_dims(z_old, x, "build_iteration_operator");
    Vector residual = x.values() - project_omega(z_old, x);
    return SparsePlusLowRank(x.with_values(std::move(residual)), z_old);
}

}  // namespace softimpute
