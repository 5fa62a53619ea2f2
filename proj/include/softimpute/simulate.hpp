#pragma once

// Synthetic instances X = U V' + noise with uniformly missing entries, and the
// standardized train/test errors used to evaluate solutions on them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "softimpute/errors.hpp"
#include "softimpute/lanczos_svd.hpp"
#include "softimpute/matrix_market.hpp"
#include "softimpute/sparse_ops.hpp"

namespace softimpute {

struct SimSpec {
    Index rows = 100;
    Index cols = 100;
    Index rank = 10;
    /// sqrt(var(UV') / var(noise)); +infinity gives a noiseless instance.
    double snr = 1.0;
    /// Fraction of cells left unobserved.
    double missing_frac = 0.5;
    /// Overrides missing_frac with an exact |Omega| when set.
    std::optional<Index> observed_count;
    std::uint64_t seed = 1;

    bool noiseless() const { return std::isinf(snr); }

    Index resolved_observed_count() const {
        if (observed_count) return *observed_count;
        return static_cast<Index>(
            std::llround((1.0 - missing_frac) * static_cast<double>(rows) * static_cast<double>(cols)));
    }

    void validate() const {
        if (rows < 1 || cols < 1) throw InvalidArgument("simulation dims must be positive");
        if (rank < 1 || rank > std::min(rows, cols))
            throw InvalidArgument("true rank must lie in [1, min(m, n)]");
        if (!(snr > 0.0)) throw InvalidArgument("snr must be positive");
        if (!observed_count && !(missing_frac > 0.0 && missing_frac < 1.0))
            throw InvalidArgument("missing fraction must lie in (0, 1)");
        const Index count = resolved_observed_count();
        if (count < 1 || count > rows * cols)
            throw InvalidArgument("observed count must lie in [1, m*n], got " + std::to_string(count));
    }
};

struct SimInstance {
    SimSpec spec;
    ObservedMatrix observed;
    /// SVD form of the noiseless U V'.
    LowRankFactors truth;
    double noise_std = 0.0;
    /// sqrt(var(UV') over all cells / sample variance of the drawn noise).
    double realized_snr = std::numeric_limits<double>::infinity();

    Index heldout_count() const { return observed.rows() * observed.cols() - observed.nnz(); }
};

namespace detail {

/// SVD of A B' for tall A, B of equal width, via two thin QRs.
inline LowRankFactors factor_product(const Matrix& a, const Matrix& b) {
    const Index r = a.cols();
    Eigen::HouseholderQR<Matrix> qa(a), qb(b);
    const Matrix qa_thin = qa.householderQ() * Matrix::Identity(a.rows(), r);
    const Matrix qb_thin = qb.householderQ() * Matrix::Identity(b.rows(), r);
    const Matrix ra = qa.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    const Matrix rb = qb.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    Eigen::JacobiSVD<Matrix> core(ra * rb.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
    Matrix u = qa_thin * core.matrixU();
    Matrix v = qb_thin * core.matrixV();
    fix_signs(u, v);
    return LowRankFactors(std::move(u), core.singularValues(), std::move(v));
}

/// `count` distinct values from [0, total), sorted (Floyd's algorithm).
template <class Rng>
std::vector<std::int64_t> sample_without_replacement(std::int64_t total, std::int64_t count, Rng& rng) {
    std::unordered_set<std::int64_t> chosen;
    chosen.reserve(static_cast<std::size_t>(count) * 2);
    for (std::int64_t j = total - count; j < total; ++j) {
        std::uniform_int_distribution<std::int64_t> pick(0, j);
        const std::int64_t t = pick(rng);
        if (!chosen.insert(t).second) chosen.insert(j);
    }
    std::vector<std::int64_t> out(chosen.begin(), chosen.end());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// Draws U, V with iid N(0,1) entries, Omega uniformly without replacement,
/// and iid Gaussian noise with std sqrt(r) / snr on the observed cells.
/// Deterministic given spec.seed.
inline SimInstance generate(const SimSpec& spec) {
    spec.validate();
    const Index m = spec.rows, n = spec.cols, r = spec.rank;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    Matrix u(m, r), v(n, r);
    for (Index j = 0; j < r; ++j)
        for (Index i = 0; i < m; ++i) u(i, j) = normal(rng);
    for (Index j = 0; j < r; ++j)
        for (Index i = 0; i < n; ++i) v(i, j) = normal(rng);

    const auto cells = detail::sample_without_replacement(m * n, spec.resolved_observed_count(), rng);
    const double noise_std = spec.noiseless() ? 0.0 : std::sqrt(static_cast<double>(r)) / spec.snr;

    const Matrix ut = u.transpose();
    const Matrix vt = v.transpose();
    std::vector<Entry> entries;
    entries.reserve(cells.size());
    detail::CompensatedSum noise_sum, noise_sq;
    for (const std::int64_t c : cells) {
        const Index i = c / n;
        const Index j = c % n;
        const double signal = ut.col(i).dot(vt.col(j));
        const double eps = noise_std > 0.0 ? noise_std * normal(rng) : 0.0;
        noise_sum.add(eps);
        noise_sq.add(eps * eps);
        entries.push_back({i, j, signal + eps});
    }

    // Population variance of UV' over every cell, from r x r Grams.
    const double cells_total = static_cast<double>(m) * static_cast<double>(n);
    const double mean = u.colwise().sum().dot(v.colwise().sum()) / cells_total;
    const double sumsq = ((ut * u).cwiseProduct(vt * v)).sum();
    const double signal_var = sumsq / cells_total - mean * mean;
    const double k = static_cast<double>(cells.size());
    const double noise_var = noise_sq.value() / k - std::pow(noise_sum.value() / k, 2);

    SimInstance inst{spec, ObservedMatrix(m, n, std::move(entries)), detail::factor_product(u, v), noise_std,
                     std::numeric_limits<double>::infinity()};
    if (noise_var > 0.0) inst.realized_snr = std::sqrt(signal_var / noise_var);
    return inst;
}

namespace detail {

/// Sums (a - b)^2 and b^2 over the unobserved cells, row by row, where a and b
/// are the cell values of two factored matrices.
inline std::pair<double, double> heldout_sums(const LowRankFactors& est, const LowRankFactors& truth,
                                              const ObservedMatrix& omega) {
    const Index m = omega.rows(), n = omega.cols();
    const Matrix est_ud = est.u() * est.d().asDiagonal();
    const Matrix truth_ud = truth.u() * truth.d().asDiagonal();
    const auto rows = omega.row_indices();
    const auto cols = omega.col_indices();
    CompensatedSum num, den;
    std::size_t k = 0;
    Vector est_row(n), truth_row(n);
    for (Index i = 0; i < m; ++i) {
        truth_row.noalias() = truth.v() * truth_ud.row(i).transpose();
        if (est.rank() > 0)
            est_row.noalias() = est.v() * est_ud.row(i).transpose();
        else
            est_row.setZero();
        for (Index j = 0; j < n; ++j) {
            if (k < rows.size() && rows[k] == i && cols[k] == j) {
                ++k;
                continue;
            }
            const double diff = truth_row[j] - est_row[j];
            num.add(diff * diff);
            den.add(truth_row[j] * truth_row[j]);
        }
    }
    return {num.value(), den.value()};
}

}  // namespace detail

/// ||P_perp(UV' - Z)||_F^2 / ||P_perp(UV')||_F^2 against the noiseless truth.
inline double test_error(const LowRankFactors& z, const SimInstance& inst) {
    require_same_dims(z, inst.observed, "test_error");
    if (inst.heldout_count() == 0) throw InvalidArgument("test_error: no held-out cells");
    const auto [num, den] = detail::heldout_sums(z, inst.truth, inst.observed);
    return num / den;
}

/// ||P_Omega(X - Z)||_F^2 / ||P_Omega(X)||_F^2 against the observed (noisy) values.
inline double train_error(const LowRankFactors& z, const ObservedMatrix& x) {
    require_same_dims(z, x, "train_error");
    const Vector fitted = project_omega(z, x);
    detail::CompensatedSum num;
    for (Index k = 0; k < x.nnz(); ++k) {
        const double r = x.values()[k] - fitted[k];
        num.add(r * r);
    }
    return num.value() / x.squared_norm();
}

inline double train_error(const LowRankFactors& z, const SimInstance& inst) {
    return train_error(z, inst.observed);
}

inline nlohmann::ordered_json instance_metadata(const SimInstance& inst) {
    nlohmann::ordered_json meta;
    meta["m"] = inst.spec.rows;
    meta["n"] = inst.spec.cols;
    meta["r"] = inst.spec.rank;
    if (inst.spec.noiseless())
        meta["snr"] = nullptr;
    else
        meta["snr"] = inst.spec.snr;
    meta["noiseless"] = inst.spec.noiseless();
    meta["p"] = 1.0 - static_cast<double>(inst.observed.nnz()) /
                          (static_cast<double>(inst.spec.rows) * static_cast<double>(inst.spec.cols));
    meta["observed"] = inst.observed.nnz();
    meta["seed"] = inst.spec.seed;
    meta["noise_std"] = inst.noise_std;
    if (std::isfinite(inst.realized_snr))
        meta["realized_snr"] = inst.realized_snr;
    else
        meta["realized_snr"] = nullptr;
    return meta;
}

/// Writes `<stem>.mtx` and `<stem>.json` into `dir`.
inline void write_instance(const std::filesystem::path& dir, const SimInstance& inst,
                           const std::string& stem = "observed") {
    std::filesystem::create_directories(dir);
    write_matrix_market(dir / (stem + ".mtx"), inst.observed);
    std::ofstream meta(dir / (stem + ".json"));
    if (!meta) throw Error("cannot write metadata in '" + dir.string() + "'");
    meta << instance_metadata(inst).dump(2) << '\n';
}

}  // namespace softimpute
