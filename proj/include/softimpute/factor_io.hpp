#pragma once

// Factor files: U.tsv (m rows), d.tsv (one value per line), V.tsv (n rows),
// tab separated, 17 significant digits.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "softimpute/errors.hpp"
#include "softimpute/matrix_market.hpp"
#include "softimpute/sparse_ops.hpp"

namespace softimpute {

namespace detail {

inline void write_tsv(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j > 0) out << '\t';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
}

inline Matrix read_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<double> row;
        std::size_t start = 0;
        if (!line.empty()) {
            while (true) {
                const auto tab = line.find('\t', start);
                row.push_back(parse_real(line.substr(start, tab - start), lineno));
                if (tab == std::string::npos) break;
                start = tab + 1;
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError(lineno, path.filename().string() + ": expected " +
                                         std::to_string(rows.front().size()) + " columns, got " +
                                         std::to_string(row.size()));
        rows.push_back(std::move(row));
    }
    const Index r = rows.empty() ? 0 : static_cast<Index>(rows.front().size());
    Matrix out(static_cast<Index>(rows.size()), r);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (Index j = 0; j < r; ++j) out(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
    return out;
}

}  // namespace detail

inline void write_factors(const std::filesystem::path& dir, const LowRankFactors& z) {
    std::filesystem::create_directories(dir);
    detail::write_tsv(dir / "U.tsv", z.u());
    detail::write_tsv(dir / "d.tsv", z.d());
    detail::write_tsv(dir / "V.tsv", z.v());
}

inline LowRankFactors read_factors(const std::filesystem::path& dir) {
    Matrix u = detail::read_tsv(dir / "U.tsv");
    const Matrix d = detail::read_tsv(dir / "d.tsv");
    Matrix v = detail::read_tsv(dir / "V.tsv");
    if (d.cols() > 1) throw ParseError(0, "d.tsv must hold one value per line");
    const Index r = d.rows();
    // A rank-0 factor file has empty lines in U.tsv / V.tsv.
    if (r == 0) return LowRankFactors::zero(u.rows(), v.rows());
    return LowRankFactors(std::move(u), d.col(0), std::move(v));
}

}  // namespace softimpute
