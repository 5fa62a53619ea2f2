#pragma once

// MatrixMarket coordinate I/O: `%%MatrixMarket matrix coordinate real general`,
// 1-based indices on disk, 0-based in memory.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "softimpute/errors.hpp"
#include "softimpute/sparse_ops.hpp"

namespace softimpute {

namespace detail {

inline std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

/// Formats with 17 significant digits, enough to round-trip any double.
inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline long long parse_index(const std::string& tok, std::size_t line, const char* what) {
    long long v = 0;
    const auto* first = tok.data();
    const auto* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw ParseError(line, std::string("invalid ") + what + " '" + tok + "'");
    return v;
}

inline double parse_real(const std::string& tok, std::size_t line) {
    // strtod accepts Fortran-style spellings such as "1.E+00".
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || tok.empty())
        throw ParseError(line, "invalid value '" + tok + "'");
    if (!std::isfinite(v)) throw ParseError(line, "non-finite value '" + tok + "'");
    return v;
}

}  // namespace detail

/// Parses a coordinate MatrixMarket stream. Errors name the offending line.
inline ObservedMatrix read_matrix_market(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;

    if (!std::getline(in, line)) throw ParseError(1, "empty input, expected MatrixMarket header");
    ++lineno;
    {
        std::istringstream hs(detail::lowercase(line));
        std::string banner, object, format, field, symmetry;
        hs >> banner >> object >> format >> field >> symmetry;
        if (banner != "%%matrixmarket")
            throw ParseError(lineno, "expected '%%MatrixMarket' header, got '" + line + "'");
        if (object != "matrix" || format != "coordinate")
            throw ParseError(lineno, "only 'matrix coordinate' files are supported");
        if (field != "real" && field != "integer" && field != "double")
            throw ParseError(lineno, "unsupported field '" + field + "', expected real");
        if (symmetry != "general")
            throw ParseError(lineno, "unsupported symmetry '" + symmetry + "', expected general");
    }

    auto next_data_line = [&](std::string& out) {
        while (std::getline(in, out)) {
            ++lineno;
            if (!out.empty() && out.back() == '\r') out.pop_back();
            if (out.empty() || out[0] == '%' || detail::is_blank(out)) continue;
            return true;
        }
        return false;
    };

    if (!next_data_line(line)) throw ParseError(lineno + 1, "missing size line 'm n nnz'");
    long long m = 0, n = 0, nnz = 0;
    {
        std::istringstream ss(line);
        std::string a, b, c, extra;
        if (!(ss >> a >> b >> c) || (ss >> extra))
            throw ParseError(lineno, "size line must be 'm n nnz', got '" + line + "'");
        m = detail::parse_index(a, lineno, "row count");
        n = detail::parse_index(b, lineno, "column count");
        nnz = detail::parse_index(c, lineno, "entry count");
        if (m < 1 || n < 1) throw ParseError(lineno, "matrix dimensions must be positive");
        if (nnz < 1) throw ParseError(lineno, "at least one observed entry is required");
        if (nnz > m * n) throw ParseError(lineno, "entry count exceeds m*n");
    }

    std::vector<Entry> entries;
    std::vector<std::size_t> source_line;
    entries.reserve(static_cast<std::size_t>(nnz));
    source_line.reserve(static_cast<std::size_t>(nnz));
    while (static_cast<long long>(entries.size()) < nnz) {
        if (!next_data_line(line))
            throw ParseError(lineno, "expected " + std::to_string(nnz) + " entries, found " +
                                         std::to_string(entries.size()));
        std::istringstream ss(line);
        std::string a, b, c, extra;
        if (!(ss >> a >> b >> c) || (ss >> extra))
            throw ParseError(lineno, "entry must be 'i j value', got '" + line + "'");
        const long long i = detail::parse_index(a, lineno, "row index");
        const long long j = detail::parse_index(b, lineno, "column index");
        if (i < 1 || i > m)
            throw ParseError(lineno, "row index " + a + " out of range [1, " + std::to_string(m) + "]");
        if (j < 1 || j > n)
            throw ParseError(lineno,
                             "column index " + b + " out of range [1, " + std::to_string(n) + "]");
        entries.push_back({static_cast<Index>(i - 1), static_cast<Index>(j - 1),
                           detail::parse_real(c, lineno)});
        source_line.push_back(lineno);
    }
    if (next_data_line(line))
        throw ParseError(lineno, "more entries than the declared " + std::to_string(nnz));

    // Report duplicates against the file, before ObservedMatrix sorts them away.
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return entries[x].row != entries[y].row ? entries[x].row < entries[y].row
                                                : entries[x].col < entries[y].col;
    });
    for (std::size_t k = 1; k < order.size(); ++k) {
        const auto& p = entries[order[k - 1]];
        const auto& q = entries[order[k]];
        if (p.row == q.row && p.col == q.col) {
            const auto first = std::min(source_line[order[k - 1]], source_line[order[k]]);
            const auto second = std::max(source_line[order[k - 1]], source_line[order[k]]);
            throw ParseError(second, "duplicate entry (" + std::to_string(p.row + 1) + ", " +
                                         std::to_string(p.col + 1) + "), first seen on line " +
                                         std::to_string(first));
        }
    }
    return ObservedMatrix(static_cast<Index>(m), static_cast<Index>(n), std::move(entries));
}

inline ObservedMatrix read_matrix_market(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    return read_matrix_market(in);
}

inline void write_matrix_market(std::ostream& out, const ObservedMatrix& x) {
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << x.rows() << ' ' << x.cols() << ' ' << x.nnz() << '\n';
    for (Index k = 0; k < x.nnz(); ++k) {
        const Entry e = x.entry(k);
        out << (e.row + 1) << ' ' << (e.col + 1) << ' ' << detail::format_double(e.value) << '\n';
    }
}

inline void write_matrix_market(const std::filesystem::path& path, const ObservedMatrix& x) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    write_matrix_market(out, x);
}

}  // namespace softimpute
