#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sofar/errors.hpp"
#include "sofar/linalg.hpp"

namespace sofar {

namespace detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline double parse_cell(std::string_view cell, std::size_t line)
{
    cell = trim(cell);
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    double v = 0.0;
    const auto* first = cell.data();
    const auto* last = cell.data() + cell.size();
    const auto res = std::from_chars(first, last, v);
    if (cell.empty() || res.ec != std::errc() || res.ptr != last)
        throw ParseError("line " + std::to_string(line) + ": not a number: '" +
                             std::string(cell) + "'",
                         line);
    if (!std::isfinite(v))
        throw ParseError("line " + std::to_string(line) + ": non-finite value", line);
    return v;
}

}  // namespace detail

/// Parse comma-separated numeric text. Blank lines are skipped; decimal
/// parsing does not depend on the locale.
inline Mat parse_matrix_csv(std::istream& in, bool has_header = false)
{
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    bool header_pending = has_header;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        if (header_pending) {
            header_pending = false;
            continue;
        }
        std::vector<double> row;
        std::string_view rest(line);
        for (;;) {
            const auto comma = rest.find(',');
            row.push_back(detail::parse_cell(rest.substr(0, comma), lineno));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError("line " + std::to_string(lineno) + ": expected " +
                                 std::to_string(rows.front().size()) + " columns, found " +
                                 std::to_string(row.size()),
                             lineno);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError("no data rows", 0);
    Mat m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
            m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return m;
}

inline Mat read_matrix_csv(const std::string& path, bool has_header = false)
{
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open " + path);
    try {
        return parse_matrix_csv(in, has_header);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what(), e.line());
    }
}

/// Shortest round-trip representation (at most 17 significant digits).
inline std::string format_double(double v)
{
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline void write_matrix_csv(std::ostream& out, const Mat& m)
{
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
}

inline void write_matrix_csv(const std::string& path, const Mat& m)
{
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write " + path);
    write_matrix_csv(out, m);
}

}  // namespace sofar
