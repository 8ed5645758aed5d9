#pragma once
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace hnpipe::csv {

/// Header plus rows of raw cells. Quoted fields with doubled quotes are supported.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> column(std::string_view name) const
    {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return c;
        return std::nullopt;
    }

    std::size_t require_column(std::string_view name, std::string_view context) const
    {
        if (auto c = column(name)) return *c;
        throw IoError(std::string(context) + ": missing column '" + std::string(name) + "'");
    }
};

inline std::vector<std::string> split_line(std::string_view line)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline Table parse(std::istream& in, std::string_view context = "csv")
{
    Table t;
    std::string line;
    bool have_header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = split_line(line);
        if (!have_header) {
            t.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != t.header.size())
            throw IoError(std::string(context) + ": line " + std::to_string(lineno) + " has " +
                          std::to_string(cells.size()) + " cells, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    if (!have_header) throw IoError(std::string(context) + ": empty file, header row required");
    return t;
}

inline Table read_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return parse(in, path);
}

inline std::string quote(std::string_view cell)
{
    if (cell.find_first_of(",\"\n") == std::string_view::npos) return std::string(cell);
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

inline void write_row(std::ostream& out, const std::vector<std::string>& cells)
{
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out << ',';
        out << quote(cells[i]);
    }
    out << '\n';
}

inline void write_file(const std::string& path, const Table& t)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    write_row(out, t.header);
    for (const auto& r : t.rows) write_row(out, r);
    if (!out) throw IoError("write failed: " + path);
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v)
{
    if (std::isnan(v)) return "";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s)
{
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

} // namespace hnpipe::csv
