#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "adlp/triangle.hpp"

namespace adlp {

/// Reads a long-format triangle CSV with header accident,development,value.
inline Triangle read_triangle_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open triangle file " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw IoError("empty triangle file " + path.string());
    std::vector<std::tuple<int, int, double>> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string a, d, v;
        if (!std::getline(ss, a, ',') || !std::getline(ss, d, ',') ||
            !std::getline(ss, v))
            throw IoError(path.string() + ": malformed row at line " +
                          std::to_string(lineno));
        try {
            rows.push_back({std::stoi(a), std::stoi(d), std::stod(v)});
        } catch (const std::exception&) {
            throw IoError(path.string() + ": non-numeric row at line " +
                          std::to_string(lineno));
        }
    }
    return ingest_triangle(rows);
}

inline void write_triangle_csv(const std::filesystem::path& path,
                               const Triangle& tri) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "accident,development,value\n";
    char buf[64];
    const int n = tri.size();
    for (int i = 1; i <= n; ++i)
        for (int j = 1; j <= n; ++j) {
            const Cell c{i, j};
            if (!tri.contains(c)) continue;
            std::snprintf(buf, sizeof buf, "%d,%d,%.10g", i, j, tri.at(c));
            out << buf << '\n';
        }
    if (!out) throw IoError("failed while writing " + path.string());
}

/// Deterministic decimal formatting shared by all report writers.
inline std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace adlp
