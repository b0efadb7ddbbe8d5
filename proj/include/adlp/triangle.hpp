#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "adlp/errors.hpp"

namespace adlp {

/// One cell of a run-off triangle, 1-indexed.
struct Cell {
    int accident = 0;
    int development = 0;

    /// Calendar period, always derived.
    int calendar() const { return accident + development - 1; }

    bool operator==(const Cell&) const = default;
    auto operator<=>(const Cell&) const = default;
};

enum class TriangleKind { Paid, Reported, Finalised };

/// Square I x I grid of incremental amounts. The upper triangle
/// (calendar <= I) is observed; the lower triangle is the forecast target.
/// A full square may be stored (synthetic data), in which case lower-triangle
/// values are available as ground truth.
class Triangle {
public:
    Triangle(int size, std::vector<double> values, bool full_square)
        : size_(size), values_(std::move(values)), full_square_(full_square) {
        if (size_ < 2) throw ConfigError("triangle size must be >= 2");
        if (static_cast<int>(values_.size()) != size_ * size_)
            throw ConfigError("triangle value grid has wrong length");
    }

    int size() const { return size_; }
    bool full_square() const { return full_square_; }

    bool observed(const Cell& c) const { return c.calendar() <= size_; }

    bool contains(const Cell& c) const {
        return c.accident >= 1 && c.accident <= size_ && c.development >= 1 &&
               c.development <= size_ && (full_square_ || observed(c));
    }

    double at(const Cell& c) const {
        if (!contains(c))
            throw ConfigError("triangle cell (" + std::to_string(c.accident) + "," +
                              std::to_string(c.development) + ") not available");
        return values_[idx(c)];
    }

    /// All observed (upper-triangle) cells, row-major.
    std::vector<Cell> upper_cells() const {
        std::vector<Cell> out;
        for (int i = 1; i <= size_; ++i)
            for (int j = 1; j <= size_ - i + 1; ++j) out.push_back({i, j});
        return out;
    }

    /// Lower-triangle forecast cells: calendar > I, accident >= 2.
    std::vector<Cell> lower_cells() const {
        std::vector<Cell> out;
        for (int i = 2; i <= size_; ++i)
            for (int j = size_ - i + 2; j <= size_; ++j) out.push_back({i, j});
        return out;
    }

private:
    int idx(const Cell& c) const { return (c.accident - 1) * size_ + (c.development - 1); }

    int size_;
    std::vector<double> values_;
    bool full_square_;
};

/// Build a triangle from long-format rows. The upper triangle must be
/// complete; a full square is accepted and flagged as such.
inline Triangle ingest_triangle(const std::vector<std::tuple<int, int, double>>& rows,
                                TriangleKind kind = TriangleKind::Paid) {
    (void)kind;
    if (rows.empty()) throw ConfigError("no triangle rows");
    int size = 0;
    for (const auto& [i, j, v] : rows) size = std::max({size, i, j});
    std::vector<double> values(static_cast<size_t>(size) * size,
                               std::numeric_limits<double>::quiet_NaN());
    for (const auto& [i, j, v] : rows) {
        if (i < 1 || j < 1)
            throw ConfigError("triangle indices must be >= 1");
        double& slot = values[static_cast<size_t>(i - 1) * size + (j - 1)];
        if (!std::isnan(slot))
            throw ConfigError("duplicate triangle cell (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
        if (!std::isfinite(v))
            throw ConfigError("non-finite amount at (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
        if (v < 0)
            throw ConfigError("negative amount at (" + std::to_string(i) + "," +
                              std::to_string(j) + "): unsupported");
        slot = v;
    }
    bool full = true;
    for (int i = 1; i <= size; ++i) {
        for (int j = 1; j <= size; ++j) {
            bool have = !std::isnan(values[static_cast<size_t>(i - 1) * size + (j - 1)]);
            if (i + j - 1 <= size && !have)
                throw ConfigError("incomplete upper triangle: missing (" + std::to_string(i) +
                                  "," + std::to_string(j) + ")");
            if (i + j - 1 > size && !have) full = false;
        }
    }
    if (!full) {
        for (auto& v : values)
            if (std::isnan(v)) v = 0.0;
    }
    return Triangle(size, std::move(values), full);
}

/// Maturity-band partition strategy: split points are the last accident
/// period of each band; empty list means a single band (SLP).
struct PartitionStrategy {
    std::vector<int> split_points;
    int validation_diagonals = 3;
};

/// Training/validation split of the upper triangle plus maturity subsets.
struct DataPartition {
    int triangle_size = 0;
    std::vector<Cell> train;
    std::vector<Cell> validation;
    /// Per-band validation subsets S_k and cumulative unions U_k.
    std::vector<std::vector<Cell>> subsets;
    std::vector<std::vector<Cell>> cumulative;
    /// Out-of-sample cells per band.
    std::vector<std::vector<Cell>> test_subsets;
    /// Band boundaries: accident periods in band k are (band_start[k], band_end[k]).
    std::vector<int> band_start, band_end;

    int bands() const { return static_cast<int>(subsets.size()); }

    int band_of_accident(int accident) const {
        for (int k = 0; k < bands(); ++k)
            if (accident >= band_start[k] && accident <= band_end[k]) return k;
        throw ConfigError("accident period " + std::to_string(accident) +
                          " outside every maturity band");
    }
};

/// Allocate the latest tau calendar diagonals to validation, except cells
/// whose removal would leave an accident or development period with no
/// training data; those boundary cells stay in training.
inline DataPartition split_train_val(const Triangle& tri, int tau) {
    const int n = tri.size();
    if (tau < 1) throw ConfigError("validation depth must be >= 1");
    if (tau >= n)
        throw ConfigError("validation depth " + std::to_string(tau) +
                          " leaves no training data in a size-" + std::to_string(n) +
                          " triangle");
    const int cutoff = n - tau;  // training cells have calendar <= cutoff

    DataPartition part;
    part.triangle_size = n;
    for (const Cell& c : tri.upper_cells()) {
        if (c.calendar() <= cutoff) {
            part.train.push_back(c);
            continue;
        }
        // Development period j has training cells iff some i <= cutoff+1-j;
        // accident period i has training cells iff some j <= cutoff+1-i.
        bool dev_covered = c.development <= cutoff;
        bool acc_covered = c.accident <= cutoff;
        bool keep = false;
        if (!dev_covered) keep = (c.accident == 1);
        if (!acc_covered) keep = keep || (c.development == 1);
        if (keep)
            part.train.push_back(c);
        else
            part.validation.push_back(c);
    }
    if (part.validation.empty())
        throw ConfigError("validation depth " + std::to_string(tau) +
                          " admits no validation cells after coverage retention");
    return part;
}

/// Assign validation cells and out-of-sample cells to maturity bands by
/// accident period, and form the cumulative validation unions.
inline DataPartition assign_maturity_subsets(const Triangle& tri, DataPartition part,
                                             const PartitionStrategy& strategy) {
    const int n = part.triangle_size;
    std::vector<int> splits = strategy.split_points;
    std::sort(splits.begin(), splits.end());
    for (size_t k = 0; k < splits.size(); ++k) {
        if (splits[k] < 2 || splits[k] > n - 1)
            throw ConfigError("split point " + std::to_string(splits[k]) +
                              " outside [2, " + std::to_string(n - 1) + "]");
        if (k > 0 && splits[k] == splits[k - 1])
            throw ConfigError("duplicate split point " + std::to_string(splits[k]));
    }

    part.band_start.clear();
    part.band_end.clear();
    int start = 2;  // accident period 1 has no out-of-sample cells
    for (int s : splits) {
        part.band_start.push_back(start);
        part.band_end.push_back(s);
        start = s + 1;
    }
    part.band_start.push_back(start);
    part.band_end.push_back(n);

    const int K = static_cast<int>(part.band_start.size());
    part.subsets.assign(K, {});
    part.cumulative.assign(K, {});
    part.test_subsets.assign(K, {});

    std::vector<Cell> val_sorted = part.validation;
    std::sort(val_sorted.begin(), val_sorted.end());
    for (const Cell& c : val_sorted)
        part.subsets[part.band_of_accident(std::max(c.accident, 2))].push_back(c);
    for (const Cell& c : tri.lower_cells())
        part.test_subsets[part.band_of_accident(c.accident)].push_back(c);

    std::vector<Cell> acc;
    for (int k = 0; k < K; ++k) {
        if (part.subsets[k].empty())
            throw ConfigError("maturity band " + std::to_string(k + 1) +
                              " (accident " + std::to_string(part.band_start[k]) + "-" +
                              std::to_string(part.band_end[k]) + ") has no validation cells");
        acc.insert(acc.end(), part.subsets[k].begin(), part.subsets[k].end());
        part.cumulative[k] = acc;
    }
    return part;
}

}  // namespace adlp
