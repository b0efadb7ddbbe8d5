#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "adlp/ensemble.hpp"

namespace adlp {

/// Per-cell log scores of one strategy over an explicit cell set.
struct ScoreSeries {
    std::string strategy;
    std::vector<Cell> cells;
    std::vector<double> scores;
};

/// Sorts indices by calendar period then accident period: the 1-D ordering
/// used for autocovariances of score differentials.
inline std::vector<size_t> calendar_order(const std::vector<Cell>& cells) {
    std::vector<size_t> idx(cells.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (cells[a].calendar() != cells[b].calendar())
            return cells[a].calendar() < cells[b].calendar();
        return cells[a].accident < cells[b].accident;
    });
    return idx;
}

inline ScoreSeries log_scores(const Ensemble& e, const Triangle& tri,
                              const std::vector<Cell>& cells,
                              const std::string& name) {
    ScoreSeries s;
    s.strategy = name;
    auto order = calendar_order(cells);
    for (size_t k : order) {
        s.cells.push_back(cells[k]);
        s.scores.push_back(e.log_density(cells[k], tri.at(cells[k])));
    }
    return s;
}

inline double mean_log_score(const ScoreSeries& s) {
    if (s.scores.empty()) throw ConfigError("empty score series");
    double total = 0.0;
    for (double v : s.scores) total += v;
    return total / s.scores.size();
}

inline std::map<int, double> log_score_by_ap(const ScoreSeries& s) {
    std::map<int, double> sum;
    std::map<int, int> count;
    for (size_t k = 0; k < s.cells.size(); ++k) {
        sum[s.cells[k].accident] += s.scores[k];
        ++count[s.cells[k].accident];
    }
    for (auto& [ap, v] : sum) v /= count[ap];
    return sum;
}

/// Discretization grid for the CRPS integral.
struct CrpsConfig {
    double z_lo = 0.0;
    double z_hi = 0.0;
    int steps = 2000;

    void validate() const {
        if (!(z_lo < z_hi)) throw ConfigError("CRPS grid requires z_lo < z_hi");
        if (steps < 1) throw ConfigError("CRPS grid requires at least one step");
    }
};

/// Discretized CRPS: dz * sum over grid of (F(z) - 1{z >= y})^2.
inline double crps(const std::function<double(double)>& cdf, double y,
                   const CrpsConfig& cfg) {
    cfg.validate();
    if (y < cfg.z_lo || y > cfg.z_hi)
        throw ConfigError("observation lies outside the CRPS grid");
    const double dz = (cfg.z_hi - cfg.z_lo) / cfg.steps;
    double total = 0.0;
    for (int k = 0; k < cfg.steps; ++k) {
        const double z = cfg.z_lo + k * dz;
        const double diff = cdf(z) - (z >= y ? 1.0 : 0.0);
        total += diff * diff;
    }
    return dz * total;
}

inline double crps(const Ensemble& e, const Cell& c, double y,
                   const CrpsConfig& cfg) {
    return crps([&](double z) { return e.cdf(c, z); }, y, cfg);
}

/// Diebold-Mariano style test outcome.
struct DMResult {
    double statistic = 0.0;
    double sigma = 0.0;  // sigma_n, or sqrt(f_d(0)) for the adjusted test
    std::vector<double> differentials;
    double alpha = 0.05;
    bool degenerate = false;
    bool variance_fallback = false;
    bool reject = false;
};

/// DM test with the uncentered scale sqrt(mean d^2); one-sided at level
/// alpha, rejecting for t_n above the standard normal quantile.
inline DMResult dm_test(const std::vector<double>& scores_f,
                        const std::vector<double>& scores_g,
                        double alpha = 0.05) {
    const size_t n = scores_f.size();
    if (n != scores_g.size() || n < 2)
        throw ConfigError("DM test needs aligned score vectors of length >= 2");
    DMResult out;
    out.alpha = alpha;
    double mean_d = 0.0, sq = 0.0;
    for (size_t k = 0; k < n; ++k) {
        const double d = scores_f[k] - scores_g[k];
        out.differentials.push_back(d);
        mean_d += d;
        sq += d * d;
    }
    mean_d /= n;
    out.sigma = std::sqrt(sq / n);
    if (out.sigma == 0.0) {
        out.degenerate = true;
        return out;
    }
    out.statistic = std::sqrt(static_cast<double>(n)) * mean_d / out.sigma;
    out.reject = out.statistic > detail::normal_quantile(1.0 - alpha);
    return out;
}

/// Adjusted DM test: centered long-run variance with Bartlett weights up to
/// lag floor(n^{1/3}) (overridable); differentials are expected in calendar
/// then accident order.
inline DMResult adjusted_dm_test(const std::vector<double>& scores_f,
                                 const std::vector<double>& scores_g,
                                 double alpha = 0.05, int lag = -1) {
    const size_t n = scores_f.size();
    if (n != scores_g.size() || n < 2)
        throw ConfigError("DM test needs aligned score vectors of length >= 2");
    DMResult out;
    out.alpha = alpha;
    double mean_d = 0.0;
    for (size_t k = 0; k < n; ++k) {
        out.differentials.push_back(scores_f[k] - scores_g[k]);
        mean_d += out.differentials.back();
    }
    mean_d /= n;
    const int h = lag >= 0 ? lag
                           : static_cast<int>(std::floor(
                                 std::pow(static_cast<double>(n), 1.0 / 3.0)));
    auto gamma = [&](int tau) {
        double g = 0.0;
        for (size_t t = tau; t < n; ++t)
            g += (out.differentials[t] - mean_d) *
                 (out.differentials[t - tau] - mean_d);
        return g / n;
    };
    const double g0 = gamma(0);
    if (g0 == 0.0) {
        out.degenerate = true;
        return out;
    }
    double f0 = g0;
    for (int tau = 1; tau <= h && tau < static_cast<int>(n); ++tau)
        f0 += 2.0 * (1.0 - static_cast<double>(tau) / (h + 1)) * gamma(tau);
    if (f0 <= 0.0) {
        f0 = g0;
        out.variance_fallback = true;
    }
    out.sigma = std::sqrt(f0);
    out.statistic = mean_d / std::sqrt(f0 / n);
    out.reject = out.statistic > detail::normal_quantile(1.0 - alpha);
    return out;
}

inline double reserve_bias(double estimated, double true_reserve) {
    if (true_reserve == 0.0) throw ConfigError("true reserve is zero");
    return (estimated - true_reserve) / true_reserve;
}

inline double reserve_bias_75(double estimated_75, double true_75) {
    return reserve_bias(estimated_75, true_75);
}

}  // namespace adlp
