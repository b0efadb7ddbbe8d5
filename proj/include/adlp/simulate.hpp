#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "adlp/ensemble.hpp"

namespace adlp {

namespace detail {

/// SplitMix64 step: turns sequential replicate indices into well-separated
/// engine seeds.
inline std::uint64_t split_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Reserve point estimate plus simulated replicates for quantile queries.
struct ReserveEstimate {
    double central = 0.0;
    std::vector<double> replicates;
    std::vector<double> sorted;
    double quantile_estimate = 0.0;
    double requested_q = 0.75;

    /// Empirical quantile: order statistic at index ceil(q * N) (type 1).
    double quantile(double q) const {
        if (sorted.empty()) throw ConfigError("no simulated reserves");
        if (!(q > 0.0) || q > 1.0) throw ConfigError("quantile level in (0, 1]");
        const auto n = static_cast<double>(sorted.size());
        const auto idx = static_cast<size_t>(std::ceil(q * n));
        return sorted[std::max<size_t>(idx, 1) - 1];
    }
};

/// Algorithm: N replicate reserves, each the sum of one independent draw per
/// out-of-sample cell; per-replicate RNG streams derive from the master seed
/// so results do not depend on evaluation order or parallelism.
inline ReserveEstimate simulate_reserve_quantile(const Ensemble& e,
                                                 const std::vector<Cell>& cells,
                                                 int N, double q,
                                                 std::uint64_t seed) {
    if (N < 1) throw ConfigError("need at least one replicate");
    if (!(q > 0.0) || q > 1.0) throw ConfigError("quantile level in (0, 1]");
    ReserveEstimate out;
    out.requested_q = q;
    for (const Cell& c : cells) out.central += e.mean(c);
    out.replicates.resize(N);
    for (int r = 0; r < N; ++r) {
        std::mt19937_64 rng(detail::split_seed(seed + static_cast<std::uint64_t>(r)));
        double total = 0.0;
        for (const Cell& c : cells) {
            const double draw = e.sample(c, rng);
            if (!std::isfinite(draw))
                throw NumericError("sampler returned a non-finite draw");
            total += draw;
        }
        out.replicates[r] = total;
    }
    out.sorted = out.replicates;
    std::sort(out.sorted.begin(), out.sorted.end());
    out.quantile_estimate = out.quantile(q);
    return out;
}

/// Mean and empirical 75th percentile of per-replicate lower-triangle sums.
inline std::pair<double, double> true_reserve_stats(
    const std::vector<double>& replicate_sums) {
    if (replicate_sums.empty()) throw ConfigError("no simulated reserves");
    std::vector<double> sorted = replicate_sums;
    std::sort(sorted.begin(), sorted.end());
    double mean = 0.0;
    for (double v : sorted) mean += v;
    mean /= sorted.size();
    const auto idx = static_cast<size_t>(
        std::ceil(0.75 * static_cast<double>(sorted.size())));
    return {mean, sorted[std::max<size_t>(idx, 1) - 1]};
}

inline std::pair<double, double> true_reserve_stats(
    const std::vector<Triangle>& squares) {
    std::vector<double> sums;
    for (const Triangle& t : squares) {
        double s = 0.0;
        for (const Cell& c : t.lower_cells()) s += t.at(c);
        sums.push_back(s);
    }
    return true_reserve_stats(sums);
}

/// Configuration of the synthetic claims generator. Cell means follow the
/// multiplicative structure
///   m_ij = base_level * exp(accident_slope (i-1)) * j^hoerl_log
///          * exp(hoerl_lin j) * (1 + inflation)^(i+j-2),
/// payments scale with realized finalisations (payment size depends on claim
/// closure), severities are log-normal (long tails), and zeros arrive with a
/// logistic-in-development probability.
struct SynthConfig {
    int size = 40;
    double base_level = 1000.0;
    double accident_slope = 0.02;
    double hoerl_log = 1.5;
    double hoerl_lin = -0.25;
    double inflation = 0.02;
    double severity_sigma = 0.8;
    double severity_gradient = -1.0;
    double zero_intercept = -4.0;
    double zero_slope = 0.12;
    double count_mean = 500.0;
    double hoerl_interaction = 0.0;
    double closure_intercept = -2.0;
    double closure_slope = 0.3;
    bool deterministic = false;
    std::uint64_t seed = 1;

    void validate() const {
        if (size < 2) throw ConfigError("triangle size must be at least 2");
        if (!(base_level > 0.0) || !(count_mean > 0.0))
            throw ConfigError("levels and count intensities must be positive");
        if (!(severity_sigma >= 0.0))
            throw ConfigError("severity volatility must be non-negative");
        for (double v : {accident_slope, hoerl_log, hoerl_lin,
                         hoerl_interaction, inflation, severity_gradient,
                         zero_intercept, zero_slope, closure_intercept,
                         closure_slope})
            if (!std::isfinite(v)) throw ConfigError("non-finite generator rate");
        if (severity_gradient < -2.0 || severity_gradient > 2.0)
            throw ConfigError("severity gradient must lie in [-2, 2]");
    }

    double cell_mean(int i, int j) const {
        // The interaction lets the development decay drift across accident
        // periods, so no additive-on-log model is exactly correct.
        const double drift =
            hoerl_interaction * (i - 1.0) / (size - 1.0) * j;
        return base_level * std::exp(accident_slope * (i - 1)) *
               std::pow(static_cast<double>(j), hoerl_log) *
               std::exp(hoerl_lin * j + drift) *
               std::pow(1.0 + inflation, i + j - 2);
    }

    /// Severity volatility shifts across accident periods through a logistic
    /// step centered at 40% of the triangle; no candidate model lets
    /// dispersion vary with the accident index.
    double severity_sigma_at(int i) const {
        const double center = 0.4 * size;
        const double width = std::max(size / 20.0, 1.0);
        const double f = 1.0 / (1.0 + std::exp(-(i - center) / width));
        return severity_sigma * (1.0 + severity_gradient * (f - 0.5));
    }

    double zero_probability(int j) const {
        return 1.0 / (1.0 + std::exp(-(zero_intercept + zero_slope * j)));
    }

    double closure_hazard(int j) const {
        return 1.0 / (1.0 + std::exp(-(closure_intercept + closure_slope * j)));
    }
};

struct SyntheticDataset {
    Triangle paid;
    Triangle reported;
    Triangle finalised;
    SynthConfig config;
};

/// Full-square paid, reported-count and finalised-count triangles. In
/// deterministic mode every random quantity is replaced by its expectation
/// and the zero process is disabled, so paid amounts equal cell_mean exactly.
inline SyntheticDataset generate_synthetic_dataset(const SynthConfig& cfg) {
    cfg.validate();
    const int n = cfg.size;
    std::mt19937_64 rng(detail::split_seed(cfg.seed));

    // Reporting pattern over development: geometric decay, normalized.
    std::vector<double> report_p(n);
    double rp_sum = 0.0;
    for (int j = 1; j <= n; ++j) {
        report_p[j - 1] = std::exp(-0.4 * j);
        rp_sum += report_p[j - 1];
    }
    for (double& p : report_p) p /= rp_sum;

    std::vector<std::tuple<int, int, double>> paid_rows, rep_rows, fin_rows;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 1; i <= n; ++i) {
        double total_count = cfg.count_mean;
        if (!cfg.deterministic)
            total_count = std::poisson_distribution<long>(cfg.count_mean)(rng);

        // Reported counts: multinomial split via sequential binomials.
        std::vector<double> reported(n, 0.0);
        double remaining_rep = total_count, mass = 1.0;
        for (int j = 1; j <= n; ++j) {
            const double p = mass > 0.0 ? std::min(report_p[j - 1] / mass, 1.0) : 1.0;
            double draw = remaining_rep * p;
            if (!cfg.deterministic && remaining_rep > 0.0)
                draw = std::binomial_distribution<long>(
                    static_cast<long>(remaining_rep), p)(rng);
            reported[j - 1] = draw;
            remaining_rep -= draw;
            mass -= report_p[j - 1];
        }

        // Finalisations: binomial decay of the open count.
        std::vector<double> fin(n, 0.0), fin_mean(n, 0.0);
        double open_actual = total_count, open_expected = cfg.count_mean;
        for (int j = 1; j <= n; ++j) {
            const double p = cfg.closure_hazard(j);
            fin_mean[j - 1] = open_expected * p;
            open_expected -= fin_mean[j - 1];
            double draw = open_actual * p;
            if (!cfg.deterministic && open_actual > 0.0)
                draw = std::binomial_distribution<long>(
                    static_cast<long>(open_actual), p)(rng);
            fin[j - 1] = draw;
            open_actual -= draw;
        }

        for (int j = 1; j <= n; ++j) {
            const double m = cfg.cell_mean(i, j);
            double y = m;
            if (!cfg.deterministic) {
                const double nu = cfg.zero_probability(j);
                if (unif(rng) < nu) {
                    y = 0.0;
                } else {
                    const double sig = cfg.severity_sigma_at(i);
                    double severity = 1.0;
                    if (sig > 0.0) {
                        severity = std::lognormal_distribution<double>(
                            -0.5 * sig * sig, sig)(rng);
                    }
                    // Add-one smoothing keeps the factor mean-one and avoids
                    // structural zeros once finalisations die out.
                    const double closure =
                        (fin[j - 1] + 1.0) / (fin_mean[j - 1] + 1.0);
                    y = m / (1.0 - nu) * severity * closure;
                }
            }
            paid_rows.push_back({i, j, y});
            rep_rows.push_back({i, j, reported[j - 1]});
            fin_rows.push_back({i, j, fin[j - 1]});
        }
    }

    SyntheticDataset out{ingest_triangle(paid_rows), ingest_triangle(rep_rows),
                         ingest_triangle(fin_rows), cfg};
    return out;
}

}  // namespace adlp
