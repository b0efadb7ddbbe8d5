// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria are exact analytic checks, oracle comparisons, and
// directional reproductions of the combination results on generated data.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "adlp/experiment.hpp"

using namespace adlp;

namespace {

int failures = 0;

void report(int id, const std::string& what, bool pass,
            const std::string& detail) {
    std::printf("criterion %2d [%s] %s (%s)\n", id, pass ? "PASS" : "FAIL",
                what.c_str(), detail.c_str());
    if (!pass) ++failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// Random complete triangle with positive cells.
Triangle random_triangle(int n, std::mt19937_64& rng) {
    std::lognormal_distribution<double> sev(4.0, 0.4);
    std::vector<double> values(n * n, 0.0);
    Triangle tri(n, values, false);
    std::vector<double> out(n * n, 0.0);
    for (int i = 1; i <= n; ++i)
        for (int j = 1; j <= n - i + 1; ++j)
            out[(i - 1) * n + (j - 1)] =
                sev(rng) * std::exp(-0.3 * j) * (1.0 + 0.05 * i);
    return Triangle(n, out, false);
}

// Development-factor chain ladder on cumulative claims.
std::map<std::pair<int, int>, double> chain_ladder(const Triangle& tri) {
    const int n = tri.size();
    std::vector<std::vector<double>> cum(n + 1, std::vector<double>(n + 1, 0.0));
    for (int i = 1; i <= n; ++i) {
        double acc = 0.0;
        for (int j = 1; j <= n - i + 1; ++j) {
            acc += tri.at({i, j});
            cum[i][j] = acc;
        }
    }
    std::vector<double> f(n + 1, 1.0);
    for (int j = 1; j < n; ++j) {
        double num = 0.0, den = 0.0;
        for (int i = 1; i <= n - j; ++i) {
            num += cum[i][j + 1];
            den += cum[i][j];
        }
        f[j] = num / den;
    }
    std::map<std::pair<int, int>, double> pred;
    for (int i = 2; i <= n; ++i) {
        double prev = cum[i][n - i + 1];
        for (int j = n - i + 2; j <= n; ++j) {
            double next = prev * f[j - 1];
            pred[{i, j}] = next - prev;
            prev = next;
        }
    }
    return pred;
}

void criterion_1() {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(42);
    double worst = 0.0;
    auto check = [&](int n) {
        Triangle tri = random_triangle(n, rng);
        ComponentInputs in{&tri, &tri, &tri};
        auto cc = fit_glm_component({ModelStructure::CC, Family::ODP}, in,
                                    tri.upper_cells());
        for (const auto& [cell, oracle] : chain_ladder(tri)) {
            const double mu = cc->predict({cell.first, cell.second}).mean();
            worst = std::max(worst, std::abs(mu - oracle) / std::abs(oracle));
        }
    };
    for (int k = 0; k < 10; ++k) check(6);
    check(20);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    report(1, "chain-ladder equivalence of CC/ODP", worst < 1e-6 && secs < 5.0,
           "max rel err " + fmt(worst) + ", " + fmt(secs) + "s");
}

Eigen::MatrixXd random_level1(int n, int M, std::mt19937_64& rng) {
    std::normal_distribution<double> obs(0.0, 1.0);
    std::uniform_real_distribution<double> mu(-1.0, 1.0);
    std::uniform_real_distribution<double> sd(0.5, 2.0);
    Eigen::MatrixXd ld(n, M);
    std::vector<double> m(M), s(M);
    for (int c = 0; c < M; ++c) {
        m[c] = mu(rng);
        s[c] = sd(rng);
    }
    for (int r = 0; r < n; ++r) {
        const double y = obs(rng);
        for (int c = 0; c < M; ++c) {
            const double z = (y - m[c]) / s[c];
            ld(r, c) = -0.5 * std::log(2.0 * M_PI * s[c] * s[c]) - 0.5 * z * z;
        }
    }
    return ld;
}

double mixture_score(const Eigen::MatrixXd& ld, const Eigen::VectorXd& w) {
    double total = 0.0;
    for (int r = 0; r < ld.rows(); ++r) {
        double mix = 0.0;
        for (int c = 0; c < ld.cols(); ++c) mix += w[c] * std::exp(ld(r, c));
        total += std::log(mix);
    }
    return total / ld.rows();
}

void criterion_2() {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(7);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        auto ld = random_level1(30, 2, rng);
        const double mm = mixture_score(ld, mm_optimize(ld));
        double best = -1e300;
        for (int g = 0; g <= 1000; ++g) {
            Eigen::VectorXd w(2);
            w << g / 1000.0, 1.0 - g / 1000.0;
            best = std::max(best, mixture_score(ld, w));
        }
        worst = std::max(worst, best - mm);
    }
    for (int k = 0; k < 20; ++k) {
        auto ld = random_level1(30, 3, rng);
        const double mm = mixture_score(ld, mm_optimize(ld));
        double best = -1e300;
        for (int a = 0; a <= 100; ++a)
            for (int b = 0; b <= 100 - a; ++b) {
                Eigen::VectorXd w(3);
                w << a / 100.0, b / 100.0, 1.0 - (a + b) / 100.0;
                best = std::max(best, mixture_score(ld, w));
            }
        worst = std::max(worst, best - mm);
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    report(2, "MM optimality vs exhaustive grid", worst < 1e-3 && secs < 30.0,
           "max grid advantage " + fmt(worst) + ", " + fmt(secs) + "s");
}

void criterion_3() {
    // mm_optimize asserts per-iteration monotonicity and simplex membership
    // internally and throws on any violation; here we drive it across many
    // random instances, including near-degenerate ones, and re-check the
    // returned weights.
    std::mt19937_64 rng(99);
    bool ok = true;
    std::string detail = "200 optimizations clean";
    for (int k = 0; k < 200 && ok; ++k) {
        const int M = 2 + static_cast<int>(k % 7);
        auto ld = random_level1(10 + k % 40, M, rng);
        if (k % 5 == 0) ld.col(0).array() -= 200.0;  // near-dominated component
        try {
            const Eigen::VectorXd w = mm_optimize(ld);
            double sum = 0.0;
            for (int c = 0; c < M; ++c) {
                sum += w[c];
                if (w[c] < -1e-12) ok = false;
            }
            if (std::abs(sum - 1.0) > 1e-12) ok = false;
            if (!ok) detail = "simplex violation at instance " + std::to_string(k);
        } catch (const std::exception& err) {
            ok = false;
            detail = std::string("threw: ") + err.what();
        }
    }
    report(3, "MM monotonicity and simplex preservation", ok, detail);
}

// Shared small-experiment helper: component set that stays cheap.
std::vector<std::shared_ptr<ComponentModel>> small_components(
    const DatasetBundle& data, const std::vector<Cell>& cells) {
    const ComponentInputs in{&data.paid, &data.reported, &data.finalised};
    return fit_components(
        {"CC-ODP", "CC-Gamma", "CC-LogNormal", "HC-ODP", "ZAGA"}, in, cells);
}

DatasetBundle small_dataset(std::uint64_t seed, int size = 12) {
    SynthConfig sc;
    sc.size = size;
    sc.seed = seed;
    auto ds = generate_synthetic_dataset(sc);
    return {"d", ds.paid, ds.reported, ds.finalised, true};
}

void criterion_4() {
    int violations = 0, cells_checked = 0;
    for (std::uint64_t seed = 31; seed < 35; ++seed) {
        auto data = small_dataset(seed);
        auto part = make_partition(data.paid, {{6}, 3});
        auto comps = small_components(data, part.train);
        std::vector<Ensemble> fitted = {
            fit_slp(comps, data.paid, part), fit_adlp(comps, data.paid, part),
            fit_ew(comps, part.triangle_size),
            select_bmv(comps, data.paid, part)};
        for (const auto& e : fitted)
            for (const auto& cells : {part.validation, data.paid.lower_cells()})
                for (const Cell& c : cells) {
                    const double y = data.paid.at(c);
                    double mn = 1e300;
                    for (const auto& m : e.components)
                        mn = std::min(mn, m->predict(c).log_density(y));
                    if (e.log_density(c, y) < mn - 1e-12) ++violations;
                    ++cells_checked;
                }
    }
    report(4, "downside insurance bound", violations == 0,
           std::to_string(cells_checked) + " cells, " +
               std::to_string(violations) + " violations");
}

void criterion_5() {
    int exact = 0;
    for (std::uint64_t seed = 51; seed < 61; ++seed) {
        auto data = small_dataset(seed);
        auto part = make_partition(data.paid, {{6}, 3});
        auto comps = small_components(data, part.train);
        auto slp = fit_slp(comps, data.paid, part);
        auto adlp = fit_adlp(comps, data.paid, part);
        bool same = adlp.bands() == 2;
        for (int m = 0; same && m < slp.weights[0].size(); ++m)
            same = adlp.weights[1][m] == slp.weights[0][m];
        if (same) ++exact;
    }
    report(5, "ADLP last-subset weights equal SLP weights", exact == 10,
           std::to_string(exact) + "/10 datasets bit-exact");
}

double normal_crps_closed(double y) {
    const double pdf = std::exp(-0.5 * y * y) / std::sqrt(2.0 * M_PI);
    const double cdf = 0.5 * std::erfc(-y / std::sqrt(2.0));
    return y * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(M_PI);
}

void criterion_6() {
    auto normal_cdf = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
    bool ok = true;
    std::string detail;
    double coarse_err = 0.0, fine_err = 0.0;
    for (double y : {-1.0, 0.0, 2.0}) {
        // Keep y at the same fractional cell position at both resolutions so
        // the first-order discretization error is comparable.
        auto grid = [&](int steps) {
            const double dz = 16.0 / steps;
            return CrpsConfig{y - (steps / 2 + 0.25) * dz,
                              y + (steps / 2 - 0.25) * dz, steps};
        };
        const double exact = normal_crps_closed(y);
        const double c = crps(normal_cdf, y, grid(2000));
        const double f = crps(normal_cdf, y, grid(4000));
        const double rel = std::abs(c - exact) / std::abs(exact);
        if (rel >= 0.01) ok = false;
        coarse_err += std::abs(c - exact);
        fine_err += std::abs(f - exact);
        detail += "y=" + fmt(y) + " rel " + fmt(rel) + "; ";
    }
    // At y = 0 the CDF jump magnitude |1 - 2F(y)| vanishes, so the halving
    // check applies to the aggregate error over the test points.
    const double ratio = fine_err / coarse_err;
    if (ratio < 0.3 || ratio > 0.7) ok = false;
    report(6, "discretized CRPS vs closed-form Normal", ok,
           detail + "halving ratio " + fmt(ratio));
}

void criterion_7() {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> noise(0.0, 1.0);
    int rejections = 0;
    const int sims = 400, n = 100;
    for (int s = 0; s < sims; ++s) {
        std::vector<double> f(n), g(n);
        for (int t = 0; t < n; ++t) {
            f[t] = noise(rng);
            g[t] = noise(rng);
        }
        auto res = adjusted_dm_test(f, g);
        if (!res.degenerate && res.reject) ++rejections;
    }
    const double rate = static_cast<double>(rejections) / sims;
    report(7, "adjusted DM size under the null", rate >= 0.02 && rate <= 0.08,
           "rejection rate " + fmt(rate));
}

void criterion_8() {
    // Single Normal(100, 10^2) cell.
    Ensemble single;
    single.components = {std::make_shared<ComponentModel>(
        "N", 1,
        std::vector<PredictiveDistribution>{
            PredictiveDistribution(Family::Normal, 100.0, 100.0)})};
    single.weights = {Eigen::VectorXd::Ones(1)};
    single.band_start = {1};
    single.band_end = {1};
    auto est = simulate_reserve_quantile(single, {{1, 1}}, 100000, 0.75, 5);
    const bool q_ok = std::abs(est.quantile_estimate - 106.745) < 0.15;

    // Two cells, two components per cell: reserve is a mixture convolution.
    Ensemble mix;
    mix.components = {
        std::make_shared<ComponentModel>(
            "A", 2,
            std::vector<PredictiveDistribution>{
                PredictiveDistribution(Family::Normal, 100.0, 25.0),
                PredictiveDistribution(Family::Normal, 60.0, 16.0),
                PredictiveDistribution(Family::Normal, 0.0, 1.0),
                PredictiveDistribution(Family::Normal, 0.0, 1.0)}),
        std::make_shared<ComponentModel>(
            "B", 2,
            std::vector<PredictiveDistribution>{
                PredictiveDistribution(Family::Normal, 140.0, 36.0),
                PredictiveDistribution(Family::Normal, 80.0, 49.0),
                PredictiveDistribution(Family::Normal, 0.0, 1.0),
                PredictiveDistribution(Family::Normal, 0.0, 1.0)})};
    Eigen::VectorXd w(2);
    w << 0.7, 0.3;
    mix.weights = {w};
    mix.band_start = {1};
    mix.band_end = {2};
    const std::vector<Cell> cells = {{1, 1}, {1, 2}};
    auto est2 = simulate_reserve_quantile(mix, cells, 100000, 0.75, 17);

    // Oracle CDF of the sum: each cell independently draws its component, so
    // the sum is a 4-part mixture of normal convolutions.
    auto mix_cdf = [&](double z) {
        auto ncdf = [](double x, double m, double v) {
            return 0.5 * std::erfc(-(x - m) / std::sqrt(2.0 * v));
        };
        return 0.49 * ncdf(z, 160.0, 41.0) + 0.21 * ncdf(z, 180.0, 74.0) +
               0.21 * ncdf(z, 200.0, 52.0) + 0.09 * ncdf(z, 220.0, 85.0);
    };
    std::vector<double> sorted = est2.sorted;
    double ks = 0.0;
    const int N = static_cast<int>(sorted.size());
    for (int k = 0; k < N; ++k) {
        const double F = mix_cdf(sorted[k]);
        ks = std::max(ks, std::abs(F - (k + 1.0) / N));
        ks = std::max(ks, std::abs(F - static_cast<double>(k) / N));
    }
    report(8, "reserve quantile simulation", q_ok && ks < 0.02,
           "q75 " + fmt(est.quantile_estimate) + ", KS " + fmt(ks));
}

struct C9Output {
    std::string scores_csv;
    int slp_ge_bmv = 0;
    int best_mid_ge_slp = 0;
    double pooled_mid = 0.0, pooled_extreme_lo = 0.0, pooled_extreme_hi = 0.0;
    int datasets = 0;
};

C9Output run_c9_pipeline(std::uint64_t master_seed) {
    const std::vector<int> mid_splits = {13, 15, 17, 19};
    const std::vector<int> all_splits = {3, 13, 15, 17, 19, 33};
    C9Output out;
    out.scores_csv = "dataset,strategy,mean_log_score\n";
    std::map<int, double> pooled_split;

    for (int d = 0; d < 20; ++d) {
        SynthConfig sc;
        sc.size = 40;
        sc.seed = master_seed + static_cast<std::uint64_t>(d);
        auto ds = generate_synthetic_dataset(sc);
        DatasetBundle data{"dataset_" + std::to_string(d + 1), ds.paid,
                           ds.reported, ds.finalised, true};
        auto base = make_partition(data.paid, {{}, 3});
        const ComponentInputs in{&data.paid, &data.reported, &data.finalised};
        auto val_comps = fit_components(all_model_names(), in, base.train);
        auto full_comps =
            fit_components(all_model_names(), in, data.paid.upper_cells());
        const auto lower = data.paid.lower_cells();

        auto score_of = [&](Ensemble e) {
            e.components = full_comps;
            return mean_log_score(log_scores(e, data.paid, lower, "c9"));
        };
        const double slp = score_of(fit_slp(val_comps, data.paid, base));
        const double bmv = score_of(select_bmv(val_comps, data.paid, base));
        out.scores_csv += data.name + ",SLP," + format_value(slp) + "\n";
        out.scores_csv += data.name + ",BMV," + format_value(bmv) + "\n";
        if (slp >= bmv) ++out.slp_ge_bmv;

        double best_mid = -1e300;
        for (int split : all_splits) {
            auto part = make_partition(data.paid, {{split}, 3});
            const double s = score_of(fit_adlp(val_comps, data.paid, part));
            pooled_split[split] += s;
            out.scores_csv += data.name + ",ADLP_" + std::to_string(split) +
                              "," + format_value(s) + "\n";
            if (std::find(mid_splits.begin(), mid_splits.end(), split) !=
                mid_splits.end())
                best_mid = std::max(best_mid, s);
        }
        if (best_mid >= slp) ++out.best_mid_ge_slp;
        ++out.datasets;
    }
    for (int split : mid_splits) out.pooled_mid += pooled_split[split] / 20.0;
    out.pooled_mid /= static_cast<double>(mid_splits.size());
    out.pooled_extreme_lo = pooled_split[3] / 20.0;
    out.pooled_extreme_hi = pooled_split[33] / 20.0;
    return out;
}

void criterion_9_and_12() {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t master_seed = 424242;
    auto a = run_c9_pipeline(master_seed);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    const bool slp_ok = a.slp_ge_bmv >= 14;
    const bool mid_ok = a.best_mid_ge_slp >= 14;
    const bool curve_ok = a.pooled_mid > a.pooled_extreme_lo &&
                          a.pooled_mid > a.pooled_extreme_hi;
    report(9, "directional combination results on 20 datasets",
           slp_ok && mid_ok && curve_ok && secs < 1200.0,
           "SLP>=BMV " + std::to_string(a.slp_ge_bmv) + "/20, mid ADLP>=SLP " +
               std::to_string(a.best_mid_ge_slp) + "/20, curve mid " +
               fmt(a.pooled_mid) + " vs AP3 " + fmt(a.pooled_extreme_lo) +
               " AP33 " + fmt(a.pooled_extreme_hi) + ", " + fmt(secs) + "s");

    auto b = run_c9_pipeline(master_seed);
    report(12, "byte-identical scores on rerun", a.scores_csv == b.scores_csv,
           std::to_string(a.scores_csv.size()) + " bytes compared");
}

void criterion_10() {
    std::mt19937_64 rng(64);
    std::normal_distribution<double> noise(0.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const int n = 20 + k % 30, M = 2 + k % 5;
        Eigen::MatrixXd means(n, M);
        Eigen::VectorXd y(n), w(M);
        for (int r = 0; r < n; ++r) {
            y[r] = noise(rng);
            for (int c = 0; c < M; ++c) means(r, c) = noise(rng);
        }
        double sum = 0.0;
        for (int c = 0; c < M; ++c) {
            w[c] = std::abs(noise(rng)) + 0.01;
            sum += w[c];
        }
        w /= sum;
        worst = std::max(
            worst,
            std::abs(mse_variance_decomposition(means, w, y).identity_residual));
    }
    report(10, "MSE/disagreement identity", worst < 1e-10,
           "max residual " + fmt(worst));
}

void criterion_11() {
    int ok_count = 0;
    std::string detail;
    for (std::uint64_t seed = 71; seed < 76; ++seed) {
        auto data = small_dataset(seed);
        auto part = make_partition(data.paid, {{6}, 3});
        auto comps = small_components(data, part.train);
        auto e = fit_slp(comps, data.paid, part);
        const auto lower = data.paid.lower_cells();
        double analytic = 0.0;
        for (const Cell& c : lower) analytic += e.mean(c);
        auto est = simulate_reserve_quantile(e, lower, 20000, 0.75, seed);
        double mean = 0.0;
        for (double r : est.replicates) mean += r;
        mean /= est.replicates.size();
        double var = 0.0;
        for (double r : est.replicates) var += (r - mean) * (r - mean);
        const double se = std::sqrt(var / est.replicates.size() /
                                    est.replicates.size());
        if (std::abs(mean - analytic) <= 3.0 * se) ++ok_count;
        detail += fmt(std::abs(mean - analytic) / se) + " ";
    }
    report(11, "Lemma 1 reserve aggregation", ok_count == 5,
           "|z| per dataset: " + detail);
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9_and_12();
    criterion_10();
    criterion_11();
    std::printf("%s\n", failures == 0 ? "ALL CRITERIA PASSED"
                                      : "ACCEPTANCE FAILURES PRESENT");
    return failures == 0 ? 0 : 1;
}
