#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "adlp/glm.hpp"

using namespace adlp;
using Catch::Approx;

namespace {

Triangle make_triangle(int n, const std::function<double(int, int)>& value,
                       bool full_square = false) {
    std::vector<std::tuple<int, int, double>> rows;
    for (int i = 1; i <= n; ++i)
        for (int j = 1; j <= n; ++j)
            if (full_square || i + j - 1 <= n) rows.push_back({i, j, value(i, j)});
    return ingest_triangle(rows);
}

// Development-factor chain ladder; returns predicted incremental amounts for
// the lower triangle.
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
    std::vector<double> factor(n + 1, 1.0);
    for (int j = 1; j < n; ++j) {
        double num = 0.0, den = 0.0;
        for (int i = 1; i <= n - j; ++i) {
            num += cum[i][j + 1];
            den += cum[i][j];
        }
        factor[j] = num / den;
    }
    std::map<std::pair<int, int>, double> pred;
    for (int i = 2; i <= n; ++i) {
        double latest = cum[i][n - i + 1];
        for (int j = n - i + 2; j <= n; ++j) {
            double next = latest * factor[j - 1];
            pred[{i, j}] = next - latest;
            latest = next;
        }
    }
    return pred;
}

std::vector<Cell> all_upper(const Triangle& tri) { return tri.upper_cells(); }

}  // namespace

TEST_CASE("intercept-only Poisson recovers the sample mean") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
    Eigen::VectorXd y(3);
    y << 2, 4, 6;
    auto fit = fit_irls(X, y, GlmFamily::Poisson);
    REQUIRE(std::exp(fit.coef[0]) == Approx(4.0).epsilon(1e-8));
}

TEST_CASE("log-normal cross-classified fit equals OLS on log responses") {
    std::mt19937_64 rng(42);
    std::lognormal_distribution<double> noise(0.0, 0.4);
    auto tri = make_triangle(
        6, [&](int i, int j) { return 100.0 * std::exp(0.1 * i - 0.2 * j) * noise(rng); });
    auto cells = all_upper(tri);
    auto design = detail::build_design(ModelStructure::CC, 6, cells);
    Eigen::VectorXd ly(cells.size());
    for (size_t r = 0; r < cells.size(); ++r) ly[r] = std::log(tri.at(cells[r]));
    auto fit = fit_irls(design.X, ly, GlmFamily::Gaussian);
    // Oracle: ordinary least squares via the normal equations.
    Eigen::VectorXd ols =
        (design.X.transpose() * design.X).ldlt().solve(design.X.transpose() * ly);
    REQUIRE((fit.coef - ols).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("cross-classified ODP predictions equal chain ladder") {
    std::mt19937_64 rng(7);
    std::gamma_distribution<double> g(5.0, 20.0);
    auto tri = make_triangle(5, [&](int, int) { return g(rng); });
    auto model = fit_glm_component({ModelStructure::CC, Family::ODP},
                                   {&tri, nullptr, nullptr}, all_upper(tri));
    auto cl = chain_ladder(tri);
    for (const auto& [cell, expected] : cl) {
        const double mu = model->predict({cell.first, cell.second}).mean();
        REQUIRE(mu == Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("score equations vanish at the Poisson MLE") {
    std::mt19937_64 rng(11);
    std::gamma_distribution<double> g(4.0, 50.0);
    auto tri = make_triangle(7, [&](int, int) { return g(rng); });
    auto cells = all_upper(tri);
    auto design = detail::build_design(ModelStructure::CC, 7, cells);
    Eigen::VectorXd y(cells.size());
    for (size_t r = 0; r < cells.size(); ++r) y[r] = tri.at(cells[r]);
    auto fit = fit_irls(design.X, y, GlmFamily::Poisson);
    Eigen::VectorXd score = design.X.transpose() * (y - fit.mu);
    REQUIRE(score.cwiseAbs().maxCoeff() < 1e-6 * y.sum());
}

TEST_CASE("rank-deficient design rejected") {
    Eigen::MatrixXd X(4, 2);
    X << 1, 2, 1, 2, 1, 2, 1, 2;
    Eigen::VectorXd y(4);
    y << 1, 2, 3, 4;
    REQUIRE_THROWS_AS(fit_irls(X, y, GlmFamily::Poisson), NumericError);
}

TEST_CASE("dispersion: perfect fit is flagged, residual doubling quadruples it") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(5, 1);
    Eigen::VectorXd y = Eigen::VectorXd::Constant(5, 3.0);
    auto fit = fit_irls(X, y, GlmFamily::Poisson);
    REQUIRE_THROWS_AS(estimate_dispersion(fit), NumericError);

    Eigen::VectorXd y1(5), y2(5);
    y1 << 8, 12, 10, 9, 11;
    y2 << 6, 14, 10, 8, 12;  // residuals doubled around the same mean
    auto f1 = fit_irls(X, y1, GlmFamily::Poisson);
    auto f2 = fit_irls(X, y2, GlmFamily::Poisson);
    REQUIRE(estimate_dispersion(f2) == Approx(4.0 * estimate_dispersion(f1)).epsilon(1e-9));
}

TEST_CASE("Poisson data has unit dispersion up to sampling error") {
    std::mt19937_64 rng(5);
    auto tri = make_triangle(20, [&](int i, int j) {
        const double mu = 200.0 * std::exp(-0.15 * j) * (1.0 + 0.02 * i);
        return static_cast<double>(std::poisson_distribution<long>(mu)(rng));
    });
    auto cells = all_upper(tri);
    auto design = detail::build_design(ModelStructure::CC, 20, cells);
    Eigen::VectorXd y(cells.size());
    for (size_t r = 0; r < cells.size(); ++r) y[r] = tri.at(cells[r]);
    auto fit = fit_irls(design.X, y, GlmFamily::Poisson);
    REQUIRE(estimate_dispersion(fit) == Approx(1.0).margin(0.3));
}

TEST_CASE("calendar-trend model absorbs a constant inflation rate") {
    const double c = 0.04;
    std::mt19937_64 rng(13);
    std::lognormal_distribution<double> noise(-0.005, 0.1);
    auto tri = make_triangle(12, [&](int i, int j) {
        return 500.0 * std::exp(-0.2 * j) * std::exp(c * (i + j - 1)) * noise(rng);
    });
    auto cells = all_upper(tri);
    auto design = detail::build_design(ModelStructure::Cal, 12, cells);
    Eigen::VectorXd y(cells.size());
    for (size_t r = 0; r < cells.size(); ++r) y[r] = tri.at(cells[r]);
    auto fit = fit_irls(design.X, y, GlmFamily::Poisson);
    // Last coefficient is ln(gamma), the per-period calendar trend.
    REQUIRE(fit.coef[12] == Approx(c).margin(0.01));
}

TEST_CASE("exact multiplicative triangle recovers row and column effects") {
    std::vector<double> alpha = {1.0, 1.3, 0.8, 1.6, 1.1};
    std::vector<double> beta = {400, 250, 120, 60, 20};
    auto tri = make_triangle(5, [&](int i, int j) { return alpha[i - 1] * beta[j - 1]; });
    auto cells = all_upper(tri);
    auto design = detail::build_design(ModelStructure::CC, 5, cells);
    Eigen::VectorXd y(cells.size());
    for (size_t r = 0; r < cells.size(); ++r) y[r] = tri.at(cells[r]);
    auto fit = fit_irls(design.X, y, GlmFamily::Poisson);
    // Corner constraint alpha_1 = 1: development coefficients are ln(beta_j).
    for (int j = 1; j <= 5; ++j)
        REQUIRE(std::exp(fit.coef[j - 1]) == Approx(beta[j - 1]).epsilon(1e-6));
    for (int i = 2; i <= 5; ++i)
        REQUIRE(std::exp(fit.coef[5 + i - 2]) == Approx(alpha[i - 1]).epsilon(1e-6));
}

TEST_CASE("PPCI with equal completed counts is constant across accident periods") {
    auto paid = make_triangle(6, [&](int, int j) { return 300.0 * std::exp(-0.3 * j); });
    auto counts = make_triangle(6, [&](int, int j) { return std::max(60.0 - 10.0 * j, 5.0); });
    auto model = fit_glm_component({ModelStructure::PPCI, Family::ODP},
                                   {&paid, &counts, nullptr}, all_upper(paid));
    for (int j = 1; j <= 6; ++j) {
        const double base = model->predict({2, j}).mean();
        for (int i = 3; i <= 6; ++i)
            REQUIRE(model->predict({i, j}).mean() == Approx(base).epsilon(1e-6));
    }
}

TEST_CASE("PPCI without counts rejected") {
    auto paid = make_triangle(5, [](int, int) { return 10.0; });
    REQUIRE_THROWS_AS(fit_glm_component({ModelStructure::PPCI, Family::ODP},
                                        {&paid, nullptr, nullptr}, all_upper(paid)),
                      ConfigError);
}

TEST_CASE("zero-adjusted gamma: fitted zero mass increases with development") {
    std::mt19937_64 rng(23);
    std::gamma_distribution<double> g(4.0, 100.0);
    auto tri = make_triangle(15, [&](int, int j) {
        const double pz = 1.0 / (1.0 + std::exp(-(-3.0 + 0.3 * j)));
        if (std::bernoulli_distribution(pz)(rng)) return 0.0;
        return g(rng);
    });
    auto model = fit_glm_component({ModelStructure::ZAGA, Family::ZAGA},
                                   {&tri, nullptr, nullptr}, all_upper(tri));
    double prev = -1.0;
    for (int j = 1; j <= 15; ++j) {
        const double nu = model->predict({1, j}).zero_mass();
        REQUIRE(nu > prev);
        prev = nu;
    }
}

TEST_CASE("zero-adjusted log-normal scores the atom and the continuous part") {
    std::mt19937_64 rng(29);
    std::lognormal_distribution<double> ln(4.0, 0.5);
    auto tri = make_triangle(10, [&](int, int j) {
        if (std::bernoulli_distribution(std::min(0.05 * j, 0.5))(rng)) return 0.0;
        return ln(rng);
    });
    auto model = fit_glm_component({ModelStructure::ZALN, Family::ZALN},
                                   {&tri, nullptr, nullptr}, all_upper(tri));
    const auto& d = model->predict({2, 3});
    REQUIRE(d.zero_mass() > 0.0);
    REQUIRE(std::isfinite(d.log_density(0.0)));
    REQUIRE(std::isfinite(d.log_density(50.0)));
}

TEST_CASE("PPCF degenerate case: constant severity and deterministic counts") {
    const int n = 6;
    const double severity = 50.0;
    // Finalisation counts follow an exactly logistic hazard in development, so
    // the binomial stage recovers the pattern and forecasts it without error.
    std::vector<double> fin_pattern(n);
    double remaining = 100.0, cum = 0.0;
    for (int j = 1; j <= n; ++j) {
        const double p = 1.0 / (1.0 + std::exp(-(-2.0 + 1.2 * j)));
        fin_pattern[j - 1] = remaining * p;
        remaining -= fin_pattern[j - 1];
        cum += fin_pattern[j - 1];
    }
    auto fin = make_triangle(n, [&](int, int j) { return fin_pattern[j - 1]; }, true);
    auto rep = make_triangle(n, [&](int, int j) { return j == 1 ? 100.0 : 0.0; }, true);
    auto paid =
        make_triangle(n, [&](int, int j) { return severity * fin_pattern[j - 1]; }, true);
    PpcfDiagnostics diag;
    auto model = fit_ppcf({&paid, &rep, &fin}, paid.upper_cells(), &diag);
    for (const Cell& c : paid.lower_cells())
        REQUIRE(model->predict(c).mean() ==
                Approx(severity * fin_pattern[c.development - 1]).epsilon(1e-4));
    // Operational time after n periods matches the cumulative hazard exactly.
    REQUIRE(diag.operational_time[1][n] == Approx(cum / 100.0).epsilon(1e-8));
}

TEST_CASE("PPCF severity slope is negative for late-closing small claims") {
    const int n = 10;
    std::mt19937_64 rng(31);
    std::vector<double> fin_pattern = {30, 25, 15, 10, 8, 5, 3, 2, 1, 1};
    auto fin = make_triangle(n, [&](int, int j) { return fin_pattern[j - 1]; }, true);
    auto rep = make_triangle(n, [&](int, int j) { return j == 1 ? 100.0 : 0.0; }, true);
    auto paid = make_triangle(n, [&](int i, int j) {
        // Per-claim severity decays sharply with operational time.
        double cum = 0.0;
        for (int k = 0; k < j; ++k) cum += fin_pattern[k];
        const double optime = cum / 100.0;
        std::lognormal_distribution<double> noise(-0.02, 0.2);
        return fin_pattern[j - 1] * 80.0 * std::exp(-2.0 * optime) * noise(rng);
    }, true);
    PpcfDiagnostics diag;
    fit_ppcf({&paid, &rep, &fin}, paid.upper_cells(), &diag);
    REQUIRE(diag.severity_slope < 0.0);
}

TEST_CASE("invalid structure/family combinations rejected") {
    REQUIRE_THROWS_AS((ModelSpec{ModelStructure::PPCI, Family::Gamma}).validate(),
                      ConfigError);
    REQUIRE_THROWS_AS((ModelSpec{ModelStructure::CC, Family::Normal}).validate(),
                      ConfigError);
    REQUIRE_THROWS_AS((ModelSpec{ModelStructure::ZAGA, Family::Gamma}).validate(),
                      ConfigError);
}
