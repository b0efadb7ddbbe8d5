#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "adlp/glm.hpp"

namespace adlp {

namespace detail {

/// Cardinal cubic B-spline with support [0, 4].
inline double bspline4(double t) {
    auto cube = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
    return (cube(t) - 4.0 * cube(t - 1.0) + 6.0 * cube(t - 2.0) -
            4.0 * cube(t - 3.0) + cube(t - 4.0)) / 6.0;
}

/// Basis over integer knots covering indices 1..n; basis k peaks at index k,
/// giving n + 2 functions. Uniform cubic B-splines reproduce linear trends
/// when the coefficients are linear in k.
inline Eigen::MatrixXd bspline_basis(const Eigen::VectorXd& x, int n) {
    const int nb = n + 2;
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(x.size(), nb);
    for (int r = 0; r < x.size(); ++r)
        for (int k = 0; k < nb; ++k) B(r, k) = bspline4(x[r] - k + 2.0);
    return B;
}

inline Eigen::RowVectorXd bspline_row(double x, int n) {
    Eigen::RowVectorXd row(n + 2);
    for (int k = 0; k < n + 2; ++k) row[k] = bspline4(x - k + 2.0);
    return row;
}

/// Squared second differences of the coefficients: D2' D2.
inline Eigen::MatrixXd second_difference_penalty(int nb) {
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(nb - 2, nb);
    for (int r = 0; r < nb - 2; ++r) {
        D(r, r) = 1.0;
        D(r, r + 1) = -2.0;
        D(r, r + 2) = 1.0;
    }
    return D.transpose() * D;
}

inline Eigen::VectorXd solve_penalized(const Eigen::MatrixXd& B,
                                       const Eigen::VectorXd& w,
                                       const Eigen::VectorXd& r, double theta,
                                       const Eigen::MatrixXd& P) {
    Eigen::MatrixXd A = B.transpose() * w.asDiagonal() * B + theta * P;
    return A.ldlt().solve(B.transpose() * w.cwiseProduct(r));
}

}  // namespace detail

inline std::vector<double> default_theta_grid() {
    std::vector<double> grid;
    for (int k = 0; k < 17; ++k) grid.push_back(std::pow(10.0, -4.0 + 0.5 * k));
    return grid;
}

/// Additive penalized-spline model eta_ij = alpha + s_i(i) + s_j(j) with
/// family-specific response scale: Normal fits y on the identity link,
/// LogNormal fits ln y, Gamma uses a log link via local scoring.
struct SplineModel {
    Family family = Family::Normal;
    int size = 0;
    double intercept = 0.0;
    double theta_i = 1.0, theta_j = 1.0;
    double dispersion = 1.0;
    double edf = 0.0;
    int cycles = 0;
    Eigen::VectorXd coef_i, coef_j;
    /// Penalized deviance recorded once per backfitting cycle.
    std::vector<double> objective_trace;

    double smooth_i(double x) const {
        return detail::bspline_row(x, size).dot(coef_i);
    }
    double smooth_j(double x) const {
        return detail::bspline_row(x, size).dot(coef_j);
    }
    double eta(const Cell& c) const {
        return intercept + smooth_i(c.accident) + smooth_j(c.development);
    }

    PredictiveDistribution predictive(const Cell& c) const {
        const double e = eta(c);
        switch (family) {
            case Family::Normal:
                return PredictiveDistribution::normal(e, dispersion);
            case Family::Gamma:
                return PredictiveDistribution::gamma(std::exp(e), dispersion);
            case Family::LogNormal:
                return PredictiveDistribution::log_normal(e, dispersion);
            default:
                throw ConfigError("unsupported spline family");
        }
    }

    std::shared_ptr<ComponentModel> to_component(const std::string& name) const {
        std::vector<PredictiveDistribution> grid;
        grid.reserve(static_cast<size_t>(size) * size);
        for (int i = 1; i <= size; ++i)
            for (int j = 1; j <= size; ++j) grid.push_back(predictive(Cell{i, j}));
        return std::make_shared<ComponentModel>(name, size, std::move(grid));
    }
};

namespace detail {

inline void require_index_coverage(int n, const std::vector<Cell>& cells) {
    std::vector<char> has_i(n + 1, 0), has_j(n + 1, 0);
    for (const Cell& c : cells) {
        has_i[c.accident] = 1;
        has_j[c.development] = 1;
    }
    for (int k = 1; k <= n; ++k)
        if (!has_i[k] || !has_j[k])
            throw ConfigError("training cells must cover every accident and "
                              "development index");
}

struct BackfitResult {
    double alpha = 0.0;
    Eigen::VectorXd ci, cj;
    std::vector<double> trace;
    int cycles = 0;
};

/// Weighted Gaussian backfitting of alpha + B_i c_i + B_j c_j. Each half-cycle
/// is an exact penalized WLS block update, so the penalized residual sum of
/// squares is non-increasing across cycles.
inline BackfitResult backfit_gaussian(const Eigen::MatrixXd& Bi,
                                      const Eigen::MatrixXd& Bj,
                                      const Eigen::VectorXd& z,
                                      const Eigen::VectorXd& w,
                                      double theta_i, double theta_j,
                                      const Eigen::MatrixXd& P) {
    const int nb = static_cast<int>(P.rows());
    BackfitResult res;
    res.ci = Eigen::VectorXd::Zero(nb);
    res.cj = Eigen::VectorXd::Zero(nb);
    const double wsum = w.sum();
    res.alpha = w.dot(z) / wsum;

    Eigen::VectorXd fi = Eigen::VectorXd::Zero(z.size());
    Eigen::VectorXd fj = Eigen::VectorXd::Zero(z.size());
    double prev_obj = std::numeric_limits<double>::infinity();
    const int max_cycles = 50;
    for (int cycle = 0; cycle < max_cycles; ++cycle) {
        res.ci = solve_penalized(Bi, w, z.array() - res.alpha - fj.array(),
                                 theta_i, P);
        fi = Bi * res.ci;
        double shift = w.dot(fi) / wsum;
        res.alpha += shift;
        res.ci.array() -= shift;  // constants lie in the basis span
        fi.array() -= shift;

        res.cj = solve_penalized(Bj, w, z.array() - res.alpha - fi.array(),
                                 theta_j, P);
        fj = Bj * res.cj;
        shift = w.dot(fj) / wsum;
        res.alpha += shift;
        res.cj.array() -= shift;
        fj.array() -= shift;

        Eigen::VectorXd resid = z.array() - res.alpha - fi.array() - fj.array();
        const double obj = w.dot(resid.cwiseProduct(resid)) +
                           theta_i * res.ci.dot(P * res.ci) +
                           theta_j * res.cj.dot(P * res.cj);
        res.trace.push_back(obj);
        res.cycles = cycle + 1;
        if (std::abs(prev_obj - obj) < 1e-6 * (std::abs(obj) + 1.0)) return res;
        prev_obj = obj;
    }
    throw NumericError("spline backfitting failed to converge within 50 cycles");
}

/// Effective degrees of freedom of the converged additive smoother, computed
/// from the joint penalized system in a sum-to-zero reparametrization.
inline double additive_edf(const Eigen::MatrixXd& Bi, const Eigen::MatrixXd& Bj,
                           const Eigen::VectorXd& w, double theta_i,
                           double theta_j, const Eigen::MatrixXd& P) {
    const int nb = static_cast<int>(P.rows());
    // Orthonormal complement of the constant coefficient direction.
    Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(nb, 1);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(ones);
    Eigen::MatrixXd Q = qr.householderQ();
    Eigen::MatrixXd Z = Q.rightCols(nb - 1);

    const int p = 1 + 2 * (nb - 1);
    Eigen::MatrixXd X(Bi.rows(), p);
    X.col(0).setOnes();
    X.middleCols(1, nb - 1) = Bi * Z;
    X.middleCols(nb, nb - 1) = Bj * Z;
    Eigen::MatrixXd XtWX = X.transpose() * w.asDiagonal() * X;
    Eigen::MatrixXd Pen = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd ZPZ = Z.transpose() * P * Z;
    Pen.block(1, 1, nb - 1, nb - 1) = theta_i * ZPZ;
    Pen.block(nb, nb, nb - 1, nb - 1) = theta_j * ZPZ;
    return (XtWX + Pen).ldlt().solve(XtWX).trace();
}

}  // namespace detail

/// Fits the additive P-spline model for a fixed smoothing pair.
inline SplineModel fit_pspline_additive(const Triangle& tri,
                                        const std::vector<Cell>& cells,
                                        Family family, double theta_i,
                                        double theta_j) {
    if (family != Family::Normal && family != Family::Gamma &&
        family != Family::LogNormal)
        throw ConfigError("spline families are Normal, Gamma or LogNormal");
    if (!(theta_i > 0.0) || !(theta_j > 0.0))
        throw ConfigError("smoothing parameters must be positive");
    const int n = tri.size();
    detail::require_index_coverage(n, cells);

    const int m = static_cast<int>(cells.size());
    Eigen::VectorXd xi(m), xj(m), y(m);
    for (int r = 0; r < m; ++r) {
        xi[r] = cells[r].accident;
        xj[r] = cells[r].development;
        y[r] = tri.at(cells[r]);
    }
    Eigen::MatrixXd Bi = detail::bspline_basis(xi, n);
    Eigen::MatrixXd Bj = detail::bspline_basis(xj, n);
    Eigen::MatrixXd P = detail::second_difference_penalty(n + 2);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(m);

    SplineModel model;
    model.family = family;
    model.size = n;
    model.theta_i = theta_i;
    model.theta_j = theta_j;

    detail::BackfitResult bf;
    double deviance = 0.0;
    if (family == Family::Gamma) {
        int floored = 0;
        Eigen::VectorXd yp = detail::positive_response(tri, cells, &floored);
        Eigen::VectorXd eta = yp.array().log();
        double prev_dev = std::numeric_limits<double>::infinity();
        bool converged = false;
        for (int outer = 0; outer < 200 && !converged; ++outer) {
            Eigen::VectorXd mu = eta.array().exp();
            Eigen::VectorXd z = eta.array() + (yp - mu).array() / mu.array();
            bf = detail::backfit_gaussian(Bi, Bj, z, w, theta_i, theta_j, P);
            const Eigen::VectorXd prev_eta = eta;
            for (int r = 0; r < m; ++r)
                eta[r] = std::clamp(
                    bf.alpha + Bi.row(r).dot(bf.ci) + Bj.row(r).dot(bf.cj),
                    -300.0, 300.0);
            mu = eta.array().exp();
            deviance = detail::glm_deviance(GlmFamily::Gamma, yp, mu, w);
            // Damp overshooting scoring steps toward the previous iterate.
            for (int half = 0; half < 30 && outer > 0 && deviance > prev_dev;
                 ++half) {
                eta = 0.5 * (eta + prev_eta);
                mu = eta.array().exp();
                deviance = detail::glm_deviance(GlmFamily::Gamma, yp, mu, w);
            }
            converged = std::abs(prev_dev - deviance) <
                        1e-6 * (std::abs(deviance) + 1.0);
            prev_dev = deviance;
        }
        if (!converged)
            throw NumericError("spline local scoring failed to converge");
        Eigen::VectorXd mu = eta.array().exp();
        double pearson = 0.0;
        for (int r = 0; r < m; ++r) {
            const double res = yp[r] - mu[r];
            pearson += res * res / (mu[r] * mu[r]);
        }
        model.edf = detail::additive_edf(Bi, Bj, w, theta_i, theta_j, P);
        const double dof = m - model.edf;
        if (dof <= 0.0) throw NumericError("spline fit has no residual freedom");
        model.dispersion = std::max(pearson / dof, 1e-8);
    } else {
        Eigen::VectorXd z = y;
        if (family == Family::LogNormal) {
            int floored = 0;
            z = detail::positive_response(tri, cells, &floored).array().log();
        }
        bf = detail::backfit_gaussian(Bi, Bj, z, w, theta_i, theta_j, P);
        Eigen::VectorXd fit = Eigen::VectorXd::Constant(m, bf.alpha);
        fit += Bi * bf.ci + Bj * bf.cj;
        deviance = (z - fit).squaredNorm();
        model.edf = detail::additive_edf(Bi, Bj, w, theta_i, theta_j, P);
        const double dof = m - model.edf;
        if (dof <= 0.0) throw NumericError("spline fit has no residual freedom");
        model.dispersion = std::max(deviance / dof, 1e-8);
    }
    model.intercept = bf.alpha;
    model.coef_i = bf.ci;
    model.coef_j = bf.cj;
    model.objective_trace = bf.trace;
    model.cycles = bf.cycles;
    return model;
}

/// GCV-form generalized approximate cross-validation score of the fitted pair.
inline double gacv_score(const Triangle& tri, const std::vector<Cell>& cells,
                         Family family, double theta_i, double theta_j) {
    SplineModel model = fit_pspline_additive(tri, cells, family, theta_i, theta_j);
    const int m = static_cast<int>(cells.size());
    if (model.edf >= m)
        throw NumericError("smoother influence trace exceeds the sample size");
    double deviance = 0.0;
    if (family == Family::Gamma) {
        for (const Cell& c : cells) {
            const double y = std::max(tri.at(c), 1e-8);
            const double mu = std::exp(model.eta(c));
            deviance += 2.0 * (-std::log(y / mu) + (y - mu) / mu);
        }
    } else {
        for (const Cell& c : cells) {
            double y = tri.at(c);
            if (family == Family::LogNormal) y = std::log(std::max(y, 1e-8));
            const double r = y - model.eta(c);
            deviance += r * r;
        }
    }
    const double denom = 1.0 - model.edf / m;
    return deviance / (m * denom * denom);
}

/// Coordinate descent over the grid: holds one smoothing parameter fixed while
/// the other is minimized, until the pair stabilizes.
inline std::pair<double, double> gacv_select(const std::vector<double>& grid,
                                             const Triangle& tri,
                                             const std::vector<Cell>& cells,
                                             Family family) {
    if (grid.empty()) throw ConfigError("empty smoothing grid");
    std::map<std::pair<int, int>, double> cache;
    auto score = [&](int a, int b) {
        auto key = std::make_pair(a, b);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        double s;
        try {
            s = gacv_score(tri, cells, family, grid[a], grid[b]);
        } catch (const NumericError&) {
            s = std::numeric_limits<double>::infinity();
        }
        cache[key] = s;
        return s;
    };
    const int g = static_cast<int>(grid.size());
    int ai = g / 2, aj = g / 2;
    for (int pass = 0; pass < 10; ++pass) {
        int best_j = aj;
        for (int b = 0; b < g; ++b)
            if (score(ai, b) < score(ai, best_j)) best_j = b;
        int best_i = ai;
        for (int a = 0; a < g; ++a)
            if (score(a, best_j) < score(best_i, best_j)) best_i = a;
        if (best_i == ai && best_j == aj) break;
        ai = best_i;
        aj = best_j;
    }
    if (!std::isfinite(score(ai, aj)))
        throw NumericError("no admissible smoothing parameters on the grid");
    return {grid[ai], grid[aj]};
}

/// Fits the additive P-spline model with GACV-selected smoothing parameters.
inline SplineModel fit_pspline_additive(const Triangle& tri,
                                        const std::vector<Cell>& cells,
                                        Family family) {
    auto [ti, tj] = gacv_select(default_theta_grid(), tri, cells, family);
    return fit_pspline_additive(tri, cells, family, ti, tj);
}

/// Cross-classified mean with a development-varying dispersion spline:
/// Var[Y_ij] = exp(s(j)) on the response scale for Gamma, on the log scale
/// for LogNormal.
struct GamlssModel {
    Family family = Family::Gamma;
    int size = 0;
    Eigen::VectorXd mean_coef;
    Eigen::VectorXd disp_coef;
    double disp_theta = 1.0;

    double mean_eta(const Cell& c) const;
    double log_variance(int j) const {
        return detail::bspline_row(j, size).dot(disp_coef);
    }
    PredictiveDistribution predictive(const Cell& c) const;
    std::shared_ptr<ComponentModel> to_component(const std::string& name) const {
        std::vector<PredictiveDistribution> grid;
        grid.reserve(static_cast<size_t>(size) * size);
        for (int i = 1; i <= size; ++i)
            for (int j = 1; j <= size; ++j) grid.push_back(predictive(Cell{i, j}));
        return std::make_shared<ComponentModel>(name, size, std::move(grid));
    }
};

inline double GamlssModel::mean_eta(const Cell& c) const {
    // Cross-classified row: J development indicators then I-1 accident
    // indicators with the first accident as the corner.
    Eigen::VectorXd row = Eigen::VectorXd::Zero(mean_coef.size());
    row[c.development - 1] = 1.0;
    if (c.accident >= 2) row[size + c.accident - 2] = 1.0;
    return row.dot(mean_coef);
}

inline PredictiveDistribution GamlssModel::predictive(const Cell& c) const {
    const double eta = std::clamp(mean_eta(c), -300.0, 300.0);
    const double v = std::exp(std::clamp(log_variance(c.development), -300.0, 300.0));
    if (family == Family::Gamma) {
        const double mu = std::exp(eta);
        // Keep the implied dispersion finite for extreme variance smooths.
        return PredictiveDistribution::gamma(
            mu, std::clamp(v / (mu * mu), 1e-8, 1e12));
    }
    return PredictiveDistribution::log_normal(eta, std::min(v, 1e12));
}

namespace detail {

/// One-dimensional penalized spline of y on integer index x with GACV-chosen
/// smoothing; the intercept lives in the basis span so no centering is needed.
inline std::pair<Eigen::VectorXd, double> fit_pspline_1d(
    const Eigen::VectorXd& x, const Eigen::VectorXd& y,
    const Eigen::VectorXd& w, int n, const std::vector<double>& grid) {
    Eigen::MatrixXd B = bspline_basis(x, n);
    Eigen::MatrixXd P = second_difference_penalty(n + 2);
    const int m = static_cast<int>(x.size());
    Eigen::MatrixXd BtWB = B.transpose() * w.asDiagonal() * B;
    Eigen::VectorXd BtWy = B.transpose() * w.cwiseProduct(y);
    double best_theta = grid.front();
    double best_score = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_coef;
    for (double theta : grid) {
        Eigen::MatrixXd A = BtWB + theta * P;
        auto llt = A.ldlt();
        Eigen::VectorXd coef = llt.solve(BtWy);
        const double edf = llt.solve(BtWB).trace();
        if (edf >= m) continue;
        Eigen::VectorXd r = y - B * coef;
        const double rss = w.dot(r.cwiseProduct(r));
        const double denom = 1.0 - edf / m;
        const double score = rss / (m * denom * denom);
        if (score < best_score) {
            best_score = score;
            best_theta = theta;
            best_coef = coef;
        }
    }
    if (!best_coef.size())
        throw NumericError("dispersion spline fit failed on the whole grid");
    return {best_coef, best_theta};
}

}  // namespace detail

inline GamlssModel fit_gamlss_lite(const Triangle& tri,
                                   const std::vector<Cell>& cells,
                                   Family family) {
    if (family != Family::Gamma && family != Family::LogNormal)
        throw ConfigError("GAMLSS families are Gamma or LogNormal");
    const int n = tri.size();
    detail::require_index_coverage(n, cells);

    auto design = detail::build_design(ModelStructure::CC, n, cells);
    int floored = 0;
    FittedGlm fit;
    Eigen::VectorXd resp;
    if (family == Family::Gamma) {
        resp = detail::positive_response(tri, cells, &floored);
        fit = fit_irls(design.X, resp, GlmFamily::Gamma);
    } else {
        resp = detail::positive_response(tri, cells, &floored).array().log();
        fit = fit_irls(design.X, resp, GlmFamily::Gaussian);
    }

    // Stage 2: log squared residuals against development period. Squared
    // residuals are leverage adjusted and averaged within each development
    // column before the log, which tames the heavy-tailed noise of individual
    // log squared residuals; cells the saturated mean fit reproduces exactly
    // (hat value near one, e.g. single-cell columns) carry no dispersion
    // information and are dropped.
    const int m = static_cast<int>(cells.size());
    Eigen::MatrixXd XtX = design.X.transpose() * design.X;
    auto solver = XtX.ldlt();
    std::vector<double> col_sum(n + 1, 0.0);
    std::vector<int> col_count(n + 1, 0);
    for (int r = 0; r < m; ++r) {
        const double h = design.X.row(r).dot(
            solver.solve(design.X.row(r).transpose()));
        if (h > 0.99) continue;
        const double res = resp[r] - (family == Family::Gamma
                                          ? fit.mu[r]
                                          : fit.eta[r]);
        col_sum[cells[r].development] += res * res / (1.0 - h);
        ++col_count[cells[r].development];
    }
    std::vector<double> xj_v, lr_v, w_v;
    for (int j = 1; j <= n; ++j) {
        if (!col_count[j]) continue;
        xj_v.push_back(j);
        lr_v.push_back(std::log(col_sum[j] / col_count[j] + 1e-10));
        w_v.push_back(col_count[j]);
    }
    if (xj_v.size() < 4) throw NumericError("too few cells for the dispersion spline");
    Eigen::VectorXd xj = Eigen::Map<Eigen::VectorXd>(xj_v.data(), xj_v.size());
    Eigen::VectorXd lr = Eigen::Map<Eigen::VectorXd>(lr_v.data(), lr_v.size());
    Eigen::VectorXd wv = Eigen::Map<Eigen::VectorXd>(w_v.data(), w_v.size());
    auto [coef, theta] =
        detail::fit_pspline_1d(xj, lr, wv, n, default_theta_grid());

    GamlssModel model;
    model.family = family;
    model.size = n;
    model.mean_coef = fit.coef;
    model.disp_coef = coef;
    model.disp_theta = theta;
    return model;
}

}  // namespace adlp
