#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "adlp/glm.hpp"

namespace adlp {

/// Per-cell component log densities and means over a set of validation cells,
/// in component registry order.
struct Level1Predictions {
    std::vector<std::string> names;
    std::vector<Cell> cells;
    Eigen::MatrixXd log_density;  // cells x M
    Eigen::MatrixXd mean;         // cells x M
    Eigen::VectorXd observed;
};

inline Level1Predictions build_level1(
    const std::vector<std::shared_ptr<ComponentModel>>& components,
    const Triangle& tri, const std::vector<Cell>& cells) {
    if (components.empty()) throw ConfigError("no component models");
    Level1Predictions l1;
    const int n = static_cast<int>(cells.size());
    const int M = static_cast<int>(components.size());
    l1.cells = cells;
    l1.log_density.resize(n, M);
    l1.mean.resize(n, M);
    l1.observed.resize(n);
    for (const auto& c : components) l1.names.push_back(c->name());
    for (int r = 0; r < n; ++r) {
        const double y = tri.at(cells[r]);
        l1.observed[r] = y;
        for (int m = 0; m < M; ++m) {
            const auto& d = components[m]->predict(cells[r]);
            l1.log_density(r, m) = d.log_density(y);
            l1.mean(r, m) = d.mean();
        }
    }
    return l1;
}

namespace detail {

inline double log_sum_exp(const Eigen::VectorXd& v) {
    const double hi = v.maxCoeff();
    if (!std::isfinite(hi)) return hi;
    double s = 0.0;
    for (int i = 0; i < v.size(); ++i) s += std::exp(v[i] - hi);
    return hi + std::log(s);
}

/// Mean mixture Log Score of log densities under weights w.
inline double mixture_log_score(const Eigen::MatrixXd& ld,
                                const Eigen::VectorXd& logw) {
    double total = 0.0;
    for (int r = 0; r < ld.rows(); ++r)
        total += log_sum_exp(ld.row(r).transpose() + logw);
    return total / ld.rows();
}

}  // namespace detail

/// Minorization-Maximization weight optimizer for the mixture Log Score.
/// Starts from equal weights and applies
/// w_{i+1,m} = w_{i,m} (1/n) sum_cells f_m / (sum_l w_{i,l} f_l)
/// until the mean Log Score improves by less than tol.
inline Eigen::VectorXd mm_optimize(const Eigen::MatrixXd& log_densities,
                                   double tol = 1e-6) {
    const int n = static_cast<int>(log_densities.rows());
    const int M = static_cast<int>(log_densities.cols());
    if (n < 1 || M < 1) throw ConfigError("empty level-1 prediction matrix");
    for (int r = 0; r < n; ++r) {
        double best = -std::numeric_limits<double>::infinity();
        for (int m = 0; m < M; ++m) {
            const double ld = log_densities(r, m);
            if (std::isnan(ld) || ld == std::numeric_limits<double>::infinity())
                throw NumericError("non-finite component density");
            best = std::max(best, ld);
        }
        if (best == -std::numeric_limits<double>::infinity())
            throw NumericError("all component densities vanish at a cell");
    }

    Eigen::VectorXd w = Eigen::VectorXd::Constant(M, 1.0 / M);
    if (M == 1) return w;

    auto check_simplex = [M](const Eigen::VectorXd& v) {
        if (std::abs(v.sum() - 1.0) > 1e-12 || (v.array() < 0.0).any())
            throw NumericError("MM update left the weight simplex");
        (void)M;
    };

    double prev = detail::mixture_log_score(log_densities, w.array().log().matrix());
    const int cap = 10000;
    for (int it = 0; it < cap; ++it) {
        // Responsibilities in log space to guard underflow.
        Eigen::VectorXd logw = w.array().max(1e-300).log().matrix();
        Eigen::VectorXd r_sum = Eigen::VectorXd::Zero(M);
        for (int r = 0; r < n; ++r) {
            const Eigen::VectorXd comp = log_densities.row(r).transpose() + logw;
            const double mix = detail::log_sum_exp(comp);
            for (int m = 0; m < M; ++m)
                r_sum[m] += std::exp(log_densities(r, m) - mix);
        }
        w = (w.array() * (r_sum / n).array()).matrix();
        check_simplex(w);
        w /= w.sum();  // exact renormalization of floating-point drift

        const double score =
            detail::mixture_log_score(log_densities, w.array().max(1e-300).log().matrix());
        if (score < prev - 1e-10)
            throw NumericError("MM iteration decreased the Log Score");
        if (score - prev < tol) return w;
        prev = score;
    }
    throw NumericError("MM optimizer failed to converge within 10000 iterations");
}

/// A fitted linear-pool ensemble: per-maturity-band weight vectors over a
/// shared component registry.
struct Ensemble {
    std::vector<std::shared_ptr<ComponentModel>> components;
    std::vector<Eigen::VectorXd> weights;  // one simplex vector per band
    std::vector<int> band_start, band_end;

    int bands() const { return static_cast<int>(weights.size()); }

    int subset_for(int accident) const {
        if (bands() == 1) return 0;
        for (int k = 0; k < bands(); ++k)
            if (accident >= band_start[k] && accident <= band_end[k]) return k;
        throw ConfigError("accident period " + std::to_string(accident) +
                          " outside every maturity band");
    }

    const Eigen::VectorXd& weights_for(const Cell& c) const {
        return weights[subset_for(c.accident)];
    }

    double mean(const Cell& c) const {
        const Eigen::VectorXd& w = weights_for(c);
        double total = 0.0;
        for (size_t m = 0; m < components.size(); ++m)
            total += w[static_cast<int>(m)] * components[m]->predict(c).mean();
        return total;
    }

    double log_density(const Cell& c, double y) const {
        const Eigen::VectorXd& w = weights_for(c);
        Eigen::VectorXd terms(w.size());
        for (int m = 0; m < w.size(); ++m)
            terms[m] = (w[m] > 0.0 ? std::log(w[m]) : -std::numeric_limits<double>::infinity()) +
                       components[m]->predict(c).log_density(y);
        const double ld = detail::log_sum_exp(terms);
        if (ld == -std::numeric_limits<double>::infinity())
            throw NumericError("ensemble density vanished at a cell");
        return ld;
    }

    double cdf(const Cell& c, double y) const {
        const Eigen::VectorXd& w = weights_for(c);
        double total = 0.0;
        for (int m = 0; m < w.size(); ++m)
            if (w[m] > 0.0) total += w[m] * components[m]->predict(c).cdf(y);
        return total;
    }

    template <class Rng>
    double sample(const Cell& c, Rng& rng) const {
        const Eigen::VectorXd& w = weights_for(c);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        const double u = unif(rng);
        double acc = 0.0;
        int pick = static_cast<int>(w.size()) - 1;
        for (int m = 0; m < w.size(); ++m) {
            acc += w[m];
            if (u <= acc) {
                pick = m;
                break;
            }
        }
        return components[pick]->predict(c).sample(rng);
    }
};

/// Single linear pool: one weight vector trained on the whole validation set.
inline Ensemble fit_slp(
    const std::vector<std::shared_ptr<ComponentModel>>& components,
    const Triangle& tri, const DataPartition& part, double tol = 1e-6) {
    auto l1 = build_level1(components, tri, part.validation);
    Ensemble e;
    e.components = components;
    e.weights.push_back(mm_optimize(l1.log_density, tol));
    e.band_start = {1};
    e.band_end = {part.triangle_size};
    return e;
}

/// Accident and development period adjusted linear pool: band k weights are
/// trained on the cumulative union U_k of the maturity subsets.
inline Ensemble fit_adlp(
    const std::vector<std::shared_ptr<ComponentModel>>& components,
    const Triangle& tri, const DataPartition& part, double tol = 1e-6) {
    if (part.bands() < 1) throw ConfigError("partition has no maturity bands");
    Ensemble e;
    e.components = components;
    e.band_start = part.band_start;
    e.band_end = part.band_end;
    for (int k = 0; k < part.bands(); ++k) {
        auto l1 = build_level1(components, tri, part.cumulative[k]);
        e.weights.push_back(mm_optimize(l1.log_density, tol));
    }
    return e;
}

/// Equally weighted pool.
inline Ensemble fit_ew(
    const std::vector<std::shared_ptr<ComponentModel>>& components, int size) {
    if (components.empty()) throw ConfigError("no component models");
    Ensemble e;
    e.components = components;
    e.weights.push_back(Eigen::VectorXd::Constant(
        static_cast<int>(components.size()),
        1.0 / static_cast<double>(components.size())));
    e.band_start = {1};
    e.band_end = {size};
    return e;
}

/// Best model in validation: all weight on the component with the highest
/// mean validation Log Score, first registry index on ties.
inline Ensemble select_bmv(
    const std::vector<std::shared_ptr<ComponentModel>>& components,
    const Triangle& tri, const DataPartition& part) {
    auto l1 = build_level1(components, tri, part.validation);
    const Eigen::VectorXd scores = l1.log_density.colwise().mean();
    int best = 0;
    for (int m = 1; m < scores.size(); ++m)
        if (scores[m] > scores[best]) best = m;
    Ensemble e;
    e.components = components;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(scores.size());
    w[best] = 1.0;
    e.weights.push_back(std::move(w));
    e.band_start = {1};
    e.band_end = {part.triangle_size};
    return e;
}

namespace detail {

/// Euclidean projection onto the probability simplex.
inline Eigen::VectorXd project_simplex(Eigen::VectorXd v) {
    const int M = static_cast<int>(v.size());
    std::vector<double> u(v.data(), v.data() + M);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double cum = 0.0, tau = 0.0;
    for (int k = 0; k < M; ++k) {
        cum += u[k];
        const double t = (cum - 1.0) / (k + 1);
        if (u[k] - t > 0.0) tau = t;
    }
    for (int m = 0; m < M; ++m) v[m] = std::max(v[m] - tau, 0.0);
    return v;
}

}  // namespace detail

/// Simplex-constrained least squares on the level-1 means (stacked
/// regression baseline). Projected gradient descent to a projected-gradient
/// norm below 1e-8.
inline Eigen::VectorXd fit_stacked_mse(const Eigen::MatrixXd& means,
                                       const Eigen::VectorXd& y) {
    const int n = static_cast<int>(means.rows());
    const int M = static_cast<int>(means.cols());
    if (y.size() != n) throw ConfigError("means/observations size mismatch");
    Eigen::VectorXd ew = Eigen::VectorXd::Constant(M, 1.0 / M);

    // All-identical mean columns: any simplex point is optimal.
    double spread = 0.0;
    for (int m = 1; m < M; ++m)
        spread = std::max(spread, (means.col(m) - means.col(0)).cwiseAbs().maxCoeff());
    if (spread < 1e-12) return ew;

    const Eigen::MatrixXd AtA = means.transpose() * means;
    const Eigen::VectorXd Aty = means.transpose() * y;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(AtA);
    const double L = std::max(2.0 * es.eigenvalues().maxCoeff(), 1e-12);
    const double step = 1.0 / L;

    Eigen::VectorXd w = ew;
    for (int it = 0; it < 200000; ++it) {
        const Eigen::VectorXd grad = 2.0 * (AtA * w - Aty);
        Eigen::VectorXd next = detail::project_simplex(w - step * grad);
        const double move = (next - w).norm();
        w = next;
        if (move / step < 1e-8) break;
    }
    return w;
}

/// Free-function forms of the ensemble predictions.
inline double ensemble_mean(const Ensemble& e, const Cell& c) { return e.mean(c); }
inline double ensemble_log_density(const Ensemble& e, const Cell& c, double y) {
    return e.log_density(c, y);
}
template <class Rng>
double sample_ensemble(const Ensemble& e, const Cell& c, Rng& rng) {
    return e.sample(c, rng);
}

/// Empirical bias-variance style decomposition of the ensemble MSE:
/// ensemble MSE = weighted component MSE - disagreement, algebraically.
struct MseDecomposition {
    double disagreement = 0.0;
    double ensemble_mse = 0.0;
    double weighted_component_mse = 0.0;
    double identity_residual = 0.0;
};

inline MseDecomposition mse_variance_decomposition(const Eigen::MatrixXd& means,
                                                   const Eigen::VectorXd& w,
                                                   const Eigen::VectorXd& y) {
    const int n = static_cast<int>(means.rows());
    const int M = static_cast<int>(means.cols());
    if (w.size() != M || y.size() != n)
        throw ConfigError("decomposition input size mismatch");
    MseDecomposition out;
    for (int r = 0; r < n; ++r) {
        const double mu_star = means.row(r).dot(w);
        out.ensemble_mse += (y[r] - mu_star) * (y[r] - mu_star);
        for (int m = 0; m < M; ++m) {
            const double d = means(r, m) - mu_star;
            out.disagreement += w[m] * d * d;
            out.weighted_component_mse += w[m] * (y[r] - means(r, m)) * (y[r] - means(r, m));
        }
    }
    out.disagreement /= n;
    out.ensemble_mse /= n;
    out.weighted_component_mse /= n;
    out.identity_residual =
        out.ensemble_mse - (out.weighted_component_mse - out.disagreement);
    return out;
}

}  // namespace adlp
