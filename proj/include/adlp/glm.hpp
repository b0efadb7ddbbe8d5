#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "adlp/distributions.hpp"
#include "adlp/errors.hpp"
#include "adlp/triangle.hpp"

namespace adlp {

enum class GlmFamily { Poisson, Gamma, Gaussian, Binomial };

struct FittedGlm {
    Eigen::VectorXd coef;
    Eigen::VectorXd eta;  // linear predictor incl. offset, per input row
    Eigen::VectorXd mu;
    double dispersion = 0.0;  // Pearson estimate
    double deviance = 0.0;
    int iterations = 0;
    int residual_dof = 0;
};

namespace detail {

inline double glm_variance(GlmFamily fam, double mu) {
    switch (fam) {
        case GlmFamily::Poisson: return mu;
        case GlmFamily::Gamma: return mu * mu;
        case GlmFamily::Gaussian: return 1.0;
        case GlmFamily::Binomial: return mu * (1.0 - mu);
    }
    return 1.0;
}

inline double glm_deviance(GlmFamily fam, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& mu, const Eigen::VectorXd& w) {
    double dev = 0.0;
    for (int r = 0; r < y.size(); ++r) {
        const double yi = y[r], mi = mu[r], wi = w[r];
        switch (fam) {
            case GlmFamily::Poisson:
                dev += 2.0 * wi * ((yi > 0 ? yi * std::log(yi / mi) : 0.0) - (yi - mi));
                break;
            case GlmFamily::Gamma:
                dev += 2.0 * wi * (-std::log(yi / mi) + (yi - mi) / mi);
                break;
            case GlmFamily::Gaussian:
                dev += wi * (yi - mi) * (yi - mi);
                break;
            case GlmFamily::Binomial: {
                double t = 0.0;
                if (yi > 0) t += yi * std::log(yi / mi);
                if (yi < 1) t += (1.0 - yi) * std::log((1.0 - yi) / (1.0 - mi));
                dev += 2.0 * wi * t;
                break;
            }
        }
    }
    return dev;
}

}  // namespace detail

/// IRLS for log-link Poisson/Gamma, identity-link Gaussian, and logit-link
/// Binomial (responses as proportions, prior weights as trial counts).
/// Converges on relative deviance change < 1e-8 within 100 iterations.
inline FittedGlm fit_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          GlmFamily family, const Eigen::VectorXd& offset = {},
                          const Eigen::VectorXd& prior_weights = {},
                          double ridge = 0.0) {
    const int n = static_cast<int>(X.rows());
    const int p = static_cast<int>(X.cols());
    if (y.size() != n) throw ConfigError("design/response length mismatch");
    Eigen::VectorXd off = offset.size() ? offset : Eigen::VectorXd::Zero(n);
    Eigen::VectorXd pw = prior_weights.size() ? prior_weights : Eigen::VectorXd::Ones(n);

    FittedGlm fit;
    fit.residual_dof = n - p;

    if (family == GlmFamily::Gaussian) {
        Eigen::MatrixXd Xw = pw.cwiseSqrt().asDiagonal() * X;
        Eigen::VectorXd zw = pw.cwiseSqrt().asDiagonal() * (y - off);
        if (ridge > 0) {
            Eigen::MatrixXd XtX = Xw.transpose() * Xw;
            XtX.diagonal().array() += ridge;
            fit.coef = XtX.ldlt().solve(Xw.transpose() * zw);
        } else {
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
            if (qr.rank() < p) throw NumericError("rank-deficient design matrix");
            fit.coef = qr.solve(zw);
        }
        fit.eta = X * fit.coef + off;
        fit.mu = fit.eta;
        fit.iterations = 1;
        fit.deviance = detail::glm_deviance(family, y, fit.mu, pw);
    } else {
        // Working-response start.
        Eigen::VectorXd mu(n), eta(n);
        for (int r = 0; r < n; ++r) {
            if (family == GlmFamily::Binomial) {
                mu[r] = (y[r] * pw[r] + 0.5) / (pw[r] + 1.0);
                eta[r] = std::log(mu[r] / (1.0 - mu[r]));
            } else {
                mu[r] = std::max(y[r], 1e-8) + 0.1;
                eta[r] = std::log(mu[r]);
            }
        }
        double dev = detail::glm_deviance(family, y, mu, pw);
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
        const int max_iter = 2000;
        int it = 0;
        for (; it < max_iter; ++it) {
            Eigen::VectorXd W(n), z(n);
            for (int r = 0; r < n; ++r) {
                double dmu_deta;  // derivative of mean w.r.t. linear predictor
                if (family == GlmFamily::Binomial)
                    dmu_deta = mu[r] * (1.0 - mu[r]);
                else
                    dmu_deta = mu[r];
                dmu_deta = std::max(dmu_deta, 1e-10);
                const double V = std::max(detail::glm_variance(family, mu[r]), 1e-10);
                W[r] = pw[r] * dmu_deta * dmu_deta / V;
                z[r] = (eta[r] - off[r]) + (y[r] - mu[r]) / dmu_deta;
            }
            Eigen::MatrixXd XtWX = X.transpose() * W.asDiagonal() * X;
            if (ridge > 0) XtWX.diagonal().array() += ridge;
            Eigen::VectorXd XtWz = X.transpose() * W.asDiagonal() * z;
            Eigen::VectorXd proposal;
            if (ridge > 0) {
                // The ridge makes the system positive definite.
                proposal = XtWX.ldlt().solve(XtWz);
            } else {
                Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(XtWX);
                if (qr.rank() < p)
                    throw NumericError("rank-deficient design matrix");
                proposal = qr.solve(XtWz);
            }
            const Eigen::VectorXd prev = beta;

            auto apply = [&](const Eigen::VectorXd& b) {
                eta = X * b + off;
                for (int r = 0; r < n; ++r) {
                    double e = eta[r];
                    if (family == GlmFamily::Binomial) {
                        e = std::clamp(e, -30.0, 30.0);
                        mu[r] = 1.0 / (1.0 + std::exp(-e));
                        mu[r] = std::clamp(mu[r], 1e-10, 1.0 - 1e-10);
                    } else {
                        mu[r] = std::exp(std::clamp(e, -300.0, 300.0));
                    }
                }
                return detail::glm_deviance(family, y, mu, pw);
            };

            // Step-halving toward the previous estimate when the full
            // Fisher-scoring step overshoots.
            beta = proposal;
            double new_dev = apply(beta);
            // The working start is near-saturated, so only compare against a
            // deviance that belongs to an actual model fit.
            if (it > 0)
                for (int half = 0; half < 40 && !(new_dev <= dev * (1.0 + 1e-8));
                     ++half) {
                    beta = 0.5 * (beta + prev);
                    new_dev = apply(beta);
                }
            const double denom = std::abs(dev) + 0.1;
            const bool done = std::abs(dev - new_dev) / denom < 1e-8;
            dev = new_dev;
            if (done) break;
        }
        if (it == max_iter)
            throw NumericError("IRLS failed to converge within 2000 iterations");
        fit.coef = beta;
        fit.eta = eta;
        fit.mu = mu;
        fit.deviance = dev;
        fit.iterations = it + 1;
    }

    if (fit.residual_dof > 0) {
        double pearson = 0.0;
        for (int r = 0; r < n; ++r) {
            const double V = std::max(detail::glm_variance(family, fit.mu[r]), 1e-10);
            const double res = y[r] - fit.mu[r];
            pearson += pw[r] * res * res / V;
        }
        fit.dispersion = pearson / fit.residual_dof;
        // An essentially perfect fit reports zero dispersion, which
        // estimate_dispersion flags as degenerate.
        const double scale = 1.0 + fit.mu.cwiseAbs().mean();
        if (fit.deviance < 1e-10 * n * scale) fit.dispersion = 0.0;
    }
    return fit;
}

/// Pearson dispersion with the degenerate cases flagged.
inline double estimate_dispersion(const FittedGlm& fit) {
    if (fit.residual_dof <= 0)
        throw NumericError("no residual degrees of freedom for dispersion");
    if (fit.dispersion <= 0)
        throw NumericError("degenerate zero dispersion (perfect fit)");
    return fit.dispersion;
}

/// Dispersion for a fitted component: degenerate exact fits get a small
/// positive floor so the per-cell distributions stay well formed.
inline double component_dispersion(const FittedGlm& fit) {
    if (fit.residual_dof <= 0)
        throw NumericError("no residual degrees of freedom for dispersion");
    return std::max(fit.dispersion, 1e-8);
}

enum class ModelStructure { CC, Cal, HC, PPCI, PPCF, ZAGA, ZALN };

/// One row of the component-model table: structure plus fitted distribution.
struct ModelSpec {
    ModelStructure structure;
    Family family;

    std::string name() const {
        std::string s;
        switch (structure) {
            case ModelStructure::CC: s = "CC"; break;
            case ModelStructure::Cal: s = "Cal"; break;
            case ModelStructure::HC: s = "HC"; break;
            case ModelStructure::PPCI: s = "PPCI"; break;
            case ModelStructure::PPCF: s = "PPCF"; break;
            case ModelStructure::ZAGA: return "ZAGA";
            case ModelStructure::ZALN: return "ZALN";
        }
        return s + "-" + family_name(family);
    }

    void validate() const {
        auto ok3 = family == Family::ODP || family == Family::Gamma ||
                   family == Family::LogNormal;
        switch (structure) {
            case ModelStructure::CC:
            case ModelStructure::Cal:
            case ModelStructure::HC:
                if (!ok3) throw ConfigError("unsupported family for " + name());
                break;
            case ModelStructure::PPCI:
            case ModelStructure::PPCF:
                if (family != Family::ODP)
                    throw ConfigError(name() + " supports ODP only");
                break;
            case ModelStructure::ZAGA:
                if (family != Family::ZAGA) throw ConfigError("ZAGA family mismatch");
                break;
            case ModelStructure::ZALN:
                if (family != Family::ZALN) throw ConfigError("ZALN family mismatch");
                break;
        }
    }
};

/// A fitted component model: a per-cell predictive distribution over the
/// full square, plus a name for reports.
class ComponentModel {
public:
    ComponentModel(std::string name, int size,
                   std::vector<PredictiveDistribution> grid)
        : name_(std::move(name)), size_(size), grid_(std::move(grid)) {
        if (static_cast<int>(grid_.size()) != size_ * size_)
            throw ConfigError("component grid has wrong size");
    }

    const std::string& name() const { return name_; }
    int size() const { return size_; }

    const PredictiveDistribution& predict(const Cell& c) const {
        if (c.accident < 1 || c.accident > size_ || c.development < 1 ||
            c.development > size_)
            throw ConfigError("cell outside the component grid");
        return grid_[(c.accident - 1) * size_ + (c.development - 1)];
    }

private:
    std::string name_;
    int size_;
    std::vector<PredictiveDistribution> grid_;
};

namespace detail {

struct DesignInfo {
    Eigen::MatrixXd X;
    std::function<Eigen::RowVectorXd(const Cell&)> row_for;
};

inline DesignInfo build_design(ModelStructure structure, int n,
                               const std::vector<Cell>& cells) {
    std::function<Eigen::RowVectorXd(const Cell&)> row_for;
    int p = 0;
    switch (structure) {
        case ModelStructure::CC:
            // Development indicators for all j, accident indicators for i >= 2
            // (corner constraint: accident period 1 absorbed).
            p = n + (n - 1);
            row_for = [n, p](const Cell& c) {
                Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(p);
                r[c.development - 1] = 1.0;
                if (c.accident >= 2) r[n + c.accident - 2] = 1.0;
                return r;
            };
            break;
        case ModelStructure::Cal:
            // Development indicators plus a linear calendar trend; no
            // accident effect.
            p = n + 1;
            row_for = [n, p](const Cell& c) {
                Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(p);
                r[c.development - 1] = 1.0;
                r[n] = static_cast<double>(c.calendar());
                return r;
            };
            break;
        case ModelStructure::HC:
            // Accident indicators plus the Hoerl pair (ln j, j).
            p = n + 2;
            row_for = [n, p](const Cell& c) {
                Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(p);
                r[c.accident - 1] = 1.0;
                r[n] = std::log(static_cast<double>(c.development));
                r[n + 1] = static_cast<double>(c.development);
                return r;
            };
            break;
        default:
            throw ConfigError("no plain design for this structure");
    }
    DesignInfo d;
    d.row_for = row_for;
    d.X.resize(static_cast<int>(cells.size()), p);
    for (size_t r = 0; r < cells.size(); ++r) d.X.row(static_cast<int>(r)) = row_for(cells[r]);
    return d;
}

// Zeros under Gamma/LogNormal likelihoods are floored at one monetary unit;
// the count of affected cells is reported on the fitted component.
inline Eigen::VectorXd positive_response(const Triangle& tri,
                                         const std::vector<Cell>& cells,
                                         int* floored) {
    Eigen::VectorXd y(cells.size());
    int count = 0;
    for (size_t r = 0; r < cells.size(); ++r) {
        double v = tri.at(cells[r]);
        if (v <= 0) {
            v = 1.0;
            ++count;
        }
        y[static_cast<int>(r)] = v;
    }
    if (floored) *floored = count;
    return y;
}

inline PredictiveDistribution cell_distribution(Family family, double eta,
                                                double dispersion) {
    // Extrapolated linear predictors on badly fit cells can overflow exp.
    eta = std::clamp(eta, -300.0, 300.0);
    switch (family) {
        case Family::ODP:
            return PredictiveDistribution::odp(std::exp(eta), dispersion);
        case Family::Gamma:
            return PredictiveDistribution::gamma(std::exp(eta), dispersion);
        case Family::LogNormal:
            return PredictiveDistribution::log_normal(eta, dispersion);
        default:
            throw ConfigError("unsupported family for a GLM cell distribution");
    }
}

// Completed row totals from a cross-classified ODP fit on a count triangle.
inline std::vector<double> complete_row_totals(const Triangle& counts,
                                               const std::vector<Cell>& cells) {
    const int n = counts.size();
    auto design = build_design(ModelStructure::CC, n, cells);
    Eigen::VectorXd y(cells.size());
    for (size_t r = 0; r < cells.size(); ++r)
        y[static_cast<int>(r)] = counts.at(cells[r]);
    auto fit = fit_irls(design.X, y, GlmFamily::Poisson);
    std::vector<double> totals(n + 1, 0.0);
    for (const Cell& c : counts.upper_cells()) totals[c.accident] += counts.at(c);
    for (const Cell& c : counts.lower_cells())
        totals[c.accident] += std::exp(design.row_for(c).dot(fit.coef));
    return totals;
}

}  // namespace detail

struct ComponentInputs {
    const Triangle* paid = nullptr;
    const Triangle* reported = nullptr;   // counts, PPCI/PPCF
    const Triangle* finalised = nullptr;  // counts, PPCF
};

/// Fitted internals of the PPCF model, exposed for diagnostics.
struct PpcfDiagnostics {
    double severity_intercept = 0.0;
    double severity_slope = 0.0;
    /// Operational time per cell, 1-indexed [accident][development].
    std::vector<std::vector<double>> operational_time;
};

inline std::shared_ptr<ComponentModel> fit_ppcf(const ComponentInputs& in,
                                                const std::vector<Cell>& cells,
                                                PpcfDiagnostics* diag = nullptr);

/// Fit one of the GLM-based component models on the given training cells and
/// return per-cell predictive distributions over the full square.
inline std::shared_ptr<ComponentModel> fit_glm_component(
    const ModelSpec& spec, const ComponentInputs& in, const std::vector<Cell>& cells) {
    spec.validate();
    if (!in.paid) throw ConfigError("paid triangle required");
    const Triangle& tri = *in.paid;
    const int n = tri.size();

    auto grid_from_eta = [&](Family fam, auto eta_of, double disp) {
        std::vector<PredictiveDistribution> grid;
        grid.reserve(static_cast<size_t>(n) * n);
        for (int i = 1; i <= n; ++i)
            for (int j = 1; j <= n; ++j)
                grid.push_back(detail::cell_distribution(fam, eta_of(Cell{i, j}), disp));
        return grid;
    };

    switch (spec.structure) {
        case ModelStructure::CC:
        case ModelStructure::Cal:
        case ModelStructure::HC: {
            auto design = detail::build_design(spec.structure, n, cells);
            Eigen::VectorXd y;
            int floored = 0;
            FittedGlm fit;
            // A tiny ridge keeps single-cell development columns with zero
            // fitted means from making the weighted normal equations
            // numerically singular.
            const double ridge = 1e-8;
            if (spec.family == Family::LogNormal) {
                y = detail::positive_response(tri, cells, &floored).array().log();
                fit = fit_irls(design.X, y, GlmFamily::Gaussian, {}, {}, ridge);
            } else if (spec.family == Family::Gamma) {
                y = detail::positive_response(tri, cells, &floored);
                fit = fit_irls(design.X, y, GlmFamily::Gamma, {}, {}, ridge);
            } else {
                y.resize(cells.size());
                for (size_t r = 0; r < cells.size(); ++r)
                    y[static_cast<int>(r)] = tri.at(cells[r]);
                fit = fit_irls(design.X, y, GlmFamily::Poisson, {}, {}, ridge);
            }
            const double disp = component_dispersion(fit);
            auto eta_of = [design, coef = fit.coef](const Cell& c) {
                return design.row_for(c).dot(coef);
            };
            return std::make_shared<ComponentModel>(
                spec.name(), n, grid_from_eta(spec.family, eta_of, disp));
        }

        case ModelStructure::PPCI: {
            if (!in.reported) throw ConfigError("PPCI requires a reported-count triangle");
            auto totals = detail::complete_row_totals(*in.reported, cells);
            for (int i = 1; i <= n; ++i)
                if (!(totals[i] > 0))
                    throw NumericError("completed reported count is zero for accident " +
                                       std::to_string(i));
            Eigen::MatrixXd X = Eigen::MatrixXd::Zero(cells.size(), n);
            Eigen::VectorXd y(cells.size()), off(cells.size());
            for (size_t r = 0; r < cells.size(); ++r) {
                X(static_cast<int>(r), cells[r].development - 1) = 1.0;
                y[static_cast<int>(r)] = tri.at(cells[r]);
                off[static_cast<int>(r)] = std::log(totals[cells[r].accident]);
            }
            auto fit = fit_irls(X, y, GlmFamily::Poisson, off);
            const double disp = component_dispersion(fit);
            auto eta_of = [totals, coef = fit.coef](const Cell& c) {
                return std::log(totals[c.accident]) + coef[c.development - 1];
            };
            return std::make_shared<ComponentModel>(
                spec.name(), n, grid_from_eta(Family::ODP, eta_of, disp));
        }

        case ModelStructure::PPCF:
            return fit_ppcf(in, cells);

        case ModelStructure::ZAGA:
        case ModelStructure::ZALN: {
            // Logistic regression of the zero indicator on development period.
            Eigen::MatrixXd Xl(cells.size(), 2);
            Eigen::VectorXd z(cells.size());
            int zeros = 0;
            for (size_t r = 0; r < cells.size(); ++r) {
                Xl(static_cast<int>(r), 0) = 1.0;
                Xl(static_cast<int>(r), 1) = static_cast<double>(cells[r].development);
                z[static_cast<int>(r)] = tri.at(cells[r]) == 0.0 ? 1.0 : 0.0;
                zeros += tri.at(cells[r]) == 0.0;
            }
            if (zeros == static_cast<int>(cells.size()))
                throw NumericError("all training cells are zero; no positive part to fit");
            Eigen::VectorXd logit_coef(2);
            if (zeros == 0) {
                // No zeros observed: flat pseudo-count floor instead of a
                // separated logistic fit.
                const double nu = 0.5 / static_cast<double>(cells.size());
                logit_coef << std::log(nu / (1.0 - nu)), 0.0;
            } else {
                auto lfit = fit_irls(Xl, z, GlmFamily::Binomial, {}, {}, 1e-8);
                logit_coef = lfit.coef;
            }
            auto nu_of = [logit_coef](int j) {
                const double e = std::clamp(logit_coef[0] + logit_coef[1] * j, -30.0, 30.0);
                double nu = 1.0 / (1.0 + std::exp(-e));
                return std::clamp(nu, 1e-12, 1.0 - 1e-6);
            };

            // Positive-part fit: cross-classified on the strictly positive cells.
            std::vector<Cell> pos;
            for (const Cell& c : cells)
                if (tri.at(c) > 0) pos.push_back(c);
            auto design = detail::build_design(ModelStructure::CC, n, pos);
            Eigen::VectorXd y(pos.size());
            for (size_t r = 0; r < pos.size(); ++r)
                y[static_cast<int>(r)] = tri.at(pos[r]);
            const bool is_gamma = spec.structure == ModelStructure::ZAGA;
            FittedGlm fit;
            if (is_gamma) {
                fit = fit_irls(design.X, y, GlmFamily::Gamma, {}, {}, 1e-6);
            } else {
                Eigen::VectorXd ly = y.array().log();
                fit = fit_irls(design.X, ly, GlmFamily::Gaussian, {}, {}, 1e-6);
            }
            const double disp = component_dispersion(fit);
            std::vector<PredictiveDistribution> grid;
            grid.reserve(static_cast<size_t>(n) * n);
            for (int i = 1; i <= n; ++i) {
                for (int j = 1; j <= n; ++j) {
                    const double eta = std::clamp(
                        design.row_for(Cell{i, j}).dot(fit.coef), -300.0, 300.0);
                    if (is_gamma)
                        grid.push_back(
                            PredictiveDistribution::zaga(nu_of(j), std::exp(eta), disp));
                    else
                        grid.push_back(PredictiveDistribution::zaln(nu_of(j), eta, disp));
                }
            }
            return std::make_shared<ComponentModel>(spec.name(), n, std::move(grid));
        }
    }
    throw ConfigError("unknown model structure");
}

/// Three-stage payments-per-claim-finalised model: completed reported counts,
/// binomial finalisation probabilities over development, and an ODP severity
/// regression on operational time.
inline std::shared_ptr<ComponentModel> fit_ppcf(const ComponentInputs& in,
                                                const std::vector<Cell>& cells,
                                                PpcfDiagnostics* diag) {
    if (!in.paid || !in.reported || !in.finalised)
        throw ConfigError("PPCF requires paid, reported and finalised triangles");
    const Triangle& tri = *in.paid;
    const Triangle& fin = *in.finalised;
    const int n = tri.size();

    // Stage 1: ultimate claim counts per accident period.
    auto totals = detail::complete_row_totals(*in.reported, cells);
    for (int i = 1; i <= n; ++i)
        if (!(totals[i] > 0))
            throw NumericError("completed reported count is zero for accident " +
                               std::to_string(i));

    // Stage 2: per-development finalisation probability.
    // Finalisations in (i,j) ~ Binomial(remaining_ij, p_j), logit(p_j)
    // linear in j; remaining_ij counts claims not yet finalised.
    std::vector<Eigen::RowVector2d> rows;
    std::vector<double> props, trials;
    std::vector<std::vector<double>> cum_obs(n + 1, std::vector<double>(n + 1, 0.0));
    for (int i = 1; i <= n; ++i) {
        double acc = 0.0;
        for (int j = 1; j <= n; ++j) {
            if (fin.observed(Cell{i, j})) acc += fin.at(Cell{i, j});
            cum_obs[i][j] = acc;
        }
    }
    for (const Cell& c : cells) {
        const double before = c.development >= 2 ? cum_obs[c.accident][c.development - 1] : 0.0;
        const double remaining = totals[c.accident] - before;
        if (remaining <= 0) continue;
        const double f = fin.observed(c) ? fin.at(c) : 0.0;
        rows.push_back({1.0, static_cast<double>(c.development)});
        props.push_back(std::clamp(f / remaining, 0.0, 1.0));
        trials.push_back(remaining);
    }
    if (rows.size() < 3) throw NumericError("too few finalisation observations");
    Eigen::MatrixXd Xb(rows.size(), 2);
    Eigen::VectorXd yb(rows.size()), wb(rows.size());
    for (size_t r = 0; r < rows.size(); ++r) {
        Xb.row(static_cast<int>(r)) = rows[r];
        yb[static_cast<int>(r)] = props[r];
        wb[static_cast<int>(r)] = trials[r];
    }
    auto bfit = fit_irls(Xb, yb, GlmFamily::Binomial, {}, wb, 1e-8);
    auto p_of = [coef = bfit.coef](int j) {
        const double e = std::clamp(coef[0] + coef[1] * j, -30.0, 30.0);
        return std::clamp(1.0 / (1.0 + std::exp(-e)), 1e-9, 1.0 - 1e-9);
    };

    // Fitted finalisation counts and operational time over the full square:
    // observed counts where available, binomial-expected beyond.
    std::vector<std::vector<double>> fhat(n + 1, std::vector<double>(n + 1, 0.0));
    std::vector<std::vector<double>> optime(n + 1, std::vector<double>(n + 1, 0.0));
    for (int i = 1; i <= n; ++i) {
        double cum = 0.0;
        for (int j = 1; j <= n; ++j) {
            const Cell c{i, j};
            const double remaining = std::max(totals[i] - cum, 0.0);
            double f;
            if (fin.observed(c))
                f = fin.at(c);
            else
                f = remaining * p_of(j);
            f = std::min(f, remaining);
            fhat[i][j] = f;
            cum += f;
            optime[i][j] = std::clamp(cum / totals[i], 0.0, 1.0);
        }
    }

    // Stage 3: ODP regression of payment per finalised claim on operational time.
    std::vector<int> used;
    for (size_t r = 0; r < cells.size(); ++r)
        if (fhat[cells[r].accident][cells[r].development] > 1e-9)
            used.push_back(static_cast<int>(r));
    if (used.size() < 3)
        throw NumericError("zero finalised counts on nearly every training cell");
    Eigen::MatrixXd Xs(used.size(), 2);
    Eigen::VectorXd ys(used.size());
    for (size_t r = 0; r < used.size(); ++r) {
        const Cell& c = cells[used[r]];
        Xs(static_cast<int>(r), 0) = 1.0;
        Xs(static_cast<int>(r), 1) = optime[c.accident][c.development];
        ys[static_cast<int>(r)] = tri.at(c) / fhat[c.accident][c.development];
    }
    auto sfit = fit_irls(Xs, ys, GlmFamily::Poisson);
    if (diag) {
        diag->severity_intercept = sfit.coef[0];
        diag->severity_slope = sfit.coef[1];
        diag->operational_time = optime;
    }

    auto mean_of = [&](const Cell& c) {
        const double severity =
            std::exp(sfit.coef[0] + sfit.coef[1] * optime[c.accident][c.development]);
        return std::max(severity * fhat[c.accident][c.development], 1e-6);
    };

    // Dispersion on the payment scale.
    double pearson = 0.0;
    int m = 0;
    for (const Cell& c : cells) {
        const double mu = mean_of(c);
        pearson += (tri.at(c) - mu) * (tri.at(c) - mu) / mu;
        ++m;
    }
    // Degenerate (deterministic) inputs fit exactly; floor the dispersion so
    // the per-cell distributions stay well formed.
    const double disp = std::max(pearson / std::max(m - 2, 1), 1e-8);

    std::vector<PredictiveDistribution> grid;
    grid.reserve(static_cast<size_t>(n) * n);
    for (int i = 1; i <= n; ++i)
        for (int j = 1; j <= n; ++j)
            grid.push_back(PredictiveDistribution::odp(mean_of(Cell{i, j}), disp));
    return std::make_shared<ComponentModel>(ModelSpec{ModelStructure::PPCF, Family::ODP}.name(),
                                            n, std::move(grid));
}

}  // namespace adlp
