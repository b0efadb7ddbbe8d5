#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <random>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "adlp/errors.hpp"

namespace adlp {

enum class Family { ODP, Gamma, LogNormal, Normal, ZAGA, ZALN };

inline const char* family_name(Family f) {
    switch (f) {
        case Family::ODP: return "ODP";
        case Family::Gamma: return "Gamma";
        case Family::LogNormal: return "LogNormal";
        case Family::Normal: return "Normal";
        case Family::ZAGA: return "ZAGA";
        case Family::ZALN: return "ZALN";
    }
    return "?";
}

namespace detail {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double normal_quantile(double p) {
    return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
}

// Continuous scaled-Poisson extension: Y/phi ~ "Poisson(mu/phi)" with the
// factorial replaced by the gamma function. Used as the ODP scoring density;
// its mass is slightly below one for small mu/phi, so the CDF is normalized.
inline double odp_log_density(double y, double mu, double phi) {
    const double lambda = mu / phi;
    return -lambda + (y / phi) * std::log(lambda) - std::lgamma(y / phi + 1.0) -
           std::log(phi);
}

struct OdpCdfTable {
    std::vector<double> ys;
    std::vector<double> cum;  // normalized CDF values at ys
    double upper = 0;
};

inline OdpCdfTable build_odp_table(double mu, double phi) {
    OdpCdfTable t;
    const int n = 4096;
    t.upper = mu + 12.0 * std::sqrt(phi * mu) + 30.0 * phi;
    const double h = t.upper / n;
    t.ys.resize(n + 1);
    t.cum.resize(n + 1);
    double prev = std::exp(odp_log_density(0.0, mu, phi));
    double acc = 0.0;
    t.ys[0] = 0.0;
    t.cum[0] = 0.0;
    for (int k = 1; k <= n; ++k) {
        const double y = k * h;
        const double f = std::exp(odp_log_density(y, mu, phi));
        acc += 0.5 * (prev + f) * h;
        prev = f;
        t.ys[k] = y;
        t.cum[k] = acc;
    }
    const double mass = acc;
    if (!(mass > 0))
        throw NumericError("degenerate continuous ODP mass");
    for (auto& v : t.cum) v /= mass;
    return t;
}

inline double interp_monotone(const std::vector<double>& xs, const std::vector<double>& ys,
                              double x) {
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const size_t k = static_cast<size_t>(it - xs.begin());
    const double w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    return ys[k - 1] + w * (ys[k] - ys[k - 1]);
}

}  // namespace detail

/// Per-cell predictive distribution: one of the families used by the
/// component models. Location is the log-scale mean for LogNormal/ZALN.
/// Dispersion is phi for ODP/Gamma and sigma^2 for (Log)Normal families.
class PredictiveDistribution {
public:
    PredictiveDistribution(Family family, double location, double dispersion,
                           double zero_mass = 0.0)
        : family_(family), loc_(location), disp_(dispersion), nu_(zero_mass) {
        if (!(disp_ > 0) || !std::isfinite(disp_))
            throw NumericError("dispersion must be positive and finite");
        if (!std::isfinite(loc_)) throw NumericError("non-finite location");
        if (nu_ < 0 || nu_ >= 1) throw NumericError("zero mass outside [0,1)");
        if ((family_ == Family::ODP || family_ == Family::Gamma) && !(loc_ > 0))
            throw NumericError("mean must be positive for ODP/Gamma");
        if (family_ == Family::ZAGA && !(loc_ > 0))
            throw NumericError("positive-part mean must be positive for ZAGA");
        bool zero_adjusted = family_ == Family::ZAGA || family_ == Family::ZALN;
        if (!zero_adjusted && nu_ != 0.0)
            throw NumericError("zero mass only valid for zero-adjusted families");
    }

    static PredictiveDistribution odp(double mu, double phi) {
        return {Family::ODP, mu, phi};
    }
    static PredictiveDistribution gamma(double mu, double phi) {
        return {Family::Gamma, mu, phi};
    }
    static PredictiveDistribution log_normal(double mu_log, double sigma2) {
        return {Family::LogNormal, mu_log, sigma2};
    }
    static PredictiveDistribution normal(double mu, double sigma2) {
        return {Family::Normal, mu, sigma2};
    }
    /// ZAGA parametrized by the positive-part Gamma mean.
    static PredictiveDistribution zaga(double nu, double mu_pos, double phi) {
        return {Family::ZAGA, mu_pos, phi, nu};
    }
    /// ZALN parametrized by the positive-part log-scale parameters.
    static PredictiveDistribution zaln(double nu, double mu_log, double sigma2) {
        return {Family::ZALN, mu_log, sigma2, nu};
    }

    Family family() const { return family_; }
    double location() const { return loc_; }
    double dispersion() const { return disp_; }
    double zero_mass() const { return nu_; }

    double log_density(double y) const {
        if (y < 0) return detail::kNegInf;
        switch (family_) {
            case Family::ODP:
                return detail::odp_log_density(y, loc_, disp_);
            case Family::Gamma:
                // Zero cells score at the one-unit floor used in fitting.
                return gamma_log_density(y > 0.0 ? y : 1.0, loc_, disp_);
            case Family::LogNormal:
                return log_normal_log_density(y > 0.0 ? y : 1.0, loc_, disp_);
            case Family::Normal: {
                const double z = y - loc_;
                return -0.5 * std::log(2.0 * M_PI * disp_) - z * z / (2.0 * disp_);
            }
            case Family::ZAGA:
                if (y == 0.0) return std::log(nu_);
                return std::log1p(-nu_) + gamma_log_density(y, loc_, disp_);
            case Family::ZALN:
                if (y == 0.0) return std::log(nu_);
                return std::log1p(-nu_) + log_normal_log_density(y, loc_, disp_);
        }
        return detail::kNegInf;
    }

    double cdf(double y) const {
        if (family_ == Family::Normal)
            return detail::normal_cdf((y - loc_) / std::sqrt(disp_));
        if (y < 0) return 0.0;
        switch (family_) {
            case Family::ODP:
                return detail::interp_monotone(odp_table().ys, odp_table().cum, y);
            case Family::Gamma:
                return gamma_cdf(y, loc_, disp_);
            case Family::LogNormal:
                return log_normal_cdf(y, loc_, disp_);
            case Family::ZAGA:
                return nu_ + (1.0 - nu_) * gamma_cdf(y, loc_, disp_);
            case Family::ZALN:
                return nu_ + (1.0 - nu_) * log_normal_cdf(y, loc_, disp_);
            default:
                break;
        }
        return 0.0;
    }

    /// CDF over an ascending grid; one pass per call.
    std::vector<double> cdf_grid(const std::vector<double>& ys) const {
        std::vector<double> out(ys.size());
        for (size_t k = 0; k < ys.size(); ++k) out[k] = cdf(ys[k]);
        return out;
    }

    double mean() const {
        switch (family_) {
            case Family::ODP:
            case Family::Gamma:
            case Family::Normal:
                return loc_;
            case Family::LogNormal:
                return std::exp(loc_ + 0.5 * disp_);
            case Family::ZAGA:
                return (1.0 - nu_) * loc_;
            case Family::ZALN:
                return (1.0 - nu_) * std::exp(loc_ + 0.5 * disp_);
        }
        return 0.0;
    }

    double variance() const {
        switch (family_) {
            case Family::ODP:
                return disp_ * loc_;
            case Family::Gamma:
                return disp_ * loc_ * loc_;
            case Family::Normal:
                return disp_;
            case Family::LogNormal: {
                const double m = std::exp(loc_ + 0.5 * disp_);
                return (std::exp(disp_) - 1.0) * m * m;
            }
            case Family::ZAGA: {
                const double vc = disp_ * loc_ * loc_;
                return (1.0 - nu_) * (vc + nu_ * loc_ * loc_);
            }
            case Family::ZALN: {
                const double m = std::exp(loc_ + 0.5 * disp_);
                const double vc = (std::exp(disp_) - 1.0) * m * m;
                return (1.0 - nu_) * (vc + nu_ * m * m);
            }
        }
        return 0.0;
    }

    double quantile(double p) const {
        if (!(p > 0.0) || !(p < 1.0)) throw NumericError("quantile level outside (0,1)");
        switch (family_) {
            case Family::Normal:
                return loc_ + std::sqrt(disp_) * detail::normal_quantile(p);
            case Family::LogNormal:
                return std::exp(loc_ + std::sqrt(disp_) * detail::normal_quantile(p));
            case Family::Gamma:
                return boost::math::gamma_p_inv(1.0 / disp_, p) * (loc_ * disp_);
            case Family::ODP:
                return detail::interp_monotone(odp_table().cum, odp_table().ys, p);
            case Family::ZAGA:
            case Family::ZALN: {
                if (p <= nu_) return 0.0;
                const double pc = (p - nu_) / (1.0 - nu_);
                return positive_part().quantile(pc);
            }
        }
        return 0.0;
    }

    template <class Rng>
    double sample(Rng& rng) const {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        switch (family_) {
            case Family::ZAGA:
            case Family::ZALN: {
                if (unif(rng) < nu_) return 0.0;
                return positive_part().sample(rng);
            }
            case Family::ODP: {
                // Scaled Poisson keeps the mean exactly mu; the continuous
                // scoring approximation drifts at small mu / phi.
                std::poisson_distribution<long long> pois(loc_ / disp_);
                return disp_ * static_cast<double>(pois(rng));
            }
            default: {
                double u = unif(rng);
                u = std::min(std::max(u, 1e-15), 1.0 - 1e-15);
                return quantile(u);
            }
        }
    }

    /// Continuous part of a zero-adjusted family, as its own distribution.
    PredictiveDistribution positive_part() const {
        if (family_ == Family::ZAGA) return gamma(loc_, disp_);
        if (family_ == Family::ZALN) return log_normal(loc_, disp_);
        return *this;
    }

private:
    static double gamma_log_density(double y, double mu, double phi) {
        if (y <= 0) return detail::kNegInf;
        const double shape = 1.0 / phi;
        const double scale = mu * phi;
        return (shape - 1.0) * std::log(y) - y / scale - std::lgamma(shape) -
               shape * std::log(scale);
    }
    static double gamma_cdf(double y, double mu, double phi) {
        if (y <= 0) return 0.0;
        return boost::math::gamma_p(1.0 / phi, y / (mu * phi));
    }
    static double log_normal_log_density(double y, double mu_log, double sigma2) {
        if (y <= 0) return detail::kNegInf;
        const double z = std::log(y) - mu_log;
        return -std::log(y) - 0.5 * std::log(2.0 * M_PI * sigma2) -
               z * z / (2.0 * sigma2);
    }
    static double log_normal_cdf(double y, double mu_log, double sigma2) {
        if (y <= 0) return 0.0;
        return detail::normal_cdf((std::log(y) - mu_log) / std::sqrt(sigma2));
    }

    const detail::OdpCdfTable& odp_table() const {
        std::call_once(cache_->once, [this] {
            cache_->table = detail::build_odp_table(loc_, disp_);
        });
        return cache_->table;
    }

    struct OdpCache {
        std::once_flag once;
        detail::OdpCdfTable table;
    };

    Family family_;
    double loc_;
    double disp_;
    double nu_;
    std::shared_ptr<OdpCache> cache_ = std::make_shared<OdpCache>();
};

}  // namespace adlp
