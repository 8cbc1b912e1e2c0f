#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace switchlab {

enum class Effect { DE, IE };
enum class Sides { one_sided_upper, two_sided };

inline const char* effect_name(Effect e) { return e == Effect::DE ? "DE" : "IE"; }
inline const char* sides_name(Sides s) { return s == Sides::two_sided ? "two_sided" : "one_sided_upper"; }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Upper-tail probability 1 - Phi(x) without cancellation for large x.
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

struct TestReport {
    Effect effect = Effect::DE;
    double estimate = 0.0;
    std::optional<double> se;
    double statistic = 0.0;
    double p_value = 1.0;
    double alpha = 0.05;
    bool reject = false;
    std::vector<double> bootstrap_draws;
    std::optional<double> critical_value;  // bootstrap upper-alpha quantile
    Sides sides = Sides::one_sided_upper;
    std::vector<std::string> warnings;
};

inline TestReport wald_report(Effect effect, double estimate, double se, double alpha, Sides sides) {
    TestReport rep;
    rep.effect = effect;
    rep.estimate = estimate;
    rep.se = se;
    rep.alpha = alpha;
    rep.sides = sides;
    if (!(se >= 1e-12)) {
        rep.statistic = 0.0;
        rep.p_value = 1.0;
    } else {
        rep.statistic = estimate / se;
        double upper = normal_sf(rep.statistic);
        rep.p_value = sides == Sides::two_sided ? std::min(1.0, 2.0 * std::min(upper, 1.0 - upper)) : upper;
    }
    rep.reject = rep.p_value <= alpha;
    return rep;
}

// Empirical quantile with linear interpolation (type 7).
inline double quantile(std::vector<double> x, double q) {
    std::sort(x.begin(), x.end());
    if (x.empty()) return 0.0;
    double pos = q * static_cast<double>(x.size() - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, x.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return x[lo] + frac * (x[hi] - x[lo]);
}

// draws hold IE^b - IE; the statistic is the point estimate itself.
inline TestReport bootstrap_report(Effect effect, double estimate, std::vector<double> draws, double alpha,
                                   Sides sides) {
    TestReport rep;
    rep.effect = effect;
    rep.estimate = estimate;
    rep.statistic = estimate;
    rep.alpha = alpha;
    rep.sides = sides;
    std::size_t exceed = 0;
    if (sides == Sides::two_sided) {
        for (double v : draws)
            if (std::fabs(v) >= std::fabs(estimate)) ++exceed;
        std::vector<double> absd(draws.size());
        std::transform(draws.begin(), draws.end(), absd.begin(), [](double v) { return std::fabs(v); });
        rep.critical_value = quantile(absd, 1.0 - alpha);
    } else {
        for (double v : draws)
            if (v >= estimate) ++exceed;
        rep.critical_value = quantile(draws, 1.0 - alpha);
    }
    rep.p_value = (1.0 + static_cast<double>(exceed)) / (static_cast<double>(draws.size()) + 1.0);
    rep.reject = rep.p_value <= alpha;
    rep.bootstrap_draws = std::move(draws);
    return rep;
}

}  // namespace switchlab
