#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "switchlab/errors.hpp"
#include "switchlab/linalg.hpp"
#include "switchlab/panel.hpp"
#include "switchlab/parallel.hpp"
#include "switchlab/rng.hpp"
#include "switchlab/stats.hpp"
#include "switchlab/stvcdp.hpp"
#include "switchlab/tvcdp.hpp"

namespace switchlab {

// ---------------------------------------------------------------------------
// Designs

enum class DesignKind { switchback, alternating_day, spatiotemporal_alternation, bernoulli };

struct DesignSpec {
    DesignKind kind = DesignKind::switchback;
    int TI = 1;
    std::uint64_t seed = 0;
};

inline const char* design_name(DesignKind k) {
    switch (k) {
        case DesignKind::switchback: return "switchback";
        case DesignKind::alternating_day: return "alternating_day";
        case DesignKind::spatiotemporal_alternation: return "spatiotemporal_alternation";
        case DesignKind::bernoulli: return "bernoulli";
    }
    return "?";
}

inline DesignKind parse_design(const std::string& s) {
    if (s == "switchback") return DesignKind::switchback;
    if (s == "alternating_day") return DesignKind::alternating_day;
    if (s == "spatiotemporal_alternation" || s == "spatiotemporal") return DesignKind::spatiotemporal_alternation;
    if (s == "bernoulli") return DesignKind::bernoulli;
    throw InputError("unknown design '" + s + "'");
}

// Day i starts with arm i % 2 (A-first, B-first pairs); blocks of TI alternate.
inline MatrixXi switchback_pattern(int n, int m, int TI) {
    if (TI < 1 || m % TI != 0)
        throw TiMismatch("TI=" + std::to_string(TI) + " does not divide m=" + std::to_string(m));
    MatrixXi A(n, m);
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < m; ++t) A(i, t) = (i % 2 + t / TI) % 2;
    return A;
}

inline MatrixXi generate_actions(const DesignSpec& design, int n, int m) {
    switch (design.kind) {
        case DesignKind::switchback:
            return switchback_pattern(n, m, design.TI);
        case DesignKind::alternating_day: {
            MatrixXi A(n, m);
            for (int i = 0; i < n; ++i) A.row(i).setConstant(i % 2);
            return A;
        }
        case DesignKind::bernoulli: {
            Engine eng = make_engine(design.seed, {0xB0});
            std::bernoulli_distribution coin(0.5);
            MatrixXi A(n, m);
            for (int i = 0; i < n; ++i)
                for (int t = 0; t < m; ++t) A(i, t) = coin(eng) ? 1 : 0;
            return A;
        }
        case DesignKind::spatiotemporal_alternation:
            throw InputError("spatiotemporal_alternation needs a spatio-temporal context");
    }
    return {};
}

// Per-region action matrices. Temporal kinds give every region the same
// pattern (bernoulli draws independently per region).
inline std::vector<MatrixXi> generate_actions(const DesignSpec& design, int n, int m, int r) {
    std::vector<MatrixXi> out;
    if (design.kind == DesignKind::spatiotemporal_alternation) {
        MatrixXi base = switchback_pattern(n, m, design.TI);
        Engine eng = make_engine(design.seed, {0x57});
        std::bernoulli_distribution coin(0.5);
        for (int g = 0; g < r; ++g) {
            bool flip = coin(eng);
            out.push_back(flip ? MatrixXi((1 - base.array()).matrix()) : base);
        }
    } else if (design.kind == DesignKind::bernoulli) {
        for (int g = 0; g < r; ++g) {
            DesignSpec ds = design;
            ds.seed = derive_seed(design.seed, {static_cast<std::uint64_t>(g)});
            out.push_back(generate_actions(ds, n, m));
        }
    } else {
        MatrixXi base = generate_actions(design, n, m);
        out.assign(r, base);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Temporal environment

enum class Injection { coefficients, multiplicative };

inline MatrixXd ar1_cov(int m, double rho, double c) {
    MatrixXd S(m, m);
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) S(a, b) = c * std::pow(rho, std::abs(a - b));
    return S;
}

// Squared-exponential covariance on the [0,1] day axis.
inline MatrixXd smooth_cov(int m, double sd, double length) {
    MatrixXd S(m, m);
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) {
            double dt = static_cast<double>(a - b) / std::max(1, m - 1);
            S(a, b) = sd * sd * std::exp(-0.5 * dt * dt / (length * length));
        }
    return S;
}

struct Environment {
    CoefficientPath coeffs;
    std::string random_effect_kind = "custom";  // "ar1" or "custom"
    double rho = 0.0;
    double re_scale = 0.0;
    MatrixXd random_effect_cov;              // m×m
    VectorXd measurement_sd;                 // m
    std::vector<MatrixXd> state_noise_cov;   // m-1 of d×d
    MatrixXd state_init_pool;                // rows resampled when nonempty
    VectorXd state_init_mean;                // otherwise mean + standard normal
    VectorXd state_init_sd;
    double delta = 0.0;
    Injection injection = Injection::coefficients;
    double phi_bound = 0.0;  // max over t of the infinity norm of Phi(t)

    MatrixXd re_factor;
    std::vector<MatrixXd> state_noise_factor;

    int m() const { return coeffs.m; }
    int d() const { return coeffs.d; }

    // Validates invariants and caches factors; throws InvalidEnvironment.
    void finalize() {
        const int m = coeffs.m, d = coeffs.d;
        if (m < 1) throw InvalidEnvironment("environment needs m >= 1");
        if (coeffs.theta.rows() != m || coeffs.theta.cols() != d + 2 || static_cast<int>(coeffs.Theta.size()) != m - 1)
            throw InvalidEnvironment("coefficient shapes inconsistent");
        phi_bound = 0.0;
        for (int t = 0; t + 1 < m; ++t) {
            double norm = d > 0 ? coeffs.Phi(t).cwiseAbs().rowwise().sum().maxCoeff() : 0.0;
            phi_bound = std::max(phi_bound, norm);
        }
        if (!(phi_bound < 1.0))
            throw InvalidEnvironment("state transition has infinity norm " + std::to_string(phi_bound) + " >= 1");
        if (random_effect_kind == "ar1" && !(std::fabs(rho) < 1.0)) throw InvalidEnvironment("AR1 needs |rho| < 1");
        if (random_effect_cov.size() == 0) random_effect_cov = MatrixXd::Zero(m, m);
        if (measurement_sd.size() == 0) measurement_sd = VectorXd::Zero(m);
        if (state_noise_cov.empty()) state_noise_cov.assign(m - 1, MatrixXd::Zero(d, d));
        if (state_init_mean.size() == 0) state_init_mean = VectorXd::Zero(d);
        if (state_init_sd.size() == 0) state_init_sd = VectorXd::Ones(d);
        if (random_effect_cov.rows() != m || measurement_sd.size() != m || static_cast<int>(state_noise_cov.size()) != m - 1)
            throw InvalidEnvironment("noise shapes inconsistent");
        auto check_psd = [](const MatrixXd& S, const char* what) {
            if (S.size() == 0) return;
            double tol = 1e-10 * std::max(1.0, S.diagonal().cwiseAbs().maxCoeff());
            if ((S - S.transpose()).cwiseAbs().maxCoeff() > tol || min_eigenvalue(S) < -tol)
                throw InvalidEnvironment(std::string(what) + " is not symmetric PSD");
        };
        check_psd(random_effect_cov, "random-effect covariance");
        for (const auto& S : state_noise_cov) check_psd(S, "state-noise covariance");
        re_factor = psd_factor(random_effect_cov);
        state_noise_factor.clear();
        for (const auto& S : state_noise_cov) state_noise_factor.push_back(d > 0 ? psd_factor(S) : MatrixXd());
    }
};

inline PanelDataset simulate_with_actions(const Environment& env, const MatrixXi& actions, std::uint64_t seed) {
    const int n = static_cast<int>(actions.rows()), m = env.m(), d = env.d();
    PanelDataset ds = PanelDataset::zeros(n, m, d);
    ds.actions = actions;
    Engine eng = make_engine(seed, {0x51});
    const double mult = 1.0 + env.delta / 100.0;
    const bool multiplicative = env.injection == Injection::multiplicative;
    VectorXd z(d + 2), w(m);
    for (int i = 0; i < n; ++i) {
        for (int t = 0; t < m; ++t) w(t) = std_normal(eng);
        VectorXd eta = env.re_factor * w;
        if (env.state_init_pool.rows() > 0) {
            std::uniform_int_distribution<int> pick(0, static_cast<int>(env.state_init_pool.rows()) - 1);
            ds.states[i].row(0) = env.state_init_pool.row(pick(eng));
        } else {
            for (int k = 0; k < d; ++k) ds.states[i](0, k) = env.state_init_mean(k) + env.state_init_sd(k) * std_normal(eng);
        }
        for (int t = 0; t < m; ++t) {
            z(0) = 1.0;
            z.segment(1, d) = ds.states[i].row(t).transpose();
            z(d + 1) = actions(i, t);
            double y = env.coeffs.theta.row(t).dot(z) + eta(t) + env.measurement_sd(t) * std_normal(eng);
            if (multiplicative && actions(i, t) == 1) y *= mult;
            ds.outcomes(i, t) = y;
            if (t + 1 < m) {
                VectorXd e(d);
                for (int k = 0; k < d; ++k) e(k) = std_normal(eng);
                VectorXd s = env.coeffs.Theta[t] * z + env.state_noise_factor[t] * e;
                if (multiplicative && actions(i, t) == 1) s *= mult;
                ds.states[i].row(t + 1) = s.transpose();
            }
        }
    }
    return ds;
}

inline PanelDataset simulate_dataset(const Environment& env, const DesignSpec& design, int n, std::uint64_t seed) {
    return simulate_with_actions(env, generate_actions(design, n, env.m()), seed);
}

struct EnvBuildOptions {
    KernelSpec kernel;
    double ridge = 1e-3;
    double delta = 0.0;
    std::string random_effect = "empirical";  // "empirical" (eta Gram) or "ar1"
    double rho = 0.5;
    Injection injection = Injection::coefficients;
    double phi_cap = 0.95;
};

inline VectorXd state_means(const PanelDataset& ds) {
    VectorXd mu = VectorXd::Zero(ds.d);
    for (int i = 0; i < ds.n; ++i) mu += ds.states[i].colwise().sum().transpose();
    return mu / static_cast<double>(ds.n * ds.m);
}

// Scales rows of Phi(t) whose absolute sum exceeds cap down to cap.
inline void cap_transitions(CoefficientPath& c, double cap) {
    for (auto& slice : c.Theta)
        for (int k = 0; k < c.d; ++k) {
            double s = slice.row(k).segment(1, c.d).cwiseAbs().sum();
            if (s > cap) slice.row(k).segment(1, c.d) *= cap / s;
        }
}

inline Environment build_environment_from_fit(const PanelDataset& ds, const EnvBuildOptions& opt) {
    CoefficientPath path = smooth_path(ols_fit(ds, opt.ridge), opt.kernel, interval_state_means(ds));
    CovarianceBundle b = decompose_residuals(ds, path, opt.kernel);
    const double n = static_cast<double>(ds.n);
    Environment env;
    env.coeffs = path;
    cap_transitions(env.coeffs, opt.phi_cap);
    const double ybar = ds.outcomes.mean();
    const VectorXd sbar = state_means(ds);
    const double f = opt.injection == Injection::coefficients ? opt.delta / 100.0 : 0.0;
    env.coeffs.theta.col(ds.d + 1).setConstant(f * ybar);
    for (auto& slice : env.coeffs.Theta) slice.col(ds.d + 1) = f * sbar;
    env.delta = opt.delta;
    env.injection = opt.injection;
    MatrixXd gram = b.eta_hat.transpose() * b.eta_hat / n;
    if (opt.random_effect == "ar1") {
        env.random_effect_kind = "ar1";
        env.rho = opt.rho;
        env.re_scale = gram.diagonal().mean();
        env.random_effect_cov = ar1_cov(ds.m, opt.rho, env.re_scale);
    } else {
        env.random_effect_kind = "custom";
        env.random_effect_cov = gram;
    }
    env.measurement_sd = (b.eps_hat.array().square().colwise().sum() / n).sqrt().matrix().transpose();
    for (const auto& E : state_residuals(ds, path)) env.state_noise_cov.push_back(E.transpose() * E / n);
    env.state_init_pool = MatrixXd(ds.n, ds.d);
    for (int i = 0; i < ds.n; ++i) env.state_init_pool.row(i) = ds.states[i].row(0);
    env.finalize();
    return env;
}

// ---------------------------------------------------------------------------
// Synthetic ride-hailing analog: two market states (demand, supply) with
// morning/evening peaks, smooth day effects, 30-minute intervals.

inline double bump(double t, double c, double w) { return std::exp(-0.5 * (t - c) * (t - c) / (w * w)); }
inline double demand_profile(double t) { return 1.0 + 0.6 * bump(t, 0.35, 0.06) + 0.8 * bump(t, 0.75, 0.08); }
inline double supply_profile(double t) { return 1.0 + 0.4 * bump(t, 0.40, 0.12) + 0.5 * bump(t, 0.72, 0.12); }

inline Environment city_generator(int m = 48) {
    const int d = 2;
    const double pi = 3.14159265358979323846;
    Environment env;
    env.coeffs = CoefficientPath::zeros(m, d);
    auto tt = [m](int t) { return static_cast<double>(t) / (m - 1); };
    auto mu = [&](int t) {
        VectorXd v(2);
        v << 100.0 * demand_profile(tt(t)), 80.0 * supply_profile(tt(t));
        return v;
    };
    MatrixXd Phi(2, 2);
    Phi << 0.5, 0.1, 0.15, 0.55;
    for (int t = 0; t < m; ++t) {
        double x = tt(t);
        env.coeffs.theta(t, 0) = 20.0 + 10.0 * std::cos(2 * pi * x);
        env.coeffs.theta(t, 1) = 1.0 + 0.5 * std::sin(2 * pi * x);
        env.coeffs.theta(t, 2) = 0.5 + 0.3 * std::cos(2 * pi * x);
        if (t + 1 < m) {
            env.coeffs.Theta[t].col(0) = mu(t + 1) - Phi * mu(t);
            env.coeffs.Theta[t].block(0, 1, 2, 2) = Phi;
        }
    }
    env.random_effect_cov = smooth_cov(m, 10.0, 0.25);
    env.measurement_sd = VectorXd::Constant(m, 6.0);
    MatrixXd Ss = MatrixXd::Zero(2, 2);
    Ss.diagonal() << 36.0, 16.0;
    env.state_noise_cov.assign(m - 1, Ss);
    env.state_init_mean = mu(0);
    env.state_init_sd = Eigen::Vector2d(6.0, 4.0);
    env.finalize();
    return env;
}

struct CityAnalog {
    PanelDataset base;
    double C = 0.0;  // bandwidth constant: h = C n^{-1/3}
    std::uint64_t seed = 0;

    KernelSpec kernel_for(int n) const {
        return KernelSpec{KernelFamily::epanechnikov, C * std::pow(static_cast<double>(n), -1.0 / 3.0), std::nullopt};
    }
    Environment environment(double delta, Injection injection = Injection::coefficients) const {
        EnvBuildOptions o;
        o.kernel = kernel_for(base.n);
        o.delta = delta;
        o.injection = injection;
        return build_environment_from_fit(base, o);
    }
};

// A 40-day no-effect switchback run of the generator, then CV for C.
inline CityAnalog make_city_analog(std::uint64_t seed = 2024, int n_base = 40, int m = 48) {
    CityAnalog c;
    c.seed = seed;
    Environment gen = city_generator(m);
    c.base = simulate_dataset(gen, DesignSpec{DesignKind::switchback, 1, seed}, n_base, derive_seed(seed, {1}));
    c.C = select_bandwidth(c.base, KernelFamily::epanechnikov, 1e-3, seed).C;
    return c;
}

// ---------------------------------------------------------------------------
// Spatio-temporal environment

struct StEnvironment {
    StCoefficientPath coeffs;
    MatrixXd outcome_cov;  // (r m)×(r m), index g*m + t
    std::vector<std::vector<MatrixXd>> state_noise_cov;  // [g][t], d×d
    std::vector<MatrixXd> state_init_pool;              // per region, rows resampled
    MatrixXi adjacency;
    MatrixXd coords;
    double delta1 = 0.0, delta2 = 0.0;
    double phi_bound = 0.0;

    MatrixXd outcome_factor;
    std::vector<std::vector<MatrixXd>> state_noise_factor;

    int r() const { return coeffs.r; }
    int m() const { return coeffs.m; }
    int d() const { return coeffs.d; }

    void finalize() {
        const int r = coeffs.r, m = coeffs.m, d = coeffs.d;
        phi_bound = 0.0;
        for (int g = 0; g < r; ++g)
            for (int t = 0; t + 1 < m; ++t)
                phi_bound = std::max(phi_bound, coeffs.Theta[g][t].block(0, 1, d, d).cwiseAbs().rowwise().sum().maxCoeff());
        if (!(phi_bound < 1.0)) throw InvalidEnvironment("state transition infinity norm >= 1");
        if (outcome_cov.rows() != r * m) throw InvalidEnvironment("outcome covariance must be (r m)×(r m)");
        double tol = 1e-8 * std::max(1.0, outcome_cov.diagonal().maxCoeff());
        if (min_eigenvalue(outcome_cov) < -tol) throw InvalidEnvironment("outcome covariance not PSD");
        outcome_factor = psd_factor(outcome_cov);
        state_noise_factor.assign(r, {});
        for (int g = 0; g < r; ++g)
            for (const auto& S : state_noise_cov[g]) state_noise_factor[g].push_back(psd_factor(S));
    }
};

inline SpatioPanelDataset simulate_st_with_actions(const StEnvironment& env, const std::vector<MatrixXi>& actions,
                                                   std::uint64_t seed) {
    const int r = env.r(), m = env.m(), d = env.d();
    const int n = static_cast<int>(actions[0].rows());
    SpatioPanelDataset ds;
    ds.r = r;
    ds.coords = env.coords;
    ds.adjacency = env.adjacency;
    for (int g = 0; g < r; ++g) {
        ds.regions.push_back(PanelDataset::zeros(n, m, d));
        ds.regions[g].actions = actions[g];
        ds.region_labels.push_back("R" + std::to_string(g + 1));
    }
    ds.neighbor_avg = neighbor_average(env.adjacency, actions);
    Engine eng = make_engine(seed, {0x52});
    VectorXd w(r * m), z(d + 3);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < r * m; ++k) w(k) = std_normal(eng);
        VectorXd e = env.outcome_factor * w;
        for (int g = 0; g < r; ++g) {
            PanelDataset& b = ds.regions[g];
            const MatrixXd& pool = env.state_init_pool[g];
            std::uniform_int_distribution<int> pick(0, static_cast<int>(pool.rows()) - 1);
            b.states[i].row(0) = pool.row(pick(eng));
            for (int t = 0; t < m; ++t) {
                z(0) = 1.0;
                z.segment(1, d) = b.states[i].row(t).transpose();
                z(d + 1) = b.actions(i, t);
                z(d + 2) = ds.neighbor_avg[g](i, t);
                b.outcomes(i, t) = env.coeffs.theta[g].row(t).dot(z) + e(g * m + t);
                if (t + 1 < m) {
                    VectorXd u(d);
                    for (int k = 0; k < d; ++k) u(k) = std_normal(eng);
                    b.states[i].row(t + 1) = (env.coeffs.Theta[g][t] * z + env.state_noise_factor[g][t] * u).transpose();
                }
            }
        }
    }
    return ds;
}

inline SpatioPanelDataset simulate_st_dataset(const StEnvironment& env, const DesignSpec& design, int n,
                                              std::uint64_t seed) {
    return simulate_st_with_actions(env, generate_actions(design, n, env.m(), env.r()), seed);
}

struct StEnvBuildOptions {
    KernelSpec kernel;  // h and h_st
    double ridge = 1e-3;
    double delta1 = 0.0;
    double delta2 = 0.0;
    double phi_cap = 0.95;
};

// delta1 scales the direct outcome effect, delta2 the state effect, both per
// region mean; neighbor-action coefficients are set to zero in the truth.
inline StEnvironment build_st_environment_from_fit(const SpatioPanelDataset& ds, const StEnvBuildOptions& opt) {
    FitOptions fo{opt.kernel, opt.ridge, true, 1};
    StFitResult fit;
    fit.path = fit_stvcdp(ds, fo);
    fit.bundle = decompose_st_residuals(ds, fit.path, opt.kernel);
    st_covariances(fit.bundle);
    const int r = ds.r, m = ds.m(), d = ds.d(), n = ds.n();
    StEnvironment env;
    env.coeffs = fit.path;
    env.coeffs.neighbor_dropped.assign(r, false);
    env.coeffs.warnings.clear();
    env.delta1 = opt.delta1;
    env.delta2 = opt.delta2;
    for (int g = 0; g < r; ++g) {
        const PanelDataset& b = ds.regions[g];
        const double ybar = b.outcomes.mean();
        const VectorXd sbar = state_means(b);
        env.coeffs.theta[g].col(d + 1).setConstant(opt.delta1 / 100.0 * ybar);
        env.coeffs.theta[g].col(d + 2).setZero();
        for (auto& slice : env.coeffs.Theta[g]) {
            for (int k = 0; k < d; ++k) {
                double s = slice.row(k).segment(1, d).cwiseAbs().sum();
                if (s > opt.phi_cap) slice.row(k).segment(1, d) *= opt.phi_cap / s;
            }
            slice.col(d + 1) = opt.delta2 / 100.0 * sbar;
            slice.col(d + 2).setZero();
        }
        std::vector<MatrixXd> noise;
        for (int t = 0; t + 1 < m; ++t) {
            MatrixXd E = next_states(b, t) - st_design_at(ds, g, t, fit.path.neighbor_dropped[g]) *
                                                 fit.path.Theta[g][t].transpose();
            noise.push_back(E.transpose() * E / static_cast<double>(n));
        }
        env.state_noise_cov.push_back(std::move(noise));
        MatrixXd pool(n, d);
        for (int i = 0; i < n; ++i) pool.row(i) = b.states[i].row(0);
        env.state_init_pool.push_back(std::move(pool));
    }
    env.outcome_cov = fit.bundle.sigma_y_st;
    env.adjacency = ds.adjacency;
    env.coords = ds.coords;
    env.finalize();
    return env;
}

// Ten-region layout: adjacency as an edge structure on a triangular lattice.
inline MatrixXi ten_region_adjacency() {
    MatrixXi A(10, 10);
    A << 0, 1, 1, 1, 0, 0, 0, 0, 0, 0,
         1, 0, 0, 1, 1, 0, 0, 0, 0, 0,
         1, 0, 0, 1, 0, 1, 0, 0, 0, 0,
         1, 1, 1, 0, 1, 1, 1, 0, 0, 0,
         0, 1, 0, 1, 0, 0, 1, 1, 0, 0,
         0, 0, 1, 1, 0, 0, 1, 0, 1, 0,
         0, 0, 0, 1, 1, 1, 0, 1, 1, 1,
         0, 0, 0, 0, 1, 0, 1, 0, 0, 1,
         0, 0, 0, 0, 0, 1, 1, 0, 0, 1,
         0, 0, 0, 0, 0, 0, 1, 1, 1, 0;
    return A;
}

inline MatrixXd ten_region_coords() {
    MatrixXd c(10, 2);
    c << 0.50, 1.00,
         0.25, 0.80,
         0.75, 0.80,
         0.50, 0.60,
         0.25, 0.40,
         0.75, 0.40,
         0.50, 0.25,
         0.25, 0.05,
         0.75, 0.05,
         0.50, 0.00;
    return c;
}

inline MatrixXd spatial_se_cov(const MatrixXd& coords, double sd, double length) {
    const int r = static_cast<int>(coords.rows());
    MatrixXd S(r, r);
    for (int a = 0; a < r; ++a)
        for (int b = 0; b < r; ++b) {
            double d2 = (coords.row(a) - coords.row(b)).squaredNorm();
            S(a, b) = sd * sd * std::exp(-0.5 * d2 / (length * length));
        }
    return S;
}

inline MatrixXd kron(const MatrixXd& A, const MatrixXd& B) {
    MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index a = 0; a < A.rows(); ++a)
        for (Eigen::Index b = 0; b < A.cols(); ++b) K.block(a * B.rows(), b * B.cols(), B.rows(), B.cols()) = A(a, b) * B;
    return K;
}

// One market state (demand) per region, region scale varying smoothly over
// space; day effects split into shared, region-specific, interval-specific and
// idiosyncratic parts.
inline StEnvironment st_city_generator(int m = 48) {
    const int r = 10, d = 1;
    const double pi = 3.14159265358979323846;
    StEnvironment env;
    env.adjacency = ten_region_adjacency();
    env.coords = ten_region_coords();
    env.coeffs = StCoefficientPath::zeros(r, m, d);
    auto tt = [m](int t) { return static_cast<double>(t) / (m - 1); };
    for (int g = 0; g < r; ++g) {
        double scale = 1.0 + 0.3 * (env.coords(g, 1) - 0.5) - 0.2 * (env.coords(g, 0) - 0.5);
        auto mu = [&](int t) { return 50.0 * scale * demand_profile(tt(t)); };
        for (int t = 0; t < m; ++t) {
            env.coeffs.theta[g](t, 0) = 10.0 * scale + 5.0 * std::cos(2 * pi * tt(t));
            env.coeffs.theta[g](t, 1) = 1.2 + 0.2 * std::sin(2 * pi * tt(t));
            if (t + 1 < m) {
                env.coeffs.Theta[g][t](0, 0) = mu(t + 1) - 0.5 * mu(t);
                env.coeffs.Theta[g][t](0, 1) = 0.5;
            }
        }
        env.state_noise_cov.push_back(std::vector<MatrixXd>(m - 1, MatrixXd::Constant(1, 1, 9.0)));
        MatrixXd pool(1, 1);
        pool(0, 0) = 50.0 * scale * demand_profile(0.0);
        env.state_init_pool.push_back(pool);
    }
    MatrixXd Kt = smooth_cov(m, 1.0, 0.25);
    MatrixXd Ks = spatial_se_cov(env.coords, 1.0, 0.35);
    env.outcome_cov = 16.0 * kron(Ks, Kt) + 9.0 * kron(MatrixXd::Identity(r, r), Kt) +
                      4.0 * kron(Ks, MatrixXd::Identity(m, m)) + 9.0 * MatrixXd::Identity(r * m, r * m);
    env.finalize();
    return env;
}

struct StCityAnalog {
    SpatioPanelDataset base;
    double C = 0.0;    // h = C n^{-1/3}
    double C_s = 0.0;  // h_st = C_s r^{-1/3}
    std::uint64_t seed = 0;

    KernelSpec kernel_for(int n) const {
        KernelSpec k{KernelFamily::epanechnikov, C * std::pow(static_cast<double>(n), -1.0 / 3.0), std::nullopt};
        k.h_st = C_s * std::pow(static_cast<double>(base.r), -1.0 / 3.0);
        return k;
    }
    StEnvironment environment(double delta1, double delta2) const {
        StEnvBuildOptions o;
        o.kernel = kernel_for(base.n());
        o.delta1 = delta1;
        o.delta2 = delta2;
        return build_st_environment_from_fit(base, o);
    }
};

inline StCityAnalog make_st_city_analog(std::uint64_t seed = 2024, int n_base = 40, int m = 48) {
    StCityAnalog c;
    c.seed = seed;
    StEnvironment gen = st_city_generator(m);
    c.base = simulate_st_dataset(gen, DesignSpec{DesignKind::spatiotemporal_alternation, 1, seed}, n_base,
                                 derive_seed(seed, {1}));
    // Temporal constant from the pooled regions, spatial constant by region CV.
    PanelDataset pooled = pool_regions(c.base);
    c.C = select_bandwidth(pooled, KernelFamily::epanechnikov, 1e-3, seed).C;
    FitOptions fo{KernelSpec{KernelFamily::epanechnikov, c.C * std::pow(static_cast<double>(n_base), -1.0 / 3.0),
                             std::nullopt},
                  1e-3, true, 1};
    c.C_s = select_spatial_bandwidth(c.base, fo, seed).C;
    return c;
}

// ---------------------------------------------------------------------------
// MSE comparison of the unsmoothed DE estimator across designs.

struct MseRow {
    DesignKind design;
    double mse = 0.0;
    double bias = 0.0;
    int replicates = 0;
};

inline std::vector<MseRow> mse_compare(const Environment& env, const std::vector<DesignSpec>& designs, int n, int R,
                                       std::uint64_t seed, int workers = 1, double ridge = 1e-3) {
    const double truth = estimate_de(env.coeffs);
    std::vector<MseRow> rows;
    for (std::size_t k = 0; k < designs.size(); ++k) {
        std::vector<double> err(R);
        parallel_for(static_cast<std::size_t>(R), workers, [&](std::size_t rep) {
            DesignSpec ds = designs[k];
            ds.seed = derive_seed(seed, {static_cast<std::uint64_t>(rep), 7});
            // Common noise stream across designs for the same replicate.
            PanelDataset data = simulate_dataset(env, ds, n, derive_seed(seed, {static_cast<std::uint64_t>(rep), 8}));
            err[rep] = estimate_de(ols_fit_outcome(data, ridge)) - truth;
        });
        MseRow row;
        row.design = designs[k].kind;
        row.replicates = R;
        for (double e : err) {
            row.mse += e * e;
            row.bias += e;
        }
        row.mse /= R;
        row.bias /= R;
        rows.push_back(row);
    }
    return rows;
}

// Simple AR(1) environment used for the design comparisons: one state, no
// treatment effect, day effects AR(1) with scale c plus white measurement noise.
// varying=true gives smooth time-varying intercept, slope and action effect.
inline Environment ar1_environment(int m, double rho, double c, double meas_sd = 0.0, bool varying = false) {
    Environment env;
    env.coeffs = CoefficientPath::zeros(m, 1);
    for (int t = 0; t < m; ++t) {
        const double x = m > 1 ? static_cast<double>(t) / (m - 1) : 0.0;
        env.coeffs.theta(t, 0) = varying ? 1.0 + std::sin(2.0 * M_PI * x) : 1.0;
        env.coeffs.theta(t, 1) = varying ? 1.0 + 0.5 * std::cos(2.0 * M_PI * x) : 1.0;
        if (varying) env.coeffs.theta(t, 2) = 0.5 * x;
        if (t + 1 < m) env.coeffs.Theta[t](0, 1) = 0.5;
    }
    env.random_effect_kind = "ar1";
    env.rho = rho;
    env.re_scale = c;
    env.random_effect_cov = ar1_cov(m, rho, c);
    env.measurement_sd = VectorXd::Constant(m, meas_sd);
    env.state_noise_cov.assign(m - 1, MatrixXd::Identity(1, 1));
    env.finalize();
    return env;
}

// Two-state linear environment with a wide state spread relative to the
// action shift, so counterfactual rollouts stay inside the data support.
inline Environment linear_benchmark_environment(int m) {
    Environment env;
    env.coeffs = CoefficientPath::zeros(m, 2);
    for (int t = 0; t < m; ++t) {
        const double x = m > 1 ? static_cast<double>(t) / (m - 1) : 0.0;
        env.coeffs.theta.row(t) << 1.0 + 0.5 * std::sin(2.0 * M_PI * x), 0.5, 0.3, 1.0 + 0.3 * std::cos(2.0 * M_PI * x);
        if (t + 1 < m) env.coeffs.Theta[t] << 1.0, 0.5, 0.1, 0.8, 0.5, 0.0, 0.4, 0.48;
    }
    env.random_effect_kind = "ar1";
    env.rho = 0.0;
    env.re_scale = 0.04;
    env.random_effect_cov = ar1_cov(m, 0.0, 0.04);
    env.measurement_sd = VectorXd::Constant(m, 0.2);
    env.state_noise_cov.assign(m > 1 ? m - 1 : 0, MatrixXd::Identity(2, 2));
    env.state_init_mean = VectorXd::Constant(2, 2.0);
    env.state_init_sd = VectorXd::Constant(2, 1.0);
    env.finalize();
    return env;
}

struct SmoothingError {
    double raw = 0.0;       // mean over replicates of sum_t ||theta_hat(t) - theta(t)||^2
    double smoothed = 0.0;  // same for the kernel-smoothed path
    int replicates = 0;
};

// Outcome-coefficient estimation error with and without the plain kernel
// smoother (no centering), switchback design.
inline SmoothingError smoothing_error(const Environment& env, int n, int R, const KernelSpec& kernel,
                                      std::uint64_t seed, int workers = 1, double ridge = 1e-3) {
    std::vector<double> raw(R), sm(R);
    parallel_for(static_cast<std::size_t>(R), workers, [&](std::size_t rep) {
        DesignSpec d{DesignKind::switchback, 1, 0};
        PanelDataset data = simulate_dataset(env, d, n, derive_seed(seed, {static_cast<std::uint64_t>(rep)}));
        CoefficientPath hat = ols_fit_outcome(data, ridge);
        raw[rep] = (hat.theta - env.coeffs.theta).squaredNorm();
        sm[rep] = (smooth_path(hat, kernel).theta - env.coeffs.theta).squaredNorm();
    });
    SmoothingError out;
    out.replicates = R;
    for (int k = 0; k < R; ++k) {
        out.raw += raw[k] / R;
        out.smoothed += sm[k] / R;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rejection-rate studies

struct StudyCell {
    DesignKind design = DesignKind::switchback;
    int n = 8;
    int m = 48;
    int TI = 1;
    double delta1 = 0.0;
    double delta2 = 0.0;
    Effect effect = Effect::DE;
};

struct StudyConfig {
    std::vector<DesignKind> designs{DesignKind::switchback};
    std::vector<int> n_grid;
    std::vector<double> delta1_grid;
    std::vector<double> delta2_grid{0.0};
    std::vector<int> ti_grid;
    std::vector<Effect> effects{Effect::DE};
    int R = 400;
    int B = 400;
    double alpha = 0.05;
    Sides sides = Sides::one_sided_upper;
    std::uint64_t seed = 0;
    int workers = 1;
};

struct StudyRow {
    StudyCell cell;
    double rejection_rate = 0.0;
    double se = 0.0;
    int replicates = 0;  // successful replicates
    int failures = 0;
    std::string first_error;
};

inline std::vector<StudyCell> study_cells(const StudyConfig& cfg, int m) {
    std::vector<StudyCell> cells;
    for (auto design : cfg.designs)
        for (int n : cfg.n_grid)
            for (double d1 : cfg.delta1_grid)
                for (double d2 : cfg.delta2_grid)
                    for (int ti : cfg.ti_grid)
                        for (auto eff : cfg.effects) cells.push_back(StudyCell{design, n, m, ti, d1, d2, eff});
    return cells;
}

// Data seeds depend on cell content (not position or effect), so DE and IE
// rows share datasets and a reduced grid reproduces the same cells.
inline std::uint64_t cell_key(const StudyCell& c) {
    auto q = [](double x) { return static_cast<std::uint64_t>(static_cast<std::int64_t>(std::llround(x * 1e6))); };
    return derive_seed(static_cast<std::uint64_t>(c.design),
                       {static_cast<std::uint64_t>(c.n), static_cast<std::uint64_t>(c.m),
                        static_cast<std::uint64_t>(c.TI), q(c.delta1), q(c.delta2)});
}

// One replicate: returns the reject flag for the given cell.
using ReplicateFn = std::function<bool(const StudyCell&, std::uint64_t data_seed, std::uint64_t test_seed)>;

inline StudyRow run_cell(const StudyCell& cell, const StudyConfig& cfg, const ReplicateFn& fn) {
    std::vector<int> outcome(cfg.R, -1);
    std::vector<std::string> errors(cfg.R);
    const std::uint64_t key = cell_key(cell);
    parallel_for(static_cast<std::size_t>(cfg.R), cfg.workers, [&](std::size_t rep) {
        std::uint64_t ds = derive_seed(cfg.seed, {key, static_cast<std::uint64_t>(rep), 1});
        std::uint64_t ts = derive_seed(cfg.seed, {key, static_cast<std::uint64_t>(rep), 2});
        try {
            outcome[rep] = fn(cell, ds, ts) ? 1 : 0;
        } catch (const Error& e) {
            errors[rep] = e.what();
        }
    });
    StudyRow row;
    row.cell = cell;
    int rejects = 0;
    for (int k = 0; k < cfg.R; ++k) {
        if (outcome[k] < 0) {
            ++row.failures;
            if (row.first_error.empty()) row.first_error = errors[k];
        } else {
            ++row.replicates;
            rejects += outcome[k];
        }
    }
    if (row.replicates > 0) {
        row.rejection_rate = static_cast<double>(rejects) / row.replicates;
        row.se = std::sqrt(row.rejection_rate * (1.0 - row.rejection_rate) / row.replicates);
    }
    return row;
}

using ProgressFn = std::function<void(std::size_t done, std::size_t total, const StudyRow&)>;

inline std::vector<StudyRow> rejection_study(const StudyConfig& cfg, int m, const ReplicateFn& fn,
                                             const ProgressFn& progress = nullptr) {
    if (cfg.R < 1) throw InputError("replicate count must be positive");
    auto cells = study_cells(cfg, m);
    if (cells.empty()) throw InputError("empty study grid");
    std::vector<StudyRow> rows;
    for (std::size_t k = 0; k < cells.size(); ++k) {
        rows.push_back(run_cell(cells[k], cfg, fn));
        if (progress) progress(k + 1, cells.size(), rows.back());
    }
    return rows;
}

// Temporal city-analog scenario: environments per delta are built up front.
struct TemporalScenario {
    CityAnalog analog;
    std::map<double, Environment> envs;
    int B = 400;
    double alpha = 0.05;
    Sides sides = Sides::one_sided_upper;

    void prepare(const std::vector<double>& deltas) {
        for (double d : deltas)
            if (!envs.count(d)) envs.emplace(d, analog.environment(d));
    }

    bool operator()(const StudyCell& c, std::uint64_t data_seed, std::uint64_t test_seed) const {
        const Environment& env = envs.at(c.delta1);
        DesignSpec design{c.design, c.TI, derive_seed(data_seed, {3})};
        PanelDataset data = simulate_dataset(env, design, c.n, data_seed);
        FitOptions opt{analog.kernel_for(c.n), 1e-3, true, 1};
        if (c.effect == Effect::DE) return de_wald_test(data, opt, alpha, sides).reject;
        return ie_bootstrap_test(data, opt, B, alpha, test_seed, sides).reject;
    }
};

struct SpatialScenario {
    StCityAnalog analog;
    std::map<std::pair<double, double>, StEnvironment> envs;
    int B = 400;
    double alpha = 0.05;
    Sides sides = Sides::one_sided_upper;

    void prepare(const std::vector<double>& d1, const std::vector<double>& d2) {
        for (double a : d1)
            for (double b : d2)
                if (!envs.count({a, b})) envs.emplace(std::make_pair(a, b), analog.environment(a, b));
    }

    bool operator()(const StudyCell& c, std::uint64_t data_seed, std::uint64_t test_seed) const {
        const StEnvironment& env = envs.at({c.delta1, c.delta2});
        DesignSpec design{c.design, c.TI, derive_seed(data_seed, {3})};
        SpatioPanelDataset data = simulate_st_dataset(env, design, c.n, data_seed);
        FitOptions opt{analog.kernel_for(c.n), 1e-3, true, 1};
        if (c.effect == Effect::DE) return de_st_wald_test(data, opt, alpha, sides).reject;
        return ie_st_bootstrap_test(data, opt, B, alpha, test_seed, sides).reject;
    }
};

}  // namespace switchlab
