#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "switchlab/errors.hpp"
#include "switchlab/linalg.hpp"
#include "switchlab/panel.hpp"
#include "switchlab/parallel.hpp"
#include "switchlab/rng.hpp"
#include "switchlab/stats.hpp"
#include "switchlab/tvcdp.hpp"

namespace switchlab {

enum class StStage { raw, temporally_smoothed, doubly_smoothed };

// theta[g] row t = (beta0, beta^T, gamma1, gamma2); Theta[g][t] = [phi0 Phi Gamma1 Gamma2].
struct StCoefficientPath {
    int r = 0;
    int m = 0;
    int d = 0;
    std::vector<MatrixXd> theta;
    std::vector<std::vector<MatrixXd>> Theta;
    StStage stage = StStage::raw;
    std::vector<bool> neighbor_dropped;
    std::vector<std::string> warnings;

    static StCoefficientPath zeros(int r, int m, int d) {
        StCoefficientPath c;
        c.r = r;
        c.m = m;
        c.d = d;
        c.theta.assign(r, MatrixXd::Zero(m, d + 3));
        c.Theta.assign(r, std::vector<MatrixXd>(m > 0 ? m - 1 : 0, MatrixXd::Zero(d, d + 3)));
        c.neighbor_dropped.assign(r, false);
        return c;
    }

    // Region g as a temporal path with Gamma1 + Gamma2 as the action effect on states.
    CoefficientPath region_path(int g) const {
        CoefficientPath c = CoefficientPath::zeros(m, d);
        c.theta = theta[g].leftCols(d + 2);
        for (int t = 0; t + 1 < m; ++t) {
            c.Theta[t] = Theta[g][t].leftCols(d + 2);
            c.Theta[t].col(d + 1) += Theta[g][t].col(d + 2);
        }
        c.smoothed = stage != StStage::raw;
        return c;
    }
};

// True when the neighbor-average column lies in span{1, A} for region g over
// all (day, interval) cells; the fit then drops it.
inline bool neighbor_collinear(const SpatioPanelDataset& ds, int g) {
    if (ds.r == 1) return true;
    const MatrixXd x = ds.regions[g].actions.cast<double>();
    const MatrixXd& y = ds.neighbor_avg[g];
    const double cnt = static_cast<double>(x.size());
    const double mx = x.sum() / cnt, my = y.sum() / cnt;
    const double sxx = (x.array() - mx).square().sum();
    const double syy = (y.array() - my).square().sum();
    const double sxy = ((x.array() - mx) * (y.array() - my)).sum();
    const double rss = sxx > 0 ? syy - sxy * sxy / sxx : syy;
    return rss <= 1e-9 * (1.0 + syy);
}

inline MatrixXd st_design_at(const SpatioPanelDataset& ds, int g, int t, bool dropped) {
    const PanelDataset& b = ds.regions[g];
    MatrixXd X(b.n, b.d + 3);
    for (int i = 0; i < b.n; ++i) {
        X(i, 0) = 1.0;
        X.row(i).segment(1, b.d) = b.states[i].row(t);
        X(i, b.d + 1) = b.actions(i, t);
        X(i, b.d + 2) = dropped ? 0.0 : ds.neighbor_avg[g](i, t);
    }
    return X;
}

// Ridge factor with a dropped neighbor column isolated on a unit diagonal, so its
// coefficient is exactly zero and it carries no variance.
inline Eigen::LDLT<MatrixXd> st_factor(const MatrixXd& X, double ridge, bool dropped, int t, int g) {
    MatrixXd G = X.transpose() * X;
    const Eigen::Index q = G.rows() - 1;
    if (dropped) G(q, q) = 1.0 - ridge;
    return ridge_factor(G, ridge, t + 1, g + 1);
}

inline std::vector<bool> neighbor_drop_flags(const SpatioPanelDataset& ds) {
    std::vector<bool> f(ds.r);
    for (int g = 0; g < ds.r; ++g) f[g] = neighbor_collinear(ds, g);
    return f;
}

inline StCoefficientPath st_ols_fit(const SpatioPanelDataset& ds, double ridge, const std::vector<bool>& dropped) {
    const int r = ds.r, m = ds.m(), d = ds.d();
    StCoefficientPath c = StCoefficientPath::zeros(r, m, d);
    c.neighbor_dropped = dropped;
    for (int g = 0; g < r; ++g) {
        const PanelDataset& b = ds.regions[g];
        for (int t = 0; t < m; ++t) {
            MatrixXd X = st_design_at(ds, g, t, dropped[g]);
            auto f = st_factor(X, ridge, dropped[g], t, g);
            c.theta[g].row(t) = f.solve(X.transpose() * b.outcomes.col(t)).transpose();
            if (t + 1 < m) c.Theta[g][t] = f.solve(X.transpose() * next_states(b, t)).transpose();
        }
    }
    return c;
}

inline StCoefficientPath st_temporal_smooth(const StCoefficientPath& raw, const KernelSpec& spec) {
    StCoefficientPath c = raw;
    MatrixXd W = outcome_smoother(spec, raw.m);
    MatrixXd Ws = raw.m > 1 ? state_smoother(spec, raw.m) : MatrixXd();
    for (int g = 0; g < raw.r; ++g) {
        c.theta[g] = W * raw.theta[g];
        const int q = raw.m - 1;
        for (int t = 0; t < q; ++t) {
            MatrixXd acc = MatrixXd::Zero(raw.d, raw.d + 3);
            for (int k = 0; k < q; ++k)
                if (Ws(t, k) != 0.0) acc += Ws(t, k) * raw.Theta[g][k];
            c.Theta[g][t] = acc;
        }
    }
    c.stage = StStage::temporally_smoothed;
    return c;
}

inline StCoefficientPath st_spatial_smooth(const StCoefficientPath& tp, const MatrixXd& K) {
    StCoefficientPath c = tp;
    for (int g = 0; g < tp.r; ++g) {
        c.theta[g].setZero();
        for (auto& s : c.Theta[g]) s.setZero();
        for (int l = 0; l < tp.r; ++l) {
            if (K(g, l) == 0.0) continue;
            c.theta[g] += K(g, l) * tp.theta[l];
            for (int t = 0; t + 1 < tp.m; ++t) c.Theta[g][t] += K(g, l) * tp.Theta[l][t];
        }
    }
    c.stage = StStage::doubly_smoothed;
    return c;
}

inline std::vector<MatrixXd> st_state_means(const SpatioPanelDataset& ds) {
    std::vector<MatrixXd> c;
    for (const auto& b : ds.regions) c.push_back(interval_state_means(b));
    return c;
}

inline void st_shift_intercepts(StCoefficientPath& p, const std::vector<MatrixXd>& centers, double sign) {
    for (int g = 0; g < p.r; ++g) {
        for (int t = 0; t < p.m; ++t)
            p.theta[g](t, 0) += sign * p.theta[g].row(t).segment(1, p.d).dot(centers[g].row(t));
        for (int t = 0; t + 1 < p.m; ++t)
            p.Theta[g][t].col(0) += sign * p.Theta[g][t].block(0, 1, p.d, p.d) * centers[g].row(t).transpose();
    }
}

// Temporal then spatial smoothing, both in centered coordinates (see smooth_path).
inline StCoefficientPath st_double_smooth(const StCoefficientPath& raw, const KernelSpec& spec, const MatrixXd& K,
                                          const std::vector<MatrixXd>& centers) {
    StCoefficientPath c = raw;
    st_shift_intercepts(c, centers, 1.0);
    StCoefficientPath sm = st_spatial_smooth(st_temporal_smooth(c, spec), K);
    for (int g = 0; g < c.r; ++g) {
        sm.theta[g].col(0) = c.theta[g].col(0);
        for (int t = 0; t + 1 < c.m; ++t) sm.Theta[g][t].col(0) = c.Theta[g][t].col(0);
    }
    st_shift_intercepts(sm, centers, -1.0);
    return sm;
}

inline MatrixXd st_spatial_matrix(const SpatioPanelDataset& ds, const KernelSpec& spec) {
    if (ds.r == 1) return MatrixXd::Ones(1, 1);
    return spatial_matrix(spec, ds.coords);
}

inline std::vector<std::string> drop_warnings(const std::vector<bool>& dropped) {
    std::vector<std::string> w;
    if (dropped.size() < 2) return w;
    for (std::size_t g = 0; g < dropped.size(); ++g)
        if (dropped[g])
            w.push_back("region " + std::to_string(g + 1) +
                        ": neighbor-average action collinear with own action; gamma2 and Gamma2 set to 0");
    return w;
}

inline StCoefficientPath fit_stvcdp(const SpatioPanelDataset& ds, const FitOptions& opt) {
    auto dropped = neighbor_drop_flags(ds);
    StCoefficientPath raw = st_ols_fit(ds, opt.ridge, dropped);
    raw.warnings = drop_warnings(dropped);
    if (!opt.smoothed) return raw;
    return st_double_smooth(raw, opt.kernel, st_spatial_matrix(ds, opt.kernel), st_state_means(ds));
}

inline double estimate_de_st(const StCoefficientPath& path) {
    double s = 0.0;
    for (int g = 0; g < path.r; ++g) s += path.theta[g].col(path.d + 1).sum() + path.theta[g].col(path.d + 2).sum();
    return s;
}

inline double estimate_ie_st(const StCoefficientPath& path) {
    double s = 0.0;
    for (int g = 0; g < path.r; ++g) s += estimate_ie(path.region_path(g));
    return s;
}

inline std::pair<double, double> compute_true_effects_st(const StCoefficientPath& coeffs) {
    return {estimate_de_st(coeffs), estimate_ie_st(coeffs)};
}

struct StCovarianceBundle {
    int n = 0, m = 0, r = 0;
    // One m×r matrix per day.
    std::vector<MatrixXd> e_hat, eta1, eta2, eta3, eps;
    MatrixXd sigma_eta1;               // (r m)×(r m), index g*m + t
    std::vector<MatrixXd> sigma_eta2;  // per region, m×m
    std::vector<MatrixXd> sigma_eta3;  // per interval, r×r
    MatrixXd sigma_eps;                // m×r
    MatrixXd sigma_y_st;               // (r m)×(r m)
    MatrixXd V_theta_st;               // filled only below the dense threshold
    MatrixXd V_theta_st_smoothed;
};

inline std::vector<MatrixXd> st_outcome_residuals(const SpatioPanelDataset& ds, const StCoefficientPath& path) {
    const int n = ds.n(), m = ds.m(), r = ds.r;
    std::vector<MatrixXd> E(n, MatrixXd(m, r));
    for (int g = 0; g < r; ++g)
        for (int t = 0; t < m; ++t) {
            VectorXd fit = st_design_at(ds, g, t, path.neighbor_dropped[g]) * path.theta[g].row(t).transpose();
            for (int i = 0; i < n; ++i) E[i](t, g) = ds.regions[g].outcomes(i, t) - fit(i);
        }
    return E;
}

// eta1 keeps what survives both smoothers, eta2 the temporally smooth but
// region-specific part, eta3 the spatially smooth but interval-specific part.
inline StCovarianceBundle decompose_st_residuals(const SpatioPanelDataset& ds, const StCoefficientPath& path,
                                                 const KernelSpec& spec) {
    StCovarianceBundle b;
    b.n = ds.n();
    b.m = ds.m();
    b.r = ds.r;
    b.e_hat = st_outcome_residuals(ds, path);
    MatrixXd W = outcome_smoother(spec, b.m);
    MatrixXd K = st_spatial_matrix(ds, spec);
    for (int i = 0; i < b.n; ++i) {
        const MatrixXd& E = b.e_hat[i];
        MatrixXd T = W * E;
        MatrixXd S = E * K.transpose();
        MatrixXd I1 = W * S;
        b.eta1.push_back(I1);
        b.eta2.push_back(T - I1);
        b.eta3.push_back(S - I1);
        b.eps.push_back(E - I1 - b.eta2.back() - b.eta3.back());
    }
    return b;
}

inline void st_covariances(StCovarianceBundle& b) {
    const int n = b.n, m = b.m, r = b.r;
    if (n < 2) throw InputError("spatio-temporal covariances need at least two days");
    const double den = static_cast<double>(n - 1);
    MatrixXd I1(n, r * m);
    for (int i = 0; i < n; ++i)
        for (int g = 0; g < r; ++g) I1.row(i).segment(g * m, m) = b.eta1[i].col(g).transpose();
    b.sigma_eta1 = I1.transpose() * I1 / den;
    b.sigma_eta2.assign(r, MatrixXd::Zero(m, m));
    for (int g = 0; g < r; ++g) {
        MatrixXd X(n, m);
        for (int i = 0; i < n; ++i) X.row(i) = b.eta2[i].col(g).transpose();
        b.sigma_eta2[g] = X.transpose() * X / den;
    }
    b.sigma_eta3.assign(m, MatrixXd::Zero(r, r));
    for (int t = 0; t < m; ++t) {
        MatrixXd X(n, r);
        for (int i = 0; i < n; ++i) X.row(i) = b.eta3[i].row(t);
        b.sigma_eta3[t] = X.transpose() * X / den;
    }
    b.sigma_eps = MatrixXd::Zero(m, r);
    for (int i = 0; i < n; ++i) b.sigma_eps += b.eps[i].cwiseAbs2();
    b.sigma_eps /= den;

    b.sigma_y_st = b.sigma_eta1;
    for (int g = 0; g < r; ++g) b.sigma_y_st.block(g * m, g * m, m, m) += b.sigma_eta2[g];
    for (int t = 0; t < m; ++t)
        for (int g1 = 0; g1 < r; ++g1)
            for (int g2 = 0; g2 < r; ++g2) b.sigma_y_st(g1 * m + t, g2 * m + t) += b.sigma_eta3[t](g1, g2);
    for (int g = 0; g < r; ++g)
        for (int t = 0; t < m; ++t) b.sigma_y_st(g * m + t, g * m + t) += b.sigma_eps(t, g);
}

// Inverse Gram matrices per (region, interval), index g*m + t.
inline std::vector<MatrixXd> st_inverse_grams(const SpatioPanelDataset& ds, double ridge,
                                              const std::vector<bool>& dropped) {
    const int m = ds.m(), p = ds.p();
    std::vector<MatrixXd> out;
    for (int g = 0; g < ds.r; ++g)
        for (int t = 0; t < m; ++t) {
            MatrixXd X = st_design_at(ds, g, t, dropped[g]);
            out.push_back(st_factor(X, ridge, dropped[g], t, g).solve(MatrixXd::Identity(p, p)));
        }
    return out;
}

// w (rows g*m + t, p columns) = K^T c then W^T per region, for c selecting gamma1 and gamma2.
inline MatrixXd de_st_contrast(const SpatioPanelDataset& ds, const MatrixXd& W, const MatrixXd& K) {
    const int m = ds.m(), d = ds.d(), r = ds.r;
    MatrixXd w = MatrixXd::Zero(r * m, d + 3);
    VectorXd kcol = K.colwise().sum().transpose();
    VectorXd wcol = W.colwise().sum().transpose();
    for (int g = 0; g < r; ++g)
        for (int t = 0; t < m; ++t) {
            w(g * m + t, d + 1) = kcol(g) * wcol(t);
            w(g * m + t, d + 2) = kcol(g) * wcol(t);
        }
    return w;
}

inline double st_contrast_variance(const SpatioPanelDataset& ds, const MatrixXd& sigma_y, const MatrixXd& w,
                                   double ridge, const std::vector<bool>& dropped) {
    const int n = ds.n(), m = ds.m();
    auto Ginv = st_inverse_grams(ds, ridge, dropped);
    MatrixXd Vi(n, ds.r * m);
    for (int g = 0; g < ds.r; ++g)
        for (int t = 0; t < m; ++t) {
            VectorXd u = Ginv[g * m + t] * w.row(g * m + t).transpose();
            Vi.col(g * m + t) = st_design_at(ds, g, t, dropped[g]) * u;
        }
    return (Vi * sigma_y).cwiseProduct(Vi).sum();
}

// Dense V and K V K^T over stacked (g, t, component) coordinates; sizes grow as (r m p)^2.
inline std::pair<MatrixXd, MatrixXd> st_sandwich_dense(const SpatioPanelDataset& ds, const MatrixXd& sigma_y,
                                                       const KernelSpec& spec, double ridge,
                                                       const std::vector<bool>& dropped) {
    const int m = ds.m(), p = ds.p(), r = ds.r, q = r * m;
    auto Ginv = st_inverse_grams(ds, ridge, dropped);
    std::vector<MatrixXd> X;
    for (int g = 0; g < r; ++g)
        for (int t = 0; t < m; ++t) X.push_back(st_design_at(ds, g, t, dropped[g]));
    MatrixXd V(q * p, q * p);
    for (int a = 0; a < q; ++a)
        for (int c = a; c < q; ++c) {
            MatrixXd blk = Ginv[a] * (sigma_y(a, c) * (X[a].transpose() * X[c])) * Ginv[c];
            V.block(a * p, c * p, p, p) = blk;
            V.block(c * p, a * p, p, p) = blk.transpose();
        }
    MatrixXd W = outcome_smoother(spec, m);
    MatrixXd K = st_spatial_matrix(ds, spec);
    MatrixXd temporal = MatrixXd::Zero(q, q), spatial = MatrixXd::Zero(q, q);
    for (int g = 0; g < r; ++g) temporal.block(g * m, g * m, m, m) = W;
    for (int g = 0; g < r; ++g)
        for (int l = 0; l < r; ++l) spatial.block(g * m, l * m, m, m).diagonal().setConstant(K(g, l));
    MatrixXd Kmap = smoothing_map(spatial * temporal, p);
    return {V, Kmap * V * Kmap.transpose()};
}

struct StFitResult {
    StCoefficientPath path;
    StCovarianceBundle bundle;
};

// Full fit plus covariance pieces; dense coefficient covariances only when
// r*m*(d+3) <= dense_threshold.
inline StFitResult fit_stvcdp_full(const SpatioPanelDataset& ds, const FitOptions& opt, int dense_threshold = 600) {
    StFitResult res;
    res.path = fit_stvcdp(ds, opt);
    res.bundle = decompose_st_residuals(ds, res.path, opt.kernel);
    st_covariances(res.bundle);
    if (ds.r * ds.m() * ds.p() <= dense_threshold) {
        auto [V, Vs] = st_sandwich_dense(ds, res.bundle.sigma_y_st, opt.kernel, opt.ridge, res.path.neighbor_dropped);
        res.bundle.V_theta_st = std::move(V);
        res.bundle.V_theta_st_smoothed = std::move(Vs);
    }
    return res;
}

inline TestReport de_st_wald_test(const SpatioPanelDataset& ds, const FitOptions& opt, double alpha,
                                  Sides sides = Sides::one_sided_upper) {
    StCoefficientPath path = fit_stvcdp(ds, opt);
    StCovarianceBundle b = decompose_st_residuals(ds, path, opt.kernel);
    st_covariances(b);
    MatrixXd W = opt.smoothed ? outcome_smoother(opt.kernel, ds.m()) : MatrixXd::Identity(ds.m(), ds.m());
    MatrixXd K = opt.smoothed ? st_spatial_matrix(ds, opt.kernel) : MatrixXd::Identity(ds.r, ds.r);
    MatrixXd w = de_st_contrast(ds, W, K);
    double var = st_contrast_variance(ds, b.sigma_y_st, w, opt.ridge, path.neighbor_dropped);
    TestReport rep = wald_report(Effect::DE, estimate_de_st(path), std::sqrt(std::max(var, 0.0)), alpha, sides);
    rep.warnings = path.warnings;
    return rep;
}

inline SpatioPanelDataset st_pseudo_dataset(const SpatioPanelDataset& ds, const StCoefficientPath& path,
                                            const std::vector<MatrixXd>& e_hat,
                                            const std::vector<std::vector<MatrixXd>>& E_hat, const VectorXd& xi) {
    SpatioPanelDataset out = ds;
    const int n = ds.n(), m = ds.m(), d = ds.d();
    for (int g = 0; g < ds.r; ++g) {
        PanelDataset& b = out.regions[g];
        const bool drop = path.neighbor_dropped[g];
        VectorXd z(d + 3);
        for (int i = 0; i < n; ++i) {
            z(0) = 1.0;
            for (int t = 0; t < m; ++t) {
                z.segment(1, d) = b.states[i].row(t).transpose();
                z(d + 1) = b.actions(i, t);
                z(d + 2) = drop ? 0.0 : ds.neighbor_avg[g](i, t);
                b.outcomes(i, t) = path.theta[g].row(t).dot(z) + xi(i) * e_hat[g](i, t);
                if (t + 1 < m) b.states[i].row(t + 1) = (path.Theta[g][t] * z).transpose() + xi(i) * E_hat[g][t].row(i);
            }
        }
    }
    return out;
}

inline StCoefficientPath fit_stvcdp_with(const SpatioPanelDataset& ds, const FitOptions& opt,
                                         const std::vector<bool>& dropped, const MatrixXd& K) {
    StCoefficientPath raw = st_ols_fit(ds, opt.ridge, dropped);
    if (!opt.smoothed) return raw;
    return st_double_smooth(raw, opt.kernel, K, st_state_means(ds));
}

inline TestReport ie_st_bootstrap_test(const SpatioPanelDataset& ds, const FitOptions& opt, int B, double alpha,
                                       std::uint64_t seed, Sides sides = Sides::one_sided_upper) {
    if (B < 1) throw InputError("bootstrap replicate count must be positive");
    if (ds.m() < 2) throw InputError("IE needs at least two intervals");
    const int n = ds.n(), m = ds.m();
    auto dropped = neighbor_drop_flags(ds);
    MatrixXd K = opt.smoothed ? st_spatial_matrix(ds, opt.kernel) : MatrixXd::Identity(ds.r, ds.r);
    StCoefficientPath path = fit_stvcdp_with(ds, opt, dropped, K);
    const double ie = estimate_ie_st(path);
    std::vector<MatrixXd> e_hat(ds.r);
    std::vector<std::vector<MatrixXd>> E_hat(ds.r);
    for (int g = 0; g < ds.r; ++g) {
        const PanelDataset& b = ds.regions[g];
        e_hat[g] = MatrixXd(n, m);
        for (int t = 0; t < m; ++t) {
            MatrixXd X = st_design_at(ds, g, t, dropped[g]);
            e_hat[g].col(t) = b.outcomes.col(t) - X * path.theta[g].row(t).transpose();
            if (t + 1 < m) E_hat[g].push_back(next_states(b, t) - X * path.Theta[g][t].transpose());
        }
    }
    std::vector<double> draws(B);
    parallel_for(static_cast<std::size_t>(B), opt.workers, [&](std::size_t b) {
        Engine eng = make_engine(seed, {static_cast<std::uint64_t>(b)});
        VectorXd xi(n);
        for (int i = 0; i < n; ++i) xi(i) = std_normal(eng);
        SpatioPanelDataset pseudo = st_pseudo_dataset(ds, path, e_hat, E_hat, xi);
        draws[b] = estimate_ie_st(fit_stvcdp_with(pseudo, opt, dropped, K)) - ie;
    });
    auto [lo, hi] = std::minmax_element(draws.begin(), draws.end());
    if (*hi - *lo <= 1e-10 * std::max(1.0, std::fabs(ie))) throw BootstrapDegenerate();
    TestReport rep = bootstrap_report(Effect::IE, ie, std::move(draws), alpha, sides);
    rep.warnings = drop_warnings(dropped);
    return rep;
}

// Regions stacked as extra days (region-major), for temporal bandwidth selection.
inline PanelDataset pool_regions(const SpatioPanelDataset& ds) {
    const int n = ds.n();
    PanelDataset pooled = PanelDataset::zeros(n * ds.r, ds.m(), ds.d());
    for (int g = 0; g < ds.r; ++g)
        for (int i = 0; i < n; ++i) {
            pooled.states[g * n + i] = ds.regions[g].states[i];
            pooled.actions.row(g * n + i) = ds.regions[g].actions.row(i);
            pooled.outcomes.row(g * n + i) = ds.regions[g].outcomes.row(i);
        }
    return pooled;
}

struct SpatialBandwidthChoice {
    double C = 0.0;
    double h_st = 0.0;
    std::vector<double> grid;
    std::vector<double> cv_error;
};

// h_st = C * r^{-1/3}; C from region-level CV predicting held-out regions'
// outcomes with kappa weights over the training regions.
inline SpatialBandwidthChoice select_spatial_bandwidth(const SpatioPanelDataset& ds, const FitOptions& opt,
                                                       std::uint64_t seed = 0, int folds = 5,
                                                       std::vector<double> grid = default_bandwidth_grid()) {
    SpatialBandwidthChoice sc;
    const double scale = std::pow(static_cast<double>(ds.r), -1.0 / 3.0);
    sc.grid = grid;
    sc.cv_error.assign(grid.size(), 0.0);
    if (ds.r < 2) {
        sc.C = grid.back();
        sc.h_st = sc.C * scale;
        return sc;
    }
    folds = std::max(2, std::min(folds, ds.r));
    auto dropped = neighbor_drop_flags(ds);
    auto centers = st_state_means(ds);
    StCoefficientPath raw = st_ols_fit(ds, opt.ridge, dropped);
    st_shift_intercepts(raw, centers, 1.0);
    StCoefficientPath tp = st_temporal_smooth(raw, opt.kernel);
    auto label = fold_labels(ds.r, folds, seed);
    const double inf = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const double h = grid[c] * scale;
        for (int g = 0; g < ds.r && std::isfinite(sc.cv_error[c]); ++g) {
            MatrixXd pred = MatrixXd::Zero(ds.m(), ds.p());
            double total = 0.0;
            for (int l = 0; l < ds.r; ++l) {
                if (label[l] == label[g]) continue;
                double k = kernel_eval(opt.kernel.family, (ds.coords(g, 0) - ds.coords(l, 0)) / h) *
                           kernel_eval(opt.kernel.family, (ds.coords(g, 1) - ds.coords(l, 1)) / h);
                if (k == 0.0) continue;
                pred += k * tp.theta[l];
                total += k;
            }
            if (!(total > 0)) {
                sc.cv_error[c] = inf;
                break;
            }
            pred /= total;
            for (int t = 0; t < ds.m(); ++t) pred(t, 0) -= pred.row(t).segment(1, ds.d()).dot(centers[g].row(t));
            for (int t = 0; t < ds.m(); ++t) {
                VectorXd fit = st_design_at(ds, g, t, dropped[g]) * pred.row(t).transpose();
                sc.cv_error[c] += (ds.regions[g].outcomes.col(t) - fit).squaredNorm();
            }
        }
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < grid.size(); ++c)
        if (sc.cv_error[c] < sc.cv_error[best]) best = c;
    sc.C = grid[best];
    sc.h_st = grid[best] * scale;
    if (!std::isfinite(sc.cv_error[best])) throw AllWeightsZero();
    return sc;
}

}  // namespace switchlab
