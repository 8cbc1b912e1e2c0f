#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "switchlab/errors.hpp"
#include "switchlab/linalg.hpp"
#include "switchlab/panel.hpp"
#include "switchlab/parallel.hpp"
#include "switchlab/rng.hpp"
#include "switchlab/stats.hpp"

namespace switchlab {

// theta row t = (beta0, beta^T, gamma); Theta[t] = [phi0 Phi Gamma] (d×(d+2)).
struct CoefficientPath {
    int m = 0;
    int d = 0;
    MatrixXd theta;
    std::vector<MatrixXd> Theta;
    bool smoothed = false;

    static CoefficientPath zeros(int m, int d) {
        CoefficientPath c;
        c.m = m;
        c.d = d;
        c.theta = MatrixXd::Zero(m, d + 2);
        c.Theta.assign(m > 0 ? m - 1 : 0, MatrixXd::Zero(d, d + 2));
        return c;
    }

    double beta0(int t) const { return theta(t, 0); }
    VectorXd beta(int t) const { return theta.row(t).segment(1, d).transpose(); }
    double gamma(int t) const { return theta(t, d + 1); }
    VectorXd phi0(int t) const { return Theta[t].col(0); }
    MatrixXd Phi(int t) const { return Theta[t].block(0, 1, d, d); }
    VectorXd Gamma(int t) const { return Theta[t].col(d + 1); }
};

struct FitOptions {
    KernelSpec kernel;
    double ridge = 1e-3;
    bool smoothed = true;
    int workers = 1;
};

// Stacked regressors for one interval: row i = Z_{i,t}^T.
inline MatrixXd design_at(const PanelDataset& ds, int t) {
    MatrixXd X(ds.n, ds.d + 2);
    for (int i = 0; i < ds.n; ++i) {
        X(i, 0) = 1.0;
        X.row(i).segment(1, ds.d) = ds.states[i].row(t);
        X(i, ds.d + 1) = ds.actions(i, t);
    }
    return X;
}

inline CoefficientPath ols_fit_outcome(const PanelDataset& ds, double ridge = 1e-3) {
    CoefficientPath c = CoefficientPath::zeros(ds.m, ds.d);
    for (int t = 0; t < ds.m; ++t) {
        MatrixXd X = design_at(ds, t);
        auto f = ridge_factor(X.transpose() * X, ridge, t + 1);
        c.theta.row(t) = f.solve(X.transpose() * ds.outcomes.col(t)).transpose();
    }
    return c;
}

inline MatrixXd next_states(const PanelDataset& ds, int t) {
    MatrixXd Y(ds.n, ds.d);
    for (int i = 0; i < ds.n; ++i) Y.row(i) = ds.states[i].row(t + 1);
    return Y;
}

inline std::vector<MatrixXd> ols_fit_state_slices(const PanelDataset& ds, double ridge = 1e-3) {
    std::vector<MatrixXd> out;
    for (int t = 0; t + 1 < ds.m; ++t) {
        MatrixXd X = design_at(ds, t);
        auto f = ridge_factor(X.transpose() * X, ridge, t + 1);
        out.push_back(f.solve(X.transpose() * next_states(ds, t)).transpose());
    }
    return out;
}

inline CoefficientPath ols_fit_state(const PanelDataset& ds, double ridge = 1e-3) {
    CoefficientPath c = CoefficientPath::zeros(ds.m, ds.d);
    c.Theta = ols_fit_state_slices(ds, ridge);
    return c;
}

inline CoefficientPath ols_fit(const PanelDataset& ds, double ridge = 1e-3) {
    CoefficientPath c = ols_fit_outcome(ds, ridge);
    c.Theta = ols_fit_state_slices(ds, ridge);
    return c;
}

inline MatrixXd outcome_smoother(const KernelSpec& spec, int m) { return smoothing_matrix(spec, m, m); }
inline MatrixXd state_smoother(const KernelSpec& spec, int m) { return smoothing_matrix(spec, m - 1, m); }

inline CoefficientPath smooth_path(const CoefficientPath& path, const KernelSpec& spec) {
    CoefficientPath out = path;
    out.theta = outcome_smoother(spec, path.m) * path.theta;
    if (!path.Theta.empty()) {
        MatrixXd W = state_smoother(spec, path.m);
        const int g = static_cast<int>(path.Theta.size());
        for (int t = 0; t < g; ++t) {
            MatrixXd acc = MatrixXd::Zero(path.d, path.d + 2);
            for (int k = 0; k < g; ++k)
                if (W(t, k) != 0.0) acc += W(t, k) * path.Theta[k];
            out.Theta[t] = acc;
        }
    }
    out.smoothed = true;
    return out;
}

// Per-interval mean state, m×d.
inline MatrixXd interval_state_means(const PanelDataset& ds) {
    MatrixXd c = MatrixXd::Zero(ds.m, ds.d);
    for (int i = 0; i < ds.n; ++i) c += ds.states[i];
    return ds.n > 0 ? MatrixXd(c / static_cast<double>(ds.n)) : c;
}

// sign = +1 re-expresses intercepts as fitted values at the per-interval
// centers; sign = -1 undoes it.
inline void shift_intercepts(CoefficientPath& p, const MatrixXd& centers, double sign) {
    for (int t = 0; t < p.m; ++t) p.theta(t, 0) += sign * p.beta(t).dot(centers.row(t).transpose());
    for (int t = 0; t + 1 < p.m; ++t) p.Theta[t].col(0) += sign * p.Phi(t) * centers.row(t).transpose();
}

// Smoothing in centered coordinates: slopes and action effects are smoothed,
// the intercept at the per-interval state mean is kept raw. Smoothing it
// leaves a bias shared by all days, which the multiplier bootstrap turns into
// noise and the IE test becomes conservative.
inline CoefficientPath smooth_path(const CoefficientPath& path, const KernelSpec& spec, const MatrixXd& centers) {
    CoefficientPath c = path;
    shift_intercepts(c, centers, 1.0);
    CoefficientPath sm = smooth_path(c, spec);
    sm.theta.col(0) = c.theta.col(0);
    for (std::size_t t = 0; t < c.Theta.size(); ++t) sm.Theta[t].col(0) = c.Theta[t].col(0);
    c = sm;
    shift_intercepts(c, centers, -1.0);
    return c;
}

inline double estimate_de(const CoefficientPath& path) { return path.theta.col(path.d + 1).sum(); }

// Sum over t >= 2 of beta(t)^T v_t with v_2 = Gamma(1), v_{t+1} = Phi(t) v_t + Gamma(t).
inline double estimate_ie(const CoefficientPath& path) {
    if (path.m < 2) return 0.0;
    double ie = 0.0;
    VectorXd v = path.Gamma(0);
    for (int t = 1; t < path.m; ++t) {
        ie += path.beta(t).dot(v);
        if (t + 1 < path.m) v = path.Phi(t) * v + path.Gamma(t);
    }
    return ie;
}

inline std::pair<double, double> compute_true_effects(const CoefficientPath& coeffs) {
    return {estimate_de(coeffs), estimate_ie(coeffs)};
}

struct CovarianceBundle {
    MatrixXd e_hat;    // n×m
    MatrixXd eta_hat;  // n×m
    MatrixXd eps_hat;  // n×m
    MatrixXd sigma_y;  // m×m
    MatrixXd V_theta;
    MatrixXd V_theta_smoothed;
};

inline MatrixXd outcome_residuals(const PanelDataset& ds, const CoefficientPath& path) {
    MatrixXd e(ds.n, ds.m);
    for (int t = 0; t < ds.m; ++t) e.col(t) = ds.outcomes.col(t) - design_at(ds, t) * path.theta.row(t).transpose();
    return e;
}

inline CovarianceBundle decompose_residuals(const PanelDataset& ds, const CoefficientPath& path,
                                            const KernelSpec& spec) {
    CovarianceBundle b;
    b.e_hat = outcome_residuals(ds, path);
    b.eta_hat = b.e_hat * outcome_smoother(spec, ds.m).transpose();
    b.eps_hat = b.e_hat - b.eta_hat;
    return b;
}

inline MatrixXd outcome_covariance(const CovarianceBundle& b) {
    const double n = static_cast<double>(b.e_hat.rows());
    MatrixXd S = b.eta_hat.transpose() * b.eta_hat / n;
    S.diagonal() += (b.eps_hat.array().square().colwise().sum() / n).matrix().transpose();
    return S;
}

// Inverse Gram matrices (with ridge) per interval, shared by every sandwich form.
inline std::vector<MatrixXd> inverse_grams(const PanelDataset& ds, double ridge) {
    std::vector<MatrixXd> out;
    for (int t = 0; t < ds.m; ++t) {
        MatrixXd X = design_at(ds, t);
        auto f = ridge_factor(X.transpose() * X, ridge, t + 1);
        out.push_back(f.solve(MatrixXd::Identity(ds.d + 2, ds.d + 2)));
    }
    return out;
}

// Omega = W kron I_p, mapping stacked raw coefficients to smoothed ones.
inline MatrixXd smoothing_map(const MatrixXd& W, int p) {
    MatrixXd Om = MatrixXd::Zero(W.rows() * p, W.cols() * p);
    for (Eigen::Index a = 0; a < W.rows(); ++a)
        for (Eigen::Index c = 0; c < W.cols(); ++c)
            if (W(a, c) != 0.0) Om.block(a * p, c * p, p, p).diagonal().setConstant(W(a, c));
    return Om;
}

inline std::pair<MatrixXd, MatrixXd> sandwich_covariance(const PanelDataset& ds, const MatrixXd& sigma_y,
                                                         const KernelSpec& spec, double ridge = 1e-3) {
    const int m = ds.m, p = ds.d + 2;
    auto Ginv = inverse_grams(ds, ridge);
    std::vector<MatrixXd> X;
    for (int t = 0; t < m; ++t) X.push_back(design_at(ds, t));
    MatrixXd V(m * p, m * p);
    for (int a = 0; a < m; ++a)
        for (int c = a; c < m; ++c) {
            MatrixXd blk = Ginv[a] * (sigma_y(a, c) * (X[a].transpose() * X[c])) * Ginv[c];
            V.block(a * p, c * p, p, p) = blk;
            V.block(c * p, a * p, p, p) = blk.transpose();
        }
    MatrixXd Om = smoothing_map(outcome_smoother(spec, m), p);
    MatrixXd Vs = Om * V * Om.transpose();
    return {V, Vs};
}

// c^T Omega V Omega^T c without forming V: w = Omega^T c, u_t = Ginv_t w_t,
// v_i(t) = Z_{i,t}^T u_t, result = sum_i v_i^T Sigma v_i.
inline double contrast_variance(const PanelDataset& ds, const MatrixXd& sigma_y, const MatrixXd& w,
                                double ridge) {
    const int m = ds.m;
    auto Ginv = inverse_grams(ds, ridge);
    MatrixXd Vi(ds.n, m);
    for (int t = 0; t < m; ++t) {
        VectorXd u = Ginv[t] * w.row(t).transpose();
        Vi.col(t) = design_at(ds, t) * u;
    }
    return (Vi * sigma_y).cwiseProduct(Vi).sum();
}

// Rows index intervals; a one in the gamma column of every row, mapped through W^T.
inline MatrixXd de_contrast(int m, int d, const MatrixXd* W) {
    MatrixXd w = MatrixXd::Zero(m, d + 2);
    if (W)
        w.col(d + 1) = W->colwise().sum().transpose();
    else
        w.col(d + 1).setOnes();
    return w;
}

inline TestReport de_wald_test(const PanelDataset& ds, const FitOptions& opt, double alpha,
                               Sides sides = Sides::one_sided_upper) {
    CoefficientPath raw = ols_fit_outcome(ds, opt.ridge);
    CoefficientPath path = opt.smoothed ? smooth_path(raw, opt.kernel, interval_state_means(ds)) : raw;
    CovarianceBundle b = decompose_residuals(ds, path, opt.kernel);
    MatrixXd S = outcome_covariance(b);
    MatrixXd W = outcome_smoother(opt.kernel, ds.m);
    MatrixXd w = de_contrast(ds.m, ds.d, opt.smoothed ? &W : nullptr);
    double var = contrast_variance(ds, S, w, opt.ridge);
    return wald_report(Effect::DE, estimate_de(path), std::sqrt(std::max(var, 0.0)), alpha, sides);
}

// Fit used by the IE pipeline: raw OLS for both regressions, optionally smoothed.
inline CoefficientPath fit_path(const PanelDataset& ds, const FitOptions& opt) {
    CoefficientPath raw = ols_fit(ds, opt.ridge);
    return opt.smoothed ? smooth_path(raw, opt.kernel, interval_state_means(ds)) : raw;
}

// State residuals E_t = S_{t+1} - Theta(t) Z_t, one n×d matrix per interval t < m-1.
inline std::vector<MatrixXd> state_residuals(const PanelDataset& ds, const CoefficientPath& path) {
    std::vector<MatrixXd> out;
    for (int t = 0; t + 1 < ds.m; ++t)
        out.push_back(next_states(ds, t) - design_at(ds, t) * path.Theta[t].transpose());
    return out;
}

// Pseudo data for one multiplier vector xi (length n).
inline PanelDataset pseudo_dataset(const PanelDataset& ds, const CoefficientPath& path, const MatrixXd& e_hat,
                                   const std::vector<MatrixXd>& E_hat, const VectorXd& xi) {
    PanelDataset out = ds;
    for (int i = 0; i < ds.n; ++i) {
        VectorXd z(ds.d + 2);
        z(0) = 1.0;
        for (int t = 0; t < ds.m; ++t) {
            z.segment(1, ds.d) = out.states[i].row(t).transpose();
            z(ds.d + 1) = ds.actions(i, t);
            out.outcomes(i, t) = path.theta.row(t).dot(z) + xi(i) * e_hat(i, t);
            if (t + 1 < ds.m)
                out.states[i].row(t + 1) = (path.Theta[t] * z).transpose() + xi(i) * E_hat[t].row(i);
        }
    }
    return out;
}

inline TestReport ie_bootstrap_test(const PanelDataset& ds, const FitOptions& opt, int B, double alpha,
                                    std::uint64_t seed, Sides sides = Sides::one_sided_upper) {
    if (B < 1) throw InputError("bootstrap replicate count must be positive");
    if (ds.m < 2) throw InputError("IE needs at least two intervals");
    CoefficientPath path = fit_path(ds, opt);
    const double ie = estimate_ie(path);
    MatrixXd e_hat = outcome_residuals(ds, path);
    auto E_hat = state_residuals(ds, path);
    std::vector<double> draws(B);
    parallel_for(static_cast<std::size_t>(B), opt.workers, [&](std::size_t b) {
        Engine eng = make_engine(seed, {static_cast<std::uint64_t>(b)});
        VectorXd xi(ds.n);
        for (int i = 0; i < ds.n; ++i) xi(i) = std_normal(eng);
        PanelDataset pseudo = pseudo_dataset(ds, path, e_hat, E_hat, xi);
        draws[b] = estimate_ie(fit_path(pseudo, opt)) - ie;
    });
    auto [lo, hi] = std::minmax_element(draws.begin(), draws.end());
    if (*hi - *lo <= 1e-10 * std::max(1.0, std::fabs(ie))) throw BootstrapDegenerate();
    return bootstrap_report(Effect::IE, ie, std::move(draws), alpha, sides);
}

struct BandwidthChoice {
    double C = 0.0;
    double h = 0.0;
    std::vector<double> grid;
    std::vector<double> cv_error;
};

inline std::vector<double> default_bandwidth_grid() {
    std::vector<double> g;
    for (int k = 1; k <= 20; ++k) g.push_back(0.05 * k);
    return g;
}

inline PanelDataset subset_days(const PanelDataset& ds, const std::vector<int>& days) {
    PanelDataset out = PanelDataset::zeros(static_cast<int>(days.size()), ds.m, ds.d);
    out.state_names = ds.state_names;
    for (std::size_t k = 0; k < days.size(); ++k) {
        int i = days[k];
        out.states[k] = ds.states[i];
        out.actions.row(k) = ds.actions.row(i);
        out.outcomes.row(k) = ds.outcomes.row(i);
        if (i < static_cast<int>(ds.day_labels.size())) out.day_labels[k] = ds.day_labels[i];
    }
    return out;
}

// Day-level fold labels from a seeded permutation.
inline std::vector<int> fold_labels(int count, int folds, std::uint64_t seed) {
    std::vector<int> perm(count);
    for (int i = 0; i < count; ++i) perm[i] = i;
    Engine eng = make_engine(seed, {0xCF});
    for (int i = count - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(perm[i], perm[pick(eng)]);
    }
    std::vector<int> label(count);
    for (int k = 0; k < count; ++k) label[perm[k]] = k % folds;
    return label;
}

// h = C * n^{-1/3}, C chosen by k-fold day-level CV on outcome prediction SSE.
inline BandwidthChoice select_bandwidth(const PanelDataset& ds, KernelFamily family, double ridge = 1e-3,
                                        std::uint64_t seed = 0, int folds = 5,
                                        std::vector<double> grid = default_bandwidth_grid()) {
    folds = std::max(2, std::min(folds, ds.n));
    const double scale = std::pow(static_cast<double>(ds.n), -1.0 / 3.0);
    auto label = fold_labels(ds.n, folds, seed);
    std::vector<double> err(grid.size(), 0.0);
    for (int f = 0; f < folds; ++f) {
        std::vector<int> train, test;
        for (int i = 0; i < ds.n; ++i) (label[i] == f ? test : train).push_back(i);
        if (test.empty() || train.empty()) continue;
        PanelDataset tr = subset_days(ds, train), te = subset_days(ds, test);
        CoefficientPath raw = ols_fit_outcome(tr, ridge);
        MatrixXd centers = interval_state_means(tr);
        for (std::size_t g = 0; g < grid.size(); ++g) {
            KernelSpec ks{family, grid[g] * scale, std::nullopt};
            err[g] += outcome_residuals(te, smooth_path(raw, ks, centers)).squaredNorm();
        }
    }
    std::size_t best = 0;
    for (std::size_t g = 1; g < grid.size(); ++g)
        if (err[g] < err[best]) best = g;
    BandwidthChoice bc;
    bc.C = grid[best];
    bc.h = grid[best] * scale;
    bc.grid = std::move(grid);
    bc.cv_error = std::move(err);
    return bc;
}

}  // namespace switchlab
