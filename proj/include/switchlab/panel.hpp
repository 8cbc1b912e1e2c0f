#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "switchlab/errors.hpp"

namespace switchlab {

using Eigen::MatrixXd;
using Eigen::MatrixXi;
using Eigen::VectorXd;

// n days of m intervals; per interval a state vector, a binary action and an outcome.
struct PanelDataset {
    int n = 0;
    int m = 0;
    int d = 0;
    std::vector<MatrixXd> states;  // one m×d matrix per day
    MatrixXi actions;              // n×m, entries in {0,1}
    MatrixXd outcomes;             // n×m
    std::vector<std::string> state_names;
    std::vector<std::string> day_labels;

    static PanelDataset zeros(int n, int m, int d) {
        PanelDataset ds;
        ds.n = n;
        ds.m = m;
        ds.d = d;
        ds.states.assign(n, MatrixXd::Zero(m, d));
        ds.actions = MatrixXi::Zero(n, m);
        ds.outcomes = MatrixXd::Zero(n, m);
        for (int k = 0; k < d; ++k) ds.state_names.push_back("s" + std::to_string(k + 1));
        for (int i = 0; i < n; ++i) ds.day_labels.push_back(std::to_string(i + 1));
        return ds;
    }

    int p() const { return d + 2; }

    // Regressor row Z = (1, S, A) at 0-based (i, t).
    VectorXd regressor(int i, int t) const {
        VectorXd z(d + 2);
        z(0) = 1.0;
        z.segment(1, d) = states[i].row(t).transpose();
        z(d + 1) = actions(i, t);
        return z;
    }
};

// r regions sharing the (n, m, d) layout plus geometry and neighbor-average actions.
struct SpatioPanelDataset {
    int r = 0;
    std::vector<PanelDataset> regions;
    MatrixXd coords;                     // r×2, (u, v) in [0,1]
    MatrixXi adjacency;                  // r×r symmetric, zero diagonal
    std::vector<MatrixXd> neighbor_avg;  // one n×m matrix per region
    std::vector<std::string> region_labels;

    int n() const { return r > 0 ? regions[0].n : 0; }
    int m() const { return r > 0 ? regions[0].m : 0; }
    int d() const { return r > 0 ? regions[0].d : 0; }
    int p() const { return d() + 3; }

    // Regressor row Z = (1, S, A, Abar) at 0-based (i, t, region).
    VectorXd regressor(int i, int t, int g) const {
        const PanelDataset& b = regions[g];
        VectorXd z(b.d + 3);
        z(0) = 1.0;
        z.segment(1, b.d) = b.states[i].row(t).transpose();
        z(b.d + 1) = b.actions(i, t);
        z(b.d + 2) = neighbor_avg[g](i, t);
        return z;
    }
};

enum class KernelFamily { epanechnikov, triangular, quartic };

struct KernelSpec {
    KernelFamily family = KernelFamily::epanechnikov;
    double h = 0.1;                 // temporal bandwidth on the [0,1] day axis
    std::optional<double> h_st;     // spatial bandwidth on the [0,1]^2 coordinates
};

inline double kernel_eval(KernelFamily family, double u) {
    double a = std::fabs(u);
    if (a >= 1.0) return 0.0;
    switch (family) {
        case KernelFamily::epanechnikov:
            return 0.75 * (1.0 - a * a);
        case KernelFamily::triangular:
            return 1.0 - a;
        case KernelFamily::quartic: {
            double w = 1.0 - a * a;
            return 15.0 / 16.0 * w * w;
        }
    }
    return 0.0;
}

inline double kernel_eval(const KernelSpec& spec, double u) { return kernel_eval(spec.family, u); }

inline const char* family_name(KernelFamily f) {
    switch (f) {
        case KernelFamily::epanechnikov: return "epanechnikov";
        case KernelFamily::triangular: return "triangular";
        case KernelFamily::quartic: return "quartic";
    }
    return "?";
}

inline KernelFamily parse_family(const std::string& s) {
    if (s == "epanechnikov") return KernelFamily::epanechnikov;
    if (s == "triangular") return KernelFamily::triangular;
    if (s == "quartic") return KernelFamily::quartic;
    throw InputError("unknown kernel family '" + s + "'");
}

// Weights over the grid 1..grid at location t, argument (t - j) / (scale * h).
// The outcome path uses grid = scale = m; the state path reuses scale = m on
// its shorter grid so both share one bandwidth in interval units.
inline VectorXd grid_weights(const KernelSpec& spec, double t, int grid, double scale) {
    if (!(spec.h > 0)) throw InputError("bandwidth must be positive");
    VectorXd w(grid);
    double total = 0.0;
    for (int j = 1; j <= grid; ++j) {
        w(j - 1) = kernel_eval(spec.family, (t - j) / (scale * spec.h));
        total += w(j - 1);
    }
    if (!(total > 0)) throw AllWeightsZero();
    w /= total;
    return w;
}

inline VectorXd temporal_weights(const KernelSpec& spec, double t, int m) {
    if (m < 2) throw InputError("temporal_weights needs m >= 2");
    return grid_weights(spec, t, m, m);
}

// Row t-1 holds the weights producing the smoothed value at grid point t.
inline MatrixXd smoothing_matrix(const KernelSpec& spec, int grid, double scale) {
    MatrixXd W(grid, grid);
    for (int t = 1; t <= grid; ++t) W.row(t - 1) = grid_weights(spec, t, grid, scale).transpose();
    return W;
}

inline VectorXd spatial_weights(const KernelSpec& spec, int region, const MatrixXd& coords) {
    if (!spec.h_st || !(*spec.h_st > 0)) throw InputError("spatial bandwidth not set");
    const int r = static_cast<int>(coords.rows());
    VectorXd w(r);
    double total = 0.0;
    for (int l = 0; l < r; ++l) {
        double ku = kernel_eval(spec.family, (coords(region, 0) - coords(l, 0)) / *spec.h_st);
        double kv = kernel_eval(spec.family, (coords(region, 1) - coords(l, 1)) / *spec.h_st);
        w(l) = ku * kv;
        total += w(l);
    }
    if (!(total > 0)) throw AllWeightsZero();
    w /= total;
    return w;
}

// K(region, l) = kappa_l(region).
inline MatrixXd spatial_matrix(const KernelSpec& spec, const MatrixXd& coords) {
    const int r = static_cast<int>(coords.rows());
    MatrixXd K(r, r);
    for (int g = 0; g < r; ++g) K.row(g) = spatial_weights(spec, g, coords).transpose();
    return K;
}

// Mean of neighbor actions per region. A lone region (r = 1) gets a constant
// zero field, which the spatial fit then drops as collinear.
inline std::vector<MatrixXd> neighbor_average(const MatrixXi& adjacency,
                                              const std::vector<MatrixXi>& actions) {
    const int r = static_cast<int>(adjacency.rows());
    std::vector<MatrixXd> out;
    if (r == 0) return out;
    const Eigen::Index n = actions[0].rows(), m = actions[0].cols();
    if (r == 1) {
        out.push_back(MatrixXd::Zero(n, m));
        return out;
    }
    for (int g = 0; g < r; ++g) {
        std::vector<int> nb;
        for (int l = 0; l < r; ++l)
            if (adjacency(g, l) != 0 && l != g) nb.push_back(l);
        if (nb.empty()) throw IsolatedRegion(g + 1);
        MatrixXd avg = MatrixXd::Zero(n, m);
        for (int l : nb) avg += actions[l].cast<double>();
        avg /= static_cast<double>(nb.size());
        out.push_back(std::move(avg));
    }
    return out;
}

inline std::vector<MatrixXd> neighbor_average(const SpatioPanelDataset& ds) {
    std::vector<MatrixXi> acts;
    for (const auto& b : ds.regions) acts.push_back(b.actions);
    return neighbor_average(ds.adjacency, acts);
}

// Regions placed on a ceil(sqrt r) grid scaled to [0,1]^2 when no coordinates are given.
inline MatrixXd grid_coords(int r) {
    int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(r))));
    MatrixXd c(r, 2);
    for (int g = 0; g < r; ++g) {
        c(g, 0) = side > 1 ? static_cast<double>(g % side) / (side - 1) : 0.5;
        c(g, 1) = side > 1 ? static_cast<double>(g / side) / (side - 1) : 0.5;
    }
    return c;
}

inline std::string at(int i, int t) {
    return "(" + std::to_string(i + 1) + "," + std::to_string(t + 1) + ")";
}

inline std::vector<std::string> validate(const PanelDataset& ds) {
    std::vector<std::string> v;
    if (ds.n < 1 || ds.m < 1 || ds.d < 0) {
        v.push_back("invalid dimensions");
        return v;
    }
    if (static_cast<int>(ds.states.size()) != ds.n) v.push_back("states array has wrong day count");
    if (ds.actions.rows() != ds.n || ds.actions.cols() != ds.m) v.push_back("actions array has wrong shape");
    if (ds.outcomes.rows() != ds.n || ds.outcomes.cols() != ds.m) v.push_back("outcomes array has wrong shape");
    if (!v.empty()) return v;
    for (int i = 0; i < ds.n; ++i) {
        if (ds.states[i].rows() != ds.m || ds.states[i].cols() != ds.d) {
            v.push_back("states of day " + std::to_string(i + 1) + " have wrong shape");
            continue;
        }
        for (int t = 0; t < ds.m; ++t) {
            int a = ds.actions(i, t);
            if (a != 0 && a != 1) v.push_back("non-binary action at " + at(i, t));
            if (!std::isfinite(ds.outcomes(i, t))) v.push_back("non-finite outcome at " + at(i, t));
            for (int k = 0; k < ds.d; ++k)
                if (!std::isfinite(ds.states[i](t, k))) {
                    v.push_back("non-finite state at " + at(i, t));
                    break;
                }
        }
    }
    return v;
}

inline std::vector<std::string> validate(const SpatioPanelDataset& ds) {
    std::vector<std::string> v;
    if (ds.r < 1 || static_cast<int>(ds.regions.size()) != ds.r) {
        v.push_back("region count mismatch");
        return v;
    }
    for (int g = 0; g < ds.r; ++g) {
        for (const auto& s : validate(ds.regions[g])) v.push_back("region " + std::to_string(g + 1) + ": " + s);
        const PanelDataset& b = ds.regions[g];
        if (b.n != ds.regions[0].n || b.m != ds.regions[0].m || b.d != ds.regions[0].d)
            v.push_back("region " + std::to_string(g + 1) + " has inconsistent dimensions");
    }
    if (ds.coords.rows() != ds.r || ds.coords.cols() != 2) {
        v.push_back("coordinates must be r×2");
    } else {
        for (int g = 0; g < ds.r; ++g)
            for (int c = 0; c < 2; ++c)
                if (!(ds.coords(g, c) >= 0.0 && ds.coords(g, c) <= 1.0))
                    v.push_back("coordinates of region " + std::to_string(g + 1) + " outside [0,1]");
    }
    if (ds.adjacency.rows() != ds.r || ds.adjacency.cols() != ds.r) {
        v.push_back("adjacency must be r×r");
        return v;
    }
    bool symmetric = true;
    for (int a = 0; a < ds.r; ++a) {
        if (ds.adjacency(a, a) != 0) v.push_back("adjacency diagonal nonzero at region " + std::to_string(a + 1));
        for (int b = 0; b < ds.r; ++b) {
            int x = ds.adjacency(a, b);
            if (x != 0 && x != 1) v.push_back("adjacency not binary");
            if (x != ds.adjacency(b, a)) symmetric = false;
        }
    }
    if (!symmetric) v.push_back("adjacency not symmetric");
    if (ds.r > 1)
        for (int a = 0; a < ds.r; ++a)
            if (ds.adjacency.row(a).sum() - ds.adjacency(a, a) == 0)
                v.push_back("region " + std::to_string(a + 1) + " has no neighbors");
    if (!v.empty()) return v;
    if (static_cast<int>(ds.neighbor_avg.size()) != ds.r) {
        v.push_back("neighbor averages missing");
        return v;
    }
    auto expect = neighbor_average(ds);
    for (int g = 0; g < ds.r; ++g)
        if (ds.neighbor_avg[g].rows() != ds.n() || ds.neighbor_avg[g].cols() != ds.m() ||
            !(ds.neighbor_avg[g].array() == expect[g].array()).all())
            v.push_back("neighbor averages of region " + std::to_string(g + 1) + " do not match actions");
    return v;
}

}  // namespace switchlab
