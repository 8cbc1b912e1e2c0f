#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "switchlab/design_lab.hpp"
#include "switchlab/panel.hpp"
#include "switchlab/stvcdp.hpp"
#include "switchlab/tvcdp.hpp"

namespace testutil {

using namespace switchlab;

// Panel from row-major (i, t, k) states, (i, t) actions and outcomes.
inline PanelDataset panel(int n, int m, int d, const std::vector<double>& states, const std::vector<int>& actions,
                          const std::vector<double>& outcomes) {
    PanelDataset ds = PanelDataset::zeros(n, m, d);
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < m; ++t) {
            for (int k = 0; k < d; ++k) ds.states[i](t, k) = states[(i * m + t) * d + k];
            ds.actions(i, t) = actions[i * m + t];
            if (!outcomes.empty()) ds.outcomes(i, t) = outcomes[i * m + t];
        }
    return ds;
}

inline MatrixXd mat(int rows, int cols, const std::vector<double>& v, std::size_t offset = 0) {
    MatrixXd M(rows, cols);
    for (int a = 0; a < rows; ++a)
        for (int b = 0; b < cols; ++b) M(a, b) = v[offset + a * cols + b];
    return M;
}

// Random coefficients with row-sum norm of every Phi at most q.
inline CoefficientPath random_coefficients(int m, int d, double q, std::mt19937_64& eng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    CoefficientPath c = CoefficientPath::zeros(m, d);
    for (int t = 0; t < m; ++t)
        for (int j = 0; j < d + 2; ++j) c.theta(t, j) = u(eng);
    for (int t = 0; t + 1 < m; ++t) {
        for (int r = 0; r < d; ++r)
            for (int j = 0; j < d + 2; ++j) c.Theta[t](r, j) = u(eng);
        for (int r = 0; r < d; ++r) {
            double s = c.Theta[t].row(r).segment(1, d).cwiseAbs().sum();
            if (s > q) c.Theta[t].row(r).segment(1, d) *= q / s;
        }
    }
    return c;
}

// Noise-free environment around the given coefficients; initial states N(0, 1).
inline Environment noiseless_environment(const CoefficientPath& c) {
    Environment env;
    env.coeffs = c;
    env.finalize();
    return env;
}

// Expected cumulative outcome under a constant action, by direct rollout.
inline double rollout_total(const CoefficientPath& c, int a) {
    VectorXd s = VectorXd::Zero(c.d);
    double total = 0.0;
    for (int t = 0; t < c.m; ++t) {
        VectorXd z(c.d + 2);
        z << 1.0, s, static_cast<double>(a);
        total += c.theta.row(t).dot(z);
        if (t + 1 < c.m) s = c.Theta[t] * z;
    }
    return total;
}

// Single region wrapped as a spatio-temporal dataset.
inline SpatioPanelDataset single_region(const PanelDataset& ds) {
    SpatioPanelDataset st;
    st.r = 1;
    st.regions = {ds};
    st.coords = MatrixXd::Constant(1, 2, 0.5);
    st.adjacency = MatrixXi::Zero(1, 1);
    st.neighbor_avg = neighbor_average(st);
    st.region_labels = {"1"};
    return st;
}

inline MatrixXi cycle4() {
    MatrixXi A(4, 4);
    A << 0, 1, 1, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0;
    return A;
}

inline MatrixXd corners() {
    MatrixXd c(4, 2);
    c << 0, 0, 1, 0, 0, 1, 1, 1;
    return c;
}

// Noise-free spatio-temporal data: region-constant coefficients, Bernoulli actions.
inline SpatioPanelDataset noiseless_st(const MatrixXd& theta, const std::vector<MatrixXd>& Theta, int n,
                                       std::uint64_t seed) {
    const int m = static_cast<int>(theta.rows()), d = static_cast<int>(theta.cols()) - 3, r = 4;
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> nd;
    std::bernoulli_distribution coin(0.5);
    SpatioPanelDataset st;
    st.r = r;
    st.coords = corners();
    st.adjacency = cycle4();
    std::vector<MatrixXi> acts;
    for (int g = 0; g < r; ++g) {
        MatrixXi A(n, m);
        for (int i = 0; i < n; ++i)
            for (int t = 0; t < m; ++t) A(i, t) = coin(eng);
        acts.push_back(A);
    }
    st.neighbor_avg = neighbor_average(st.adjacency, acts);
    for (int g = 0; g < r; ++g) {
        PanelDataset b = PanelDataset::zeros(n, m, d);
        b.actions = acts[g];
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < d; ++k) b.states[i](0, k) = nd(eng);
            for (int t = 0; t < m; ++t) {
                VectorXd z(d + 3);
                z << 1.0, b.states[i].row(t).transpose(), static_cast<double>(acts[g](i, t)), st.neighbor_avg[g](i, t);
                b.outcomes(i, t) = theta.row(t).dot(z);
                if (t + 1 < m) b.states[i].row(t + 1) = (Theta[t] * z).transpose();
            }
        }
        st.regions.push_back(b);
        st.region_labels.push_back(std::to_string(g + 1));
    }
    return st;
}

}  // namespace testutil
