#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "oracle_values.hpp"
#include "switchlab/nn_vcdp.hpp"

using namespace switchlab;
using Catch::Approx;

namespace {

// Single affine layer on raw scale: y = A x + c.
Mlp affine(const MatrixXd& A, const VectorXd& c) {
    Mlp net;
    net.W = {A};
    net.b = {c};
    net.in_mean = VectorXd::Zero(A.cols());
    net.in_sd = VectorXd::Ones(A.cols());
    net.out_mean = VectorXd::Zero(A.rows());
    net.out_sd = VectorXd::Ones(A.rows());
    return net;
}

NnSurfaces affine_surfaces(int m, int d, const Mlp& g0, const Mlp& g1, const Mlp& G0, const Mlp& G1) {
    NnSurfaces s;
    s.m = m;
    s.d = d;
    s.g0 = g0;
    s.g1 = g1;
    s.G0 = G0;
    s.G1 = G1;
    return s;
}

PanelDataset linear_panel(int n, int m, std::uint64_t seed, double noise) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> nd;
    PanelDataset ds = PanelDataset::zeros(n, m, 1);
    for (int i = 0; i < n; ++i) {
        ds.states[i](0, 0) = nd(eng);
        for (int t = 0; t < m; ++t) {
            ds.actions(i, t) = (i + t) % 2;
            const double s = ds.states[i](t, 0), tau = tau_feature(t, m);
            ds.outcomes(i, t) = 1.0 + 2.0 * s + 0.5 * tau + 1.5 * ds.actions(i, t) + noise * nd(eng);
            if (t + 1 < m) ds.states[i](t + 1, 0) = 0.5 * s + 0.3 * ds.actions(i, t) + noise * nd(eng);
        }
    }
    return ds;
}

}  // namespace

TEST_CASE("backpropagation matches finite differences", "[nn_vcdp]") {
    for (auto act : {Activation::tanh, Activation::relu}) {
        Engine eng = make_engine(3, {static_cast<std::uint64_t>(act)});
        Architecture arch{{8, 6}, act};
        Mlp net = Mlp::init(3, 2, arch, eng);
        MatrixXd X(3, 10), Y(2, 10);
        for (int j = 0; j < 10; ++j) {
            for (int k = 0; k < 3; ++k) X(k, j) = std_normal(eng);
            for (int k = 0; k < 2; ++k) Y(k, j) = std_normal(eng);
        }
        CHECK(gradient_check(net, X, Y) <= 1e-4);
    }
}

TEST_CASE("parameter vectors round trip", "[nn_vcdp]") {
    Engine eng = make_engine(4, {});
    Mlp net = Mlp::init(2, 1, Architecture{}, eng);
    VectorXd p = net.parameters();
    CHECK(static_cast<std::size_t>(p.size()) == net.parameter_count());
    Mlp other = Mlp::init(2, 1, Architecture{}, eng);
    other.set_parameters(p);
    CHECK((other.parameters() - p).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("surfaces fit noiseless linear data", "[nn_vcdp]") {
    PanelDataset ds = linear_panel(60, 8, 5, 0.0);
    TrainConfig cfg{800, 32, 0.02};
    NnSurfaces s = fit_surfaces(ds, Architecture{}, cfg, 6);
    double sd = std::sqrt((ds.outcomes.array() - ds.outcomes.mean()).square().mean());
    const double rmse = std::sqrt((s.sse_g0 + s.sse_g1) / (ds.n * ds.m));
    CHECK(rmse <= 0.05 * sd);
}

TEST_CASE("constant outcomes are fitted", "[nn_vcdp]") {
    PanelDataset ds = linear_panel(10, 4, 7, 0.0);
    ds.outcomes.setConstant(3.0);
    NnSurfaces s = fit_surfaces(ds, Architecture{}, TrainConfig{400, 16, 0.02}, 8);
    // 20 samples per arm; RMSE within 1% of the level.
    CHECK(std::sqrt(s.sse_g0 / 20) <= 0.03);
    CHECK(std::sqrt(s.sse_g1 / 20) <= 0.03);
    CHECK(s.g0.out_sd(0) == 1.0);
}

TEST_CASE("a missing arm is reported", "[nn_vcdp]") {
    PanelDataset ds = linear_panel(6, 4, 9, 0.1);
    ds.actions.setZero();
    CHECK_THROWS_AS(fit_surfaces(ds, Architecture{}, TrainConfig{5, 8, 0.02}, 1), EmptyArm);
}

TEST_CASE("residual density", "[nn_vcdp]") {
    const int n = 6, m = 4, d = 2;
    PanelDataset ds = PanelDataset::zeros(n, m, d);
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < m; ++t) {
            ds.actions(i, t) = (i + t) % 2;
            for (int k = 0; k < d; ++k) ds.states[i](t, k) = oracle::kResidualStates[(i * m + t) * d + k];
        }
    Mlp zero = affine(MatrixXd::Zero(d, d + 1), VectorXd::Zero(d));
    NnSurfaces s = affine_surfaces(m, d, zero, zero, zero, zero);
    ResidualDensity rd = fit_residual_density(ds, s);
    CHECK((rd.cov.front() - testutil::mat(2, 2, oracle::kResidualCov)).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK(fit_residual_density(ds, s, false).cov.size() == static_cast<std::size_t>(m - 1));

    // Perfect transitions leave a zero covariance.
    PanelDataset flat = ds;
    for (int i = 0; i < n; ++i) flat.states[i].setZero();
    CHECK(fit_residual_density(flat, s).cov.front().cwiseAbs().maxCoeff() == 0.0);

    // Gaussian residuals with covariance 0.04 I.
    Engine eng = make_engine(10, {});
    PanelDataset big = PanelDataset::zeros(2000, 3, d);
    for (int i = 0; i < big.n; ++i)
        for (int t = 0; t < 3; ++t) {
            big.actions(i, t) = (i + t) % 2;
            for (int k = 0; k < d; ++k) big.states[i](t, k) = 0.2 * std_normal(eng);
        }
    MatrixXd c = fit_residual_density(big, s).cov.front();
    CHECK(c(0, 0) == Approx(0.04).epsilon(0.15));
    CHECK(c(1, 1) == Approx(0.04).epsilon(0.15));
    CHECK(std::fabs(c(0, 1)) <= 0.15 * 0.04);
}

TEST_CASE("rollouts", "[nn_vcdp]") {
    const int n = 50, m = 5, d = 1, M = 40;
    PanelDataset ds = linear_panel(n, m, 11, 0.1);
    MatrixXd A(1, 2);
    A << 0.2, 0.5;
    Mlp G0 = affine(A, VectorXd::Constant(1, 0.1));
    Mlp G1 = affine(A, VectorXd::Constant(1, 0.4));
    Mlp g = affine(MatrixXd::Ones(1, 2), VectorXd::Zero(1));

    ResidualDensity none;
    none.cov = {MatrixXd::Zero(1, 1)};
    none.factor = {MatrixXd::Zero(1, 1)};
    Rollouts a = rollout_counterfactuals(affine_surfaces(m, d, g, g, G0, G1), none, ds, 3, 1);
    for (int t = 0; t < m; ++t)
        for (int k = 1; k < 3; ++k)
            for (int i = 0; i < n; ++i) CHECK(a.S0[t](0, i * 3 + k) == a.S0[t](0, i * 3));

    ResidualDensity rd;
    rd.cov = {MatrixXd::Constant(1, 1, 0.09)};
    rd.factor = {MatrixXd::Constant(1, 1, 0.3)};
    Rollouts same = rollout_counterfactuals(affine_surfaces(m, d, g, g, G0, G0), rd, ds, M, 2);
    for (int t = 0; t < m; ++t) CHECK((same.S0[t] - same.S1[t]).cwiseAbs().maxCoeff() == 0.0);

    // Linear recursion: E[s_{t+1}] = 0.1 + 0.2 tau_t + 0.5 E[s_t].
    Rollouts r = rollout_counterfactuals(affine_surfaces(m, d, g, g, G0, G1), rd, ds, M, 3);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += ds.states[i](0, 0);
    mean /= n;
    double var = 0.0;
    for (int t = 0; t + 1 < m; ++t) {
        mean = 0.1 + 0.2 * tau_feature(t, m) + 0.5 * mean;
        var = 0.25 * var + 0.09;
        const double got = r.S0[t + 1].mean();
        const double se = std::sqrt(var / (static_cast<double>(n) * M));
        CHECK(std::fabs(got - mean) <= 3.0 * se);
    }
}

TEST_CASE("effects vanish when arms coincide", "[nn_vcdp]") {
    const int n = 20, m = 6;
    PanelDataset ds = linear_panel(n, m, 12, 0.1);
    MatrixXd A(1, 2);
    A << 0.2, 0.5;
    Mlp G0 = affine(A, VectorXd::Constant(1, 0.1));
    Mlp G1 = affine(A, VectorXd::Constant(1, 0.4));
    Mlp g0 = affine(MatrixXd::Ones(1, 2), VectorXd::Zero(1));
    Mlp g1 = affine(MatrixXd::Ones(1, 2), VectorXd::Constant(1, 0.7));
    ResidualDensity rd;
    rd.cov = {MatrixXd::Constant(1, 1, 0.04)};
    rd.factor = {MatrixXd::Constant(1, 1, 0.2)};

    NnSurfaces same_g = affine_surfaces(m, 1, g0, g0, G0, G1);
    CHECK(estimate_nn_effects(same_g, rollout_counterfactuals(same_g, rd, ds, 10, 4)).de == 0.0);
    NnSurfaces same_G = affine_surfaces(m, 1, g0, g1, G0, G0);
    NnEffects e = estimate_nn_effects(same_G, rollout_counterfactuals(same_G, rd, ds, 10, 4));
    CHECK(e.ie == 0.0);
    CHECK(e.de == Approx(0.7 * m).epsilon(1e-12));
}

TEST_CASE("effects do not depend on day order", "[nn_vcdp]") {
    PanelDataset ds = linear_panel(12, 5, 13, 0.1);
    MatrixXd A(1, 2);
    A << 0.2, 0.5;
    NnSurfaces s = affine_surfaces(5, 1, affine(MatrixXd::Ones(1, 2), VectorXd::Zero(1)),
                                   affine(MatrixXd::Ones(1, 2), VectorXd::Constant(1, 0.3)),
                                   affine(A, VectorXd::Constant(1, 0.1)), affine(A, VectorXd::Constant(1, 0.4)));
    ResidualDensity rd;
    rd.cov = {MatrixXd::Zero(1, 1)};
    rd.factor = {MatrixXd::Zero(1, 1)};
    PanelDataset rev = ds;
    std::reverse(rev.states.begin(), rev.states.end());
    NnEffects a = estimate_nn_effects(s, rollout_counterfactuals(s, rd, ds, 1, 5));
    NnEffects b = estimate_nn_effects(s, rollout_counterfactuals(s, rd, rev, 1, 5));
    CHECK(a.de == Approx(b.de).margin(1e-12));
    CHECK(a.ie == Approx(b.ie).margin(1e-12));
}

TEST_CASE("full estimate is reproducible across worker counts", "[nn_vcdp]") {
    PanelDataset ds = linear_panel(16, 4, 14, 0.2);
    NnOptions opt;
    opt.architecture.hidden = {6};
    opt.train = TrainConfig{30, 16, 0.02};
    opt.M = 5;
    NnResult a = nn_estimate(ds, opt, 15);
    opt.workers = 2;
    NnResult b = nn_estimate(ds, opt, 15);
    CHECK(a.effects.de == b.effects.de);
    CHECK(a.effects.ie == b.effects.ie);
}

TEST_CASE("ladder monotonicity check", "[nn_vcdp]") {
    std::vector<LadderPoint> down{{50, 25, 1.0, 2.0}, {100, 25, 0.5, 1.0}, {200, 25, 0.2, 0.4}};
    CHECK(ladder_monotone(down));
    auto bump = down;
    bump[2].median_ie_gap = 1.05;
    CHECK(!ladder_monotone(bump));
    CHECK(ladder_monotone(bump, 0.1));
    std::vector<LadderPoint> mixed{{50, 25, 1.0, 1.0}, {100, 100, 2.0, 2.0}};
    CHECK(ladder_monotone(mixed));
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}

TEST_CASE("networks survive a JSON round trip", "[nn_vcdp]") {
    PanelDataset ds = linear_panel(10, 4, 16, 0.2);
    NnSurfaces s = fit_surfaces(ds, Architecture{{5, 3}, Activation::relu}, TrainConfig{5, 8, 0.02}, 17);
    NnSurfaces back = surfaces_from_json(nlohmann::json::parse(surfaces_to_json(s).dump()));
    MatrixXd X = features_at(1, 4, MatrixXd::Random(7, 1));
    for (int a = 0; a < 2; ++a) {
        CHECK((back.outcome(a).predict(X) - s.outcome(a).predict(X)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((back.transition(a).predict(X) - s.transition(a).predict(X)).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(back.architecture.activation == Activation::relu);
}
