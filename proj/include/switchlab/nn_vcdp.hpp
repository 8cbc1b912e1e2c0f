#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "switchlab/errors.hpp"
#include "switchlab/linalg.hpp"
#include "switchlab/panel.hpp"
#include "switchlab/parallel.hpp"
#include "switchlab/rng.hpp"
#include "switchlab/tvcdp.hpp"

namespace switchlab {

enum class Activation { tanh, relu };

inline const char* activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

inline Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw InputError("unknown activation: " + s);
}

struct Architecture {
    std::vector<int> hidden{32, 32};
    Activation activation = Activation::tanh;
};

struct TrainConfig {
    int epochs = 600;
    int batch = 64;
    double learning_rate = 0.02;
};

// Feedforward regression net on standardized inputs and outputs. Columns are
// samples throughout.
struct Mlp {
    Activation activation = Activation::tanh;
    std::vector<MatrixXd> W;  // layer l: out×in
    std::vector<VectorXd> b;
    VectorXd in_mean, in_sd, out_mean, out_sd;

    int inputs() const { return static_cast<int>(W.front().cols()); }
    int outputs() const { return static_cast<int>(W.back().rows()); }

    static Mlp init(int in, int out, const Architecture& arch, Engine& eng) {
        Mlp net;
        net.activation = arch.activation;
        std::vector<int> widths{in};
        widths.insert(widths.end(), arch.hidden.begin(), arch.hidden.end());
        widths.push_back(out);
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            const double a = std::sqrt(6.0 / (widths[l] + widths[l + 1]));
            std::uniform_real_distribution<double> u(-a, a);
            MatrixXd w(widths[l + 1], widths[l]);
            for (Eigen::Index r = 0; r < w.rows(); ++r)
                for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = u(eng);
            net.W.push_back(w);
            net.b.push_back(VectorXd::Zero(widths[l + 1]));
        }
        net.in_mean = VectorXd::Zero(in);
        net.in_sd = VectorXd::Ones(in);
        net.out_mean = VectorXd::Zero(out);
        net.out_sd = VectorXd::Ones(out);
        return net;
    }

    MatrixXd act(const MatrixXd& z) const {
        if (activation == Activation::tanh) return z.array().tanh().matrix();
        return z.cwiseMax(0.0);
    }

    // Derivative of the activation expressed through its output h.
    MatrixXd act_grad(const MatrixXd& z, const MatrixXd& h) const {
        if (activation == Activation::tanh) return (1.0 - h.array().square()).matrix();
        return (z.array() > 0.0).cast<double>().matrix();
    }

    MatrixXd forward_std(const MatrixXd& Xs) const {
        MatrixXd h = Xs;
        for (std::size_t l = 0; l < W.size(); ++l) {
            MatrixXd z = (W[l] * h).colwise() + b[l];
            h = l + 1 < W.size() ? act(z) : z;
        }
        return h;
    }

    // Raw inputs (in×N) to raw outputs (out×N).
    MatrixXd predict(const MatrixXd& X) const {
        MatrixXd Xs = (X.colwise() - in_mean).array().colwise() / in_sd.array();
        MatrixXd Ys = forward_std(Xs);
        return ((Ys.array().colwise() * out_sd.array()).colwise() + out_mean.array()).matrix();
    }

    std::size_t parameter_count() const {
        std::size_t k = 0;
        for (std::size_t l = 0; l < W.size(); ++l) k += W[l].size() + b[l].size();
        return k;
    }

    VectorXd parameters() const {
        VectorXd p(parameter_count());
        Eigen::Index k = 0;
        for (std::size_t l = 0; l < W.size(); ++l) {
            for (Eigen::Index r = 0; r < W[l].rows(); ++r)
                for (Eigen::Index c = 0; c < W[l].cols(); ++c) p(k++) = W[l](r, c);
            for (Eigen::Index r = 0; r < b[l].size(); ++r) p(k++) = b[l](r);
        }
        return p;
    }

    void set_parameters(const VectorXd& p) {
        Eigen::Index k = 0;
        for (std::size_t l = 0; l < W.size(); ++l) {
            for (Eigen::Index r = 0; r < W[l].rows(); ++r)
                for (Eigen::Index c = 0; c < W[l].cols(); ++c) W[l](r, c) = p(k++);
            for (Eigen::Index r = 0; r < b[l].size(); ++r) b[l](r) = p(k++);
        }
    }

    // Loss 0.5 * mean over samples of ||f(x) - y||^2 on standardized data,
    // with the gradient in parameters() order.
    std::pair<double, VectorXd> loss_and_gradient(const MatrixXd& Xs, const MatrixXd& Ys) const {
        const double N = static_cast<double>(Xs.cols());
        std::vector<MatrixXd> hs{Xs}, zs;
        for (std::size_t l = 0; l < W.size(); ++l) {
            MatrixXd z = (W[l] * hs.back()).colwise() + b[l];
            zs.push_back(z);
            hs.push_back(l + 1 < W.size() ? act(z) : z);
        }
        MatrixXd delta = (hs.back() - Ys) / N;
        const double loss = 0.5 * (hs.back() - Ys).squaredNorm() / N;
        std::vector<MatrixXd> gW(W.size());
        std::vector<VectorXd> gb(W.size());
        for (std::size_t l = W.size(); l-- > 0;) {
            gW[l] = delta * hs[l].transpose();
            gb[l] = delta.rowwise().sum();
            if (l > 0) delta = (W[l].transpose() * delta).cwiseProduct(act_grad(zs[l - 1], hs[l]));
        }
        VectorXd g(parameter_count());
        Eigen::Index k = 0;
        for (std::size_t l = 0; l < W.size(); ++l) {
            for (Eigen::Index r = 0; r < gW[l].rows(); ++r)
                for (Eigen::Index c = 0; c < gW[l].cols(); ++c) g(k++) = gW[l](r, c);
            for (Eigen::Index r = 0; r < gb[l].size(); ++r) g(k++) = gb[l](r);
        }
        return {loss, g};
    }
};

// Max over parameters of |analytic - central difference| / max(|analytic|, |fd|, floor).
inline double gradient_check(const Mlp& net, const MatrixXd& Xs, const MatrixXd& Ys, double step = 1e-6,
                             double floor = 1e-6) {
    VectorXd p = net.parameters();
    VectorXd g = net.loss_and_gradient(Xs, Ys).second;
    Mlp probe = net;
    double worst = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        VectorXd q = p;
        q(k) = p(k) + step;
        probe.set_parameters(q);
        const double up = probe.loss_and_gradient(Xs, Ys).first;
        q(k) = p(k) - step;
        probe.set_parameters(q);
        const double dn = probe.loss_and_gradient(Xs, Ys).first;
        const double fd = (up - dn) / (2.0 * step);
        worst = std::max(worst, std::fabs(g(k) - fd) / std::max({std::fabs(g(k)), std::fabs(fd), floor}));
    }
    return worst;
}

inline VectorXd safe_sd(const MatrixXd& X, const VectorXd& mean) {
    VectorXd sd = ((X.colwise() - mean).array().square().rowwise().mean()).sqrt().matrix();
    for (Eigen::Index k = 0; k < sd.size(); ++k)
        if (!(sd(k) > 1e-12)) sd(k) = 1.0;
    return sd;
}

// Mini-batch gradient descent on (X: in×N, Y: out×N). Returns the final
// in-sample SSE on the raw output scale.
inline double train_mlp(Mlp& net, const MatrixXd& X, const MatrixXd& Y, const TrainConfig& cfg, Engine& eng) {
    net.in_mean = X.rowwise().mean();
    net.in_sd = safe_sd(X, net.in_mean);
    net.out_mean = Y.rowwise().mean();
    net.out_sd = safe_sd(Y, net.out_mean);
    MatrixXd Xs = (X.colwise() - net.in_mean).array().colwise() / net.in_sd.array();
    MatrixXd Ys = (Y.colwise() - net.out_mean).array().colwise() / net.out_sd.array();
    const Eigen::Index N = X.cols();
    const Eigen::Index bs = std::max<Eigen::Index>(1, std::min<Eigen::Index>(cfg.batch, N));
    std::vector<Eigen::Index> order(N);
    std::iota(order.begin(), order.end(), 0);
    MatrixXd xb(Xs.rows(), bs), yb(Ys.rows(), bs);
    for (int e = 0; e < cfg.epochs; ++e) {
        // Fisher-Yates with our own draws so the order is library independent.
        for (Eigen::Index k = N - 1; k > 0; --k) std::swap(order[k], order[eng() % static_cast<std::uint64_t>(k + 1)]);
        for (Eigen::Index start = 0; start < N; start += bs) {
            const Eigen::Index len = std::min(bs, N - start);
            xb.resize(Xs.rows(), len);
            yb.resize(Ys.rows(), len);
            for (Eigen::Index j = 0; j < len; ++j) {
                xb.col(j) = Xs.col(order[start + j]);
                yb.col(j) = Ys.col(order[start + j]);
            }
            VectorXd g = net.loss_and_gradient(xb, yb).second;
            net.set_parameters(net.parameters() - cfg.learning_rate * g);
        }
    }
    return (net.predict(X) - Y).squaredNorm();
}

struct NnSurfaces {
    Mlp g0, g1;  // outcome surfaces per arm
    Mlp G0, G1;  // state transition surfaces per arm
    Architecture architecture;
    int m = 0;
    int d = 0;
    double sse_g0 = 0.0, sse_g1 = 0.0, sse_G0 = 0.0, sse_G1 = 0.0;

    const Mlp& outcome(int a) const { return a ? g1 : g0; }
    const Mlp& transition(int a) const { return a ? G1 : G0; }
};

// Feature column (tau on [0,1], s) for 0-based interval t.
inline double tau_feature(int t, int m) { return m > 1 ? static_cast<double>(t) / (m - 1) : 0.0; }

inline MatrixXd features_at(int t, int m, const MatrixXd& S) {
    MatrixXd X(S.cols() + 1, S.rows());
    X.row(0).setConstant(tau_feature(t, m));
    X.bottomRows(S.cols()) = S.transpose();
    return X;
}

inline NnSurfaces fit_surfaces(const PanelDataset& ds, const Architecture& arch, const TrainConfig& cfg,
                               std::uint64_t seed, int workers = 1) {
    const int n = ds.n, m = ds.m, d = ds.d;
    // [arm][outcome|state] sample lists
    std::vector<std::pair<int, int>> idx[2][2];
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < m; ++t) {
            const int a = ds.actions(i, t);
            idx[a][0].push_back({i, t});
            if (t + 1 < m) idx[a][1].push_back({i, t});
        }
    for (int a = 0; a < 2; ++a)
        if (idx[a][0].empty() || (m > 1 && idx[a][1].empty())) throw EmptyArm(a);

    NnSurfaces out;
    out.architecture = arch;
    out.m = m;
    out.d = d;
    Mlp* nets[4] = {&out.g0, &out.g1, &out.G0, &out.G1};
    double* sse[4] = {&out.sse_g0, &out.sse_g1, &out.sse_G0, &out.sse_G1};
    const int units = m > 1 ? 4 : 2;
    parallel_for(static_cast<std::size_t>(units), workers, [&](std::size_t u) {
        const int a = static_cast<int>(u % 2);
        const bool state = u >= 2;
        const auto& rows = idx[a][state ? 1 : 0];
        const Eigen::Index N = static_cast<Eigen::Index>(rows.size());
        MatrixXd X(d + 1, N), Y(state ? d : 1, N);
        for (Eigen::Index j = 0; j < N; ++j) {
            auto [i, t] = rows[j];
            X(0, j) = tau_feature(t, m);
            X.col(j).tail(d) = ds.states[i].row(t).transpose();
            if (state)
                Y.col(j) = ds.states[i].row(t + 1).transpose();
            else
                Y(0, j) = ds.outcomes(i, t);
        }
        Engine eng = make_engine(seed, {u});
        *nets[u] = Mlp::init(d + 1, static_cast<int>(Y.rows()), arch, eng);
        *sse[u] = train_mlp(*nets[u], X, Y, cfg, eng);
    });
    return out;
}

struct ResidualDensity {
    bool pooled = true;
    std::vector<MatrixXd> cov;  // one entry when pooled, else one per transition
    std::vector<MatrixXd> factor;

    const MatrixXd& factor_at(int t) const { return pooled ? factor.front() : factor[t]; }
};

// Zero-mean Gaussian fit to the state residuals.
inline ResidualDensity fit_residual_density(const PanelDataset& ds, const NnSurfaces& s, bool pooled = true) {
    const int n = ds.n, m = ds.m, d = ds.d;
    ResidualDensity rd;
    rd.pooled = pooled;
    MatrixXd total = MatrixXd::Zero(d, d);
    for (int t = 0; t + 1 < m; ++t) {
        MatrixXd S(n, d), Snext(n, d);
        for (int i = 0; i < n; ++i) {
            S.row(i) = ds.states[i].row(t);
            Snext.row(i) = ds.states[i].row(t + 1);
        }
        MatrixXd X = features_at(t, m, S);
        MatrixXd P0 = s.G0.predict(X), P1 = s.G1.predict(X);
        MatrixXd E(d, n);
        for (int i = 0; i < n; ++i)
            E.col(i) = Snext.row(i).transpose() - (ds.actions(i, t) ? P1.col(i) : P0.col(i));
        MatrixXd c = E * E.transpose();
        total += c;
        if (!pooled) rd.cov.push_back(c / n);
    }
    if (pooled) rd.cov.push_back(m > 1 ? MatrixXd(total / (static_cast<double>(n) * (m - 1))) : total);
    for (const auto& c : rd.cov) rd.factor.push_back(psd_factor(c));
    return rd;
}

// Sampled trajectories: row block (i*M + k) of S0/S1 is the m×d path for day i, draw k.
struct Rollouts {
    int n = 0, m = 0, d = 0, M = 0;
    std::vector<MatrixXd> S0, S1;  // per interval t: d × (n*M)
};

inline Rollouts rollout_counterfactuals(const NnSurfaces& s, const ResidualDensity& rd, const PanelDataset& ds,
                                        int M, std::uint64_t seed, int workers = 1) {
    if (M < 1) throw InputError("Monte Carlo count M must be positive");
    const int n = ds.n, m = ds.m, d = ds.d;
    const Eigen::Index N = static_cast<Eigen::Index>(n) * M;
    // Noise per (i,k) from its own stream; shared by both arms.
    std::vector<MatrixXd> Z(m > 1 ? m - 1 : 0, MatrixXd(d, N));
    parallel_for(static_cast<std::size_t>(N), workers, [&](std::size_t col) {
        Engine eng = make_engine(seed, {col / static_cast<std::size_t>(M), col % static_cast<std::size_t>(M)});
        for (int t = 0; t + 1 < m; ++t) {
            VectorXd z(d);
            for (int k = 0; k < d; ++k) z(k) = std_normal(eng);
            Z[t].col(static_cast<Eigen::Index>(col)) = rd.factor_at(t) * z;
        }
    });
    Rollouts r;
    r.n = n;
    r.m = m;
    r.d = d;
    r.M = M;
    MatrixXd start(d, N);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < M; ++k) start.col(static_cast<Eigen::Index>(i) * M + k) = ds.states[i].row(0).transpose();
    r.S0.push_back(start);
    r.S1.push_back(start);
    for (int t = 0; t + 1 < m; ++t) {
        MatrixXd x0(d + 1, N), x1(d + 1, N);
        x0.row(0).setConstant(tau_feature(t, m));
        x1.row(0).setConstant(tau_feature(t, m));
        x0.bottomRows(d) = r.S0.back();
        x1.bottomRows(d) = r.S1.back();
        r.S0.push_back(s.G0.predict(x0) + Z[t]);
        r.S1.push_back(s.G1.predict(x1) + Z[t]);
    }
    return r;
}

struct NnEffects {
    double de = 0.0;
    double ie = 0.0;
};

inline NnEffects estimate_nn_effects(const NnSurfaces& s, const Rollouts& r) {
    const double N = static_cast<double>(r.n) * r.M;
    NnEffects e;
    for (int t = 0; t < r.m; ++t) {
        MatrixXd x0(r.d + 1, r.S0[t].cols());
        x0.row(0).setConstant(tau_feature(t, r.m));
        x0.bottomRows(r.d) = r.S0[t];
        MatrixXd g1_0 = s.g1.predict(x0);
        e.de += (g1_0 - s.g0.predict(x0)).sum() / N;
        if (t >= 1) {
            MatrixXd x1 = x0;
            x1.bottomRows(r.d) = r.S1[t];
            e.ie += (s.g1.predict(x1) - g1_0).sum() / N;
        }
    }
    return e;
}

struct NnOptions {
    Architecture architecture;
    TrainConfig train;
    int M = 100;
    bool pooled_density = true;
    int workers = 1;
};

struct NnResult {
    NnSurfaces surfaces;
    ResidualDensity density;
    NnEffects effects;
};

inline NnResult nn_estimate(const PanelDataset& ds, const NnOptions& opt, std::uint64_t seed) {
    NnResult res;
    res.surfaces = fit_surfaces(ds, opt.architecture, opt.train, derive_seed(seed, {1}), opt.workers);
    res.density = fit_residual_density(ds, res.surfaces, opt.pooled_density);
    Rollouts r = rollout_counterfactuals(res.surfaces, res.density, ds, opt.M, derive_seed(seed, {2}), opt.workers);
    res.effects = estimate_nn_effects(res.surfaces, r);
    return res;
}

// Doubling ladder: median |NN - linear| for DE and IE at each (n, M).
struct LadderPoint {
    int n = 0, M = 0;
    double median_de_gap = 0.0;
    double median_ie_gap = 0.0;
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline std::vector<LadderPoint> doubling_ladder(const std::function<PanelDataset(int, std::uint64_t)>& generate,
                                                const std::vector<int>& n_grid, const std::vector<int>& M_grid,
                                                int reps, const NnOptions& opt, std::uint64_t seed,
                                                double ridge = 1e-3) {
    std::vector<LadderPoint> pts;
    for (int n : n_grid) {
        std::vector<std::vector<double>> de_gap(M_grid.size()), ie_gap(M_grid.size());
        for (int rep = 0; rep < reps; ++rep) {
            const std::uint64_t s = derive_seed(seed, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(rep)});
            PanelDataset ds = generate(n, derive_seed(s, {0}));
            CoefficientPath lin = ols_fit(ds, ridge);
            const double de_lin = estimate_de(lin), ie_lin = estimate_ie(lin);
            NnSurfaces sf = fit_surfaces(ds, opt.architecture, opt.train, derive_seed(s, {1}), opt.workers);
            ResidualDensity rd = fit_residual_density(ds, sf, opt.pooled_density);
            for (std::size_t j = 0; j < M_grid.size(); ++j) {
                Rollouts r = rollout_counterfactuals(sf, rd, ds, M_grid[j], derive_seed(s, {2, j}), opt.workers);
                NnEffects e = estimate_nn_effects(sf, r);
                de_gap[j].push_back(std::fabs(e.de - de_lin));
                ie_gap[j].push_back(std::fabs(e.ie - ie_lin));
            }
        }
        for (std::size_t j = 0; j < M_grid.size(); ++j)
            pts.push_back({n, M_grid[j], median(de_gap[j]), median(ie_gap[j])});
    }
    return pts;
}

// Non-increasing along n for each fixed M, with relative slack.
inline bool ladder_monotone(const std::vector<LadderPoint>& pts, double slack = 0.0) {
    for (std::size_t a = 0; a < pts.size(); ++a)
        for (std::size_t b = 0; b < pts.size(); ++b) {
            if (pts[a].M != pts[b].M || pts[b].n <= pts[a].n) continue;
            if (pts[b].median_de_gap > pts[a].median_de_gap * (1.0 + slack)) return false;
            if (pts[b].median_ie_gap > pts[a].median_ie_gap * (1.0 + slack)) return false;
        }
    return true;
}

// JSON form: layer shapes plus row-major weights.
inline nlohmann::json mlp_to_json(const Mlp& net) {
    nlohmann::json j;
    j["activation"] = activation_name(net.activation);
    auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    j["input_mean"] = vec(net.in_mean);
    j["input_sd"] = vec(net.in_sd);
    j["output_mean"] = vec(net.out_mean);
    j["output_sd"] = vec(net.out_sd);
    j["layers"] = nlohmann::json::array();
    for (std::size_t l = 0; l < net.W.size(); ++l) {
        std::vector<double> w;
        for (Eigen::Index r = 0; r < net.W[l].rows(); ++r)
            for (Eigen::Index c = 0; c < net.W[l].cols(); ++c) w.push_back(net.W[l](r, c));
        j["layers"].push_back({{"rows", net.W[l].rows()}, {"cols", net.W[l].cols()}, {"weights", w}, {"bias", vec(net.b[l])}});
    }
    return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
    auto vec = [](const nlohmann::json& a) {
        std::vector<double> v = a.get<std::vector<double>>();
        return VectorXd(Eigen::Map<VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    try {
        Mlp net;
        net.activation = parse_activation(j.at("activation").get<std::string>());
        net.in_mean = vec(j.at("input_mean"));
        net.in_sd = vec(j.at("input_sd"));
        net.out_mean = vec(j.at("output_mean"));
        net.out_sd = vec(j.at("output_sd"));
        for (const auto& layer : j.at("layers")) {
            const int rows = layer.at("rows").get<int>(), cols = layer.at("cols").get<int>();
            std::vector<double> w = layer.at("weights").get<std::vector<double>>();
            if (static_cast<int>(w.size()) != rows * cols) throw InputError("layer weight count does not match its shape");
            net.W.push_back(Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w.data(), rows, cols));
            net.b.push_back(vec(layer.at("bias")));
            if (net.b.back().size() != rows) throw InputError("layer bias length does not match its shape");
        }
        if (net.W.empty()) throw InputError("network has no layers");
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed network JSON: ") + e.what());
    }
}

inline nlohmann::json surfaces_to_json(const NnSurfaces& s) {
    nlohmann::json j;
    j["format"] = "switchlab-nn";
    j["version"] = 1;
    j["m"] = s.m;
    j["d"] = s.d;
    j["architecture"] = {{"hidden", s.architecture.hidden}, {"activation", activation_name(s.architecture.activation)}};
    j["training_sse"] = {{"g0", s.sse_g0}, {"g1", s.sse_g1}, {"G0", s.sse_G0}, {"G1", s.sse_G1}};
    j["g0"] = mlp_to_json(s.g0);
    j["g1"] = mlp_to_json(s.g1);
    j["G0"] = mlp_to_json(s.G0);
    j["G1"] = mlp_to_json(s.G1);
    return j;
}

inline NnSurfaces surfaces_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "switchlab-nn" || j.at("version").get<int>() != 1)
            throw InputError("unsupported network file format");
        NnSurfaces s;
        s.m = j.at("m").get<int>();
        s.d = j.at("d").get<int>();
        s.architecture.hidden = j.at("architecture").at("hidden").get<std::vector<int>>();
        s.architecture.activation = parse_activation(j.at("architecture").at("activation").get<std::string>());
        const auto& sse = j.at("training_sse");
        s.sse_g0 = sse.at("g0").get<double>();
        s.sse_g1 = sse.at("g1").get<double>();
        s.sse_G0 = sse.at("G0").get<double>();
        s.sse_G1 = sse.at("G1").get<double>();
        s.g0 = mlp_from_json(j.at("g0"));
        s.g1 = mlp_from_json(j.at("g1"));
        s.G0 = mlp_from_json(j.at("G0"));
        s.G1 = mlp_from_json(j.at("G1"));
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed network JSON: ") + e.what());
    }
}

}  // namespace switchlab
