// One PASS/FAIL line per acceptance criterion; exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "switchlab/cli.hpp"

namespace fs = std::filesystem;
using namespace switchlab;

namespace {

const int kWorkers = std::max(1u, std::thread::hardware_concurrency());

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

std::string rate_text(const StudyRow& r) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.4f(%.4f)", r.rejection_rate, r.se);
    return buf;
}

bool in_band(double x, double lo, double hi) { return x >= lo && x <= hi; }

double rollout_total(const CoefficientPath& c, int a) {
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

// ---------------------------------------------------------------------------

Verdict c1_effect_decomposition() {
    Verdict v;
    std::mt19937_64 eng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const int d = 1 + static_cast<int>(eng() % 3), m = 1 + static_cast<int>(eng() % 8);
        CoefficientPath c = CoefficientPath::zeros(m, d);
        for (int t = 0; t < m; ++t)
            for (int j = 0; j < d + 2; ++j) c.theta(t, j) = u(eng);
        for (int t = 0; t + 1 < m; ++t) {
            for (int r = 0; r < d; ++r)
                for (int j = 0; j < d + 2; ++j) c.Theta[t](r, j) = u(eng);
            for (int r = 0; r < d; ++r) {
                double s = c.Theta[t].row(r).segment(1, d).cwiseAbs().sum();
                if (s > 0.9) c.Theta[t].row(r).segment(1, d) *= 0.9 / s;
            }
        }
        auto [de, ie] = compute_true_effects(c);
        worst = std::max(worst, std::fabs(de + ie - (rollout_total(c, 1) - rollout_total(c, 0))));
    }
    v.detail << "1000 coefficient sets, max |DE+IE-ATE| = " << worst;
    v.require(worst <= 1e-10, "error above 1e-10");
    return v;
}

struct TemporalStudy {
    TemporalScenario sc;

    TemporalStudy() { sc.analog = make_city_analog(); }

    std::vector<StudyRow> run(StudyConfig cfg) {
        cfg.workers = kWorkers;
        sc.B = cfg.B;
        sc.prepare(cfg.delta1_grid);
        return rejection_study(cfg, 48, std::cref(sc));
    }
};

StudyConfig temporal_config(std::vector<int> n, std::vector<double> delta, std::vector<int> ti, Effect e,
                            std::uint64_t seed) {
    StudyConfig cfg;
    cfg.n_grid = std::move(n);
    cfg.delta1_grid = std::move(delta);
    cfg.ti_grid = std::move(ti);
    cfg.effects = {e};
    cfg.R = 400;
    cfg.B = 400;
    cfg.seed = seed;
    return cfg;
}

Verdict c2_type1_de(TemporalStudy& st) {
    Verdict v;
    auto rows = st.run(temporal_config({8}, {0.0}, {1}, Effect::DE, 2));
    v.detail << "temporal DE null rate at n=8, TI=1, R=400: " << rate_text(rows[0]);
    v.require(rows[0].failures == 0, "replicate failures");
    v.require(in_band(rows[0].rejection_rate, 0.02, 0.09), "rate outside [0.02,0.09]");
    return v;
}

Verdict c3_power_de(TemporalStudy& st) {
    Verdict v;
    const std::vector<double> deltas{0, 0.25, 0.5, 0.75, 1};
    const std::vector<int> tis{1, 3, 6};
    auto rows = st.run(temporal_config({20}, deltas, tis, Effect::DE, 3));
    auto rate = [&](double d, int ti) {
        for (const auto& r : rows)
            if (r.cell.delta1 == d && r.cell.TI == ti) return r.rejection_rate;
        return -1.0;
    };
    v.detail << "n=20 DE rates (TI=1,3,6) by delta:";
    for (double d : deltas) {
        v.detail << " " << d << ":";
        for (int ti : tis) v.detail << (ti == 1 ? "" : "/") << rate(d, ti);
    }
    v.require(rate(1, 1) >= 0.95, "power at delta=1, TI=1 below 0.95");
    for (int ti : tis)
        for (std::size_t k = 1; k < deltas.size(); ++k)
            v.require(rate(deltas[k], ti) >= rate(deltas[k - 1], ti) - 0.02, "not non-decreasing in delta");
    for (double d : deltas)
        for (std::size_t k = 1; k < tis.size(); ++k)
            v.require(rate(d, tis[k]) <= rate(d, tis[k - 1]) + 0.02, "not non-increasing in TI");
    return v;
}

Verdict c4_ie(TemporalStudy& st) {
    Verdict v;
    auto rows = st.run(temporal_config({8, 20}, {0.0, 1.0}, {1}, Effect::IE, 4));
    for (const auto& r : rows) {
        v.detail << " n=" << r.cell.n << " delta=" << r.cell.delta1 << ": " << rate_text(r);
        v.require(r.failures == 0, "replicate failures");
        if (r.cell.delta1 == 0.0) v.require(in_band(r.rejection_rate, 0.02, 0.09), "null rate outside [0.02,0.09]");
        if (r.cell.delta1 == 1.0 && r.cell.n == 20) v.require(r.rejection_rate >= 0.90, "power below 0.90");
    }
    return v;
}

Verdict c5_mse_ratio() {
    Verdict v;
    for (double rho : {0.0, 0.5}) {
        Environment env = ar1_environment(48, rho, 1.0);
        auto rows = mse_compare(env, {{DesignKind::switchback, 1, 0}, {DesignKind::alternating_day, 1, 0}}, 200, 500, 11,
                                kWorkers);
        const double ratio = rows[0].mse / rows[1].mse;
        const double theory = (1 - rho) * (1 - rho) / ((1 + rho) * (1 + rho));
        v.detail << " rho=" << rho << ": ratio " << ratio << " vs " << theory << ";";
        v.require(std::fabs(ratio / theory - 1.0) <= 0.25, "ratio off by more than 25%");
    }
    return v;
}

Verdict c6_bernoulli() {
    Verdict v;
    for (int m : {6, 12, 24, 48}) {
        Environment env = ar1_environment(m, 0.8, 1.0);
        auto rows = mse_compare(env, {{DesignKind::switchback, 1, 0}, {DesignKind::bernoulli, 1, 0}}, 100, 500,
                                derive_seed(6, {static_cast<std::uint64_t>(m)}), kWorkers);
        v.detail << " m=" << m << ": " << rows[0].mse << " < " << rows[1].mse << ";";
        v.require(rows[0].mse < rows[1].mse, "switchback MSE not below bernoulli at m=" + std::to_string(m));
    }
    return v;
}

Verdict c7_spatial() {
    Verdict v;
    SpatialScenario sc;
    sc.analog = make_st_city_analog();
    auto run = [&](std::vector<DesignKind> designs, std::vector<int> n, std::vector<double> d1, std::vector<Effect> eff,
                   std::uint64_t seed) {
        StudyConfig cfg;
        cfg.designs = std::move(designs);
        cfg.n_grid = std::move(n);
        cfg.delta1_grid = std::move(d1);
        cfg.delta2_grid = {0.0};
        cfg.ti_grid = {1};
        cfg.effects = std::move(eff);
        cfg.R = 200;
        cfg.B = 400;
        cfg.seed = seed;
        cfg.workers = kWorkers;
        sc.prepare(cfg.delta1_grid, cfg.delta2_grid);
        return rejection_study(cfg, 48, std::cref(sc));
    };

    v.detail << "nulls:";
    for (const auto& r : run({DesignKind::spatiotemporal_alternation}, {8, 20}, {0.0}, {Effect::DE, Effect::IE}, 7)) {
        v.detail << " n=" << r.cell.n << " " << effect_name(r.cell.effect) << " " << rate_text(r);
        v.require(r.failures == 0, "replicate failures");
        v.require(in_band(r.rejection_rate, 0.02, 0.09), std::string("null ") + effect_name(r.cell.effect) + " n=" +
                                                              std::to_string(r.cell.n) + " outside [0.02,0.09]");
    }

    auto power = run({DesignKind::spatiotemporal_alternation, DesignKind::switchback}, {8, 20}, {0.25, 0.5, 1.0},
                     {Effect::DE}, 8);
    auto find = [&](DesignKind k, int n, double d) -> const StudyRow& {
        for (const auto& r : power)
            if (r.cell.design == k && r.cell.n == n && r.cell.delta1 == d) return r;
        throw std::logic_error("missing cell");
    };
    const StudyRow& strong = find(DesignKind::spatiotemporal_alternation, 20, 1.0);
    v.detail << "; DE power (1,0) n=20: " << rate_text(strong) << "; spatio-temporal vs switchback:";
    v.require(strong.rejection_rate >= 0.95, "DE power at (1,0), n=20 below 0.95");
    for (int n : {8, 20})
        for (double d : {0.25, 0.5, 1.0}) {
            const StudyRow& a = find(DesignKind::spatiotemporal_alternation, n, d);
            const StudyRow& b = find(DesignKind::switchback, n, d);
            v.detail << " n=" << n << " d1=" << d << " " << a.rejection_rate << "/" << b.rejection_rate;
            v.require(a.rejection_rate >= b.rejection_rate - 0.02, "spatio-temporal power below switchback");
        }
    return v;
}

Verdict c8_smoothing() {
    Verdict v;
    Environment env = ar1_environment(48, 0.8, 1.0, 0.5, true);
    SmoothingError e = smoothing_error(env, 100, 200, KernelSpec{KernelFamily::epanechnikov, 0.1, std::nullopt}, 8, kWorkers);
    v.detail << "mean squared path error raw " << e.raw << ", smoothed " << e.smoothed;
    v.require(e.smoothed < e.raw, "smoothed error not below raw");
    return v;
}

Verdict c9_nn() {
    Verdict v;
    Environment env = linear_benchmark_environment(24);
    auto [de, ie] = compute_true_effects(env.coeffs);
    PanelDataset ds = simulate_dataset(env, DesignSpec{DesignKind::switchback, 1, 0}, 200, 9);
    NnOptions opt;
    opt.M = 100;
    opt.workers = kWorkers;
    NnResult res = nn_estimate(ds, opt, 9);
    const double de_err = std::fabs(res.effects.de - de) / std::fabs(de);
    const double ie_err = std::fabs(res.effects.ie - ie) / std::fabs(ie);
    v.detail << "DE " << res.effects.de << " vs " << de << " (rel " << de_err << "), IE " << res.effects.ie << " vs " << ie
             << " (rel " << ie_err << ")";
    v.require(de_err <= 0.10, "DE relative error above 10%");
    v.require(ie_err <= 0.10, "IE relative error above 10%");

    for (auto act : {Activation::tanh, Activation::relu}) {
        Engine eng = make_engine(9, {static_cast<std::uint64_t>(act)});
        Mlp net = Mlp::init(3, 2, Architecture{{32, 32}, act}, eng);
        MatrixXd X(3, 16), Y(2, 16);
        for (int j = 0; j < 16; ++j) {
            for (int k = 0; k < 3; ++k) X(k, j) = std_normal(eng);
            for (int k = 0; k < 2; ++k) Y(k, j) = std_normal(eng);
        }
        const double g = gradient_check(net, X, Y);
        v.detail << "; gradient check " << activation_name(act) << " " << g;
        v.require(g <= 1e-4, std::string("gradient mismatch for ") + activation_name(act));
    }

    NnOptions lo;
    lo.workers = kWorkers;
    auto gen = [&](int n, std::uint64_t s) { return simulate_dataset(env, DesignSpec{DesignKind::switchback, 1, 0}, n, s); };
    auto pts = doubling_ladder(gen, {50, 100, 200}, {25, 100}, 9, lo, 5);
    v.detail << "; ladder median gaps (DE/IE):";
    for (const auto& p : pts) v.detail << " n=" << p.n << ",M=" << p.M << ":" << p.median_de_gap << "/" << p.median_ie_gap;
    v.require(ladder_monotone(pts), "ladder gaps not non-increasing in n");
    return v;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

int quiet_run(std::vector<std::string> args) {
    args.insert(args.begin(), "switchlab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream sink;
    auto* old_out = std::cout.rdbuf(sink.rdbuf());
    auto* old_err = std::cerr.rdbuf(sink.rdbuf());
    int code = run(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    return code;
}

Verdict c10_determinism() {
    Verdict v;
    fs::path root = fs::temp_directory_path() / "switchlab_acceptance";
    fs::remove_all(root);
    struct Job {
        std::string name, file;
        std::vector<std::string> args;
    };
    const std::vector<Job> jobs{
        {"temporal-study", "study.csv",
         {"study", "--n", "8", "--m", "12", "--delta", "0,1", "--effect", "DE,IE", "--replicates", "12", "--bootstrap",
          "40", "--seed", "10"}},
        {"spatial-study", "study.csv",
         {"study", "--env", "st-city", "--n", "6", "--m", "8", "--delta", "0,1", "--effect", "DE,IE", "--replicates", "6",
          "--bootstrap", "30", "--seed", "10"}},
        {"design-compare", "design_compare.csv",
         {"design-compare", "--rho", "0,0.5", "--m", "12", "--n", "20", "--replicates", "50", "--seed", "10"}},
    };
    for (const auto& job : jobs) {
        std::vector<std::string> texts;
        for (const std::string workers : {"1", "2", "1", "3"}) {
            fs::path out = root / (job.name + "_" + std::to_string(texts.size()));
            auto args = job.args;
            args.insert(args.end(), {"--workers", workers, "--out", out.string()});
            const int code = quiet_run(args);
            v.require(code == 0, job.name + " exit " + std::to_string(code));
            texts.push_back(slurp(out / job.file));
        }
        bool same = !texts[0].empty();
        for (const auto& t : texts) same = same && t == texts[0];
        v.detail << " " << job.name << ": " << (same ? "identical" : "DIFFERENT") << " over workers 1,2,1,3;";
        v.require(same, job.name + " outputs differ");
    }
    fs::remove_all(root);
    return v;
}

}  // namespace

int main() {
    int failed = 0;
    auto report = [&](int id, const char* title, const std::function<Verdict()>& fn) {
        auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v.pass = false;
            v.detail << " exception: " << e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s criterion %d (%s): %s [%.0f s]\n", v.pass ? "PASS" : "FAIL", id, title, v.detail.str().c_str(), secs);
        std::fflush(stdout);
        failed += v.pass ? 0 : 1;
    };
    report(1, "effect decomposition", c1_effect_decomposition);
    TemporalStudy temporal;
    report(2, "temporal DE type-I error", [&] { return c2_type1_de(temporal); });
    report(3, "temporal DE power ordering", [&] { return c3_power_de(temporal); });
    report(4, "temporal IE bootstrap", [&] { return c4_ie(temporal); });
    report(5, "switchback vs alternating-day MSE ratio", c5_mse_ratio);
    report(6, "switchback vs Bernoulli MSE", c6_bernoulli);
    report(7, "spatio-temporal tests", c7_spatial);
    report(8, "smoothing beats raw", c8_smoothing);
    report(9, "neural-network estimator", c9_nn);
    report(10, "determinism", c10_determinism);
    std::printf("%d of 10 criteria failed\n", failed);
    return failed ? 1 : 0;
}
