#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "switchlab/design_lab.hpp"
#include "switchlab/io.hpp"
#include "switchlab/nn_vcdp.hpp"
#include "switchlab/stvcdp.hpp"
#include "switchlab/tvcdp.hpp"

namespace switchlab {

inline constexpr const char* kVersion = "0.1.0";

// Seed of the synthetic base panel behind the city environments; fixed so the
// environment does not move with --seed.
inline constexpr std::uint64_t kAnalogSeed = 2024;

struct RunConfig {
    std::string command;
    std::string input, adjacency, coords, out = ".";
    std::string model = "tvcdp";
    std::string kernel = "epanechnikov";
    std::optional<double> bandwidth, spatial_bandwidth;
    std::vector<std::string> effects{"DE"};
    double alpha = 0.05;
    std::string sides = "one_sided_upper";
    int B = 400;
    int R = 400;
    int M = 100;
    int epochs = TrainConfig{}.epochs;
    std::optional<std::uint64_t> seed;
    int workers = 1;
    double ridge = 1e-3;
    bool unsmoothed = false;
    // simulation and study grids
    std::string env;
    std::string preset;
    std::vector<std::string> designs;
    std::vector<int> n_grid;
    std::vector<int> m_grid;
    std::vector<int> ti_grid;
    std::vector<double> delta1_grid;
    std::vector<double> delta2_grid;
    std::vector<double> rho_grid;
    double noise_scale = 1.0;
    std::string manifest;
};

inline std::uint64_t parse_seed(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        unsigned long long v = std::stoull(s, &used);
        if (used != s.size() || (!s.empty() && s[0] == '-')) throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error&) {
        throw InputError(what + " must be a non-negative integer, got '" + s + "'");
    }
}

inline std::uint64_t resolve_seed(const RunConfig& c) {
    if (c.seed) return *c.seed;
    if (const char* env = std::getenv("SWITCHLAB_SEED"); env && *env) return parse_seed(env, "SWITCHLAB_SEED");
    return 0;
}

inline nlohmann::json config_json(const RunConfig& c) {
    nlohmann::json j;
    j["input"] = c.input;
    j["adjacency"] = c.adjacency;
    j["coords"] = c.coords;
    j["out"] = c.out;
    j["model"] = c.model;
    j["kernel"] = c.kernel;
    j["bandwidth"] = c.bandwidth ? nlohmann::json(*c.bandwidth) : nlohmann::json(nullptr);
    j["spatial_bandwidth"] = c.spatial_bandwidth ? nlohmann::json(*c.spatial_bandwidth) : nlohmann::json(nullptr);
    j["effect"] = c.effects;
    j["alpha"] = c.alpha;
    j["sides"] = c.sides;
    j["bootstrap"] = c.B;
    j["replicates"] = c.R;
    j["mc"] = c.M;
    j["epochs"] = c.epochs;
    j["seed"] = resolve_seed(c);
    j["workers"] = c.workers;
    j["ridge"] = c.ridge;
    j["unsmoothed"] = c.unsmoothed;
    j["env"] = c.env;
    j["preset"] = c.preset;
    j["design"] = c.designs;
    j["n"] = c.n_grid;
    j["m"] = c.m_grid;
    j["ti"] = c.ti_grid;
    j["delta"] = c.delta1_grid;
    j["delta2"] = c.delta2_grid;
    j["rho"] = c.rho_grid;
    j["noise_scale"] = c.noise_scale;
    return j;
}

inline RunConfig config_from_json(const std::string& command, const nlohmann::json& j) {
    RunConfig c;
    c.command = command;
    try {
        c.input = j.at("input").get<std::string>();
        c.adjacency = j.at("adjacency").get<std::string>();
        c.coords = j.at("coords").get<std::string>();
        c.out = j.at("out").get<std::string>();
        c.model = j.at("model").get<std::string>();
        c.kernel = j.at("kernel").get<std::string>();
        if (!j.at("bandwidth").is_null()) c.bandwidth = j.at("bandwidth").get<double>();
        if (!j.at("spatial_bandwidth").is_null()) c.spatial_bandwidth = j.at("spatial_bandwidth").get<double>();
        c.effects = j.at("effect").get<std::vector<std::string>>();
        c.alpha = j.at("alpha").get<double>();
        c.sides = j.at("sides").get<std::string>();
        c.B = j.at("bootstrap").get<int>();
        c.R = j.at("replicates").get<int>();
        c.M = j.at("mc").get<int>();
        c.epochs = j.at("epochs").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.workers = j.at("workers").get<int>();
        c.ridge = j.at("ridge").get<double>();
        c.unsmoothed = j.at("unsmoothed").get<bool>();
        c.env = j.at("env").get<std::string>();
        c.preset = j.at("preset").get<std::string>();
        c.designs = j.at("design").get<std::vector<std::string>>();
        c.n_grid = j.at("n").get<std::vector<int>>();
        c.m_grid = j.at("m").get<std::vector<int>>();
        c.ti_grid = j.at("ti").get<std::vector<int>>();
        c.delta1_grid = j.at("delta").get<std::vector<double>>();
        c.delta2_grid = j.at("delta2").get<std::vector<double>>();
        c.rho_grid = j.at("rho").get<std::vector<double>>();
        c.noise_scale = j.at("noise_scale").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed manifest: ") + e.what());
    }
    return c;
}

// Collects written files and emits manifest.json last.
class OutputDir {
public:
    explicit OutputDir(const RunConfig& cfg) : cfg_(cfg) {
        std::error_code ec;
        std::filesystem::create_directories(cfg.out, ec);
        if (ec) throw InputError("cannot create output directory " + cfg.out + ": " + ec.message());
    }

    std::string path(const std::string& name) const { return (std::filesystem::path(cfg_.out) / name).string(); }

    void write(const std::string& name, const std::string& text) {
        write_text(path(name), text);
        files_.push_back(name);
    }

    void write_json(const std::string& name, const nlohmann::json& j) { write(name, dump_json(j)); }

    void finish(const nlohmann::json& extra = nlohmann::json::object()) {
        nlohmann::json m;
        m["tool"] = "switchlab";
        m["version"] = kVersion;
        m["command"] = cfg_.command;
        m["config"] = config_json(cfg_);
        m["outputs"] = files_;
        for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
        write_text(path("manifest.json"), dump_json(m));
    }

private:
    RunConfig cfg_;
    std::vector<std::string> files_;
};

inline Sides parse_sides(const std::string& s) {
    if (s == "one_sided_upper" || s == "one-sided") return Sides::one_sided_upper;
    if (s == "two_sided" || s == "two-sided") return Sides::two_sided;
    throw InputError("unknown --sides value: " + s);
}

inline Effect parse_effect(const std::string& s) {
    if (s == "DE" || s == "de") return Effect::DE;
    if (s == "IE" || s == "ie") return Effect::IE;
    throw InputError("unknown effect: " + s);
}

template <class T>
T first_or(const std::vector<T>& v, T fallback) {
    return v.empty() ? fallback : v.front();
}

inline void require_input(const RunConfig& c) {
    if (c.input.empty()) throw InputError("--input is required");
}

inline PanelDataset load_panel(const RunConfig& c) {
    require_input(c);
    PanelDataset ds = read_panel_csv(c.input);
    ensure_valid(validate(ds), c.input);
    return ds;
}

inline SpatioPanelDataset load_spatio(const RunConfig& c) {
    require_input(c);
    SpatioPanelDataset ds = read_spatio_csv(c.input, c.adjacency, c.coords);
    ensure_valid(validate(ds), c.input);
    return ds;
}

inline KernelSpec temporal_kernel(const RunConfig& c, const PanelDataset& ds, std::uint64_t seed) {
    KernelSpec k;
    k.family = parse_family(c.kernel);
    if (c.bandwidth) {
        if (!(*c.bandwidth > 0.0)) throw InputError("--bandwidth must be positive");
        k.h = *c.bandwidth;
    } else {
        k.h = select_bandwidth(ds, k.family, c.ridge, seed).h;
    }
    return k;
}

inline KernelSpec spatial_kernel(const RunConfig& c, const SpatioPanelDataset& ds, std::uint64_t seed) {
    KernelSpec k = temporal_kernel(c, pool_regions(ds), seed);
    if (c.spatial_bandwidth) {
        if (!(*c.spatial_bandwidth > 0.0)) throw InputError("--spatial-bandwidth must be positive");
        k.h_st = *c.spatial_bandwidth;
    } else {
        k.h_st = select_spatial_bandwidth(ds, FitOptions{k, c.ridge, true, 1}, seed).h_st;
    }
    return k;
}

inline nlohmann::json kernel_json(const KernelSpec& k) {
    nlohmann::json j{{"family", family_name(k.family)}, {"h", k.h}};
    if (k.h_st) j["h_st"] = *k.h_st;
    return j;
}

inline nlohmann::json path_json(const CoefficientPath& p) {
    nlohmann::json Th = nlohmann::json::array();
    for (const auto& T : p.Theta) Th.push_back(matrix_json(T));
    return {{"theta", matrix_json(p.theta)}, {"Theta", Th}};
}

inline std::vector<std::string> coefficient_names(const std::vector<std::string>& states, bool spatial) {
    std::vector<std::string> names{"beta0"};
    for (const auto& s : states) names.push_back("beta_" + s);
    names.push_back("gamma");
    if (spatial) names.push_back("gamma2");
    return names;
}

inline std::string report_text(const TestReport& r) {
    auto fmt = fmt_short;
    std::ostringstream o;
    o << effect_name(r.effect) << " estimate " << fmt(r.estimate);
    if (r.se) o << "  se " << fmt(*r.se) << "  z " << fmt(r.statistic);
    if (r.critical_value) o << "  bootstrap critical value " << fmt(*r.critical_value);
    o << "  p " << fmt(r.p_value) << "  " << (r.reject ? "reject" : "do not reject") << " H0 at alpha " << fmt(r.alpha)
      << " (" << sides_name(r.sides) << ")\n";
    for (const auto& w : r.warnings) o << "warning: " << w << "\n";
    return o.str();
}

inline nlohmann::json report_json(const TestReport& r, const KernelSpec& k, bool smoothed) {
    nlohmann::json j;
    j["effect"] = effect_name(r.effect);
    j["estimate"] = r.estimate;
    j["se"] = r.se ? nlohmann::json(*r.se) : nlohmann::json(nullptr);
    j["statistic"] = r.statistic;
    j["p_value"] = r.p_value;
    j["alpha"] = r.alpha;
    j["reject"] = r.reject;
    j["sides"] = sides_name(r.sides);
    j["smoothed"] = smoothed;
    j["kernel"] = kernel_json(k);
    if (r.critical_value) {
        j["critical_value"] = *r.critical_value;
        j["bootstrap_replicates"] = r.bootstrap_draws.size();
        nlohmann::json q;
        for (double p : {0.025, 0.05, 0.5, 0.95, 0.975}) q[fmt(p)] = quantile(r.bootstrap_draws, p);
        j["bootstrap_quantiles"] = q;
    }
    j["warnings"] = r.warnings;
    return j;
}

// ---------------------------------------------------------------------------
// fit

inline int cmd_fit(const RunConfig& c) {
    const std::uint64_t seed = resolve_seed(c);
    if (c.model == "tvcdp") {
        PanelDataset ds = load_panel(c);
        KernelSpec k = temporal_kernel(c, ds, seed);
        CoefficientPath raw = ols_fit(ds, c.ridge);
        CoefficientPath sm = c.unsmoothed ? raw : smooth_path(raw, k, interval_state_means(ds));
        CovarianceBundle b = decompose_residuals(ds, sm, k);
        MatrixXd S = outcome_covariance(b);
        OutputDir out(c);
        nlohmann::json j{{"model", "tvcdp"}, {"n", ds.n}, {"m", ds.m}, {"d", ds.d}, {"state_names", ds.state_names},
                         {"kernel", kernel_json(k)}, {"smoothed", !c.unsmoothed}, {"raw", path_json(raw)},
                         {"fitted", path_json(sm)}, {"DE", estimate_de(sm)}, {"IE", estimate_ie(sm)}};
        out.write_json("coefficients.json", j);
        auto names = coefficient_names(ds.state_names, false);
        std::string t = "tau,coefficient,raw,smoothed\n";
        for (int tau = 0; tau < ds.m; ++tau)
            for (int k2 = 0; k2 < ds.d + 2; ++k2)
                t += std::to_string(tau + 1) + "," + names[k2] + "," + fmt(raw.theta(tau, k2)) + "," +
                     fmt(sm.theta(tau, k2)) + "\n";
        out.write("theta_smoothed.csv", t);
        out.write("sigma_y.csv", matrix_csv(S, "tau"));
        std::string r = "date,tau,e,eta,eps\n";
        for (int i = 0; i < ds.n; ++i)
            for (int tau = 0; tau < ds.m; ++tau)
                r += ds.day_labels[i] + "," + std::to_string(tau + 1) + "," + fmt(b.e_hat(i, tau)) + "," +
                     fmt(b.eta_hat(i, tau)) + "," + fmt(b.eps_hat(i, tau)) + "\n";
        out.write("residuals.csv", r);
        out.finish();
        std::cout << "DE " << fmt_short(estimate_de(sm)) << "  IE " << fmt_short(estimate_ie(sm)) << "  h " << fmt_short(k.h) << "\n";
        return 0;
    }
    if (c.model == "stvcdp") {
        SpatioPanelDataset ds = load_spatio(c);
        KernelSpec k = spatial_kernel(c, ds, seed);
        FitOptions opt{k, c.ridge, !c.unsmoothed, c.workers};
        StCoefficientPath raw = st_ols_fit(ds, c.ridge, neighbor_drop_flags(ds));
        StFitResult res = fit_stvcdp_full(ds, opt);
        OutputDir out(c);
        nlohmann::json regions = nlohmann::json::array();
        for (int g = 0; g < ds.r; ++g) {
            nlohmann::json Tr = nlohmann::json::array(), Tf = nlohmann::json::array();
            for (int t = 0; t + 1 < ds.m(); ++t) {
                Tr.push_back(matrix_json(raw.Theta[g][t]));
                Tf.push_back(matrix_json(res.path.Theta[g][t]));
            }
            regions.push_back({{"region_id", ds.region_labels[g]},
                               {"neighbor_term_dropped", static_cast<bool>(res.path.neighbor_dropped[g])},
                               {"raw", {{"theta", matrix_json(raw.theta[g])}, {"Theta", Tr}}},
                               {"fitted", {{"theta", matrix_json(res.path.theta[g])}, {"Theta", Tf}}}});
        }
        nlohmann::json j{{"model", "stvcdp"}, {"r", ds.r}, {"n", ds.n()}, {"m", ds.m()}, {"d", ds.d()},
                         {"state_names", ds.regions[0].state_names}, {"kernel", kernel_json(k)},
                         {"smoothed", !c.unsmoothed}, {"regions", regions}, {"DE", estimate_de_st(res.path)},
                         {"IE", estimate_ie_st(res.path)}, {"warnings", res.path.warnings}};
        out.write_json("coefficients.json", j);
        auto names = coefficient_names(ds.regions[0].state_names, true);
        std::string t = "region_id,tau,coefficient,raw,smoothed\n";
        for (int g = 0; g < ds.r; ++g)
            for (int tau = 0; tau < ds.m(); ++tau)
                for (int k2 = 0; k2 < ds.p(); ++k2)
                    t += ds.region_labels[g] + "," + std::to_string(tau + 1) + "," + names[k2] + "," +
                         fmt(raw.theta[g](tau, k2)) + "," + fmt(res.path.theta[g](tau, k2)) + "\n";
        out.write("theta_smoothed.csv", t);
        out.write("sigma_y_st.csv", matrix_csv(res.bundle.sigma_y_st, "index"));
        std::string r = "region_id,date,tau,e,eta1,eta2,eta3,eps\n";
        for (int g = 0; g < ds.r; ++g)
            for (int i = 0; i < ds.n(); ++i)
                for (int tau = 0; tau < ds.m(); ++tau)
                    r += ds.region_labels[g] + "," + ds.regions[g].day_labels[i] + "," + std::to_string(tau + 1) + "," +
                         fmt(res.bundle.e_hat[i](tau, g)) + "," + fmt(res.bundle.eta1[i](tau, g)) + "," +
                         fmt(res.bundle.eta2[i](tau, g)) + "," + fmt(res.bundle.eta3[i](tau, g)) + "," +
                         fmt(res.bundle.eps[i](tau, g)) + "\n";
        out.write("residuals.csv", r);
        out.finish();
        for (const auto& w : res.path.warnings) std::cerr << "warning: " << w << "\n";
        std::cout << "DE " << fmt_short(estimate_de_st(res.path)) << "  IE " << fmt_short(estimate_ie_st(res.path)) << "  h "
                  << fmt_short(k.h) << "  h_st " << fmt_short(*k.h_st) << "\n";
        return 0;
    }
    if (c.model == "nn") {
        PanelDataset ds = load_panel(c);
        NnOptions o;
        o.M = c.M;
        o.train.epochs = c.epochs;
        o.workers = c.workers;
        NnResult res = nn_estimate(ds, o, seed);
        OutputDir out(c);
        out.write_json("surfaces.json", surfaces_to_json(res.surfaces));
        nlohmann::json dens{{"family", "gaussian"}, {"pooled", res.density.pooled}, {"mean", 0.0}};
        nlohmann::json covs = nlohmann::json::array();
        for (const auto& cv : res.density.cov) covs.push_back(matrix_json(cv));
        dens["covariance"] = covs;
        out.write_json("density.json", dens);
        out.write_json("effects.json", {{"DE", res.effects.de}, {"IE", res.effects.ie}, {"M", c.M}});
        out.finish();
        std::cout << "DE " << fmt_short(res.effects.de) << "  IE " << fmt_short(res.effects.ie) << "\n";
        return 0;
    }
    throw InputError("unknown model: " + c.model + " (expected tvcdp, stvcdp or nn)");
}

// ---------------------------------------------------------------------------
// test

inline int cmd_test(const RunConfig& c) {
    const std::uint64_t seed = resolve_seed(c);
    if (c.effects.size() != 1) throw InputError("test takes exactly one --effect (DE or IE)");
    const Effect effect = parse_effect(c.effects.front());
    const Sides sides = parse_sides(c.sides);
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw InputError("--alpha must lie in (0,1)");
    TestReport rep;
    KernelSpec k;
    if (c.model == "tvcdp") {
        PanelDataset ds = load_panel(c);
        k = temporal_kernel(c, ds, seed);
        FitOptions opt{k, c.ridge, !c.unsmoothed, c.workers};
        rep = effect == Effect::DE ? de_wald_test(ds, opt, c.alpha, sides)
                                   : ie_bootstrap_test(ds, opt, c.B, c.alpha, derive_seed(seed, {2}), sides);
    } else if (c.model == "stvcdp") {
        SpatioPanelDataset ds = load_spatio(c);
        k = spatial_kernel(c, ds, seed);
        FitOptions opt{k, c.ridge, !c.unsmoothed, c.workers};
        rep = effect == Effect::DE ? de_st_wald_test(ds, opt, c.alpha, sides)
                                   : ie_st_bootstrap_test(ds, opt, c.B, c.alpha, derive_seed(seed, {2}), sides);
    } else if (c.model == "nn") {
        throw InputError("no hypothesis test is available for the nn model; use fit for point estimates");
    } else {
        throw InputError("unknown model: " + c.model);
    }
    OutputDir out(c);
    out.write_json("report.json", report_json(rep, k, !c.unsmoothed));
    out.finish();
    std::cout << report_text(rep);
    return 0;
}

// ---------------------------------------------------------------------------
// simulate

inline void scale_noise(Environment& env, double s) {
    env.random_effect_cov *= s * s;
    env.measurement_sd *= s;
    for (auto& S : env.state_noise_cov) S *= s * s;
    env.finalize();
}

inline void scale_noise(StEnvironment& env, double s) {
    env.outcome_cov *= s * s;
    for (auto& region : env.state_noise_cov)
        for (auto& S : region) S *= s * s;
    env.finalize();
}

inline int grid_m(const RunConfig& c, int fallback) { return first_or(c.m_grid, fallback); }

inline Environment temporal_environment(const std::string& name, int m, double delta, double rho) {
    if (name == "city") return make_city_analog(kAnalogSeed, 40, m).environment(delta);
    if (name == "ar1") return ar1_environment(m, rho, 1.0);
    if (name == "linear") return linear_benchmark_environment(m);
    throw InputError("unknown temporal environment: " + name + " (expected city, ar1 or linear)");
}

inline int cmd_simulate(const RunConfig& c) {
    const std::uint64_t seed = resolve_seed(c);
    const std::string env_name = c.env.empty() ? "city" : c.env;
    const int n = first_or(c.n_grid, 20);
    const int ti = first_or(c.ti_grid, 1);
    const double d1 = first_or(c.delta1_grid, 0.0), d2 = first_or(c.delta2_grid, 0.0);
    if (n < 1) throw InputError("--n must be positive");
    if (!(c.noise_scale >= 0.0)) throw InputError("--noise-scale must be non-negative");
    OutputDir out(c);
    if (env_name == "st-city") {
        const DesignKind kind = parse_design(first_or<std::string>(c.designs, "spatiotemporal_alternation"));
        StEnvironment env = make_st_city_analog(kAnalogSeed, 40, grid_m(c, 48)).environment(d1, d2);
        if (c.noise_scale != 1.0) scale_noise(env, c.noise_scale);
        SpatioPanelDataset ds = simulate_st_dataset(env, DesignSpec{kind, ti, derive_seed(seed, {3})}, n, seed);
        ensure_valid(validate(ds), "simulated dataset");
        out.write("data.csv", spatio_csv(ds));
        out.write("adjacency.csv", adjacency_csv(ds));
        out.write("coords.csv", coords_csv(ds));
        auto [de, ie] = compute_true_effects_st(env.coeffs);
        out.write_json("truth.json", {{"DE", de}, {"IE", ie}, {"delta1", d1}, {"delta2", d2}});
        out.finish();
        std::cout << "wrote " << ds.r << " regions x " << n << " days; true DE " << fmt_short(de) << "  IE " << fmt_short(ie) << "\n";
        return 0;
    }
    const DesignKind kind = parse_design(first_or<std::string>(c.designs, "switchback"));
    Environment env = temporal_environment(env_name, grid_m(c, env_name == "linear" ? 24 : 48), d1,
                                           first_or(c.rho_grid, 0.5));
    if (c.noise_scale != 1.0) scale_noise(env, c.noise_scale);
    PanelDataset ds = simulate_dataset(env, DesignSpec{kind, ti, derive_seed(seed, {3})}, n, seed);
    ensure_valid(validate(ds), "simulated dataset");
    out.write("data.csv", panel_csv(ds));
    auto [de, ie] = compute_true_effects(env.coeffs);
    out.write_json("truth.json", {{"DE", de}, {"IE", ie}, {"delta", d1}, {"coefficients", path_json(env.coeffs)}});
    out.finish();
    std::cout << "wrote " << n << " days; true DE " << fmt_short(de) << "  IE " << fmt_short(ie) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// study

inline void apply_study_preset(RunConfig& c) {
    if (c.preset.empty()) return;
    if (c.preset == "temporal-de") {
        c.env = "city";
        c.designs = {"switchback"};
        c.n_grid = {8, 20};
        c.delta1_grid = {0, 0.25, 0.5, 0.75, 1};
        c.ti_grid = {1, 3, 6};
        c.effects = {"DE"};
    } else if (c.preset == "temporal-ie") {
        c.env = "city";
        c.designs = {"switchback"};
        c.n_grid = {8, 20};
        c.delta1_grid = {0, 0.5, 1};
        c.ti_grid = {1};
        c.effects = {"IE"};
    } else if (c.preset == "spatial") {
        c.env = "st-city";
        c.designs = {"spatiotemporal_alternation", "switchback"};
        c.n_grid = {8, 20};
        c.delta1_grid = {0, 1};
        c.delta2_grid = {0, 1};
        c.ti_grid = {1};
        c.effects = {"DE", "IE"};
    } else {
        throw InputError("unknown study preset: " + c.preset + " (expected temporal-de, temporal-ie or spatial)");
    }
}

inline std::string study_csv(const std::vector<StudyRow>& rows) {
    std::string s = "design,n,m,TI,delta1,delta2,effect,rejection_rate,se,replicates\n";
    for (const auto& r : rows) {
        s += std::string(design_name(r.cell.design)) + "," + std::to_string(r.cell.n) + "," + std::to_string(r.cell.m) +
             "," + std::to_string(r.cell.TI) + "," + fmt(r.cell.delta1) + "," + fmt(r.cell.delta2) + "," +
             effect_name(r.cell.effect) + ",";
        if (r.replicates > 0)
            s += fmt(r.rejection_rate) + "," + fmt(r.se);
        else
            s += "NA,NA";
        s += "," + std::to_string(r.replicates) + "\n";
    }
    return s;
}

inline int cmd_study(RunConfig c) {
    apply_study_preset(c);
    const std::uint64_t seed = resolve_seed(c);
    const bool spatial = c.env == "st-city" || (c.env.empty() && c.model == "stvcdp");
    if (!c.env.empty() && c.env != "city" && c.env != "st-city")
        throw InputError("study environment must be city or st-city");
    StudyConfig cfg;
    cfg.designs.clear();
    for (const auto& d : c.designs) cfg.designs.push_back(parse_design(d));
    if (c.designs.empty())
        cfg.designs = {spatial ? DesignKind::spatiotemporal_alternation : DesignKind::switchback};
    cfg.n_grid = c.n_grid;
    cfg.delta1_grid = c.delta1_grid;
    cfg.delta2_grid = c.delta2_grid.empty() ? std::vector<double>{0.0} : c.delta2_grid;
    cfg.ti_grid = c.ti_grid;
    cfg.effects.clear();
    for (const auto& e : c.effects) cfg.effects.push_back(parse_effect(e));
    cfg.R = c.R;
    cfg.B = c.B;
    cfg.alpha = c.alpha;
    cfg.sides = parse_sides(c.sides);
    cfg.seed = seed;
    cfg.workers = c.workers;
    const int m = grid_m(c, 48);
    if (study_cells(cfg, m).empty()) throw InputError("empty study grid");
    for (int n : cfg.n_grid)
        if (n < 2) throw InputError("study day counts must be at least 2");
    for (auto d : cfg.designs)
        if (d == DesignKind::spatiotemporal_alternation && !spatial)
            throw InputError("spatiotemporal_alternation needs the st-city environment");

    auto progress = [](std::size_t done, std::size_t total, const StudyRow& r) {
        std::cerr << "[" << done << "/" << total << "] " << design_name(r.cell.design) << " n=" << r.cell.n
                  << " TI=" << r.cell.TI << " delta=(" << fmt_short(r.cell.delta1) << "," << fmt_short(r.cell.delta2) << ") "
                  << effect_name(r.cell.effect) << " rate=" << (r.replicates ? fmt_short(r.rejection_rate) : "NA");
        if (r.failures) std::cerr << " failures=" << r.failures << " (" << r.first_error << ")";
        std::cerr << "\n";
    };
    std::vector<StudyRow> rows;
    if (spatial) {
        SpatialScenario sc{make_st_city_analog(kAnalogSeed, 40, m), {}, cfg.B, cfg.alpha, cfg.sides};
        sc.prepare(cfg.delta1_grid, cfg.delta2_grid);
        rows = rejection_study(cfg, m, std::cref(sc), progress);
    } else {
        for (double d2 : cfg.delta2_grid)
            if (d2 != 0.0) throw InputError("delta2 applies to the st-city environment only");
        TemporalScenario sc{make_city_analog(kAnalogSeed, 40, m), {}, cfg.B, cfg.alpha, cfg.sides};
        sc.prepare(cfg.delta1_grid);
        rows = rejection_study(cfg, m, std::cref(sc), progress);
    }
    OutputDir out(c);
    out.write("study.csv", study_csv(rows));
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& r : rows)
        if (r.failures)
            failures.push_back({{"design", design_name(r.cell.design)}, {"n", r.cell.n}, {"TI", r.cell.TI},
                                {"delta1", r.cell.delta1}, {"delta2", r.cell.delta2},
                                {"effect", effect_name(r.cell.effect)}, {"failed_replicates", r.failures},
                                {"first_error", r.first_error}});
    out.finish({{"failed_cells", failures}});
    return 0;
}

// ---------------------------------------------------------------------------
// design-compare

inline int cmd_design_compare(RunConfig c) {
    if (c.preset == "alternating") {
        c.designs = {"switchback", "alternating_day"};
        c.rho_grid = {0.0, 0.5};
        c.m_grid = {48};
        c.n_grid = {200};
    } else if (c.preset == "bernoulli") {
        c.designs = {"switchback", "bernoulli"};
        c.rho_grid = {0.8};
        c.m_grid = {6, 12, 24, 48};
        c.n_grid = {100};
    } else if (!c.preset.empty()) {
        throw InputError("unknown design-compare preset: " + c.preset + " (expected alternating or bernoulli)");
    }
    if (!c.env.empty() && c.env != "ar1") throw InputError("design-compare uses the ar1 environment");
    const std::uint64_t seed = resolve_seed(c);
    std::vector<DesignSpec> designs;
    for (const auto& d : c.designs) designs.push_back(DesignSpec{parse_design(d), first_or(c.ti_grid, 1), 0});
    if (designs.empty() || c.rho_grid.empty() || c.m_grid.empty() || c.n_grid.empty())
        throw InputError("empty comparison grid");
    for (const auto& d : designs)
        if (d.kind == DesignKind::spatiotemporal_alternation)
            throw InputError("design-compare supports temporal designs only");
    const int n = c.n_grid.front();
    // Ratios are taken against the last listed design.
    std::string s = "rho,m,n,design,mse,bias,replicates,mse_ratio,theory_ratio\n";
    for (double rho : c.rho_grid)
        for (int m : c.m_grid) {
            Environment env = ar1_environment(m, rho, 1.0);
            auto rows = mse_compare(env, designs, n, c.R, derive_seed(seed, {static_cast<std::uint64_t>(m)}), c.workers,
                                    c.ridge);
            const MseRow& ref = rows.back();
            for (const auto& r : rows) {
                std::string theory;
                if (r.design == DesignKind::switchback && ref.design == DesignKind::alternating_day)
                    theory = fmt((1 - rho) * (1 - rho) / ((1 + rho) * (1 + rho)));
                s += fmt(rho) + "," + std::to_string(m) + "," + std::to_string(n) + "," + design_name(r.design) + "," +
                     fmt(r.mse) + "," + fmt(r.bias) + "," + std::to_string(r.replicates) + "," +
                     fmt(ref.mse > 0 ? r.mse / ref.mse : 0.0) + "," + theory + "\n";
            }
            std::cerr << "rho=" << fmt_short(rho) << " m=" << m << " done\n";
        }
    OutputDir out(c);
    out.write("design_compare.csv", s);
    out.finish();
    return 0;
}

// ---------------------------------------------------------------------------
// dispatch

inline int execute(const RunConfig& c);

inline int cmd_replay(const RunConfig& c) {
    if (c.manifest.empty()) throw InputError("--manifest is required");
    std::ifstream in(c.manifest);
    if (!in) throw InputError("cannot open " + c.manifest);
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed manifest: ") + e.what());
    }
    if (!m.contains("command") || !m.contains("config")) throw InputError("malformed manifest: missing command/config");
    const std::string command = m["command"].get<std::string>();
    if (command == "replay") throw InputError("manifest records a replay");
    RunConfig r = config_from_json(command, m["config"]);
    if (c.out != ".") r.out = c.out;
    r.workers = c.workers;
    return execute(r);
}

inline int execute(const RunConfig& c) {
    if (c.workers < 1) throw InputError("--workers must be at least 1");
    if (c.command == "fit") return cmd_fit(c);
    if (c.command == "test") return cmd_test(c);
    if (c.command == "simulate") return cmd_simulate(c);
    if (c.command == "study") return cmd_study(c);
    if (c.command == "design-compare") return cmd_design_compare(c);
    if (c.command == "replay") return cmd_replay(c);
    throw InputError("unknown command: " + c.command);
}

inline int run(int argc, const char* const* argv) {
    RunConfig c;
    CLI::App app{"Switchback experiment analysis: DE/IE estimation, tests and design simulation", "switchlab"};
    app.set_version_flag("--version", std::string("switchlab ") + kVersion);
    app.require_subcommand(1);
    app.set_config("--config", "", "Flat key=value file; command-line flags take precedence");
    app.get_config_ptr()->check(CLI::ExistingFile);

    std::string seed_text;
    app.add_option("--input", c.input, "Panel CSV");
    app.add_option("--adjacency", c.adjacency, "Edge list CSV (region_a,region_b)");
    app.add_option("--coords", c.coords, "Coordinates CSV (region_id,u,v)");
    app.add_option("--model", c.model, "tvcdp | stvcdp | nn");
    app.add_option("--alpha", c.alpha, "Significance level");
    app.add_option("--sides", c.sides, "one_sided_upper | two_sided");
    app.add_option("--kernel", c.kernel, "epanechnikov | triangular | quartic");
    app.add_option("--bandwidth", c.bandwidth, "Temporal bandwidth h (default: cross-validated)");
    app.add_option("--spatial-bandwidth", c.spatial_bandwidth, "Spatial bandwidth h_st (default: cross-validated)");
    app.add_option("--bootstrap", c.B, "Bootstrap replicates B");
    app.add_option("--replicates", c.R, "Monte Carlo replicates R");
    app.add_option("--mc", c.M, "Counterfactual rollouts M per day (nn)");
    app.add_option("--epochs", c.epochs, "Training epochs (nn)");
    app.add_option("--seed", seed_text, "Seed (fallback: SWITCHLAB_SEED, then 0)");
    app.add_option("--workers", c.workers, "Worker threads");
    app.add_option("--out", c.out, "Output directory");
    app.add_option("--ridge", c.ridge, "Ridge added to Gram matrices");
    app.add_flag("--unsmoothed", c.unsmoothed, "Use the unsmoothed estimators");
    app.add_option("--env", c.env, "city | st-city | ar1 | linear");
    app.add_option("--preset", c.preset, "Study or comparison preset");
    // A list flag given with no values means an explicitly empty list.
    std::vector<std::function<void()>> clear_if_bare;
    auto vec = [&](const std::string& name, auto& target, const std::string& help) {
        CLI::Option* o = app.add_option(name, target, help)->expected(0, CLI::detail::expected_max_vector_size)->delimiter(',');
        clear_if_bare.push_back([o, &target] {
            if (o->count() == 0) return;
            for (const auto& r : o->results())
                if (!r.empty()) return;
            target.clear();
        });
    };
    vec("--effect", c.effects, "DE | IE (list for study)");
    vec("--design", c.designs, "Design kinds");
    vec("--n", c.n_grid, "Day counts");
    vec("--m", c.m_grid, "Intervals per day");
    vec("--ti", c.ti_grid, "Block lengths TI");
    vec("--delta", c.delta1_grid, "Effect sizes (delta, or delta1 for st-city)");
    vec("--delta2", c.delta2_grid, "Spillover effect sizes (st-city)");
    vec("--rho", c.rho_grid, "AR(1) correlations");
    app.add_option("--noise-scale", c.noise_scale, "Multiplier on all simulated noise");
    app.add_option("--manifest", c.manifest, "Manifest to replay");

    for (const char* name : {"fit", "test", "simulate", "study", "design-compare", "replay"})
        app.add_subcommand(name)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    c.command = app.get_subcommands().front()->get_name();
    try {
        for (auto& f : clear_if_bare) f();
        if (!seed_text.empty()) c.seed = parse_seed(seed_text, "--seed");
        // Vector flags that came only from defaults stay at their defaults.
        if (app.get_option("--effect")->count() == 0 && c.effects.empty()) c.effects = {"DE"};
        if (c.command == "study") {
            if (app.get_option("--n")->count() == 0 && c.n_grid.empty()) c.n_grid = {8};
            if (app.get_option("--delta")->count() == 0 && c.delta1_grid.empty()) c.delta1_grid = {0.0};
            if (app.get_option("--ti")->count() == 0 && c.ti_grid.empty()) c.ti_grid = {1};
        }
        if (c.command == "design-compare" && c.preset.empty()) {
            if (app.get_option("--design")->count() == 0) c.designs = {"switchback", "alternating_day"};
            if (app.get_option("--rho")->count() == 0) c.rho_grid = {0.5};
            if (app.get_option("--m")->count() == 0) c.m_grid = {48};
            if (app.get_option("--n")->count() == 0) c.n_grid = {200};
            if (app.get_option("--replicates")->count() == 0) c.R = 500;
        }
        return execute(c);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
}

}  // namespace switchlab
