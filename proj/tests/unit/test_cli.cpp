#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "switchlab/cli.hpp"

namespace fs = std::filesystem;
using namespace switchlab;
using Catch::Approx;

namespace {

struct Outcome {
    int code;
    std::string err;
};

// Runs the CLI in-process with stdout and stderr captured.
Outcome cli(std::vector<std::string> args) {
    args.insert(args.begin(), "switchlab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    int code = run(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    return {code, err.str()};
}

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("switchlab_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

nlohmann::json load_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

MatrixXd json_matrix(const nlohmann::json& j) {
    MatrixXd M(j.size(), j[0].size());
    for (std::size_t r = 0; r < j.size(); ++r)
        for (std::size_t c = 0; c < j[r].size(); ++c) M(r, c) = j[r][c].get<double>();
    return M;
}

const std::string kFixtures = SWITCHLAB_FIXTURES;

}  // namespace

TEST_CASE("simulate then fit recovers noiseless coefficients", "[cli]") {
    fs::path d = scratch("roundtrip");
    REQUIRE(cli({"simulate", "--env", "linear", "--n", "30", "--m", "8", "--noise-scale", "0", "--design", "bernoulli",
                 "--seed", "4", "--out", (d / "sim").string()})
                .code == 0);
    REQUIRE(cli({"fit", "--input", (d / "sim" / "data.csv").string(), "--ridge", "0", "--unsmoothed", "--bandwidth",
                 "0.2", "--out", (d / "fit").string()})
                .code == 0);
    auto truth = load_json(d / "sim" / "truth.json");
    auto fit = load_json(d / "fit" / "coefficients.json");
    CHECK((json_matrix(fit["fitted"]["theta"]) - json_matrix(truth["coefficients"]["theta"])).cwiseAbs().maxCoeff() <= 1e-8);
    for (std::size_t t = 0; t < truth["coefficients"]["Theta"].size(); ++t)
        CHECK((json_matrix(fit["fitted"]["Theta"][t]) - json_matrix(truth["coefficients"]["Theta"][t])).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(fit["DE"].get<double>() == Approx(truth["DE"].get<double>()).margin(1e-7));
    CHECK(fit["IE"].get<double>() == Approx(truth["IE"].get<double>()).margin(1e-7));
    for (const char* f : {"theta_smoothed.csv", "sigma_y.csv", "residuals.csv", "manifest.json"})
        CHECK(fs::exists(d / "fit" / f));
}

TEST_CASE("reruns are byte-identical and replay closes the loop", "[cli]") {
    fs::path d = scratch("rerun");
    std::vector<std::string> args{"simulate", "--n", "6", "--m", "12", "--env", "ar1", "--seed", "9"};
    auto with_out = [&](const std::string& o) {
        auto a = args;
        a.push_back("--out");
        a.push_back((d / o).string());
        return a;
    };
    REQUIRE(cli(with_out("a")).code == 0);
    REQUIRE(cli(with_out("b")).code == 0);
    CHECK(slurp(d / "a" / "data.csv") == slurp(d / "b" / "data.csv"));
    CHECK(slurp(d / "a" / "truth.json") == slurp(d / "b" / "truth.json"));

    REQUIRE(cli({"replay", "--manifest", (d / "a" / "manifest.json").string(), "--out", (d / "c").string()}).code == 0);
    CHECK(slurp(d / "a" / "data.csv") == slurp(d / "c" / "data.csv"));

    REQUIRE(cli({"test", "--input", (d / "a" / "data.csv").string(), "--bandwidth", "0.3", "--out", (d / "t1").string()}).code == 0);
    REQUIRE(cli({"replay", "--manifest", (d / "t1" / "manifest.json").string(), "--out", (d / "t2").string()}).code == 0);
    CHECK(slurp(d / "t1" / "report.json") == slurp(d / "t2" / "report.json"));
}

TEST_CASE("environment seed is the fallback", "[cli]") {
    fs::path d = scratch("envseed");
    ::setenv("SWITCHLAB_SEED", "17", 1);
    REQUIRE(cli({"simulate", "--env", "ar1", "--n", "4", "--m", "6", "--out", (d / "env").string()}).code == 0);
    ::unsetenv("SWITCHLAB_SEED");
    REQUIRE(cli({"simulate", "--env", "ar1", "--n", "4", "--m", "6", "--seed", "17", "--out", (d / "flag").string()}).code == 0);
    REQUIRE(cli({"simulate", "--env", "ar1", "--n", "4", "--m", "6", "--out", (d / "zero").string()}).code == 0);
    CHECK(slurp(d / "env" / "data.csv") == slurp(d / "flag" / "data.csv"));
    CHECK(slurp(d / "env" / "data.csv") != slurp(d / "zero" / "data.csv"));
}

TEST_CASE("input errors exit with code 2", "[cli]") {
    fs::path d = scratch("errors");
    {
        std::ofstream f(d / "bad.csv");
        f << "date,time,action,outcome,s\n"
          << "d1,1,0,1.0,0.1\n"
          << "d1,2,2,1.0,0.2\n"
          << "d2,1,1,1.0,0.3\n"
          << "d2,2,0,1.0,0.4\n";
    }
    Outcome bad = cli({"fit", "--input", (d / "bad.csv").string(), "--bandwidth", "0.5", "--out", d.string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("line 3") != std::string::npos);
    CHECK(bad.err.find("non-binary action") != std::string::npos);

    REQUIRE(cli({"simulate", "--env", "st-city", "--n", "4", "--m", "6", "--out", (d / "st").string()}).code == 0);
    Outcome noadj = cli({"fit", "--model", "stvcdp", "--input", (d / "st" / "data.csv").string(), "--out", d.string()});
    CHECK(noadj.code == 2);
    CHECK(noadj.err == "error: adjacency required for stvcdp\n");

    Outcome empty = cli({"study", "--n", "--out", d.string()});
    CHECK(empty.code == 2);
    CHECK(empty.err.find("empty study grid") != std::string::npos);
    CHECK(cli({"fit", "--bogus"}).code == 2);
    CHECK(cli({"simulate", "--design", "switchback", "--ti", "5", "--m", "12", "--env", "ar1", "--out", d.string()}).code == 2);
    CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("a degenerate design exits with code 3", "[cli]") {
    fs::path d = scratch("degenerate");
    {
        std::ofstream f(d / "flat.csv");
        f << "date,time,action,outcome,s\n";
        for (int i = 0; i < 4; ++i)
            for (int t = 1; t <= 3; ++t) f << "d" << i << "," << t << ",0," << (i + t) << "," << 0.1 * i * t << "\n";
    }
    Outcome o = cli({"fit", "--input", (d / "flat.csv").string(), "--ridge", "0", "--bandwidth", "0.5", "--out", d.string()});
    CHECK(o.code == 3);
}

TEST_CASE("tests on the committed fixtures", "[cli]") {
    fs::path d = scratch("fixtures");
    auto p_value = [&](const std::string& file, const std::string& sides, const std::string& o) {
        REQUIRE(cli({"test", "--input", kFixtures + "/" + file, "--effect", "DE", "--sides", sides, "--out", (d / o).string()})
                    .code == 0);
        return load_json(d / o / "report.json")["p_value"].get<double>();
    };
    const double null_p = p_value("city_null.csv", "one_sided_upper", "n1");
    const double signal_p = p_value("city_signal.csv", "one_sided_upper", "s1");
    CHECK(null_p > 0.05);
    CHECK(signal_p < 0.01);
    const double null_two = p_value("city_null.csv", "two_sided", "n2");
    CHECK(null_two == Approx(2.0 * std::min(null_p, 1.0 - null_p)).epsilon(1e-12));
}

TEST_CASE("study and design-compare tables", "[cli]") {
    fs::path d = scratch("study");
    REQUIRE(cli({"study", "--n", "8,10", "--m", "12", "--delta", "0", "--replicates", "4", "--seed", "1", "--out",
                 (d / "s").string()})
                .code == 0);
    std::string csv = slurp(d / "s" / "study.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.rfind("design,n,m,TI,delta1,delta2,effect,rejection_rate,se,replicates\n", 0) == 0);

    REQUIRE(cli({"design-compare", "--preset", "alternating", "--replicates", "5", "--out", (d / "c").string()}).code == 0);
    std::string cmp = slurp(d / "c" / "design_compare.csv");
    CHECK(cmp.find("mse_ratio,theory_ratio") != std::string::npos);
    CHECK(cmp.find(",0.1111111111111111") != std::string::npos);
}
