#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mudicho/evolution.hpp"
#include "mudicho/sysdef.hpp"
#include "testutil.hpp"

using namespace mudicho;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
    const std::string path = "/tmp/" + name;
    std::ofstream out(path);
    out << body;
    return path;
}

} // namespace

TEST_CASE("example42 loads with the documented structure") {
    SystemSpec s = testutil::load_example42();
    CHECK(s.kind == SystemKind::Discrete);
    CHECK(s.dim == 2);
    CHECK(s.index_start == doctest::Approx(1.0));
    CHECK(s.rate.name == "polynomial");
    Mat a3 = s.linear_at(3.0);
    CHECK(a3(0, 0) == doctest::Approx(3.0 / 4.0));
    CHECK(a3(1, 1) == doctest::Approx(4.0 / 3.0));
    CHECK(a3(0, 1) == doctest::Approx(0.0));
    // g components are (c/(n+1)) xi(x_i) with c = 0.01
    Vec g = s.nonlinear_at(1.0, {1.0, 0.0});
    CHECK(g[0] == doctest::Approx(0.005 * std::exp(-1.0)));
    CHECK(g[1] == doctest::Approx(0.0));
}

TEST_CASE("example42 cocycle telescopes to diag(n/m, m/n)") {
    SystemSpec s = testutil::load_example42();
    LinearCocycle co(make_discrete_system(s));
    for (long n : {1L, 3L, 9L}) {
        for (long m : {n, n + 1, 2 * n, 4 * n + 3}) {
            Mat t = co.transfer(m, n);
            CHECK(std::fabs(t(0, 0) - static_cast<double>(n) / m) < 1e-12);
            CHECK(std::fabs(t(1, 1) - static_cast<double>(m) / n) < 1e-12);
            CHECK(std::fabs(t(0, 1)) < 1e-15);
            CHECK(std::fabs(t(1, 0)) < 1e-15);
        }
    }
}

TEST_CASE("identity system loads with a no-dichotomy warning") {
    const std::string path = write_temp("identity_spec.json", R"json({
        "kind": "discrete", "dim": 2,
        "growth_rate": {"builtin": "exponential"},
        "linear": [["1", "0"], ["0", "1"]]
    })json");
    SystemSpec s = load_spec(path);
    REQUIRE(s.warnings.size() >= 1);
    CHECK(s.warnings.front().find("no dichotomy expected") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("g(0) != 0 fails validation naming the condition") {
    const std::string path = write_temp("bad_g.json", R"json({
        "kind": "discrete", "dim": 1,
        "growth_rate": {"builtin": "exponential"},
        "linear": [["0.5"]],
        "nonlinear": ["x1+1"]
    })json");
    try {
        load_spec(path);
        CHECK(false);
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("g(0)=0") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("Dg(0) != 0 fails validation") {
    const std::string path = write_temp("bad_dg.json", R"json({
        "kind": "discrete", "dim": 1,
        "growth_rate": {"builtin": "exponential"},
        "linear": [["0.5"]],
        "nonlinear": ["0.3*x1"]
    })json");
    CHECK_THROWS_AS(load_spec(path), ValidationError);
    std::remove(path.c_str());
}

TEST_CASE("schema errors name the offending field") {
    const std::string path = write_temp("bad_schema.json", R"json({
        "kind": "discrete", "dim": 2,
        "growth_rate": {"builtin": "polynomial"},
        "linear": [["1", "0"]]
    })json");
    try {
        load_spec(path);
        CHECK(false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("linear") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("singular linear part fails validation with the witness index") {
    const std::string path = write_temp("singular.json", R"json({
        "kind": "discrete", "dim": 1,
        "growth_rate": {"builtin": "exponential"},
        "linear": [["n-3"]],
        "index_start": 0
    })json");
    try {
        load_spec(path);
        CHECK(false);
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("spec round trips through JSON") {
    SystemSpec s = testutil::load_example42();
    nlohmann::json j = spec_to_json(s);
    SystemSpec s2 = spec_from_json(j);
    CHECK(s2.dim == s.dim);
    CHECK(max_abs(s2.linear_at(5.0) - s.linear_at(5.0)) < 1e-15);
    Vec x{0.3, -0.2};
    CHECK(norm2(s2.nonlinear_at(4.0, x) - s.nonlinear_at(4.0, x)) < 1e-15);
}

TEST_CASE("estimate_lipschitz on example42: c_hat tracks c sup|Dxi|") {
    SystemSpec s = testutil::load_example42();
    // oracle: Dxi(x) = 2x e^{-x^2}(1-x^2); dense scan of sup |Dxi| over the box
    double sup_dxi = 0.0;
    for (double x = -0.5; x <= 0.5; x += 1e-4)
        sup_dxi = std::max(sup_dxi, std::fabs(2 * x * std::exp(-x * x) * (1 - x * x)));
    // weight mu_n/mu'_n restores c from ||Dg_n|| = (c/(n+1)) |Dxi|
    GridConfig grid;
    grid.radius = 0.5;
    grid.points = 200;
    LipschitzEstimate est = estimate_lipschitz(s, 32, grid);
    CHECK(est.c_hat <= 0.01 + 1e-3);
    CHECK(est.c_hat == doctest::Approx(0.01 * sup_dxi).epsilon(0.05));
    CHECK(est.contraction_bound_ok); // cK theta^{a+1} = 0.01*1*4 < 1
    // |Dxi(x)-Dxi(y)| <= 2|x-y|, so the two-point maximum sits below 2c
    CHECK(est.m_hat <= 0.02 + 1e-3);
    CHECK(est.m_hat > 0.0);
}

TEST_CASE("estimate_lipschitz: zero nonlinearity gives zeros") {
    SystemSpec s = testutil::load_example42();
    s.nonlinear.clear();
    LipschitzEstimate est = estimate_lipschitz(s, 16);
    CHECK(est.c_hat == 0.0);
    CHECK(est.m_hat == 0.0);
}

TEST_CASE("estimate_lipschitz: scalar x^2/(n+1) against a dense-grid oracle") {
    const std::string path = write_temp("quad.json", R"json({
        "kind": "discrete", "dim": 1, "index_start": 0,
        "growth_rate": {"builtin": "polynomial"},
        "linear": [["0.5"]],
        "nonlinear": ["x1^2/(n+1)"]
    })json");
    SystemSpec s = load_spec(path);
    std::remove(path.c_str());
    // oracle: |Dg_n(x)| mu_n / mu'_n = |2x/(n+1)| * (1+n) = |2x| <= 2 on |x| <= 1,
    // brute-forced on a dense grid
    double oracle = 0.0;
    for (long n = 0; n <= 16; ++n)
        for (double x = -1.0; x <= 1.0; x += 2.0 / 10000.0)
            oracle = std::max(oracle, std::fabs(2 * x / (n + 1.0)) * (1.0 + n));
    CHECK(oracle == doctest::Approx(2.0).epsilon(1e-3));
    GridConfig grid;
    grid.radius = 1.0;
    grid.points = 400;
    LipschitzEstimate est = estimate_lipschitz(s, 16, grid);
    CHECK(est.c_hat == doctest::Approx(oracle).epsilon(0.02));
}
