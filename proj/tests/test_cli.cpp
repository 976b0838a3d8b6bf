#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "testutil.hpp"

namespace {

struct CliResult {
    int exit_code = -1;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(MUDICHO_CLI_PATH) + " " + args + " 2>/dev/null";
    std::array<char, 4096> buf{};
    CliResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::size_t got;
    while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), got);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("spectrum command emits intervals near {-1, 1} with provenance") {
    CliResult r = run_cli("spectrum " + testutil::data_file("example42.json") +
                          " --window 128 --parallel 2");
    REQUIRE(r.exit_code == 0);
    nlohmann::json j = nlohmann::json::parse(r.out);
    REQUIRE(j.contains("spectrum"));
    const auto iv = j["spectrum"]["intervals"];
    REQUIRE(iv.size() == 2);
    CHECK(std::fabs(0.5 * (iv[0][0].get<double>() + iv[0][1].get<double>()) + 1.0) < 0.1);
    CHECK(std::fabs(0.5 * (iv[1][0].get<double>() + iv[1][1].get<double>()) - 1.0) < 0.1);
    CHECK(j["provenance"]["spec_sha256"].get<std::string>().size() == 64);
}

TEST_CASE("identical config and seed produce byte-identical reports") {
    const std::string base = "spectrum " + testutil::data_file("example42.json") +
                             " --window 96 --parallel 2 --seed 7 --out ";
    CliResult r1 = run_cli(base + "/tmp/mudicho_det_a.json");
    CliResult r2 = run_cli(base + "/tmp/mudicho_det_b.json");
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp("/tmp/mudicho_det_a.json") == slurp("/tmp/mudicho_det_b.json"));
    std::remove("/tmp/mudicho_det_a.json");
    std::remove("/tmp/mudicho_det_b.json");
}

TEST_CASE("verify rescale-identity passes under the exponential rate") {
    CliResult r = run_cli("verify " + testutil::data_file("example42.json") +
                          " --check rescale-identity --rate exponential");
    CHECK(r.exit_code == 0);
    nlohmann::json j = nlohmann::json::parse(r.out);
    CHECK(j["pass"].get<bool>());
}

TEST_CASE("missing spec file exits 2 with a machine-readable error") {
    CliResult r = run_cli("dichotomy /nonexistent/nope.json");
    CHECK(r.exit_code == 2);
    nlohmann::json j = nlohmann::json::parse(r.out);
    CHECK(j["error"]["type"] == "config");
}

TEST_CASE("validation failure exits 2 naming the violated invariant") {
    const std::string path = "/tmp/mudicho_badspec.json";
    {
        std::ofstream out(path);
        out << R"json({"kind":"discrete","dim":1,
                 "growth_rate":{"builtin":"exponential"},
                 "linear":[["0.5"]],"nonlinear":["x1+1"]})json";
    }
    CliResult r = run_cli("dichotomy " + path);
    CHECK(r.exit_code == 2);
    nlohmann::json j = nlohmann::json::parse(r.out);
    CHECK(j["error"]["type"] == "validation");
    CHECK(j["error"]["message"].get<std::string>().find("g(0)=0") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("numerical failure (singular step inside the window) exits 3") {
    const std::string path = "/tmp/mudicho_singular.json";
    {
        std::ofstream out(path);
        out << R"json({"kind":"discrete","dim":1,"index_start":0,
                 "growth_rate":{"builtin":"exponential"},
                 "linear":[["n-100"]]})json";
    }
    CliResult r = run_cli("dichotomy " + path + " --window 256");
    CHECK(r.exit_code == 3);
    nlohmann::json j = nlohmann::json::parse(r.out);
    CHECK(j["error"]["type"] == "numerical");
    std::remove(path.c_str());
}

TEST_CASE("spectrum csv output has the documented columns") {
    CliResult r = run_cli("spectrum " + testutil::data_file("example42.json") +
                          " --window 96 --parallel 2 --output csv");
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.rfind("tau,verdict,lambda_fit,a_fit", 0) == 0);
}

TEST_CASE("linearize keeps the conjugacy residual within tolerance") {
    CliResult r = run_cli("linearize " + testutil::data_file("example42.json") +
                          " --window 32 --c 0.01 --grid-points 40");
    REQUIRE(r.exit_code == 0);
    nlohmann::json j = nlohmann::json::parse(r.out);
    CHECK(j["residual_max"].get<double>() <= 1e-6);
}

TEST_CASE("flow command discretizes a continuous spec") {
    CliResult r = run_cli("flow " + testutil::data_file("example55.json") + " --window 8");
    REQUIRE(r.exit_code == 0);
    nlohmann::json j = nlohmann::json::parse(r.out);
    const auto& steps = j["discretized_steps"];
    REQUIRE(steps.size() >= 4);
    // A_1 = diag(1/2, 2)
    CHECK(std::fabs(steps[0]["a"][0].get<double>() - 0.5) < 1e-6);
    CHECK(std::fabs(steps[0]["a"][3].get<double>() - 2.0) < 1e-6);
}

TEST_CASE("MUDICHO_CACHE_DIR caches discretized transfer matrices") {
    const std::string cache_dir = "/tmp/mudicho_cache_test";
    REQUIRE(std::system(("rm -rf " + cache_dir + " && mkdir -p " + cache_dir).c_str()) == 0);
    const std::string cmd = std::string(MUDICHO_CLI_PATH) + " flow " +
                            testutil::data_file("example55.json") + " --window 6";
    const std::string env = "env MUDICHO_CACHE_DIR=" + cache_dir + " ";
    REQUIRE(std::system((env + cmd + " > /tmp/mudicho_cache_out1.json 2>/dev/null").c_str()) == 0);
    CHECK(std::system(("ls " + cache_dir + " | grep -q json").c_str()) == 0);
    // second run loads the cache and produces the same report
    REQUIRE(std::system((env + cmd + " > /tmp/mudicho_cache_out2.json 2>/dev/null").c_str()) == 0);
    CHECK(slurp("/tmp/mudicho_cache_out1.json") == slurp("/tmp/mudicho_cache_out2.json"));
    CHECK(std::system(("rm -rf " + cache_dir).c_str()) == 0);
    std::remove("/tmp/mudicho_cache_out1.json");
    std::remove("/tmp/mudicho_cache_out2.json");
}
