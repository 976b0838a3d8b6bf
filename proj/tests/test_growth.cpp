#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mudicho/growth.hpp"
#include "testutil.hpp"

using namespace mudicho;

TEST_CASE("builtin rates evaluate to their defining formulas") {
    GrowthRate poly = builtin_rate("polynomial");
    CHECK(poly(0.0) == doctest::Approx(1.0)); // mu_0 = 1
    GrowthRate expr = builtin_rate("exponential");
    CHECK(expr(3.0) == doctest::Approx(std::exp(3.0)));
    GrowthRate logr = builtin_rate("logarithmic");
    CHECK(logr(0.0) == doctest::Approx(1.0)); // ln(e + 0) = 1
    CHECK_THROWS_AS(builtin_rate("quadratic"), ConfigError);
}

TEST_CASE("verify_ratio_bound: polynomial attains theta = 2 at n = 0") {
    RatioScan s = verify_ratio_bound(builtin_rate("polynomial"), 100);
    CHECK(s.theta_hat == doctest::Approx(2.0));
    CHECK(s.argmax == 0);
    CHECK(s.within_declared);
}

TEST_CASE("verify_ratio_bound: exponential has constant ratio e") {
    RatioScan s = verify_ratio_bound(builtin_rate("exponential"), 10);
    CHECK(s.theta_hat == doctest::Approx(std::exp(1.0)));
    CHECK(s.within_declared);
}

TEST_CASE("verify_ratio_bound: custom n^2+1 matches the brute-force maximum") {
    // independent oracle: enumerate all ratios over the horizon
    auto mu = [](double n) { return n * n + 1.0; };
    double best = 0.0;
    long arg = 0;
    for (long n = 0; n < 50; ++n) {
        const double r = mu(n + 1.0) / mu(static_cast<double>(n));
        if (r > best) {
            best = r;
            arg = n;
        }
    }
    CHECK(best == doctest::Approx(2.5)); // ((1+1)^2+1) / (1^2+1) at n = 1
    CHECK(arg == 1);

    GrowthRate rate = custom_rate(mu, best, RateKind::Discrete);
    RatioScan s = verify_ratio_bound(rate, 50);
    CHECK(s.theta_hat == doctest::Approx(best));
    CHECK(s.argmax == arg);
    CHECK(s.within_declared);
}

TEST_CASE("verify_ratio_bound rejects non-monotone samples") {
    GrowthRate bad = custom_rate([](double n) { return std::cos(n) + 2.0; }, 3.0,
                                 RateKind::Discrete);
    CHECK_THROWS_AS(verify_ratio_bound(bad, 16), ValidationError);
}

TEST_CASE("interpolant: polynomial branch formula gives mu~^{-1}(s) = s - 1") {
    Interpolant it = interpolate(builtin_rate("polynomial"));
    CHECK(it.inverse(std::exp(1.0)) == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-12));
    CHECK(it.inverse(1.0) == doctest::Approx(0.0));
    CHECK(it.inverse(7.25) == doctest::Approx(6.25).epsilon(1e-12));
}

TEST_CASE("interpolant: exponential inverse is exact at the knots") {
    Interpolant it = interpolate(builtin_rate("exponential"));
    for (long n = 0; n <= 20; ++n)
        CHECK(it.inverse(std::exp(static_cast<double>(n))) ==
              doctest::Approx(static_cast<double>(n)).epsilon(1e-14));
    CHECK(it.inverse(1.0) == doctest::Approx(0.0));
}

TEST_CASE("interpolant round trip and monotonicity over random samples") {
    for (const char* name : {"polynomial", "exponential", "logarithmic"}) {
        GrowthRate rate = builtin_rate(name);
        Interpolant it = interpolate(rate);
        const double hi = rate(40.0);
        auto rng = testutil::rng(7);
        std::uniform_real_distribution<double> u(1.0, hi);
        std::vector<double> samples;
        for (int i = 0; i < 1000; ++i) samples.push_back(u(rng));
        std::sort(samples.begin(), samples.end());
        double prev_inv = -1.0;
        for (double s : samples) {
            const double t = it.inverse(s);
            CHECK(std::fabs(it.forward(t) - s) <= 1e-10 * s);
            CHECK(t >= prev_inv); // strictly increasing on sorted input
            prev_inv = t;
        }
    }
}

TEST_CASE("interpolant inverse-of-forward identity on sampled t") {
    Interpolant it = interpolate(builtin_rate("logarithmic"));
    for (double t = 0.0; t <= 30.0; t += 0.37)
        CHECK(it.inverse(it.forward(t)) == doctest::Approx(t).epsilon(1e-12));
}

TEST_CASE("interpolated ratio bound mu~(t+1)/mu~(t) <= theta^2") {
    for (const char* name : {"polynomial", "exponential", "logarithmic"}) {
        GrowthRate rate = builtin_rate(name);
        Interpolant it = interpolate(rate);
        const double th2 = rate.theta * rate.theta;
        for (double t = 0.0; t <= 40.0; t += 0.13)
            CHECK(it.forward(t + 1.0) / it.forward(t) <= th2 + 1e-12);
    }
}

TEST_CASE("interpolant: argument below domain raises") {
    Interpolant it = interpolate(builtin_rate("polynomial"));
    CHECK_THROWS_AS(it.forward(-0.5), ConfigError);
    CHECK_THROWS_AS(it.inverse(0.5), ConfigError);
}
