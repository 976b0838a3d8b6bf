#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mudicho/dichotomy.hpp"
#include "mudicho/evolution.hpp"
#include "testutil.hpp"

using namespace mudicho;

namespace {

std::shared_ptr<LinearCocycle> example42_cocycle() {
    static SystemSpec spec = testutil::load_example42();
    return std::make_shared<LinearCocycle>(make_discrete_system(spec));
}

} // namespace

TEST_CASE("estimate_projections recovers diag(1,0) for example42") {
    auto co = example42_cocycle();
    ProjectionFamily p = estimate_projections(*co, co->rate(), 0.0, 256);
    Mat expect = Mat::from_rows({{1, 0}, {0, 0}});
    for (long n : {1L, 2L, 17L, 100L, 256L}) {
        CHECK(max_abs(p(n) - expect) < 1e-10);
    }
    CHECK(p.stable_rank == 1);
}

TEST_CASE("estimate_projections: fully contracting scalar system has P = 1") {
    DiscreteSystem sys;
    sys.dim = 1;
    sys.start = 0;
    sys.rate = builtin_rate("exponential");
    sys.linear = [](long) { return Mat::from_rows({{0.5}}); };
    auto co = std::make_shared<LinearCocycle>(sys);
    ProjectionFamily p = estimate_projections(*co, sys.rate, 0.0, 64);
    CHECK(p.stable_rank == 1);
    CHECK(p(10)(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("estimate_projections: mixed 3x3 diagonal splits into rank-2 stable space") {
    // growth classification oracle: axes with rates e^{-1}, e^{-0.1} are
    // stable under mu = e^n, the axis with rate e^{+1} is not
    auto sys = testutil::diag_system({-1.0, -0.1, 1.0});
    auto co = std::make_shared<LinearCocycle>(sys);
    ProjectionFamily p = estimate_projections(*co, sys.rate, 0.0, 128);
    CHECK(p.stable_rank == 2);
    Mat expect = Mat::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 0}});
    CHECK(max_abs(p(40) - expect) < 1e-9);
}

TEST_CASE("estimate_projections: rotating-frame system recovers the rotated splitting") {
    // A_n = R(.3(n+1)) diag(e^{-1}, e) R(.3n)^T, so A(m,n) = R(.3m) D^{m-n} R(.3n)^T
    // and the true stable space at n is R(.3n) e1
    auto rot = [](double th) {
        return Mat::from_rows({{std::cos(th), -std::sin(th)}, {std::sin(th), std::cos(th)}});
    };
    DiscreteSystem sys;
    sys.dim = 2;
    sys.start = 0;
    sys.rate = builtin_rate("exponential");
    sys.name = "rotating";
    sys.linear = [rot](long n) {
        Mat d = Mat::diag({std::exp(-1.0), std::exp(1.0)});
        return rot(0.3 * (n + 1)) * d * transpose(rot(0.3 * n));
    };
    auto co = std::make_shared<LinearCocycle>(sys);
    ProjectionFamily p = estimate_projections(*co, sys.rate, 0.0, 128);
    CHECK(p.stable_rank == 1);
    for (long n : {5L, 31L, 64L, 100L}) {
        Mat expect = rot(0.3 * n) * Mat::from_rows({{1, 0}, {0, 0}}) * transpose(rot(0.3 * n));
        CHECK(max_abs(p(n) - expect) < 1e-9);
    }
    DichotomyCertificate cert = fit_certificate(*co, sys.rate, p, 128);
    CHECK(cert.verdict == Verdict::StrongDichotomy);
    CHECK(cert.lambda == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(cert.a == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("fit_certificate on example42 with analytic projections: K=a=lambda=1") {
    auto co = example42_cocycle();
    ProjectionFamily p = constant_projection(Mat::from_rows({{1, 0}, {0, 0}}), 1);
    DichotomyCertificate cert = fit_certificate(*co, co->rate(), p, 512);
    CHECK(cert.verdict == Verdict::StrongDichotomy);
    CHECK(std::fabs(cert.lambda - 1.0) <= 0.05);
    CHECK(std::fabs(cert.a - 1.0) <= 0.05);
    CHECK(cert.K <= 1.2);
    CHECK(cert.residual_commute < 1e-10);
}

TEST_CASE("fit_certificate: exact geometric decay gives lambda = ln 2 to 1e-6") {
    DiscreteSystem sys;
    sys.dim = 1;
    sys.start = 0;
    sys.rate = builtin_rate("exponential");
    sys.linear = [](long) { return Mat::from_rows({{0.5}}); };
    auto co = std::make_shared<LinearCocycle>(sys);
    ProjectionFamily p = constant_projection(Mat::from_rows({{1.0}}), 1);
    DichotomyCertificate cert = fit_certificate(*co, sys.rate, p, 256);
    CHECK(cert.verdict == Verdict::StrongDichotomy);
    CHECK(cert.lambda == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("example42 against the exponential rate: verdict none at every shift") {
    auto co = example42_cocycle();
    GrowthRate exp_rate = builtin_rate("exponential");
    ProjectionFamily p = constant_projection(Mat::from_rows({{1, 0}, {0, 0}}), 1);
    for (double tau = -0.5; tau <= 0.5 + 1e-9; tau += 0.1) {
        DichotomyCertificate cert = fit_certificate(*co, exp_rate, p, 512, tau);
        CAPTURE(tau);
        CHECK(cert.verdict == Verdict::None);
    }
}

TEST_CASE("pair density doubling moves fitted constants by < 2% on example42") {
    auto co = example42_cocycle();
    ProjectionFamily p = constant_projection(Mat::from_rows({{1, 0}, {0, 0}}), 1);
    FitOptions coarse;
    FitOptions dense;
    dense.pairs_per_level = 2 * coarse.pairs_per_level;
    DichotomyCertificate c1 = fit_certificate(*co, co->rate(), p, 512, 0.0, coarse);
    DichotomyCertificate c2 = fit_certificate(*co, co->rate(), p, 512, 0.0, dense);
    CHECK(std::fabs(c1.lambda - c2.lambda) / c1.lambda < 0.02);
    CHECK(std::fabs(c1.a - c2.a) / c1.a < 0.02);
}

TEST_CASE("certify_continuous on example55: strong dichotomy with lambda ~ a ~ 1") {
    SystemSpec spec = testutil::load_example55();
    Flow flow(spec, 1e-3);
    ContinuousCertificate cc = certify_continuous(flow, spec.rate, 64);
    CHECK(cc.discrete.verdict == Verdict::StrongDichotomy);
    CHECK(std::fabs(cc.discrete.lambda - 1.0) <= 0.1);
    CHECK(std::fabs(cc.discrete.a - 1.0) <= 0.1);
    CHECK(cc.continuous_ok);
    CHECK(cc.continuous_checks > 50);
}

TEST_CASE("certify_continuous: scalar x' = -x/t with mu = 1+t has lambda ~ 1") {
    // closed form T(t,s) = s/t
    SystemSpec spec;
    spec.kind = SystemKind::Continuous;
    spec.dim = 1;
    spec.index_start = 1.0;
    spec.rate = builtin_rate("polynomial", RateKind::Differentiable);
    spec.linear.push_back(Expr::parse("-1/t", spec.variable_names()));
    Flow flow(spec, 1e-3);
    ContinuousCertificate cc = certify_continuous(flow, spec.rate, 64);
    CHECK(cc.discrete.verdict == Verdict::StrongDichotomy);
    CHECK(std::fabs(cc.discrete.lambda - 1.0) <= 0.1);
}

TEST_CASE("continuous and discretized certification agree on the bundled flows") {
    // equivalence at fit level: the continuous verdict must match certifying
    // the discretized sequence directly, and the continuous-time inequality
    // spot-checks must hold with the fitted constants
    SystemSpec spec = testutil::load_example55();
    Flow flow(spec, 1e-3);
    GrowthRate rate = spec.rate;
    rate.kind = RateKind::Discrete;
    rate.domain_start = 0.0;
    ContinuousCertificate cc = certify_continuous(flow, rate, 64);
    auto disc = std::make_shared<LinearCocycle>(flow.discretize());
    DichotomyCertificate dc = certify(disc, rate, 64);
    CHECK(cc.discrete.verdict == dc.verdict);
    CHECK(cc.discrete.lambda == doctest::Approx(dc.lambda).epsilon(1e-9));
    CHECK(cc.continuous_ok);
}

TEST_CASE("certify_continuous: A(t) = 0 yields verdict none") {
    SystemSpec spec;
    spec.kind = SystemKind::Continuous;
    spec.dim = 1;
    spec.index_start = 1.0;
    spec.rate = builtin_rate("exponential", RateKind::Differentiable);
    spec.linear.push_back(Expr::parse("0", spec.variable_names()));
    Flow flow(spec, 1e-3);
    ContinuousCertificate cc = certify_continuous(flow, spec.rate, 64);
    CHECK(cc.discrete.verdict == Verdict::None);
}

TEST_CASE("estimate_projections: unresolved singular value gap raises a window hint") {
    // both directions hug the cut: the straddling gap stays below the factor
    auto sys = testutil::diag_system({-0.01, 0.01});
    auto co = std::make_shared<LinearCocycle>(sys);
    try {
        estimate_projections(*co, sys.rate, 0.0, 64);
        CHECK(false);
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("window") != std::string::npos);
    }
}

TEST_CASE("estimate_projections requires window >= 32") {
    auto sys = testutil::diag_system({-1.0, 1.0});
    auto co = std::make_shared<LinearCocycle>(sys);
    CHECK_THROWS_AS(estimate_projections(*co, sys.rate, 0.0, 16), ConfigError);
}

TEST_CASE("projection invariants: idempotency and commutation residuals stay tiny") {
    auto co = example42_cocycle();
    ProjectionFamily p = estimate_projections(*co, co->rate(), 0.0, 128);
    PairTable t = build_pair_table(*co, co->rate(), p, co->start(), co->start() + 128);
    CHECK(t.idempotency_residual < 1e-8);
    CHECK(t.commute_residual < 1e-8);
}
