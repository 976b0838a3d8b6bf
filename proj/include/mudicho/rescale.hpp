#pragma once

// Time rescaling: from a mu-indexed system (A_n, g_n) build the companion
// system (B_n, f_n) on exponential time,
//   k(n) = floor(mu~^{-1}(e^{n-1})) + 1,
//   B_n  = A(k(n+1), k(n)),
//   f_n  = G(k(n+1), k(n)) - B_n   (pointwise),
// so that a strong mu-dichotomy of A corresponds to a strong exponential
// dichotomy of B. f_n is evaluated by the difference formula; the orbitwise
// series expansion is kept as a test oracle (fn_series_crosscheck).

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dichotomy.hpp"
#include "errors.hpp"
#include "evolution.hpp"
#include "growth.hpp"
#include "linalg.hpp"

namespace mudicho {

struct RescaledSystem {
    std::vector<long> anchors; // anchors[i] = k(i+1), i = 0..horizon; k(n) for n = 1..horizon+1
    long horizon = 0;          // B_n available for n = 1..horizon
    std::shared_ptr<LinearCocycle> source_linear;
    std::shared_ptr<NonlinearCocycle> source_nonlinear; // may be null
    GrowthRate source_rate;
    std::shared_ptr<LinearCocycle> b_cocycle;           // exponential-rate system
    std::shared_ptr<NonlinearCocycle> b_nonlinear;      // null when source has no g
    long required_source_window = 0;                    // source index consumed: k(horizon+1)

    long anchor(long n) const { // k(n), n = 1..horizon+1
        if (n < 1 || n > static_cast<long>(anchors.size()))
            throw ConfigError("rescale: anchor index " + std::to_string(n) + " out of range");
        return anchors[static_cast<std::size_t>(n - 1)];
    }

    Mat B(long n) const { return b_cocycle->step(n); }

    Vec f(long n, const Vec& x) const {
        if (!source_nonlinear) return Vec(x.size(), 0.0);
        return b_nonlinear->system().g(n, x);
    }

    // B-time m corresponds to source time k(m)
    Vec state_to_source(long, const Vec& x) const { return x; }
};

inline long rescale_required_window(const GrowthRate& rate, long horizon) {
    Interpolant interp(rate);
    const double v = interp.inverse(std::exp(static_cast<double>(horizon)));
    return static_cast<long>(std::floor(v)) + 1;
}

inline RescaledSystem rescale(std::shared_ptr<LinearCocycle> source,
                              std::shared_ptr<NonlinearCocycle> source_nl,
                              const GrowthRate& rate, long horizon,
                              long source_window_limit = 0) {
    if (rate.kind != RateKind::Discrete)
        throw ConfigError("rescale: discrete growth rates only (discretize flows first)");
    if (horizon < 1) throw ConfigError("rescale: horizon must be >= 1");
    RatioScan scan = verify_ratio_bound(rate, 64);
    if (!scan.within_declared)
        throw ValidationError("rescale: growth rate violates its declared theta bound");

    RescaledSystem rs;
    rs.source_linear = std::move(source);
    rs.source_nonlinear = std::move(source_nl);
    rs.source_rate = rate;
    rs.horizon = horizon;

    Interpolant interp(rate);
    const double theta = rate.theta;
    const double ethetasq = std::exp(1.0) * theta * theta;
    for (long n = 1; n <= horizon + 1; ++n) {
        const double inv = interp.inverse(std::exp(static_cast<double>(n - 1)));
        const long k = static_cast<long>(std::floor(inv)) + 1;
        if (!rs.anchors.empty() && k < rs.anchors.back())
            throw NumericalError("rescale: anchor sequence not monotone at n=" +
                                 std::to_string(n));
        rs.anchors.push_back(k);
    }
    // anchor-ratio bound mu_{k(n+1)} / mu_{k(n)} <= e theta^2
    for (std::size_t i = 0; i + 1 < rs.anchors.size(); ++i) {
        const double ratio = rate(static_cast<double>(rs.anchors[i + 1])) /
                             rate(static_cast<double>(rs.anchors[i]));
        if (ratio > ethetasq * (1.0 + 1e-9))
            throw NumericalError("rescale: anchor ratio bound e*theta^2 violated at n=" +
                                 std::to_string(i + 1));
    }
    rs.required_source_window = rs.anchors.back();
    if (source_window_limit > 0 && rs.required_source_window > source_window_limit)
        throw ConfigError("rescale: horizon " + std::to_string(horizon) +
                          " needs source window " + std::to_string(rs.required_source_window) +
                          " > available " + std::to_string(source_window_limit));
    const long src_start = rs.source_linear->start();
    if (rs.anchors.front() < src_start)
        throw ConfigError("rescale: first anchor " + std::to_string(rs.anchors.front()) +
                          " below source start " + std::to_string(src_start));

    DiscreteSystem bsys;
    bsys.dim = rs.source_linear->dim();
    bsys.start = 1;
    bsys.rate = builtin_rate("exponential");
    bsys.name = rs.source_linear->system().name + ":rescaled";
    bsys.constants = rs.source_linear->system().constants;
    auto lin = rs.source_linear;
    auto anchors = rs.anchors;
    const long hor = horizon;
    auto kof = [anchors, hor](long n) {
        if (n < 1 || n > hor + 1)
            throw ConfigError("rescaled system: index " + std::to_string(n) +
                              " beyond horizon " + std::to_string(hor) +
                              "; regenerate with a larger source window");
        return anchors[static_cast<std::size_t>(n - 1)];
    };
    bsys.linear = [lin, kof](long n) { return lin->transfer(kof(n + 1), kof(n)); };
    if (rs.source_nonlinear) {
        auto nl = rs.source_nonlinear;
        bsys.nonlinear = [lin, nl, kof](long n, const Vec& x) {
            const Vec gv = nl->forward(kof(n + 1), kof(n), x);
            return gv - lin->transfer(kof(n + 1), kof(n)) * x;
        };
    }
    rs.b_cocycle = std::make_shared<LinearCocycle>(bsys);
    if (bsys.nonlinear) rs.b_nonlinear = std::make_shared<NonlinearCocycle>(rs.b_cocycle);
    return rs;
}

// Evaluates f_n by the orbitwise series and returns the distance to the
// difference formula; the two are equal by algebra, so this is a self-check.
inline double fn_series_crosscheck(const RescaledSystem& rs, long n, const Vec& x) {
    if (n < 1 || n > rs.horizon) throw ConfigError("fn_series_crosscheck: n out of horizon");
    const Vec direct = rs.f(n, x);
    if (!rs.source_nonlinear) return norm2(direct);
    const long kn = rs.anchor(n), kn1 = rs.anchor(n + 1);
    Vec series(x.size(), 0.0);
    for (long j = kn; j <= kn1 - 1; ++j) {
        const Vec orbit = rs.source_nonlinear->forward(j, kn, x);
        const Vec gj = rs.source_nonlinear->system().g(j, orbit);
        series = series + rs.source_linear->transfer(kn1, j + 1) * gj;
    }
    return norm2(series - direct);
}

struct EquivalenceReport {
    Verdict source_verdict = Verdict::None;
    Verdict rescaled_verdict = Verdict::None;
    double source_lambda = 0.0, source_a = 0.0;
    double rescaled_lambda = 0.0, rescaled_a = 0.0;
    double k_prime = 0.0; // growth-bound transfer constant for B at exponent a
    bool verdicts_agree = false;
};

// Certifies the source under mu and the rescaled system under e^n, and fits
// the transferred growth constant K' with ||B(m,n)|| <= K' e^{a(m-n)}.
inline EquivalenceReport verify_equivalence(const RescaledSystem& rs, const FitOptions& opts = {}) {
    EquivalenceReport rep;
    const long src_window = rs.required_source_window - rs.source_linear->start();
    DichotomyCertificate src =
        certify(rs.source_linear, rs.source_rate, std::max<long>(32, src_window), opts);
    rep.source_verdict = src.verdict;
    rep.source_lambda = src.lambda;
    rep.source_a = src.a;

    FitOptions bopts = opts;
    GrowthRate exp_rate = builtin_rate("exponential");
    DichotomyCertificate bc;
    {
        DichotomyAnalyzer an(rs.b_cocycle, exp_rate, rs.horizon, bopts);
        bc = an.verdict_at(0.0).cert;
    }
    rep.rescaled_verdict = bc.verdict;
    rep.rescaled_lambda = bc.lambda;
    rep.rescaled_a = bc.a;
    rep.verdicts_agree = (rep.source_verdict == rep.rescaled_verdict);

    double lnk = 0.0;
    for (long n = 1; n <= rs.horizon; ++n)
        for (long m = n + 1; m <= rs.horizon + 1; ++m) {
            const double f = rs.b_cocycle->transfer_scaled(m, n).log_spectral_norm();
            const double b = rs.b_cocycle->transfer_scaled(n, m).log_spectral_norm();
            lnk = std::max(lnk, std::max(f, b) - src.a * static_cast<double>(m - n));
        }
    rep.k_prime = std::exp(lnk);
    return rep;
}

} // namespace mudicho
