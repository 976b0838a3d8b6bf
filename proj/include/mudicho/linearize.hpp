#pragma once

// Linearizing conjugacies.
//
// Substituting h = id + v into h_{n+1} o (B_n + f_n) = B_n o h_n forces the
// orbitwise recursion v_{j+1}(F_j x) = B_j v_j(x) - f_j(x). Splitting by the
// dichotomy projections of B and summing the bounded solution gives
//
//   v_n(x) = - sum_{j=1}^{n-1} Bc(n, j+1) P_{j+1} f_j(x_j)
//            + sum_{j=n}^{J}   Bc(n, j+1) Q_{j+1} f_j(x_j),
//
// with x_j the orbit of x through the nonlinear rescaled system, Bc the
// linear cocycle of B, and f_j = 0 for j < 1 (zero extension below the
// half-line). The stable part is a finite sum; the unstable tail decays like
// the backward dichotomy rate and is truncated at tail_eps / the horizon,
// which selects the bounded solution of the windowed system. The residual of
// the conjugacy equation is the correctness check: any sign or split error
// breaks it immediately.
//
// psi_k then assembles the conjugacy on source time via
//   psi_k = A(k, k(n+1)) o h_{n+1} o G(k(n+1), k),  k(n+1) <= k < k(n+2).

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dichotomy.hpp"
#include "errors.hpp"
#include "evolution.hpp"
#include "linalg.hpp"
#include "rescale.hpp"

namespace mudicho {

struct ConjugacyOptions {
    double tail_eps = 1e-12;
    long k_max = 0; // max unstable series terms; 0 means 10x horizon
    double inverse_tol = 1e-10;
    int inverse_max_iters = 500;
};

class ConjugacyField {
public:
    ConjugacyField(RescaledSystem rs, ConjugacyOptions opts = {})
        : rs_(std::move(rs)), opts_(opts) {
        const long H = rs_.horizon;
        if (opts_.k_max <= 0) opts_.k_max = 10 * H;
        sweep_ = std::make_shared<FrameSweep>(*rs_.b_cocycle, 1, H + 1,
                                              std::max<long>(1, (H + 1) / 4));
        srank_ = sweep_->stable_count(0.0);
        // psi blocks: k in [k(a), k(a+1)) use h_a, a <= horizon+1, so the
        // last usable source index is k(horizon+2) - 1
        k_limit_ = rescale_required_window(rs_.source_rate, H + 1) - 1;
        collect_warnings();
    }

    const RescaledSystem& rescaled() const { return rs_; }
    const FrameSweep& sweep() const { return *sweep_; }
    int stable_rank() const { return srank_; }
    long k_min() const { return rs_.anchor(1); }
    long k_limit() const { return k_limit_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    const ConjugacyOptions& options() const { return opts_; }

    // h_n on the rescaled system, n in [1, horizon+1]
    Vec base_h(long n, const Vec& x) const {
        if (n < 1 || n > rs_.horizon + 1)
            throw ConfigError("base_h: index " + std::to_string(n) + " outside [1, horizon+1]");
        return x + bounded_correction(n, x);
    }

    Vec base_h_inverse(long n, const Vec& y) const {
        return fixed_point_inverse([this, n](const Vec& x) { return base_h(n, x); }, y);
    }

    // conjugacy on source time
    Vec psi(long k, const Vec& x) const {
        const long a = block_of(k);
        const long ka = rs_.anchor(a);
        Vec y = (k == ka) ? x : source_nl_backward(ka, k, x);
        Vec z = base_h(a, y);
        if (k == ka) return z;
        return rs_.source_linear->transfer(k, ka) * z;
    }

    Vec psi_inverse(long k, const Vec& y) const {
        return fixed_point_inverse([this, k](const Vec& x) { return psi(k, x); }, y);
    }

    // residual of psi_{k+1}(A_k x + g_k(x)) - A_k psi_k(x); the central
    // correctness property
    double conjugacy_residual(long k, const Vec& x) const {
        Vec fx = rs_.source_linear->step(k) * x;
        if (rs_.source_nonlinear) fx = fx + rs_.source_nonlinear->system().g(k, x);
        const Vec lhs = psi(k + 1, fx);
        const Vec rhs = rs_.source_linear->step(k) * psi(k, x);
        return norm2(lhs - rhs);
    }

    // residual of h_{n+1}(B_n x + f_n(x)) - B_n h_n(x) on the rescaled level
    double base_residual(long n, const Vec& x) const {
        const Vec fx = rs_.B(n) * x + rs_.f(n, x);
        return norm2(base_h(n + 1, fx) - rs_.B(n) * base_h(n, x));
    }

    // K c_eff sum (mu-ratio)^{-lambda} over the truncated tail, from a fitted
    // certificate of B; NaN when the horizon is too short to fit one
    double tail_bound_estimate() const {
        try {
            GrowthRate exp_rate = builtin_rate("exponential");
            DichotomyAnalyzer an(rs_.b_cocycle, exp_rate, rs_.horizon, FitOptions{});
            const DichotomyCertificate cert = an.verdict_at(0.0).cert;
            if (cert.lambda <= 0.0) return std::numeric_limits<double>::quiet_NaN();
            double c_eff = 0.0;
            const int d = rs_.b_cocycle->dim();
            const double h = 1e-5;
            for (long j = 1; j <= rs_.horizon; ++j) {
                for (int col = 0; col < d; ++col) {
                    Vec xp(d, 0.0), xm(d, 0.0);
                    xp[col] = h;
                    xm[col] = -h;
                    c_eff = std::max(c_eff, norm2(rs_.f(j, xp) - rs_.f(j, xm)) / (2 * h));
                }
            }
            const double q = std::exp(-cert.lambda);
            return cert.K * c_eff * q / (1.0 - q);
        } catch (const std::exception&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    }

private:
    long block_of(long k) const {
        if (k < rs_.anchor(1))
            throw ConfigError("psi: index " + std::to_string(k) + " below first anchor");
        if (k > k_limit_)
            throw ConfigError("psi: index " + std::to_string(k) + " beyond horizon block (max " +
                              std::to_string(k_limit_) + "); increase the window");
        long a = 1;
        while (a + 1 <= rs_.horizon + 1 && rs_.anchor(a + 1) <= k) ++a;
        return a;
    }

    Vec source_nl_backward(long to, long from, const Vec& x) const {
        if (rs_.source_nonlinear) return rs_.source_nonlinear->backward(to, from, x);
        return rs_.source_linear->transfer(to, from) * x;
    }
    Vec source_nl_forward(long to, long from, const Vec& x) const {
        if (rs_.source_nonlinear) return rs_.source_nonlinear->forward(to, from, x);
        return rs_.source_linear->transfer(to, from) * x;
    }

    Vec bounded_correction(long n, const Vec& x) const {
        const int d = rs_.b_cocycle->dim();
        Vec v(d, 0.0);
        if (!rs_.source_nonlinear) return v;
        const long H = rs_.horizon;
        const Mat id = Mat::identity(d);

        // Terms are re-projected after every propagation step: the summand is
        // invariant under P (resp. Q) by construction, and re-projection stops
        // rounding residues in the complementary direction from being
        // amplified along the chain.

        // stable part: j = n-1 down to 1, orbit extended backward
        Vec xb = x;
        for (long j = n - 1; j >= 1; --j) {
            xb = source_nl_backward(rs_.anchor(j), rs_.anchor(j + 1), xb);
            Vec w = sweep_->projection(j + 1, srank_) * rs_.f(j, xb);
            for (long i = j + 1; i <= n - 1; ++i)
                w = sweep_->projection(i + 1, srank_) * (rs_.B(i) * w);
            v = v - w;
        }

        // unstable part: j = n upward, truncated at tail_eps / horizon / k_max
        Vec xf = x;
        const long jmax = std::min(H, n + opts_.k_max);
        const double blowup = 1e4 * std::max(1.0, norm2(x));
        for (long j = n; j <= jmax; ++j) {
            Vec w = (id - sweep_->projection(j + 1, srank_)) * rs_.f(j, xf);
            for (long i = j; i >= n; --i)
                w = (id - sweep_->projection(i, srank_)) *
                    (rs_.b_cocycle->step_inverse(i) * w);
            if (norm2(w) > blowup || !std::isfinite(norm2(w)))
                throw NumericalError("conjugacy series term grows at level " +
                                     std::to_string(j) +
                                     ": dichotomy too weak for the series to sum");
            v = v + w;
            if (j > n && norm2(w) < opts_.tail_eps) break;
            if (j < jmax) xf = rs_.B(j) * xf + rs_.f(j, xf);
        }
        return v;
    }

    template <typename Map>
    Vec fixed_point_inverse(Map&& forward, const Vec& y) const {
        Vec x = y;
        double resid = 0.0;
        for (int it = 0; it < opts_.inverse_max_iters; ++it) {
            const Vec fx = forward(x);
            const Vec delta = fx - y;
            resid = norm2(delta);
            if (resid <= opts_.inverse_tol) return x;
            x = x - delta;
        }
        throw NumericalError("conjugacy inverse did not converge (residual " +
                             std::to_string(resid) + ")");
    }

    void collect_warnings() {
        const auto& c = rs_.source_linear->system().constants;
        const auto itc = c.find("c"), itK = c.find("K"), ita = c.find("a");
        const double theta = rs_.source_rate.theta;
        if (itc != c.end() && itK != c.end() && ita != c.end()) {
            const double val =
                itc->second * itK->second * std::pow(theta, ita->second + 1.0);
            if (val >= 1.0)
                warnings_.push_back("smallness condition cK theta^{a+1} = " +
                                    std::to_string(val) + " >= 1");
            const auto itl = c.find("lambda");
            if (itl != c.end() && itc->second > 0.1 * itl->second / itK->second)
                warnings_.push_back("c exceeds heuristic threshold 0.1 lambda / K");
        }
    }

    RescaledSystem rs_;
    ConjugacyOptions opts_;
    std::shared_ptr<FrameSweep> sweep_;
    int srank_ = 0;
    long k_limit_ = 0;
    std::vector<std::string> warnings_;
};

// Builds the discrete conjugacy pipeline for a system on source window
// [start, start+window]: rescale to the largest horizon the window supports,
// then assemble the field.
inline ConjugacyField build_conjugacy(std::shared_ptr<LinearCocycle> lin,
                                      std::shared_ptr<NonlinearCocycle> nl,
                                      const GrowthRate& rate, long window,
                                      ConjugacyOptions opts = {}) {
    long horizon = 1;
    while (horizon < 64 && rescale_required_window(rate, horizon + 1) <= lin->start() + window)
        ++horizon;
    RescaledSystem rs = rescale(std::move(lin), std::move(nl), rate, horizon);
    return ConjugacyField(std::move(rs), opts);
}

// Continuous-time conjugacies H and G through the discretized system:
//   H(t,x) = T(t,n) psi_n(phi(n,t;x)),  G(t,x) = phi(t,n; psi_n^{-1}(T(n,t)x))
// for t in [n, n+1).
class ContinuousConjugacy {
public:
    ContinuousConjugacy(Flow flow, long window, ConjugacyOptions opts = {},
                        InversionOptions inv = {})
        : flow_(std::move(flow)),
          field_(make_field(flow_, window, opts, inv)) {}

    const ConjugacyField& field() const { return field_; }
    const Flow& flow() const { return flow_; }

    Vec H(double t, const Vec& x) const {
        const long n = block_index(t);
        const Vec z = flow_.nonlinear_flow(static_cast<double>(n), t, x);
        const Vec p = field_.psi(n, z);
        return mat_apply(flow_.transfer(t, static_cast<double>(n)), p);
    }

    Vec G(double t, const Vec& x) const {
        const long n = block_index(t);
        const Vec z = mat_apply(flow_.transfer(static_cast<double>(n), t), x);
        const Vec p = field_.psi_inverse(n, z);
        return flow_.nonlinear_flow(t, static_cast<double>(n), p);
    }

private:
    static ConjugacyField make_field(const Flow& flow, long window, ConjugacyOptions opts,
                                     InversionOptions inv) {
        DiscreteSystem sys = flow.discretize();
        auto lin = std::make_shared<LinearCocycle>(sys);
        std::shared_ptr<NonlinearCocycle> nl;
        if (sys.nonlinear) nl = std::make_shared<NonlinearCocycle>(lin, inv);
        return build_conjugacy(lin, nl, sys.rate, window, opts);
    }

    long block_index(double t) const {
        if (t < flow_.domain_start() - 1e-12)
            throw ConfigError("H/G: t below the flow domain start");
        return static_cast<long>(std::floor(t + 1e-12));
    }

    static Vec mat_apply(const Mat& m, const Vec& v) { return m * v; }

    Flow flow_;
    ConjugacyField field_;
};

struct RegularityGrid {
    long k_lo = 1;
    long k_hi = 32;
    double radius = 0.1;
    int points = 40;
    double fd_step = 1e-5;
    std::uint64_t seed = 0x51CAFE5ULL;
};

struct Witness {
    long k = 0;
    Vec x;
    double value = 0.0;
};

struct RegularityReport {
    Witness deriv_bound;               // max ||D psi_k|| over the grid
    Witness inv_deriv_bound;           // max ||D psi_k^{-1}||
    double holder_exponent = 0.0;      // slope of log||psi(x)-psi(y)|| vs log||x-y||
    std::vector<std::pair<double, double>> diff_at_zero; // (r, max ||psi(x)-x||/||x||)
    double rho_hat = 0.0;              // fitted rho from psi(x)-x ~ |x|^{1+rho}
    Witness diff_witness;
    double rho_validity = 0.0; // largest probed radius with a stable derivative bound
    double rho_formula = 0.0;  // rho / (K (e theta^2)^{a~}) when constants are declared
};

inline RegularityReport regularity_report(const ConjugacyField& field,
                                          const RegularityGrid& grid = {}) {
    RegularityReport rep;
    std::mt19937_64 rng(grid.seed);
    const int d = field.rescaled().b_cocycle->dim();
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const long k_lo = std::max(grid.k_lo, field.k_min());
    const long k_hi = std::min(grid.k_hi, field.k_limit() - 1);

    auto random_point = [&](double radius) {
        Vec x(d);
        double n2 = 0.0;
        for (auto& v : x) { v = u(rng); n2 += v * v; }
        const double nrm = std::sqrt(n2);
        for (auto& v : x) v *= radius / std::max(nrm, 1e-12);
        return x;
    };
    auto sample_k = [&](int i) {
        return k_lo + (k_hi > k_lo ? static_cast<long>(i) % (k_hi - k_lo + 1) : 0);
    };

    // finite-difference derivative bounds
    for (int i = 0; i < grid.points; ++i) {
        const long k = sample_k(i);
        const Vec x = random_point(grid.radius * std::sqrt(std::fabs(u(rng))));
        Mat jac(d, d), jinv(d, d);
        const Vec y = field.psi(k, x);
        for (int c = 0; c < d; ++c) {
            Vec xp = x, xm = x;
            xp[c] += grid.fd_step;
            xm[c] -= grid.fd_step;
            const Vec fp = field.psi(k, xp);
            const Vec fm = field.psi(k, xm);
            Vec yp = y, ym = y;
            yp[c] += grid.fd_step;
            ym[c] -= grid.fd_step;
            const Vec gp = field.psi_inverse(k, yp);
            const Vec gm = field.psi_inverse(k, ym);
            for (int r = 0; r < d; ++r) {
                jac(r, c) = (fp[r] - fm[r]) / (2.0 * grid.fd_step);
                jinv(r, c) = (gp[r] - gm[r]) / (2.0 * grid.fd_step);
            }
        }
        const double nj = spectral_norm(jac);
        if (nj > rep.deriv_bound.value) rep.deriv_bound = {k, x, nj};
        const double ni = spectral_norm(jinv);
        if (ni > rep.inv_deriv_bound.value) rep.inv_deriv_bound = {k, y, ni};
    }

    // Hoelder exponent: log-log regression across scales 1e-1 .. 1e-4,
    // pairs closer than 1e-6 excluded (finite-precision floor)
    std::vector<double> lx, ly;
    for (double scale : {1e-1, 1e-2, 1e-3, 1e-4}) {
        for (int i = 0; i < std::max(4, grid.points / 4); ++i) {
            const long k = sample_k(i);
            const Vec x = random_point(grid.radius * 0.5);
            Vec dir = random_point(scale);
            const Vec y = x + dir;
            const double dist = norm2(dir);
            if (dist < 1e-6) continue;
            const double dpsi = norm2(field.psi(k, x) - field.psi(k, y));
            if (dpsi <= 0.0) continue;
            lx.push_back(std::log(dist));
            ly.push_back(std::log(dpsi));
        }
    }
    rep.holder_exponent = detail::least_squares(lx, ly).slope;

    // near-identity decay table
    std::vector<double> rx, ry;
    for (double r : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5}) {
        double worst = 0.0;
        Witness w;
        for (int i = 0; i < std::max(4, grid.points / 4); ++i) {
            const long k = sample_k(i);
            const Vec x = random_point(r);
            const double rel = norm2(field.psi(k, x) - x) / r;
            if (rel > worst) {
                worst = rel;
                w = {k, x, rel};
            }
        }
        rep.diff_at_zero.emplace_back(r, worst);
        if (worst > rep.diff_witness.value) rep.diff_witness = w;
        if (worst > 0.0) {
            rx.push_back(std::log(r));
            ry.push_back(std::log(worst * r));
        }
    }
    if (rx.size() >= 2) rep.rho_hat = detail::least_squares(rx, ry).slope - 1.0;

    // validity radius: largest probed radius at which the derivative maximum
    // stays stable when the radius halves (within 10%)
    auto deriv_max_at = [&](double radius) {
        double worst = 0.0;
        for (int i = 0; i < std::max(6, grid.points / 4); ++i) {
            const long k = sample_k(i);
            const Vec x = random_point(radius);
            Mat jac(d, d);
            for (int c = 0; c < d; ++c) {
                Vec xp = x, xm = x;
                xp[c] += grid.fd_step;
                xm[c] -= grid.fd_step;
                const Vec fp = field.psi(k, xp);
                const Vec fm = field.psi(k, xm);
                for (int r = 0; r < d; ++r) jac(r, c) = (fp[r] - fm[r]) / (2.0 * grid.fd_step);
            }
            worst = std::max(worst, spectral_norm(jac));
        }
        return worst;
    };
    double prev = deriv_max_at(grid.radius / 8.0);
    for (double r : {grid.radius / 4.0, grid.radius / 2.0, grid.radius}) {
        const double cur = deriv_max_at(r);
        if (prev > 0.0 && std::fabs(cur - prev) / prev <= 0.1) rep.rho_validity = r;
        prev = cur;
    }

    // the closed-form radius rho / (K (e theta^2)^{a~}) for comparison, when
    // the system declares its constants
    const auto& consts = field.rescaled().source_linear->system().constants;
    const auto itc = consts.find("c"), itK = consts.find("K"), ita = consts.find("a");
    if (itc != consts.end() && itK != consts.end() && ita != consts.end()) {
        const double theta = field.rescaled().source_rate.theta;
        const double atilde = ita->second + itK->second * itc->second * theta;
        rep.rho_formula = grid.radius /
                          (itK->second * std::pow(std::exp(1.0) * theta * theta, atilde));
    }
    return rep;
}

} // namespace mudicho
