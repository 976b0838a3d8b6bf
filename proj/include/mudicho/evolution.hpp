#pragma once

// Evolution operators: the discrete linear cocycle A(m,n), its nonlinear
// counterpart G(m,n) (backward steps by contraction inversion), the continuous
// transfer matrix T(t,s) and nonlinear flow phi(t,s;x) by fixed-step RK4, and
// the continuous -> discrete reduction A_n = T(n+1,n).
//
// Long products are held in scaled form (matrix * exp(logscale)); rates up to
// e^{+-5} per step over windows of hundreds of steps leave double range
// otherwise. An optional QR accumulation mode tracks the product as an
// orthonormal factor times a scaled triangular factor.

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "errors.hpp"
#include "growth.hpp"
#include "linalg.hpp"
#include "sysdef.hpp"

namespace mudicho {

struct DiscreteSystem {
    int dim = 1;
    long start = 0; // first valid index
    GrowthRate rate;
    std::function<Mat(long)> linear;
    std::function<Vec(long, const Vec&)> nonlinear; // null -> zero map
    std::map<std::string, double> constants;
    std::string name = "system";

    bool has_nonlinearity() const { return static_cast<bool>(nonlinear); }
    Vec g(long n, const Vec& x) const {
        return nonlinear ? nonlinear(n, x) : Vec(x.size(), 0.0);
    }
};

inline DiscreteSystem make_discrete_system(const SystemSpec& spec) {
    if (spec.kind != SystemKind::Discrete)
        throw ConfigError("make_discrete_system: spec is continuous; use Flow::discretize");
    DiscreteSystem sys;
    sys.dim = spec.dim;
    sys.start = static_cast<long>(std::llround(spec.index_start));
    sys.rate = spec.rate;
    sys.constants = spec.constants;
    sys.name = spec.name;
    auto holder = std::make_shared<SystemSpec>(spec);
    sys.linear = [holder](long n) { return holder->linear_at(static_cast<double>(n)); };
    if (spec.has_nonlinearity())
        sys.nonlinear = [holder](long n, const Vec& x) {
            return holder->nonlinear_at(static_cast<double>(n), x);
        };
    return sys;
}

struct CocycleOptions {
    double cond_cap = 1e14;
    bool qr_accumulate = false;
};

class LinearCocycle {
public:
    explicit LinearCocycle(DiscreteSystem sys, CocycleOptions opts = {})
        : sys_(std::move(sys)), opts_(opts) {}

    const DiscreteSystem& system() const { return sys_; }
    int dim() const { return sys_.dim; }
    long start() const { return sys_.start; }
    const GrowthRate& rate() const { return sys_.rate; }

    const Mat& step(long n) const { return entry(n).a; }
    const Mat& step_inverse(long n) const { return entry(n).ainv; }

    // A(m,n) in scaled form: A_{m-1}...A_n forward, inverses backward.
    ScaledMat transfer_scaled(long m, long n) const {
        ScaledMat acc = ScaledMat::from(Mat::identity(sys_.dim));
        if (m == n) return acc;
        if (opts_.qr_accumulate) return transfer_qr(m, n);
        if (m > n) {
            for (long j = n; j < m; ++j) {
                acc.m = step(j) * acc.m;
                acc.renormalize();
            }
        } else {
            for (long j = n - 1; j >= m; --j) {
                acc.m = step_inverse(j) * acc.m;
                acc.renormalize();
            }
        }
        return acc;
    }

    Mat transfer(long m, long n) const { return transfer_scaled(m, n).materialize(); }

    // Applies A(m,n) to a frame of column vectors, renormalizing per step;
    // only the column spans survive, which is all the projection estimator
    // needs. Columns are re-orthonormalized by MGS each step so prefix spans
    // stay meaningful.
    Mat propagate_frame(long m, long n, Mat frame) const {
        if (m == n) return orthonormalize_columns(frame);
        frame = orthonormalize_columns(frame);
        if (m > n) {
            for (long j = n; j < m; ++j) frame = orthonormalize_columns(step(j) * frame);
        } else {
            for (long j = n - 1; j >= m; --j)
                frame = orthonormalize_columns(step_inverse(j) * frame);
        }
        return frame;
    }

    Vec apply(long m, long n, Vec x) const {
        if (m > n)
            for (long j = n; j < m; ++j) x = step(j) * x;
        else
            for (long j = n - 1; j >= m; --j) x = step_inverse(j) * x;
        return x;
    }

    // ln || A(m,n) * rhs ||, accumulated stepwise with per-step rescaling.
    // Materializing A(m,n) first can underflow the contracting block to zero
    // relative to the expanding one; rescaling the running product keeps the
    // dominant entries near 1 so the spectral norm survives. Returns -inf for
    // rhs = 0.
    double log_norm_apply(long m, long n, const Mat& rhs) const {
        Mat y = rhs;
        double logscale = 0.0;
        auto renorm = [&]() {
            const double mx = max_abs(y);
            if (mx > 0.0 && std::isfinite(mx) && (mx > 1e12 || mx < 1e-12)) {
                for (double& v : y.a) v /= mx;
                logscale += std::log(mx);
            }
        };
        if (m > n)
            for (long j = n; j < m; ++j) {
                y = step(j) * y;
                renorm();
            }
        else
            for (long j = n - 1; j >= m; --j) {
                y = step_inverse(j) * y;
                renorm();
            }
        const double nrm = spectral_norm(y);
        if (nrm == 0.0) return -std::numeric_limits<double>::infinity();
        return std::log(nrm) + logscale;
    }

private:
    struct Entry {
        Mat a, ainv;
    };

    const Entry& entry(long n) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(n);
        if (it != cache_.end()) return it->second;
        if (n < sys_.start)
            throw ConfigError(sys_.name + ": index " + std::to_string(n) +
                              " below domain start " + std::to_string(sys_.start));
        Mat a = sys_.linear(n);
        const double c = cond2(a);
        if (!(c < opts_.cond_cap))
            throw NumericalError(sys_.name + ": A_n ill-conditioned at index " +
                                 std::to_string(n) + " (cond " + std::to_string(c) + ")");
        Entry e{a, inverse(a)};
        return cache_.emplace(n, std::move(e)).first->second;
    }

    // QR accumulation: product = Q * T with Q orthonormal, T scaled upper
    // triangular. Controls the strongly expanding direction on long windows.
    ScaledMat transfer_qr(long m, long n) const {
        const int d = sys_.dim;
        Mat q = Mat::identity(d);
        ScaledMat t = ScaledMat::from(Mat::identity(d));
        auto push = [&](const Mat& factor) {
            Mat b = factor * q;
            Mat qn = orthonormalize_columns(b);
            Mat r = transpose(qn) * b; // upper triangular up to roundoff
            q = qn;
            t = ScaledMat{r * t.m, t.logscale};
            t.renormalize();
        };
        if (m > n)
            for (long j = n; j < m; ++j) push(step(j));
        else
            for (long j = n - 1; j >= m; --j) push(step_inverse(j));
        ScaledMat out{q * t.m, t.logscale};
        out.renormalize();
        return out;
    }

    DiscreteSystem sys_;
    CocycleOptions opts_;
    mutable std::map<long, Entry> cache_;
    mutable std::mutex mu_;
};

struct InversionOptions {
    int max_iters = 200;
    double tol = 1e-12;
};

class NonlinearCocycle {
public:
    explicit NonlinearCocycle(DiscreteSystem sys, InversionOptions inv = {},
                              CocycleOptions opts = {})
        : linear_(std::make_shared<LinearCocycle>(sys, opts)), sys_(linear_->system()),
          inv_(inv) {
        check_contraction_precondition();
    }
    NonlinearCocycle(std::shared_ptr<LinearCocycle> linear, InversionOptions inv = {})
        : linear_(std::move(linear)), sys_(linear_->system()), inv_(inv) {
        check_contraction_precondition();
    }

    const DiscreteSystem& system() const { return sys_; }
    const LinearCocycle& linear() const { return *linear_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    Vec forward(long m, long n, Vec x) const {
        if (m < n) throw ConfigError("nonlinear forward: m >= n required");
        for (long j = n; j < m; ++j) x = linear_->step(j) * x + sys_.g(j, x);
        return x;
    }

    // Solves G_j(x) = y stepwise by the contraction x <- A_j^{-1} y - A_j^{-1} g_j(x).
    Vec backward(long m, long n, Vec y) const {
        if (m > n) throw ConfigError("nonlinear backward: m < n required");
        for (long j = n - 1; j >= m; --j) y = invert_step(j, y);
        return y;
    }

    Vec eval(long m, long n, const Vec& x) const {
        return m >= n ? forward(m, n, x) : backward(m, n, x);
    }

    // Finite-difference Jacobian of G(m,n) at x.
    Mat jacobian(long m, long n, const Vec& x, double step_scale = 1e-6) const {
        const int d = sys_.dim;
        Mat j(d, d);
        const double h = step_scale * std::max(1.0, norm2(x));
        Vec xp = x, xm = x;
        for (int c = 0; c < d; ++c) {
            xp[c] += h;
            xm[c] -= h;
            const Vec gp = eval(m, n, xp);
            const Vec gm = eval(m, n, xm);
            for (int r = 0; r < d; ++r) j(r, c) = (gp[r] - gm[r]) / (2.0 * h);
            xp[c] = x[c];
            xm[c] = x[c];
        }
        return j;
    }

private:
    Vec invert_step(long j, const Vec& y) const {
        if (!sys_.has_nonlinearity()) return linear_->step_inverse(j) * y;
        const Mat& ainv = linear_->step_inverse(j);
        const Vec base = ainv * y;
        Vec x = base;
        double delta = 0.0;
        for (int it = 0; it < inv_.max_iters; ++it) {
            Vec next = base - ainv * sys_.g(j, x);
            delta = norm2(next - x);
            x = next;
            if (delta <= inv_.tol) return x;
        }
        throw NumericalError(sys_.name + ": backward step at index " + std::to_string(j) +
                             " did not converge (last step " + std::to_string(delta) + ")");
    }

    void check_contraction_precondition() {
        const auto& c = sys_.constants;
        const auto itc = c.find("c"), itK = c.find("K"), ita = c.find("a");
        if (itc != c.end() && itK != c.end() && ita != c.end()) {
            const double v =
                itc->second * itK->second * std::pow(sys_.rate.theta, ita->second + 1.0);
            if (v >= 1.0)
                warnings_.push_back(sys_.name + ": contraction precondition cK theta^{a+1} = " +
                                    std::to_string(v) + " >= 1; backward steps may be slow");
        }
    }

    std::shared_ptr<LinearCocycle> linear_;
    const DiscreteSystem& sys_;
    InversionOptions inv_;
    std::vector<std::string> warnings_;
};

// Fixed-step RK4 for the continuous system x' = A(t)x + f(t,x).
class Flow {
public:
    explicit Flow(SystemSpec spec, double step = 1e-3)
        : spec_(std::make_shared<SystemSpec>(std::move(spec))), h_(step) {
        if (spec_->kind != SystemKind::Continuous)
            throw ConfigError("Flow: continuous specs only");
    }

    const SystemSpec& spec() const { return *spec_; }
    double step_size() const { return h_; }
    double domain_start() const { return spec_->index_start; }

    // T(t,s): matrix solution of X' = A(tau) X, X(s) = Id.
    Mat transfer(double t, double s) const {
        const int d = spec_->dim;
        Mat x = Mat::identity(d);
        integrate(s, t, [&](double tau, const Mat& m) { return spec_->linear_at(tau) * m; }, x);
        return x;
    }

    // phi(t,s;x): nonlinear solution through (s,x).
    Vec nonlinear_flow(double t, double s, Vec x) const {
        integrate(s, t,
                  [&](double tau, const Vec& v) {
                      Vec dv = spec_->linear_at(tau) * v;
                      if (spec_->has_nonlinearity()) dv = dv + spec_->nonlinear_at(tau, v);
                      return dv;
                  },
                  x);
        return x;
    }

    // A_n = T(n+1,n), g_n(x) = phi(n+1,n;x) - A_n x. The discrete rate reuses
    // the continuous mu sampled at integers.
    DiscreteSystem discretize() const {
        DiscreteSystem sys;
        sys.dim = spec_->dim;
        sys.start = static_cast<long>(std::ceil(spec_->index_start - 1e-12));
        sys.rate = spec_->rate;
        sys.rate.kind = RateKind::Discrete;
        sys.rate.domain_start = 0.0;
        sys.constants = spec_->constants;
        sys.name = spec_->name + ":discretized";
        auto self = std::make_shared<Flow>(*this);
        sys.linear = [self](long n) { return self->step_matrix(n); };
        if (spec_->has_nonlinearity())
            sys.nonlinear = [self](long n, const Vec& x) {
                const Vec phi = self->nonlinear_flow(static_cast<double>(n + 1),
                                                     static_cast<double>(n), x);
                return phi - self->step_matrix(n) * x;
            };
        return sys;
    }

    const Mat& step_matrix(long n) const {
        std::lock_guard<std::mutex> lock(cache_->mu);
        auto it = cache_->an.find(n);
        if (it != cache_->an.end()) return it->second;
        Mat a = transfer(static_cast<double>(n + 1), static_cast<double>(n));
        return cache_->an.emplace(n, std::move(a)).first->second;
    }

    void preload_steps(const std::map<long, Mat>& steps) const {
        std::lock_guard<std::mutex> lock(cache_->mu);
        for (const auto& [n, a] : steps) cache_->an.emplace(n, a);
    }
    std::map<long, Mat> cached_steps() const {
        std::lock_guard<std::mutex> lock(cache_->mu);
        return cache_->an;
    }

private:
    template <typename State, typename Rhs>
    void integrate(double from, double to, Rhs rhs, State& y) const {
        if (from == to) return;
        const double span = to - from;
        const long nsteps = std::max(1L, static_cast<long>(std::floor(std::fabs(span) / h_)));
        const double dir = span > 0 ? 1.0 : -1.0;
        double t = from;
        for (long i = 0; i < nsteps; ++i) {
            rk4_step(rhs, t, dir * h_, y);
            t += dir * h_;
        }
        const double rest = to - t;
        if (std::fabs(rest) > 1e-15) rk4_step(rhs, t, rest, y);
    }

    template <typename State, typename Rhs>
    static void rk4_step(Rhs rhs, double t, double dt, State& y) {
        State k1 = rhs(t, y);
        State k2 = rhs(t + 0.5 * dt, y + (0.5 * dt) * k1);
        State k3 = rhs(t + 0.5 * dt, y + (0.5 * dt) * k2);
        State k4 = rhs(t + dt, y + dt * k3);
        y = y + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4);
    }

    struct StepCache {
        std::map<long, Mat> an;
        std::mutex mu;
    };

    std::shared_ptr<SystemSpec> spec_;
    double h_;
    std::shared_ptr<StepCache> cache_ = std::make_shared<StepCache>();
};

} // namespace mudicho
