#pragma once

// Growth rates mu and the piecewise-linear interpolant mu~ with its inverse.
//
// A discrete growth rate is a strictly increasing positive sequence with
// mu_0 = 1; a continuous one is a strictly increasing differentiable function
// on [1, inf). The ratio bound mu_{n+1}/mu_n <= theta is what the rescaling
// machinery consumes, so the builtins carry certified theta values and
// verify_ratio_bound() re-checks any rate by a finite scan.

#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "errors.hpp"

namespace mudicho {

enum class RateKind { Discrete, Differentiable };

struct GrowthRate {
    RateKind kind = RateKind::Discrete;
    std::string name;                          // builtin name or "custom"
    std::function<double(double)> eval;        // n -> mu_n  or  t -> mu(t)
    std::function<double(double)> derivative;  // differentiable kind only
    double theta = 1.0;                        // certified ratio bound, >= 1
    double domain_start = 0.0;                 // 0 discrete, 1 continuous

    double operator()(double x) const { return eval(x); }

    // mu'_n = mu_{n+1} - mu_n for discrete rates, mu'(t) for continuous ones.
    double prime(double x) const {
        if (kind == RateKind::Discrete) return eval(x + 1.0) - eval(x);
        return derivative(x);
    }
    double log_at(double x) const { return std::log(eval(x)); }
};

inline GrowthRate builtin_rate(const std::string& name, RateKind kind = RateKind::Discrete) {
    GrowthRate r;
    r.kind = kind;
    r.name = name;
    r.domain_start = (kind == RateKind::Discrete) ? 0.0 : 1.0;
    if (name == "exponential") {
        r.eval = [](double x) { return std::exp(x); };
        r.derivative = [](double x) { return std::exp(x); };
        r.theta = std::exp(1.0); // constant ratio e
    } else if (name == "polynomial") {
        r.eval = [](double x) { return 1.0 + x; };
        r.derivative = [](double) { return 1.0; };
        r.theta = 2.0; // (2+n)/(1+n) attains 2 at n=0, decreasing in n
    } else if (name == "logarithmic") {
        r.eval = [](double x) { return std::log(std::exp(1.0) + x); };
        r.derivative = [](double x) { return 1.0 / (std::exp(1.0) + x); };
        r.theta = std::log(std::exp(1.0) + 1.0); // ratio maximal at n=0, decreasing
    } else {
        throw ConfigError("unknown builtin growth rate '" + name +
                          "' (expected exponential|polynomial|logarithmic)");
    }
    return r;
}

inline GrowthRate custom_rate(std::function<double(double)> eval, double theta, RateKind kind,
                              std::function<double(double)> derivative = nullptr) {
    GrowthRate r;
    r.kind = kind;
    r.name = "custom";
    r.eval = std::move(eval);
    r.derivative = std::move(derivative);
    r.theta = theta;
    r.domain_start = (kind == RateKind::Discrete) ? 0.0 : 1.0;
    return r;
}

// Scans mu_{n+1}/mu_n over [0, horizon) and returns the attained maximum.
// Throws if the sample is not strictly increasing or if the declared theta
// is exceeded beyond rounding.
struct RatioScan {
    double theta_hat = 1.0;
    long argmax = 0;
    bool within_declared = true;
};

inline RatioScan verify_ratio_bound(const GrowthRate& rate, long horizon) {
    if (horizon < 1) throw ConfigError("verify_ratio_bound: horizon must be >= 1");
    RatioScan out;
    double prev = rate(rate.domain_start);
    if (!(prev > 0.0)) throw ValidationError("invalid growth rate: mu not positive at start");
    for (long n = 0; n < horizon; ++n) {
        const double x = rate.domain_start + static_cast<double>(n);
        const double next = rate(x + 1.0);
        if (!(next > prev))
            throw ValidationError("invalid growth rate: not strictly increasing at n=" +
                                  std::to_string(n));
        const double ratio = next / prev;
        if (ratio > out.theta_hat) {
            out.theta_hat = ratio;
            out.argmax = n;
        }
        prev = next;
    }
    if (out.theta_hat > rate.theta + 1e-12) out.within_declared = false;
    return out;
}

// mu~ : piecewise-linear through the knots (n, mu_n); inverse by the closed
// branch formula, the branch located by binary search over cached knots.
class Interpolant {
public:
    explicit Interpolant(GrowthRate rate) : rate_(std::move(rate)) {
        if (rate_.kind != RateKind::Discrete)
            throw ConfigError("interpolate: requires a discrete growth rate");
        knots_.push_back(rate_(0.0)); // mu_0 = 1
        if (std::fabs(knots_[0] - 1.0) > 1e-12)
            throw ValidationError("invalid growth rate: mu_0 != 1");
    }

    double forward(double t) const {
        if (t < 0.0) throw ConfigError("mu~: argument below domain (t < 0)");
        const double fl = std::floor(t);
        const long n = static_cast<long>(fl);
        ensure(n + 1);
        std::lock_guard<std::mutex> lock(mu_);
        const double mu_n = knots_[static_cast<std::size_t>(n)];
        const double mu_n1 = knots_[static_cast<std::size_t>(n) + 1];
        return mu_n + (t - fl) * (mu_n1 - mu_n);
    }

    double inverse(double s) const {
        if (s < 1.0) throw ConfigError("mu~^{-1}: argument below domain (s < 1)");
        long lo = 0;
        // grow the cache until mu_{hi} >= s
        long hi = 1;
        while (true) {
            ensure(hi);
            {
                std::lock_guard<std::mutex> lock(mu_);
                if (knots_[static_cast<std::size_t>(hi)] >= s) break;
            }
            hi *= 2;
        }
        std::lock_guard<std::mutex> lock(mu_);
        while (hi - lo > 1) {
            const long mid = lo + (hi - lo) / 2;
            if (knots_[static_cast<std::size_t>(mid)] >= s)
                hi = mid;
            else
                lo = mid;
        }
        const double mu_n = knots_[static_cast<std::size_t>(lo)];
        const double mu_n1 = knots_[static_cast<std::size_t>(hi)];
        return static_cast<double>(lo) + (s - mu_n) / (mu_n1 - mu_n);
    }

    const GrowthRate& rate() const { return rate_; }

private:
    void ensure(long n) const {
        std::lock_guard<std::mutex> lock(mu_);
        while (static_cast<long>(knots_.size()) <= n)
            knots_.push_back(rate_(static_cast<double>(knots_.size())));
    }

    GrowthRate rate_;
    mutable std::vector<double> knots_;
    mutable std::mutex mu_;
};

inline Interpolant interpolate(const GrowthRate& rate) { return Interpolant(rate); }

} // namespace mudicho
