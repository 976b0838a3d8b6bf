#pragma once

// System-spec files: a JSON document describing a discrete or continuous
// nonautonomous system (linear part, nonlinear perturbation, growth rate,
// constants). Loading validates invertibility of the linear part on a lead-in
// window and the g(0)=0, Dg(0)=0 conditions required for linearization.

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "expr.hpp"
#include "growth.hpp"
#include "linalg.hpp"

namespace mudicho {

enum class SystemKind { Discrete, Continuous };

struct GridConfig {
    double radius = 0.5;
    int points = 64;
    std::uint64_t seed = 0x5eed5eedULL;
};

struct SystemSpec {
    SystemKind kind = SystemKind::Discrete;
    int dim = 1;
    double index_start = 0.0; // first valid time index (n0 or t0)
    GrowthRate rate;
    std::vector<Expr> linear;    // row-major d*d entries in the time variable
    std::vector<Expr> nonlinear; // d entries in (time, x1..xd); empty means 0
    std::map<std::string, double> constants;
    std::string name = "unnamed";
    bool linearizable = true;
    std::vector<std::string> warnings;

    std::string time_var() const { return kind == SystemKind::Discrete ? "n" : "t"; }

    std::vector<std::string> variable_names() const {
        std::vector<std::string> v{time_var()};
        for (int i = 1; i <= dim; ++i) v.push_back("x" + std::to_string(i));
        for (const auto& [k, _] : constants) v.push_back(k);
        return v;
    }

    // slot layout: [time, x1..xd, constants...]
    std::vector<double> make_slots(double time, const Vec& x) const {
        std::vector<double> s(1 + dim + constants.size(), 0.0);
        s[0] = time;
        for (int i = 0; i < dim && i < static_cast<int>(x.size()); ++i) s[1 + i] = x[i];
        std::size_t j = 1 + dim;
        for (const auto& [_, v] : constants) s[j++] = v;
        return s;
    }

    Mat linear_at(double time) const {
        Mat a(dim, dim);
        const std::vector<double> slots = make_slots(time, Vec(dim, 0.0));
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) a(i, j) = linear[i * dim + j].eval(slots);
        return a;
    }

    bool has_nonlinearity() const { return !nonlinear.empty(); }

    Vec nonlinear_at(double time, const Vec& x) const {
        Vec g(dim, 0.0);
        if (nonlinear.empty()) return g;
        std::vector<double> slots = make_slots(time, x);
        for (int i = 0; i < dim; ++i) g[i] = nonlinear[i].eval(slots);
        return g;
    }

    // Jacobian of the nonlinear part by central differences.
    Mat nonlinear_jacobian(double time, const Vec& x, double step_scale = 1e-5) const {
        Mat j(dim, dim);
        if (nonlinear.empty()) return j;
        const double h = step_scale * std::max(1.0, norm2(x));
        Vec xp = x, xm = x;
        for (int c = 0; c < dim; ++c) {
            xp[c] += h;
            xm[c] -= h;
            const Vec gp = nonlinear_at(time, xp);
            const Vec gm = nonlinear_at(time, xm);
            for (int r = 0; r < dim; ++r) j(r, c) = (gp[r] - gm[r]) / (2.0 * h);
            xp[c] = x[c];
            xm[c] = x[c];
        }
        return j;
    }
};

namespace detail {

inline GrowthRate rate_from_json(const nlohmann::json& j, SystemKind kind) {
    const RateKind rk = (kind == SystemKind::Discrete) ? RateKind::Discrete
                                                       : RateKind::Differentiable;
    if (j.contains("builtin")) return builtin_rate(j.at("builtin").get<std::string>(), rk);
    if (j.contains("expr")) {
        const std::string src = j.at("expr").get<std::string>();
        const double theta = j.value("theta", 0.0);
        if (!(theta >= 1.0))
            throw ConfigError("growth_rate.expr requires a declared theta >= 1");
        const std::string var = (rk == RateKind::Discrete) ? "n" : "t";
        Expr e = Expr::parse(src, {var});
        auto eval = [e](double x) { return e.eval({x}); };
        std::function<double(double)> deriv;
        if (rk == RateKind::Differentiable)
            deriv = [e](double x) {
                const double h = 1e-6 * std::max(1.0, std::fabs(x));
                return (e.eval({x + h}) - e.eval({x - h})) / (2.0 * h);
            };
        GrowthRate r = custom_rate(eval, theta, rk, deriv);
        // positivity/monotonicity/ratio certified by scan, not symbolically
        verify_ratio_bound(r, rk == RateKind::Discrete ? 10000 : 256);
        return r;
    }
    throw ConfigError("growth_rate: expected {\"builtin\": ...} or {\"expr\": ..., \"theta\": ...}");
}

} // namespace detail

inline SystemSpec spec_from_json(const nlohmann::json& j) {
    SystemSpec s;
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "discrete")
            s.kind = SystemKind::Discrete;
        else if (kind == "continuous")
            s.kind = SystemKind::Continuous;
        else
            throw ConfigError("field 'kind': expected discrete|continuous, got '" + kind + "'");

        s.dim = j.at("dim").get<int>();
        if (s.dim < 1) throw ConfigError("field 'dim': must be >= 1");
        s.index_start = j.value("index_start", s.kind == SystemKind::Discrete ? 0.0 : 1.0);
        if (s.kind == SystemKind::Continuous && s.index_start < 1.0)
            throw ConfigError("field 'index_start': continuous systems start at t >= 1");

        if (j.contains("constants"))
            for (const auto& [k, v] : j.at("constants").items())
                s.constants[k] = v.get<double>();

        s.rate = detail::rate_from_json(j.at("growth_rate"), s.kind);

        const std::vector<std::string> vars = s.variable_names();
        const auto& lin = j.at("linear");
        if (!lin.is_array() || static_cast<int>(lin.size()) != s.dim)
            throw ConfigError("field 'linear': expected " + std::to_string(s.dim) + " rows");
        for (const auto& row : lin) {
            if (!row.is_array() || static_cast<int>(row.size()) != s.dim)
                throw ConfigError("field 'linear': expected " + std::to_string(s.dim) +
                                  " entries per row");
            for (const auto& cell : row)
                s.linear.push_back(Expr::parse(cell.get<std::string>(), vars));
        }

        if (j.contains("nonlinear")) {
            const auto& nl = j.at("nonlinear");
            if (!nl.is_array() || static_cast<int>(nl.size()) != s.dim)
                throw ConfigError("field 'nonlinear': expected " + std::to_string(s.dim) +
                                  " entries");
            bool all_zero = true;
            for (const auto& cell : nl) {
                const std::string src = cell.get<std::string>();
                s.nonlinear.push_back(Expr::parse(src, vars));
                if (src != "0") all_zero = false;
            }
            if (all_zero) s.nonlinear.clear();
        }

        if (j.contains("metadata")) {
            const auto& m = j.at("metadata");
            s.name = m.value("name", s.name);
            s.linearizable = m.value("linearizable", true);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("schema error: ") + e.what());
    }
    return s;
}

inline nlohmann::json spec_to_json(const SystemSpec& s) {
    nlohmann::json j;
    j["kind"] = s.kind == SystemKind::Discrete ? "discrete" : "continuous";
    j["dim"] = s.dim;
    j["index_start"] = s.index_start;
    if (s.rate.name == "custom")
        j["growth_rate"] = {{"expr", "custom"}, {"theta", s.rate.theta}};
    else
        j["growth_rate"] = {{"builtin", s.rate.name}};
    nlohmann::json lin = nlohmann::json::array();
    for (int i = 0; i < s.dim; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int k = 0; k < s.dim; ++k) row.push_back(s.linear[i * s.dim + k].source());
        lin.push_back(row);
    }
    j["linear"] = lin;
    if (!s.nonlinear.empty()) {
        nlohmann::json nl = nlohmann::json::array();
        for (const auto& e : s.nonlinear) nl.push_back(e.source());
        j["nonlinear"] = nl;
    }
    if (!s.constants.empty()) j["constants"] = s.constants;
    j["metadata"] = {{"name", s.name}, {"linearizable", s.linearizable}};
    return j;
}

// Runs the load-time checks: invertibility of A on a lead-in window and the
// linearization conditions g(0)=0, Dg(0)=0 (central differences).
inline void validate_spec(SystemSpec& s, long window = 64, double cond_cap = 1e14) {
    const double t0 = s.index_start;
    bool identity = true;
    for (long k = 0; k <= window; ++k) {
        const double time = t0 + static_cast<double>(k);
        Mat a = s.linear_at(time);
        for (double v : a.a)
            if (!std::isfinite(v))
                throw ValidationError(s.name + ": linear part not finite at index " +
                                      std::to_string(time));
        const double c = cond2(a);
        if (!(c < cond_cap))
            throw ValidationError(s.name + ": linear part ill-conditioned at index " +
                                  std::to_string(time) + " (cond " + std::to_string(c) + ")");
        if (identity && k <= 8) {
            Mat d = a - Mat::identity(s.dim);
            if (max_abs(d) > 1e-14) identity = false;
        }
    }
    if (identity) s.warnings.push_back("identity linear part; no dichotomy expected");

    if (s.has_nonlinearity() && s.linearizable) {
        const Vec zero(s.dim, 0.0);
        for (long k = 0; k <= window; ++k) {
            const double time = t0 + static_cast<double>(k);
            const Vec g0 = s.nonlinear_at(time, zero);
            if (norm2(g0) > 1e-9)
                throw ValidationError(
                    s.name + ": nonlinear part violates g(0)=0 at index " + std::to_string(time) +
                    " (|g(0)| = " + std::to_string(norm2(g0)) + ")");
            const Mat dg0 = s.nonlinear_jacobian(time, zero);
            if (spectral_norm(dg0) > 1e-6)
                throw ValidationError(s.name + ": nonlinear part violates Dg(0)=0 at index " +
                                      std::to_string(time));
        }
    }
}

inline SystemSpec load_spec(const std::string& path, long validation_window = 64) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open spec file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("spec file '" + path + "' is not valid JSON: " + e.what());
    }
    SystemSpec s = spec_from_json(j);
    validate_spec(s, validation_window);
    return s;
}

inline void save_spec(const SystemSpec& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write spec file '" + path + "'");
    out << spec_to_json(s).dump(2) << "\n";
}

// Empirical Lipschitz data for the nonlinear part: the maxima over a sampled
// box of ||Dg_n(x)|| mu_n / mu'_n and of the two-point difference quotient
// ||Dg_n(x)-Dg_n(y)|| mu_n / (mu'_n ||x-y||), each with the attaining sample.
struct LipschitzEstimate {
    double c_hat = 0.0;
    double m_hat = 0.0;
    double c_witness_time = 0.0;
    Vec c_witness_x;
    double m_witness_time = 0.0;
    Vec m_witness_x, m_witness_y;
    bool contraction_bound_ok = true; // c K theta^{a+1} < 1, when constants declared
    double contraction_value = 0.0;
};

inline LipschitzEstimate estimate_lipschitz(const SystemSpec& spec, long window,
                                            const GridConfig& grid = {}) {
    if (spec.kind != SystemKind::Discrete)
        throw ConfigError("estimate_lipschitz: discrete systems only (discretize flows first)");
    LipschitzEstimate out;
    if (!spec.has_nonlinearity()) return out;

    std::mt19937_64 rng(grid.seed);
    std::uniform_real_distribution<double> u(-grid.radius, grid.radius);
    for (long k = 0; k <= window; ++k) {
        const double time = spec.index_start + static_cast<double>(k);
        const double weight = spec.rate(time) / spec.rate.prime(time);
        std::vector<std::pair<Vec, Mat>> probes;
        for (int p = 0; p < grid.points; ++p) {
            Vec x(spec.dim);
            for (auto& v : x) v = u(rng);
            Mat jac = spec.nonlinear_jacobian(time, x);
            for (double v : jac.a)
                if (!std::isfinite(v))
                    throw NumericalError("estimate_lipschitz: derivative overflow at index " +
                                         std::to_string(time));
            const double cn = spectral_norm(jac) * weight;
            if (cn > out.c_hat) {
                out.c_hat = cn;
                out.c_witness_time = time;
                out.c_witness_x = x;
            }
            probes.emplace_back(std::move(x), std::move(jac));
        }
        for (std::size_t i = 0; i + 1 < probes.size(); i += 2) {
            const auto& [x, jx] = probes[i];
            const auto& [y, jy] = probes[i + 1];
            const double dist = norm2(x - y);
            if (dist < 1e-9) continue;
            const double mn = spectral_norm(jx - jy) * weight / dist;
            if (mn > out.m_hat) {
                out.m_hat = mn;
                out.m_witness_time = time;
                out.m_witness_x = x;
                out.m_witness_y = y;
            }
        }
    }

    // cK theta^{a+1} < 1 is the explicit smallness inequality from the
    // contraction argument; report it when the constants are declared.
    const auto itK = spec.constants.find("K");
    const auto ita = spec.constants.find("a");
    if (itK != spec.constants.end() && ita != spec.constants.end()) {
        out.contraction_value =
            out.c_hat * itK->second * std::pow(spec.rate.theta, ita->second + 1.0);
        out.contraction_bound_ok = out.contraction_value < 1.0;
    }
    return out;
}

} // namespace mudicho
