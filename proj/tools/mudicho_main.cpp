// mudicho: certify mu-dichotomies, estimate dichotomy spectra, rescale time,
// and build linearizing conjugacies for nonautonomous systems defined by
// system-spec JSON files.
//
// Exit codes: 0 success, 2 configuration/validation failure, 3 numerical
// failure. Errors are emitted as a machine-readable JSON object. All sampling
// derives from one seed, so identical configs produce byte-identical reports.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mudicho/mudicho.hpp"

using namespace mudicho;
using nlohmann::json;

namespace {

struct RunConfig {
    std::string spec_path;
    long window = 256;
    double tau_min = -3.0, tau_max = 3.0, dtau = 0.05;
    double refined = 1e-3;
    double tol = 1e-6;
    double cut = 0.0;
    long horizon = 0;
    double grid_radius = 0.5;
    int grid_points = 64;
    std::uint64_t seed = 0x5eed5eedULL;
    std::string output = "json";
    std::string out_path;
    int parallel = 8;
    bool qr_accumulate = false;
    bool analytic_projections = false;
    bool equivalence = false;
    bool emit_samples = false;
    double flow_step = 1e-3;
    std::string check;
    std::string rate_override;
    double c_override = std::numeric_limits<double>::quiet_NaN();
    double eta_override = std::numeric_limits<double>::quiet_NaN();
    double tail_eps = 1e-12;
    long k_max = 0;

    json to_json() const {
        json j;
        j["window"] = window;
        j["tau_min"] = tau_min;
        j["tau_max"] = tau_max;
        j["dtau"] = dtau;
        j["refined"] = refined;
        j["tol"] = tol;
        j["cut"] = cut;
        j["seed"] = seed;
        j["grid"] = {{"radius", grid_radius}, {"points", grid_points}};
        j["parallel"] = parallel;
        j["qr_accumulate"] = qr_accumulate;
        if (!check.empty()) j["check"] = check;
        if (!rate_override.empty()) j["rate"] = rate_override;
        return j;
    }
};

void write_output(const RunConfig& cfg, const std::string& body) {
    if (cfg.out_path.empty()) {
        std::cout << body << "\n";
    } else {
        std::ofstream out(cfg.out_path);
        if (!out) throw ConfigError("cannot write output file '" + cfg.out_path + "'");
        out << body << "\n";
    }
}

SystemSpec load_with_overrides(const RunConfig& cfg) {
    SystemSpec spec = load_spec(cfg.spec_path);
    if (!std::isnan(cfg.c_override)) spec.constants["c"] = cfg.c_override;
    if (!std::isnan(cfg.eta_override)) spec.constants["eta"] = cfg.eta_override;
    if (!cfg.rate_override.empty())
        spec.rate = builtin_rate(cfg.rate_override, spec.kind == SystemKind::Discrete
                                                        ? RateKind::Discrete
                                                        : RateKind::Differentiable);
    return spec;
}

GrowthRate scan_rate(const SystemSpec& spec) {
    GrowthRate r = spec.rate;
    r.kind = RateKind::Discrete;
    r.domain_start = 0.0;
    return r;
}

// optional on-disk memoization of discretized transfer matrices
void try_load_flow_cache(const Flow& flow, const RunConfig& cfg) {
    const char* dir = std::getenv("MUDICHO_CACHE_DIR");
    if (!dir) return;
    const std::string key = sha256_file(cfg.spec_path) + "_" +
                            std::to_string(cfg.window) + "_" +
                            std::to_string(flow.step_size());
    std::ifstream in(std::string(dir) + "/" + key + ".json");
    if (!in) return;
    json j;
    in >> j;
    std::map<long, Mat> steps;
    for (const auto& item : j.at("steps")) {
        Mat m(flow.spec().dim, flow.spec().dim);
        const auto& vals = item.at("a");
        for (std::size_t i = 0; i < m.a.size(); ++i) m.a[i] = vals.at(i).get<double>();
        steps[item.at("n").get<long>()] = m;
    }
    flow.preload_steps(steps);
}

void try_store_flow_cache(const Flow& flow, const RunConfig& cfg) {
    const char* dir = std::getenv("MUDICHO_CACHE_DIR");
    if (!dir) return;
    const std::string key = sha256_file(cfg.spec_path) + "_" +
                            std::to_string(cfg.window) + "_" +
                            std::to_string(flow.step_size());
    json steps = json::array();
    for (const auto& [n, m] : flow.cached_steps())
        steps.push_back({{"n", n}, {"a", m.a}});
    json j;
    j["steps"] = steps;
    std::ofstream out(std::string(dir) + "/" + key + ".json");
    if (out) out << j.dump() << "\n";
}

int cmd_dichotomy(const RunConfig& cfg) {
    SystemSpec spec = load_with_overrides(cfg);
    json rep;
    rep["provenance"] = provenance(cfg.spec_path, cfg.to_json());
    FitOptions fit;
    if (spec.kind == SystemKind::Discrete) {
        auto co = std::make_shared<LinearCocycle>(make_discrete_system(spec),
                                                  CocycleOptions{1e14, cfg.qr_accumulate});
        DichotomyAnalyzer an(co, spec.rate, cfg.window, fit);
        TauVerdict tv = an.verdict_at(cfg.cut);
        rep["certificate"] = certificate_to_json(tv.cert);
        rep["stable_count"] = tv.stable_count;
    } else {
        Flow flow(spec, cfg.flow_step);
        try_load_flow_cache(flow, cfg);
        ContinuousCertificate cc = certify_continuous(flow, scan_rate(spec), cfg.window, fit);
        rep["certificate"] = certificate_to_json(cc.discrete);
        rep["continuous_checks"] = cc.continuous_checks;
        rep["continuous_ok"] = cc.continuous_ok;
        rep["continuous_max_violation"] = cc.continuous_max_violation;
        try_store_flow_cache(flow, cfg);
    }
    for (const auto& w : spec.warnings) rep["warnings"].push_back(w);
    write_output(cfg, rep.dump(2));
    return 0;
}

int cmd_spectrum(const RunConfig& cfg) {
    SystemSpec spec = load_with_overrides(cfg);
    ScanConfig scan;
    scan.tau_min = cfg.tau_min;
    scan.tau_max = cfg.tau_max;
    scan.dtau = cfg.dtau;
    scan.refined = cfg.refined;
    scan.window = cfg.window;
    scan.workers = cfg.parallel;

    SpectrumEstimate est;
    if (spec.kind == SystemKind::Discrete) {
        auto co = std::make_shared<LinearCocycle>(make_discrete_system(spec),
                                                  CocycleOptions{1e14, cfg.qr_accumulate});
        est = scan_spectrum(co, spec.rate, scan);
    } else {
        Flow flow(spec, cfg.flow_step);
        try_load_flow_cache(flow, cfg);
        est = continuous_spectrum(flow, scan_rate(spec), scan);
        try_store_flow_cache(flow, cfg);
    }

    if (cfg.output == "csv") {
        CsvWriter csv({"tau", "verdict", "lambda_fit", "a_fit"});
        for (const auto& r : est.per_tau_log) csv.row(r.tau, to_string(r.verdict), r.lambda, r.a);
        write_output(cfg, csv.str());
        return 0;
    }
    json rep;
    rep["provenance"] = provenance(cfg.spec_path, cfg.to_json());
    rep["spectrum"] = spectrum_to_json(est);
    if (!est.intervals.empty() && !est.contains_zero()) {
        try {
            SpectralConditions sc = check_conditions(est);
            rep["conditions"] = {{"k", sc.k},           {"r", sc.r},
                                 {"one_sided", sc.one_sided}, {"gap_ok", sc.gap_ok},
                                 {"bands_ok", sc.bands_ok},   {"gap", sc.gap},
                                 {"alpha1_sup", sc.alpha1_sup}};
        } catch (const ConfigError&) {
        }
    }
    write_output(cfg, rep.dump(2));
    return 0;
}

int cmd_rescale(const RunConfig& cfg) {
    SystemSpec spec = load_with_overrides(cfg);
    if (spec.kind != SystemKind::Discrete)
        throw ConfigError("rescale: continuous systems go through `flow` discretization first");
    auto lin = std::make_shared<LinearCocycle>(make_discrete_system(spec),
                                               CocycleOptions{1e14, cfg.qr_accumulate});
    std::shared_ptr<NonlinearCocycle> nl;
    if (spec.has_nonlinearity()) nl = std::make_shared<NonlinearCocycle>(lin);
    long horizon = cfg.horizon;
    if (horizon <= 0) {
        horizon = 1;
        while (horizon < 64 &&
               rescale_required_window(spec.rate, horizon + 1) <= lin->start() + cfg.window)
            ++horizon;
    }
    RescaledSystem rs = rescale(lin, nl, spec.rate, horizon);

    if (cfg.output == "csv") {
        CsvWriter csv({"n", "anchor_k", "b_row_major"});
        for (long n = 1; n <= rs.horizon; ++n) {
            std::string flat;
            Mat b = rs.B(n);
            for (std::size_t i = 0; i < b.a.size(); ++i)
                flat += (i ? ";" : "") + std::to_string(b.a[i]);
            csv.row(n, rs.anchor(n), flat);
        }
        write_output(cfg, csv.str());
        return 0;
    }

    json rep;
    rep["provenance"] = provenance(cfg.spec_path, cfg.to_json());
    rep["horizon"] = rs.horizon;
    rep["required_source_window"] = rs.required_source_window;
    json anchors = json::array();
    for (long n = 1; n <= rs.horizon + 1; ++n) anchors.push_back(rs.anchor(n));
    rep["anchors"] = anchors;
    json bmats = json::array();
    for (long n = 1; n <= rs.horizon; ++n) bmats.push_back(rs.B(n).a);
    rep["B"] = bmats;
    if (cfg.equivalence) {
        EquivalenceReport eq = verify_equivalence(rs);
        rep["equivalence"] = {{"source_verdict", to_string(eq.source_verdict)},
                              {"rescaled_verdict", to_string(eq.rescaled_verdict)},
                              {"agree", eq.verdicts_agree},
                              {"source_lambda", eq.source_lambda},
                              {"rescaled_lambda", eq.rescaled_lambda},
                              {"k_prime", eq.k_prime}};
    }
    write_output(cfg, rep.dump(2));
    return 0;
}

int cmd_linearize(const RunConfig& cfg) {
    SystemSpec spec = load_with_overrides(cfg);
    ConjugacyOptions copts;
    copts.tail_eps = cfg.tail_eps;
    copts.k_max = cfg.k_max;

    std::optional<ConjugacyField> field;
    if (spec.kind == SystemKind::Discrete) {
        auto lin = std::make_shared<LinearCocycle>(make_discrete_system(spec),
                                                   CocycleOptions{1e14, cfg.qr_accumulate});
        std::shared_ptr<NonlinearCocycle> nl;
        if (spec.has_nonlinearity()) nl = std::make_shared<NonlinearCocycle>(lin);
        field.emplace(build_conjugacy(lin, nl, spec.rate, cfg.window, copts));
    } else {
        Flow flow(spec, cfg.flow_step);
        try_load_flow_cache(flow, cfg);
        ContinuousConjugacy hc(flow, cfg.window, copts);
        field.emplace(hc.field());
        try_store_flow_cache(flow, cfg);
    }

    // residual table over seeded samples
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u(-cfg.grid_radius, cfg.grid_radius);
    const long k_lo = field->k_min();
    const long k_hi = std::min(field->k_limit() - 1, k_lo + cfg.window - 1);
    std::uniform_int_distribution<long> pick(k_lo, std::max(k_lo, k_hi));
    CsvWriter csv({"k", "x_norm", "residual"});
    double worst = 0.0;
    json rows = json::array();
    for (int i = 0; i < cfg.grid_points; ++i) {
        const long k = pick(rng);
        Vec x(field->rescaled().b_cocycle->dim());
        for (auto& v : x) v = u(rng);
        const double r = field->conjugacy_residual(k, x);
        worst = std::max(worst, r);
        csv.row(k, norm2(x), r);
        rows.push_back({{"k", k}, {"x_norm", norm2(x)}, {"residual", r}});
    }

    if (cfg.output == "csv") {
        write_output(cfg, csv.str());
        return worst <= cfg.tol ? 0 : 3;
    }

    RegularityGrid grid;
    grid.k_lo = k_lo;
    grid.k_hi = k_hi;
    grid.radius = cfg.grid_radius;
    grid.points = cfg.grid_points;
    grid.seed = cfg.seed;
    RegularityReport reg = regularity_report(*field, grid);

    json rep;
    rep["provenance"] = provenance(cfg.spec_path, cfg.to_json());
    rep["horizon"] = field->rescaled().horizon;
    rep["k_range"] = {k_lo, k_hi};
    rep["residual_max"] = worst;
    rep["residual_tolerance"] = cfg.tol;
    rep["residuals"] = rows;
    rep["regularity"] = {
        {"deriv_bound", reg.deriv_bound.value},
        {"deriv_witness_k", reg.deriv_bound.k},
        {"inv_deriv_bound", reg.inv_deriv_bound.value},
        {"holder_exponent", reg.holder_exponent},
        {"rho_hat", reg.rho_hat},
        {"rho_validity", reg.rho_validity},
        {"rho_formula", reg.rho_formula},
    };
    const double tail = field->tail_bound_estimate();
    if (std::isfinite(tail)) rep["tail_bound_estimate"] = tail;
    json table = json::array();
    for (const auto& [r, v] : reg.diff_at_zero) table.push_back({{"radius", r}, {"max_rel", v}});
    rep["diff_at_zero"] = table;
    for (const auto& w : field->warnings()) rep["warnings"].push_back(w);
    if (cfg.emit_samples) {
        json samples = json::array();
        for (int i = 0; i < 16; ++i) {
            const long k = pick(rng);
            Vec x(field->rescaled().b_cocycle->dim());
            for (auto& v : x) v = u(rng);
            Vec y = field->psi(k, x);
            samples.push_back({{"k", k}, {"x", x}, {"psi", y}});
        }
        rep["samples"] = samples;
    }
    write_output(cfg, rep.dump(2));
    return worst <= cfg.tol ? 0 : 3;
}

int cmd_verify(const RunConfig& cfg) {
    SystemSpec spec = load_with_overrides(cfg);
    if (cfg.check.empty())
        throw ConfigError("verify: --check is required "
                          "(rescale-identity|cocycle-laws|fn-series|gronwall)");
    json rep;
    rep["provenance"] = provenance(cfg.spec_path, cfg.to_json());
    rep["check"] = cfg.check;
    bool pass = false;
    std::mt19937_64 rng(cfg.seed);

    auto lin = std::make_shared<LinearCocycle>(make_discrete_system(spec),
                                               CocycleOptions{1e14, cfg.qr_accumulate});
    std::shared_ptr<NonlinearCocycle> nl;
    if (spec.has_nonlinearity()) nl = std::make_shared<NonlinearCocycle>(lin);

    if (cfg.check == "rescale-identity") {
        if (spec.rate.name != "exponential")
            throw ConfigError("rescale-identity requires the exponential rate "
                              "(pass --rate exponential)");
        const long horizon = std::min<long>(cfg.window, 48);
        RescaledSystem rs = rescale(lin, nl, spec.rate, horizon);
        double worst_b = 0.0, worst_f = 0.0;
        std::uniform_real_distribution<double> u(-cfg.grid_radius, cfg.grid_radius);
        for (long n = 1; n <= rs.horizon; ++n) {
            worst_b = std::max(worst_b, max_abs(rs.B(n) - lin->step(n)));
            for (int i = 0; i < 8; ++i) {
                Vec x(spec.dim);
                for (auto& v : x) v = u(rng);
                Vec fn = rs.f(n, x);
                Vec gn = lin->system().g(n, x);
                worst_f = std::max(worst_f, norm2(fn - gn));
            }
        }
        rep["max_B_minus_A"] = worst_b;
        rep["max_f_minus_g"] = worst_f;
        pass = (worst_b == 0.0) && (worst_f <= 1e-12);
    } else if (cfg.check == "cocycle-laws") {
        std::uniform_int_distribution<long> pick(lin->start(), lin->start() + cfg.window / 4);
        double worst = 0.0;
        for (int rep_i = 0; rep_i < 200; ++rep_i) {
            const long a = pick(rng), b = pick(rng), c = pick(rng);
            Mat lhs = lin->transfer(a, b) * lin->transfer(b, c);
            Mat rhs = lin->transfer(a, c);
            worst = std::max(worst, max_abs(lhs - rhs) / std::max(1.0, max_abs(rhs)));
        }
        rep["max_relative_violation"] = worst;
        pass = worst <= 1e-10;
    } else if (cfg.check == "fn-series") {
        const long horizon = 4;
        RescaledSystem rs = rescale(lin, nl, spec.rate, horizon);
        std::uniform_real_distribution<double> u(-cfg.grid_radius, cfg.grid_radius);
        double worst = 0.0;
        for (long n = 1; n <= rs.horizon; ++n)
            for (int i = 0; i < 8; ++i) {
                Vec x(spec.dim);
                for (auto& v : x) v = u(rng);
                worst = std::max(worst, fn_series_crosscheck(rs, n, x));
            }
        rep["max_series_residual"] = worst;
        pass = worst <= 1e-10;
    } else if (cfg.check == "gronwald" || cfg.check == "gronwall") {
        if (!nl) throw ConfigError("gronwall check needs a nonlinear part");
        DichotomyAnalyzer an(lin, spec.rate, cfg.window, FitOptions{});
        DichotomyCertificate cert = an.verdict_at(0.0).cert;
        if (cert.verdict == Verdict::None)
            throw NumericalError("gronwall check needs a certified dichotomy");
        const double c = spec.constants.count("c") ? spec.constants.at("c") : 0.0;
        const double atilde = cert.a + cert.K * c * spec.rate.theta;
        std::uniform_int_distribution<long> pick(lin->start(), lin->start() + cfg.window / 4);
        std::uniform_real_distribution<double> u(-cfg.grid_radius, cfg.grid_radius);
        double worst_ratio = 0.0;
        for (int i = 0; i < 32; ++i) {
            const long m = pick(rng), n = pick(rng);
            Vec x(spec.dim);
            for (auto& v : x) v = u(rng);
            const double w = std::exp(std::fabs(
                spec.rate.log_at(static_cast<double>(std::max(m, n))) -
                spec.rate.log_at(static_cast<double>(std::min(m, n)))));
            const double envelope = 1.1 * cert.K * std::pow(w, atilde);
            worst_ratio = std::max(worst_ratio, spectral_norm(nl->jacobian(m, n, x)) / envelope);
        }
        rep["max_jacobian_over_envelope"] = worst_ratio;
        pass = worst_ratio <= 1.0;
    } else {
        throw ConfigError("verify: unknown check '" + cfg.check + "'");
    }

    rep["pass"] = pass;
    write_output(cfg, rep.dump(2));
    return pass ? 0 : 2;
}

int cmd_flow(const RunConfig& cfg) {
    SystemSpec spec = load_with_overrides(cfg);
    if (spec.kind != SystemKind::Continuous) throw ConfigError("flow: continuous specs only");
    Flow flow(spec, cfg.flow_step);
    try_load_flow_cache(flow, cfg);
    const long n0 = static_cast<long>(std::ceil(spec.index_start - 1e-12));
    const long n1 = n0 + std::min<long>(cfg.window, 64);

    if (cfg.output == "csv") {
        CsvWriter csv({"n", "a_row_major"});
        for (long n = n0; n < n1; ++n) {
            std::string flat;
            const Mat& a = flow.step_matrix(n);
            for (std::size_t i = 0; i < a.a.size(); ++i)
                flat += (i ? ";" : "") + std::to_string(a.a[i]);
            csv.row(n, flat);
        }
        write_output(cfg, csv.str());
        try_store_flow_cache(flow, cfg);
        return 0;
    }

    json rep;
    rep["provenance"] = provenance(cfg.spec_path, cfg.to_json());
    json steps = json::array();
    for (long n = n0; n < n1; ++n) steps.push_back({{"n", n}, {"a", flow.step_matrix(n).a}});
    rep["discretized_steps"] = steps;
    // composition spot check: T(t,s)T(s,r) vs T(t,r)
    const double t = spec.index_start + 3.7, s = spec.index_start + 1.9,
                 r = spec.index_start + 0.4;
    rep["composition_residual"] =
        max_abs(flow.transfer(t, s) * flow.transfer(s, r) - flow.transfer(t, r));
    try_store_flow_cache(flow, cfg);
    write_output(cfg, rep.dump(2));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mu-dichotomy certification, spectrum estimation, time rescaling "
                 "and smooth linearization for nonautonomous systems"};
    app.require_subcommand(1);

    RunConfig cfg;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("spec", cfg.spec_path, "system-spec JSON file")->required();
        sub->add_option("--window", cfg.window, "source window length");
        sub->add_option("--tol", cfg.tol, "acceptance tolerance");
        sub->add_option("--seed", cfg.seed, "sampling seed");
        sub->add_option("--grid-radius", cfg.grid_radius, "sampling box radius");
        sub->add_option("--grid-points", cfg.grid_points, "samples per sweep");
        sub->add_option("--out", cfg.out_path, "output file (default stdout)");
        sub->add_option("--output", cfg.output, "json|csv")
            ->check(CLI::IsMember({"json", "csv"}));
        sub->add_option("--parallel", cfg.parallel, "worker count");
        sub->add_option("--flow-step", cfg.flow_step, "RK4 step for continuous systems");
        sub->add_option("--rate", cfg.rate_override, "override the growth rate (builtin name)");
        sub->add_option("--c", cfg.c_override, "override constant c");
        sub->add_option("--eta", cfg.eta_override, "override constant eta");
        sub->add_flag("--qr-accumulate", cfg.qr_accumulate,
                      "QR-accumulated transfer products for long windows");
    };

    CLI::App* dich = app.add_subcommand("dichotomy", "certify a strong mu-dichotomy");
    add_common(dich);
    dich->add_option("--cut", cfg.cut, "spectral cut / tau shift");

    CLI::App* spec_cmd = app.add_subcommand("spectrum", "estimate the dichotomy spectrum");
    add_common(spec_cmd);
    spec_cmd->add_option("--tau-min", cfg.tau_min);
    spec_cmd->add_option("--tau-max", cfg.tau_max);
    spec_cmd->add_option("--dtau", cfg.dtau);
    spec_cmd->add_option("--refined", cfg.refined, "endpoint bisection tolerance");

    CLI::App* resc = app.add_subcommand("rescale", "build the exponential-time companion system");
    add_common(resc);
    resc->add_option("--horizon", cfg.horizon, "rescaled horizon (0 = fit to window)");
    resc->add_flag("--equivalence", cfg.equivalence, "certify both sides and report");

    CLI::App* lin = app.add_subcommand("linearize", "build and check the conjugacies");
    add_common(lin);
    lin->add_option("--tail-eps", cfg.tail_eps, "series tail truncation");
    lin->add_option("--k-max", cfg.k_max, "max series terms (0 = 10x horizon)");
    lin->add_flag("--emit-samples", cfg.emit_samples, "include sampled psi values");

    CLI::App* ver = app.add_subcommand("verify", "run a named consistency check");
    add_common(ver);
    ver->add_option("--check", cfg.check,
                    "rescale-identity|cocycle-laws|fn-series|gronwall")
        ->required();

    CLI::App* flw = app.add_subcommand("flow", "discretize a continuous system");
    add_common(flw);

    CLI11_PARSE(app, argc, argv);

    try {
        if (dich->parsed()) return cmd_dichotomy(cfg);
        if (spec_cmd->parsed()) return cmd_spectrum(cfg);
        if (resc->parsed()) return cmd_rescale(cfg);
        if (lin->parsed()) return cmd_linearize(cfg);
        if (ver->parsed()) return cmd_verify(cfg);
        if (flw->parsed()) return cmd_flow(cfg);
    } catch (const ConfigError& e) {
        json err{{"error", {{"type", "config"}, {"message", e.what()}}}};
        std::cout << err.dump(2) << "\n";
        return 2;
    } catch (const ValidationError& e) {
        json err{{"error", {{"type", "validation"}, {"message", e.what()}}}};
        std::cout << err.dump(2) << "\n";
        return 2;
    } catch (const NumericalError& e) {
        json err{{"error", {{"type", "numerical"}, {"message", e.what()}}}};
        std::cout << err.dump(2) << "\n";
        return 3;
    } catch (const std::exception& e) {
        json err{{"error", {{"type", "internal"}, {"message", e.what()}}}};
        std::cout << err.dump(2) << "\n";
        return 3;
    }
    return 0;
}
