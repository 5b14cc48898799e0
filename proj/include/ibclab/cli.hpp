#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ibclab/asym.hpp"
#include "ibclab/boundslab.hpp"
#include "ibclab/errors.hpp"
#include "ibclab/model.hpp"
#include "ibclab/ops.hpp"
#include "ibclab/quad.hpp"
#include "ibclab/sector1.hpp"
#include "ibclab/testfn.hpp"

// Batch front-end: flat config, experiment runs, JSON reports and baseline comparison.
namespace ibclab::cli {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

enum ExitCode { kOk = 0, kChecksFailed = 1, kConfigFailure = 2, kComputeFailure = 3 };

struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A computation that failed inside the named experiment.
struct ExperimentError : std::runtime_error {
    std::string experiment;
    ExperimentError(std::string name, const std::string& what)
        : std::runtime_error("experiment '" + name + "' failed: " + what), experiment(std::move(name)) {}
};

struct GridConfig {
    double r_min = 1e-4;
    double r_max = 1e-1;
    int r_points = 12;
    double psi_width = 1.0;
    double lambda_min = 1e3;
    double lambda_max = 1e6;
    int lambda_points = 8;
    int n_max = 8;
    double s = 0.1;
    double epsilon = 0.1;
    long mc_samples = 200000;
    int neumann_order = 3;
};

struct ExperimentConfig {
    std::string experiment = "all";
    ModelParams model;
    QuadSpec quad;
    GridConfig grid;
    std::string output_dir = "ibc-lab-out";
    std::uint64_t seed = 1;
};

inline const std::vector<std::string>& experiment_tags() {
    static const std::vector<std::string> tags = {"constants", "probe_g",  "probe_r", "sector1",
                                                  "bounds",    "symmetry", "oracles", "g_ker"};
    return tags;
}

inline std::vector<std::string> expand_experiment(const std::string& tag) {
    if (tag == "all") return experiment_tags();
    for (const auto& t : experiment_tags())
        if (t == tag) return {t};
    throw ConfigError("experiment: unknown tag '" + tag + "'");
}

// ---------------------------------------------------------------- config parsing

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    if (used != v.size() || !std::isfinite(x)) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return x;
}

inline long parse_long(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long x = 0;
    try {
        x = std::stol(v, &used);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return x;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    }
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
    expand_experiment(c.experiment);
    c.model.validate();
    c.quad.validate();
    const auto& g = c.grid;
    if (!(g.r_min > 0.0 && g.r_min < g.r_max)) throw ConfigError("grid.r_min, grid.r_max: need 0 < r_min < r_max");
    if (g.r_points < 6) throw ConfigError("grid.r_points: need at least 6 points");
    if (!(g.psi_width > 0.0)) throw ConfigError("grid.psi_width: must be > 0");
    if (!(g.lambda_min > 0.0 && g.lambda_max >= 100.0 * g.lambda_min))
        throw ConfigError("grid.lambda_min, grid.lambda_max: need 0 < lambda_min and two decades of range");
    if (g.lambda_points < 6) throw ConfigError("grid.lambda_points: need at least 6 points");
    if (g.n_max < 3 || g.n_max > 8) throw ConfigError("grid.n_max: must lie in [3, 8]");
    if (!(g.s > 0.0 && g.s < 0.25)) throw ConfigError("grid.s: must lie in (0, 1/4)");
    if (!(g.epsilon > 0.0 && g.epsilon < 0.5)) throw ConfigError("grid.epsilon: must lie in (0, 1/2)");
    if (g.mc_samples < 1000) throw ConfigError("grid.mc_samples: need at least 1000 samples");
    if (g.neumann_order < 1 || g.neumann_order > 3) throw ConfigError("grid.neumann_order: must lie in [1, 3]");
    if (c.output_dir.empty()) throw ConfigError("output_dir: missing value");
}

// Flat "key = value" lines; '#' starts a comment. Unknown and repeated keys are rejected.
inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    auto dbl = [](double& x) -> Setter { return [&x](const std::string& k, const std::string& v) { x = detail::parse_double(k, v); }; };
    auto lng = [](long& x) -> Setter { return [&x](const std::string& k, const std::string& v) { x = detail::parse_long(k, v); }; };
    auto integer = [](int& x) -> Setter {
        return [&x](const std::string& k, const std::string& v) { x = static_cast<int>(detail::parse_long(k, v)); };
    };
    auto str = [](std::string& x) -> Setter { return [&x](const std::string&, const std::string& v) { x = v; }; };
    const std::map<std::string, Setter> keys = {
        {"experiment", str(c.experiment)},
        {"output_dir", str(c.output_dir)},
        {"seed", [&c](const std::string& k, const std::string& v) { c.seed = detail::parse_u64(k, v); }},
        {"model.m", dbl(c.model.m)},
        {"model.M", integer(c.model.M)},
        {"model.n", integer(c.model.n)},
        {"model.lambda_cut", dbl(c.model.lambda_cut)},
        {"model.c0", dbl(c.model.c0)},
        {"quad.rel_tol", dbl(c.quad.rel_tol)},
        {"quad.abs_tol", dbl(c.quad.abs_tol)},
        {"quad.max_depth", integer(c.quad.max_depth)},
        {"quad.max_intervals", integer(c.quad.max_intervals)},
        {"grid.r_min", dbl(c.grid.r_min)},
        {"grid.r_max", dbl(c.grid.r_max)},
        {"grid.r_points", integer(c.grid.r_points)},
        {"grid.psi_width", dbl(c.grid.psi_width)},
        {"grid.lambda_min", dbl(c.grid.lambda_min)},
        {"grid.lambda_max", dbl(c.grid.lambda_max)},
        {"grid.lambda_points", integer(c.grid.lambda_points)},
        {"grid.n_max", integer(c.grid.n_max)},
        {"grid.s", dbl(c.grid.s)},
        {"grid.epsilon", dbl(c.grid.epsilon)},
        {"grid.mc_samples", lng(c.grid.mc_samples)},
        {"grid.neumann_order", integer(c.grid.neumann_order)},
    };
    std::map<std::string, int> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
        const auto it = keys.find(key);
        if (it == keys.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (seen.count(key)) throw ConfigError(key + ": repeated on lines " + std::to_string(seen[key]) + " and " + std::to_string(lineno));
        if (value.empty()) throw ConfigError(key + ": missing value");
        seen[key] = lineno;
        it->second(key, value);
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

inline json config_json(const ExperimentConfig& c) {
    return json{{"experiment", c.experiment},
                {"output_dir", c.output_dir},
                {"seed", c.seed},
                {"model", {{"m", c.model.m}, {"M", c.model.M}, {"n", c.model.n}, {"lambda_cut", c.model.lambda_cut}, {"c0", c.model.c0}}},
                {"quad",
                 {{"rel_tol", c.quad.rel_tol}, {"abs_tol", c.quad.abs_tol}, {"max_depth", c.quad.max_depth},
                  {"max_intervals", c.quad.max_intervals}}},
                {"grid",
                 {{"r_min", c.grid.r_min}, {"r_max", c.grid.r_max}, {"r_points", c.grid.r_points},
                  {"psi_width", c.grid.psi_width}, {"lambda_min", c.grid.lambda_min}, {"lambda_max", c.grid.lambda_max},
                  {"lambda_points", c.grid.lambda_points}, {"n_max", c.grid.n_max}, {"s", c.grid.s},
                  {"epsilon", c.grid.epsilon}, {"mc_samples", c.grid.mc_samples}, {"neumann_order", c.grid.neumann_order}}}};
}

// ---------------------------------------------------------------- results

struct CsvTable {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

// Scientific notation, 17 significant digits, LF line ends.
inline std::string format_csv(const CsvTable& t) {
    std::string out;
    for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + t.columns[i];
    out += '\n';
    char buf[40];
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.16e", row[i]);
            if (i) out += ',';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

struct ExperimentResult {
    std::string name;
    json values = json::object();
    json checks = json::array();
    std::vector<CsvTable> tables;

    void value(const std::string& key, const Estimate& e) {
        values[key] = {{"value", e.value}, {"error", e.error}, {"method", to_string(e.method)}};
    }
    void value(const std::string& key, double v, double err, Method m) { value(key, Estimate{v, err, 0, m, 0.0}); }
    void exact(const std::string& key, double v) { value(key, closed_form(v)); }

    // |value - expected| <= tol |expected|
    void check_relative(const std::string& key, double v, double expected, double tol) {
        checks.push_back({{"name", key}, {"value", v}, {"expected", expected}, {"tolerance", tol}, {"kind", "relative"},
                          {"pass", std::abs(v - expected) <= tol * std::abs(expected)}});
    }
    // |value - expected| <= tol
    void check_absolute(const std::string& key, double v, double expected, double tol) {
        checks.push_back({{"name", key}, {"value", v}, {"expected", expected}, {"tolerance", tol}, {"kind", "absolute"},
                          {"pass", std::abs(v - expected) <= tol}});
    }
    // value <= bound
    void check_upper(const std::string& key, double v, double bound) {
        checks.push_back({{"name", key}, {"value", v}, {"expected", nullptr}, {"tolerance", bound}, {"kind", "upper"},
                          {"pass", v <= bound}});
    }
    // value >= bound
    void check_lower(const std::string& key, double v, double bound) {
        checks.push_back({{"name", key}, {"value", v}, {"expected", nullptr}, {"tolerance", bound}, {"kind", "lower"},
                          {"pass", v >= bound}});
    }
    bool passed() const {
        for (const auto& c : checks)
            if (!c["pass"].get<bool>()) return false;
        return true;
    }
};

// ---------------------------------------------------------------- experiments

namespace detail {

inline ProbeGrid probe_grid(const ExperimentConfig& c) { return {c.grid.r_min, c.grid.r_max, c.grid.r_points}; }

inline ModelParams single_particle(const ExperimentConfig& c) {
    ModelParams p = c.model;
    p.M = 1;
    p.n = 0;
    return p;
}

inline bool is_half(double m) { return m == 0.5; }

// Integrand of the xi-convolution that arctan_convolution evaluates in closed form.
inline double convolution_integrand(double m, double beta, double gamma, double rho, const std::vector<double>& x) {
    const double c2 = (2.0 * m + 1.0) / (2.0 * m);
    const double sh = rho / (2.0 * m + 1.0);
    const double a = beta + c2 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    const double b = gamma + c2 * (x[0] * x[0] + x[1] * x[1] + (x[2] + sh) * (x[2] + sh));
    return 1.0 / (a * b);
}

}  // namespace detail

inline ExperimentResult run_constants(const ExperimentConfig& c) {
    ExperimentResult r{"constants"};
    const double m = c.model.m;
    r.exact("gamma_m", gamma_m(m));
    r.exact("b_coefficient", b_coefficient(m));
    r.exact("counterterm_rate", linear_counterterm(m, 1.0));
    r.exact("gamma_m_at_1e6", gamma_m(1e6));
    if (detail::is_half(m)) r.check_relative("gamma_m_reference", gamma_m(m), -9.130e-5, 1e-3);
    r.check_upper("gamma_m_at_1e6_abs", std::abs(gamma_m(1e6)), 1e-12);
    CsvTable t{"gamma_m", {"m", "gamma_m", "gamma_m_times_m2"}, {}};
    double lo = 1e300, hi = 0.0;
    for (double mm : {0.5, 1.0, 2.0, 5.0, 10.0, 1e2, 1e3, 1e4}) {
        const double g = gamma_m(mm);
        t.rows.push_back({mm, g, g * mm * mm});
        if (mm >= 10.0) {
            lo = std::min(lo, std::abs(g * mm * mm));
            hi = std::max(hi, std::abs(g * mm * mm));
        }
    }
    r.check_upper("gamma_m_times_m2_max", hi, 1e-3);
    r.check_upper("gamma_m_times_m2_spread", hi / lo, 2.0);
    r.tables.push_back(std::move(t));
    return r;
}

inline ExperimentResult run_probe_g(const ExperimentConfig& c) {
    ExperimentResult r{"probe_g"};
    const ModelParams p = detail::single_particle(c);
    const Vec3 origin{0, 0, 0};
    const double w = c.grid.psi_width;
    int idx = 0;
    for (double a : {0.5 * w, w, 2.0 * w}) {
        const RadialTestFunction psi{a};
        const auto series = g_probe_series(p, psi, origin, detail::probe_grid(c), c.quad);
        const auto B = extract_B(p.m, series);
        const auto A = extract_A(series);
        const auto td = td_position_value(p, psi, origin, c.quad);
        const std::string tag = "width_" + std::to_string(idx++);
        r.exact(tag + ".a", a);
        r.value(tag + ".B", B.value, B.uncertainty, Method::adaptive);
        r.exact(tag + ".psi0", psi.eval(origin));
        r.value(tag + ".A", A.value, A.uncertainty, Method::adaptive);
        r.value(tag + ".Td", td);
        r.check_relative(tag + ".B_vs_psi0", B.value, psi.eval(origin), 1e-2);
        r.check_relative(tag + ".A_vs_Td", A.value, td.value, 1e-2);
        if (a == w) {
            CsvTable t{"g_probe", {"r", "value", "error"}, {}};
            for (std::size_t i = 0; i < series.r_values.size(); ++i)
                t.rows.push_back({series.r_values[i], series.samples[i].value, series.samples[i].error});
            r.tables.push_back(std::move(t));
        }
    }
    return r;
}

inline ExperimentResult run_probe_r(const ExperimentConfig& c) {
    ExperimentResult r{"probe_r"};
    const ModelParams p = detail::single_particle(c);
    const RadialTestFunction psi{c.grid.psi_width};
    const double psi0 = psi.eval({0, 0, 0});
    const auto grid = detail::probe_grid(c);
    const auto sd = r_probe_series(p, psi, RPiece::diagonal, grid, c.quad);
    const auto so = r_probe_series(p, psi, RPiece::off_diagonal, grid, c.quad);
    const auto st = sd + so;
    CsvTable t{"r_probe", {"r", "diagonal", "diagonal_error", "off_diagonal", "off_diagonal_error", "total", "total_error"}, {}};
    for (std::size_t i = 0; i < st.r_values.size(); ++i)
        t.rows.push_back({st.r_values[i], sd.samples[i].value, sd.samples[i].error, so.samples[i].value,
                          so.samples[i].error, st.samples[i].value, st.samples[i].error});
    r.tables.push_back(std::move(t));
    const std::pair<RPiece, const ProbeSeries*> pieces[] = {
        {RPiece::diagonal, &sd}, {RPiece::off_diagonal, &so}, {RPiece::total, &st}};
    for (const auto& [piece, s] : pieces) {
        const auto L = extract_log_coefficient(*s);
        const std::string name = std::string("log_coefficient.") + to_string(piece);
        r.value(name, L.value, L.uncertainty, Method::adaptive);
        const double tol = piece == RPiece::total ? 0.15 : 0.10;
        r.check_relative(name + "_vs_closed_form", L.value, predicted_log_coefficient(p.m, piece, psi0), tol);
    }
    r.exact("gamma_m", gamma_m(p.m));
    if (detail::is_half(p.m) && c.grid.psi_width == 1.0) {
        r.check_relative("log_coefficient.diagonal_reference", r.values["log_coefficient.diagonal"]["value"], -1.850e-4, 0.10);
        r.check_relative("log_coefficient.off_diagonal_reference", r.values["log_coefficient.off_diagonal"]["value"], 2.236e-4, 0.10);
    }
    return r;
}

inline ExperimentResult run_sector1(const ExperimentConfig& c) {
    ExperimentResult r{"sector1"};
    const double m = c.model.m;
    std::vector<double> lambdas;
    const int P = c.grid.lambda_points;
    for (int i = 0; i < P; ++i)
        lambdas.push_back(c.grid.lambda_min * std::pow(c.grid.lambda_max / c.grid.lambda_min, static_cast<double>(i) / (P - 1)));
    CsvTable t{"bare_energy", {"lambda", "energy", "energy_plus_counterterm"}, {}};
    for (double L : lambdas) {
        const double E = bare_fiber_energy(m, L).energy;
        t.rows.push_back({L, E, E + linear_counterterm(m, L)});
    }
    r.tables.push_back(std::move(t));
    const auto fit = divergence_fit(m, lambdas);
    r.value("slope_linear", fit.slope_linear, fit.err_linear, Method::adaptive);
    r.value("coeff_sqrt", fit.coeff_sqrt, fit.err_sqrt, Method::adaptive);
    r.values["coeff_sqrt"]["label"] = fit.sqrt_label;
    r.check_relative("slope_linear_vs_counterterm", fit.slope_linear, predicted_linear_slope(m), 5e-3);
    r.check_relative("coeff_sqrt_vs_truncation_prediction", fit.coeff_sqrt, predicted_sqrt_coefficient(m), 2e-2);
    const auto et = renormalized_fiber_energy(m, FiberRoute::transcendental);
    const auto eq = renormalized_fiber_energy(m, FiberRoute::subtracted_quadrature);
    r.value("renormalized_energy.transcendental", et.energy, et.residual, Method::closed_form);
    r.value("renormalized_energy.subtracted_quadrature", eq.energy, eq.residual, Method::adaptive);
    r.check_absolute("renormalized_energy.route_agreement", et.energy, eq.energy, 1e-6);
    if (detail::is_half(m)) r.check_absolute("renormalized_energy_reference", et.energy, 0.0277418, 1e-6);
    const auto ct = counterterm_cancellation_check(m);
    r.value("counterterm.finite_part_limit", ct.limit, ct.tail_spread, Method::adaptive);
    r.check_relative("counterterm.limit_vs_closed_form", ct.limit, fiber_finite_part(m, 1.0), 1e-5);
    return r;
}

inline ExperimentResult run_bounds(const ExperimentConfig& c) {
    ExperimentResult r{"bounds"};
    const double m = c.model.m;
    const int nmax = c.grid.n_max;
    std::vector<int> ns;
    for (int n = 1; n <= nmax; ++n) ns.push_back(n);
    const auto sw = gbound_sweep(m, ns, c.grid.s);
    CsvTable tg{"gbound", {"n", "value", "error"}, {}};
    for (std::size_t i = 0; i < ns.size(); ++i) tg.rows.push_back({double(ns[i]), sw.values[i].value, sw.values[i].error});
    r.tables.push_back(std::move(tg));
    r.value("gbound.fitted_exponent", sw.fitted_exponent, sw.fit_residual, Method::adaptive);
    r.check_relative("gbound.exponent_vs_2s_minus_half", sw.fitted_exponent, 2.0 * c.grid.s - 0.5, 2e-2);

    CsvTable ts{"schur", {"n", "lambda", "lambda_prime"}, {}};
    double lo = 1e300, hi = 0.0;
    for (int n : ns) {
        const auto sc = schur_constants(m, 1, n, c.grid.epsilon);
        ts.rows.push_back({double(n), sc.lambda.value, sc.lambda_prime.value});
        if (n >= 4) {
            lo = std::min(lo, sc.lambda.value);
            hi = std::max(hi, sc.lambda.value);
        }
    }
    r.tables.push_back(std::move(ts));
    if (nmax >= 5) r.check_upper("schur.lambda_relative_spread_n_ge_4", (hi - lo) / lo, 0.2);

    CsvTable tb{"sbound", {"n", "value", "envelope", "log_envelope"}, {}};
    std::vector<int> env_ns;
    for (int n = 0; n <= nmax; ++n) {
        const auto sb = sbound_integrals(m, n, c.grid.s);
        tb.rows.push_back({double(n), sb.integral.value, sb.envelope, n >= 1 ? sreg_log_envelope(n) : 0.0});
        if (n >= 3) env_ns.push_back(n);
    }
    r.tables.push_back(std::move(tb));
    const auto lf = fit_log_envelope(env_ns);
    r.exact("sbound.log_envelope_C", lf.C);
    r.check_upper("sbound.log_envelope_deviation", lf.max_relative_deviation, 0.1);

    const RadialTestFunction psi{c.grid.psi_width};
    const auto dec = g_neumann_decay(m, c.grid.neumann_order, c.grid.mc_samples, c.seed, psi);
    CsvTable tn{"neumann", {"j", "norm", "error"}, {}};
    for (std::size_t j = 0; j < dec.size(); ++j) {
        tn.rows.push_back({double(j), dec[j].value, dec[j].error});
        r.value("neumann.norm_" + std::to_string(j), dec[j]);
    }
    r.tables.push_back(std::move(tn));
    const auto o = g_norm_oracle(m, psi);
    r.value("neumann.closed_form_1", o);
    r.check_absolute("neumann.norm_1_vs_closed_form", dec[1].value, o.value, 3.0 * dec[1].error + o.error);
    if (dec.size() > 2)
        r.check_upper("neumann.ratio_2", dec[2].value / dec[1].value, 2.0 * std::pow(2.0, -0.25) * dec[1].value / dec[0].value);
    return r;
}

inline ExperimentResult run_symmetry(const ExperimentConfig& c) {
    ExperimentResult r{"symmetry"};
    const ModelParams p{c.model.m, 1, 1, 0.0, c.model.c0};
    auto state = [](double ax, double ay) { return ProductState{{RadialTestFunction{ax}}, RadialTestFunction{ay}, 1}; };
    const auto phi = state(0.7, 1.3), psi = state(1.9, 0.4);
    const auto a = tod_inner_product(p, phi, psi, c.quad), b = tod_inner_product(p, psi, phi, c.quad);
    r.value("tod.phi_psi", a);
    r.value("tod.psi_phi", b);
    r.check_upper("tod.residual_vs_quadrature_error", std::abs(a.value - b.value), a.error + b.error);
    const QuadSpec tight = c.quad.with_tol(1e-11, 1e-300);
    const auto at = tod_inner_product(p, phi, psi, tight), bt = tod_inner_product(p, psi, phi, tight);
    r.value("tod.phi_psi_tight", at);
    r.check_upper("tod.relative_residual_tight", std::abs(at.value - bt.value) / std::abs(at.value), 1e-6);
    return r;
}

inline ExperimentResult run_oracles(const ExperimentConfig& c) {
    ExperimentResult r{"oracles"};
    std::mt19937_64 rng(c.seed);
    std::uniform_real_distribution<double> um(0.3, 3.0), ub(0.2, 3.0), ur(0.0, 3.0);
    CsvTable t{"arctan_convolution", {"m", "beta", "gamma", "rho", "closed_form", "monte_carlo", "mc_error"}, {}};
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
        const double m = um(rng), be = ub(rng), ga = ub(rng), rho = ur(rng);
        const double cf = arctan_convolution(m, be, ga, rho);
        const auto mc = integrate_mc(
            [&](const std::vector<double>& x) { return detail::convolution_integrand(m, be, ga, rho, x); }, 3,
            Sampler{SamplerKind::cauchy3, 1.0}, c.grid.mc_samples, c.seed + static_cast<std::uint64_t>(i));
        t.rows.push_back({m, be, ga, rho, cf, mc.value, mc.error});
        worst = std::max(worst, std::abs(mc.value - cf) / mc.error);
    }
    r.tables.push_back(std::move(t));
    r.check_upper("arctan_convolution.max_sigma_deviation", worst, 3.0);
    // 4 pi int sin(t) t^2 / (lambda^2 + t^2)^2 dt grows like -4 pi log(lambda).
    auto I = [&](double lam) {
        return 4.0 * std::numbers::pi *
               integrate_oscillatory([lam](double x) { return x * x / ((lam * lam + x * x) * (lam * lam + x * x)); }, 1.0, c.quad).value;
    };
    const double slope = (I(1e-4) - I(1e-2)) / (std::log(1e-4) - std::log(1e-2));
    r.value("fourier_log_slope", slope, 0.0, Method::adaptive);
    r.check_relative("fourier_log_slope_vs_minus_4pi", slope, -4.0 * std::numbers::pi, 1e-2);
    return r;
}

inline ExperimentResult run_g_ker(const ExperimentConfig& c) {
    ExperimentResult r{"g_ker"};
    const ModelParams p = detail::single_particle(c);
    const RadialTestFunction psi{c.grid.psi_width};
    const auto control = g_ker_residual(p, psi, CollisionTestState{RadialTestFunction{0.8 * c.grid.psi_width}, 0.6, 0}, c.quad);
    const double scale = std::abs(control.trace.value);
    r.value("control.pairing", control.pairing);
    r.value("control.trace", control.trace);
    r.check_lower("control.pairing_nonzero", std::abs(control.pairing.value), 0.1 * scale);
    r.check_upper("control.residual", std::abs(control.residual.value), 10.0 * c.quad.rel_tol * scale);
    for (int order : {1, 2}) {
        const auto rep = g_ker_residual(p, psi, CollisionTestState{RadialTestFunction{0.8 * c.grid.psi_width}, 0.6, order}, c.quad);
        const std::string tag = "order_" + std::to_string(order);
        r.value(tag + ".residual", rep.residual);
        r.check_upper(tag + ".residual", std::abs(rep.residual.value), 10.0 * c.quad.rel_tol * scale);
    }
    return r;
}

inline ExperimentResult run_experiment(const std::string& tag, const ExperimentConfig& c) {
    try {
        if (tag == "constants") return run_constants(c);
        if (tag == "probe_g") return run_probe_g(c);
        if (tag == "probe_r") return run_probe_r(c);
        if (tag == "sector1") return run_sector1(c);
        if (tag == "bounds") return run_bounds(c);
        if (tag == "symmetry") return run_symmetry(c);
        if (tag == "oracles") return run_oracles(c);
        if (tag == "g_ker") return run_g_ker(c);
    } catch (const ConfigError& e) {
        throw;
    } catch (const std::exception& e) {
        throw ExperimentError(tag, e.what());
    }
    throw ConfigError("experiment: unknown tag '" + tag + "'");
}

// ---------------------------------------------------------------- run

struct RunOutcome {
    json report;
    json meta;
    bool all_passed = true;
};

inline void write_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + path.string() + "'");
    f << body;
}

// Runs the configured experiments on a worker pool and writes report.json, meta.json
// and one CSV per sweep into output_dir. Result assembly follows the tag order.
inline RunOutcome run(const ExperimentConfig& c) {
    validate(c);
    const auto tags = expand_experiment(c.experiment);
    const std::size_t pool = std::max<std::size_t>(1, std::min<std::size_t>(worker_threads(), tags.size()));
    std::vector<ExperimentResult> results(tags.size());
    std::vector<double> seconds(tags.size());
    for (std::size_t start = 0; start < tags.size(); start += pool) {
        std::vector<std::future<void>> jobs;
        for (std::size_t i = start; i < std::min(tags.size(), start + pool); ++i)
            jobs.push_back(std::async(std::launch::async, [&, i] {
                const auto t0 = std::chrono::steady_clock::now();
                results[i] = run_experiment(tags[i], c);
                seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            }));
        for (auto& j : jobs) j.get();
    }

    std::filesystem::create_directories(c.output_dir);
    RunOutcome out;
    json res = json::object();
    json timings = json::object();
    for (std::size_t i = 0; i < tags.size(); ++i) {
        auto& r = results[i];
        json files = json::array();
        for (const auto& t : r.tables) {
            const std::string fname = r.name + "_" + t.name + ".csv";
            write_file(std::filesystem::path(c.output_dir) / fname, format_csv(t));
            files.push_back(fname);
        }
        res[r.name] = {{"values", r.values}, {"checks", r.checks}, {"files", files}, {"passed", r.passed()}};
        out.all_passed = out.all_passed && r.passed();
        timings[r.name] = seconds[i];
    }
    out.report = {{"schema_version", kSchemaVersion},
                  {"versions", {{"ibc_lab", kVersion}, {"compiler", __VERSION__}, {"cplusplus", __cplusplus}}},
                  {"seed", c.seed},
                  {"inputs", config_json(c)},
                  {"results", res},
                  {"passed", out.all_passed}};
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    out.meta = {{"schema_version", kSchemaVersion}, {"created", stamp}, {"threads", worker_threads()}, {"seconds", timings}};
    write_file(std::filesystem::path(c.output_dir) / "report.json", out.report.dump(2) + "\n");
    write_file(std::filesystem::path(c.output_dir) / "meta.json", out.meta.dump(2) + "\n");
    return out;
}

// ---------------------------------------------------------------- verify

struct VerifyOutcome {
    std::vector<std::string> regressions;
    int compared = 0;
};

inline json load_json(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read '" + path + "'");
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
}

// Compares every baseline value against the report. Monte Carlo values pass within
// 3 sigma of the combined error bars; others within the baseline's "tolerance" field
// (relative, default 1%). A check that passed in the baseline must pass in the report.
inline VerifyOutcome verify(const json& report, const json& baseline) {
    const auto version = [](const json& j, const char* which) {
        if (!j.is_object() || !j.contains("schema_version") || !j["schema_version"].is_number_integer())
            throw VersionError(std::string(which) + ": missing schema_version");
        return j["schema_version"].get<int>();
    };
    const int vr = version(report, "report"), vb = version(baseline, "baseline");
    if (vr != vb || vr != kSchemaVersion)
        throw VersionError("schema_version mismatch: report " + std::to_string(vr) + ", baseline " + std::to_string(vb) +
                           ", supported " + std::to_string(kSchemaVersion));
    VerifyOutcome out;
    const json& rres = report["results"];
    for (const auto& [exp, block] : baseline["results"].items()) {
        if (!rres.contains(exp)) {
            out.regressions.push_back(exp + ": experiment missing from report");
            continue;
        }
        const json& rb = rres[exp];
        for (const auto& [key, bv] : block["values"].items()) {
            const std::string where = exp + "." + key;
            if (!rb["values"].contains(key)) {
                out.regressions.push_back(where + ": missing from report");
                continue;
            }
            const json& rv = rb["values"][key];
            ++out.compared;
            const double a = rv["value"].get<double>(), b = bv["value"].get<double>();
            bool ok;
            std::string rule;
            if (bv.value("method", "") == "monte_carlo" || rv.value("method", "") == "monte_carlo") {
                const double lim = 3.0 * std::hypot(rv["error"].get<double>(), bv["error"].get<double>());
                ok = std::abs(a - b) <= lim;
                rule = "3 sigma = " + std::to_string(lim);
            } else {
                const double tol = bv.value("tolerance", 1e-2);
                ok = std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
                rule = "relative tolerance " + std::to_string(tol);
            }
            if (!ok) {
                std::ostringstream s;
                s.precision(17);
                s << where << ": " << a << " vs baseline " << b << " (" << rule << ")";
                out.regressions.push_back(s.str());
            }
        }
        for (const auto& bc : block["checks"]) {
            if (!bc["pass"].get<bool>()) continue;
            bool found = false;
            for (const auto& rc : rb["checks"])
                if (rc["name"] == bc["name"]) {
                    found = true;
                    if (!rc["pass"].get<bool>())
                        out.regressions.push_back(exp + ".check." + bc["name"].get<std::string>() + ": passed in baseline, fails now");
                }
            if (!found) out.regressions.push_back(exp + ".check." + bc["name"].get<std::string>() + ": missing from report");
        }
    }
    return out;
}

}  // namespace ibclab::cli
