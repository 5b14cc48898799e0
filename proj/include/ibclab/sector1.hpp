#pragma once

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ibclab/asym.hpp"
#include "ibclab/errors.hpp"
#include "ibclab/model.hpp"
#include "ibclab/quad.hpp"

// One-boson model at zero total momentum. The sector-1 symbol is c2 k^2 + 1, so the
// fiber eigenvalue problem reduces to a scalar equation in the coupling integral
//   I_L(a) = (2 pi)^{-3} int_{|k| <= L} dk / (c2 k^2 + a).
namespace ibclab {

enum class FiberRoute { transcendental, subtracted_quadrature };

inline const char* to_string(FiberRoute r) {
    return r == FiberRoute::transcendental ? "transcendental" : "subtracted_quadrature";
}

struct FiberSpectralResult {
    double energy = 0.0;
    FiberRoute route = FiberRoute::transcendental;
    int iterations = 0;
    std::pair<double, double> bracket{0.0, 0.0};
    double residual = 0.0;
    // |closed form - quadrature| of the defining function at the root.
    double cross_check = 0.0;
};

struct DivergenceFit {
    double slope_linear = 0.0;
    double coeff_sqrt = 0.0;
    double intercept = 0.0;
    double err_linear = 0.0;
    double err_sqrt = 0.0;
    double residual = 0.0;
    double condition = 0.0;
    // The sqrt term comes from truncating to N <= 1 bosons, not from the full model.
    std::string sqrt_label = "truncation artifact of the one-boson sector";
};

struct CountertermReport {
    std::vector<double> lambdas;
    std::vector<double> finite_parts;
    double limit = 0.0;        // 1/L Richardson extrapolation from the two largest cutoffs
    double tail_spread = 0.0;  // max - min over cutoffs >= min(1e3, second largest)
    double full_spread = 0.0;
    bool converged = false;
};

namespace detail {

inline double fiber_c2(double m) {
    if (!(m > 0.0)) throw DomainError("fiber: m must be > 0");
    return (2.0 * m + 1.0) / (2.0 * m);
}

inline double coupling_integral(double m, double lambda_cut, double a) {
    const double c2 = fiber_c2(m);
    const double pi = std::numbers::pi;
    return (lambda_cut / c2 - std::sqrt(a) / std::pow(c2, 1.5) * std::atan(lambda_cut * std::sqrt(c2 / a))) /
           (2.0 * pi * pi);
}

// d I_L / d a.
inline double coupling_integral_da(double m, double lambda_cut, double a) {
    const double c2 = fiber_c2(m);
    const double pi = std::numbers::pi;
    const double inner =
        (std::atan(lambda_cut * std::sqrt(c2 / a)) / std::sqrt(a * c2) - lambda_cut / (c2 * lambda_cut * lambda_cut + a)) /
        (2.0 * c2);
    return -inner / (2.0 * pi * pi);
}

inline QuadSpec fiber_spec() {
    QuadSpec q;
    q.rel_tol = 1e-13;
    q.abs_tol = 1e-15;
    q.max_intervals = 20000;
    return q;
}

inline Estimate coupling_integral_quad(double m, double lambda_cut, double a) {
    const double c2 = fiber_c2(m);
    const double pi = std::numbers::pi;
    Estimate e = integrate_range([&](double k) { return k * k / (c2 * k * k + a); }, 0.0, lambda_cut, fiber_spec());
    return (1.0 / (2.0 * pi * pi)) * e;
}

// I_L(a) - linear_counterterm(m, L) with the counterterm removed inside the integrand.
inline Estimate subtracted_integral_quad(double m, double lambda_cut, double a) {
    const double c2 = fiber_c2(m);
    const double pi = std::numbers::pi;
    Estimate e = integrate_range([&](double k) { return (a / c2) / (c2 * k * k + a); }, 0.0, lambda_cut, fiber_spec());
    return (-1.0 / (2.0 * pi * pi)) * e;
}

inline Estimate subtracted_integral_da_quad(double m, double lambda_cut, double a) {
    const double c2 = fiber_c2(m);
    const double pi = std::numbers::pi;
    Estimate e = integrate_range(
        [&](double k) {
            const double d = c2 * k * k + a;
            return k * k / (d * d);
        },
        0.0, lambda_cut, fiber_spec());
    return (-1.0 / (2.0 * pi * pi)) * e;
}

// Richardson extrapolation in 1/L from cutoffs L1 < L2.
inline double richardson(double l1, double f1, double l2, double f2) { return (l2 * f2 - l1 * f1) / (l2 - l1); }

inline constexpr double kRichardsonLow = 1e3;
inline constexpr double kRichardsonHigh = 1e4;

// Root of an increasing function: bisection until the bracket is narrower than 1e-3,
// then Newton (kept inside the bracket) until |f| <= 1e-12 max(1, |E|).
template <class F, class DF>
FiberSpectralResult solve_increasing(F&& f, DF&& df, double lo, double hi, const char* what) {
    double flo = f(lo), fhi = f(hi);
    if (!(flo < 0.0 && fhi > 0.0)) {
        std::ostringstream os;
        os.precision(17);
        os << what << ": no sign change on [" << lo << ", " << hi << "], f = (" << flo << ", " << fhi << ")";
        throw SolverError(os.str());
    }
    FiberSpectralResult out;
    out.bracket = {lo, hi};
    int it = 0;
    while (hi - lo > 1e-3 && it < 200) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
        ++it;
    }
    double x = 0.5 * (lo + hi);
    double fx = f(x);
    for (int k = 0; k < 100; ++k, ++it) {
        if (std::abs(fx) <= 1e-12 * std::max(1.0, std::abs(x))) {
            out.energy = x;
            out.iterations = it;
            out.residual = fx;
            return out;
        }
        (fx < 0.0 ? lo : hi) = x;
        double next = x - fx / df(x);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == x) break;
        x = next;
        fx = f(x);
    }
    std::ostringstream os;
    os.precision(17);
    os << what << ": Newton stalled at E = " << x << " with residual " << fx << " after " << it << " iterations";
    throw SolverError(os.str());
}

}  // namespace detail

// Bare cutoff bound state: E = -I_L(1 - E). The bracket [-2 c L, 0] holds because
// 0 < I_L(a) <= c L with c the counterterm rate.
inline FiberSpectralResult bare_fiber_energy(double m, double lambda_cut) {
    if (!(lambda_cut > 0.0)) throw DomainError("bare_fiber_energy: lambda_cut must be > 0");
    const double c = linear_counterterm(m, 1.0);
    auto f = [&](double E) { return E + detail::coupling_integral(m, lambda_cut, 1.0 - E); };
    auto df = [&](double E) { return 1.0 - detail::coupling_integral_da(m, lambda_cut, 1.0 - E); };
    FiberSpectralResult r = detail::solve_increasing(f, df, -2.0 * c * lambda_cut, 0.0, "bare_fiber_energy");
    r.route = FiberRoute::transcendental;
    const double a = 1.0 - r.energy;
    r.cross_check = std::abs(detail::coupling_integral(m, lambda_cut, a) - detail::coupling_integral_quad(m, lambda_cut, a).value);
    return r;
}

// Sign changes of E + I_L(1 - E) on an equispaced scan of the bracket [-2 c L, 0].
inline int bracket_sign_changes(double m, double lambda_cut, int points = 100) {
    const double c = linear_counterterm(m, 1.0);
    const double lo = -2.0 * c * lambda_cut;
    int changes = 0;
    double prev = 0.0;
    for (int i = 0; i < points; ++i) {
        const double E = lo + (0.0 - lo) * i / (points - 1);
        const double v = E + detail::coupling_integral(m, lambda_cut, 1.0 - E);
        if (i > 0 && ((prev < 0.0) != (v < 0.0))) ++changes;
        prev = v;
    }
    return changes;
}

inline double predicted_linear_slope(double m) { return -linear_counterterm(m, 1.0); }

inline double predicted_sqrt_coefficient(double m) {
    const double c2 = detail::fiber_c2(m);
    return std::sqrt(linear_counterterm(m, 1.0)) / (4.0 * std::numbers::pi * std::pow(c2, 1.5));
}

inline std::vector<double> default_divergence_grid() {
    std::vector<double> g(8);
    for (int i = 0; i < 8; ++i) g[i] = 1e3 * std::pow(10.0, 3.0 * i / 7.0);
    return g;
}

// Least-squares fit of E_bare(L) on {L, sqrt L, 1}.
inline DivergenceFit divergence_fit(double m, const std::vector<double>& lambdas = default_divergence_grid()) {
    if (lambdas.size() < 6) throw ConfigError("divergence_fit: need at least 6 cutoffs");
    double lo = lambdas.front(), hi = lambdas.front();
    for (double l : lambdas) {
        if (!(l > 0.0)) throw ConfigError("divergence_fit: cutoffs must be > 0");
        lo = std::min(lo, l);
        hi = std::max(hi, l);
    }
    if (hi / lo < 100.0) throw ConfigError("divergence_fit: cutoffs must span at least two decades");
    const long n = static_cast<long>(lambdas.size());
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    for (long i = 0; i < n; ++i) {
        const double l = lambdas[static_cast<std::size_t>(i)];
        X(i, 0) = l;
        X(i, 1) = std::sqrt(l);
        X(i, 2) = 1.0;
        y(i) = bare_fiber_energy(m, l).energy;
    }
    const auto ls = weighted_least_squares(X, y, Eigen::VectorXd::Ones(n));
    DivergenceFit out;
    out.slope_linear = ls.coeffs(0);
    out.coeff_sqrt = ls.coeffs(1);
    out.intercept = ls.coeffs(2);
    out.err_linear = ls.uncertainty(0);
    out.err_sqrt = ls.uncertainty(1);
    out.residual = ls.residual_rms;
    out.condition = ls.condition;
    return out;
}

// Finite part lim_L [I_L(a) - linear_counterterm(m, L)] = -sqrt(a) / (4 pi c2^{3/2}).
inline double fiber_finite_part(double m, double a) {
    return -std::sqrt(a) / (4.0 * std::numbers::pi * std::pow(detail::fiber_c2(m), 1.5));
}

namespace detail {

inline FiberSpectralResult renormalized_transcendental(double m) {
    const double kappa = -fiber_finite_part(m, 1.0);
    auto f = [&](double E) { return E - kappa * std::sqrt(1.0 - E); };
    auto df = [&](double E) { return 1.0 + 0.5 * kappa / std::sqrt(1.0 - E); };
    FiberSpectralResult r = solve_increasing(f, df, 0.0, 1.0, "renormalized_fiber_energy");
    r.route = FiberRoute::transcendental;
    return r;
}

inline FiberSpectralResult renormalized_quadrature(double m) {
    const double l1 = kRichardsonLow, l2 = kRichardsonHigh;
    auto F = [&](double a) {
        return richardson(l1, subtracted_integral_quad(m, l1, a).value, l2, subtracted_integral_quad(m, l2, a).value);
    };
    auto dF = [&](double a) {
        return richardson(l1, subtracted_integral_da_quad(m, l1, a).value, l2, subtracted_integral_da_quad(m, l2, a).value);
    };
    auto f = [&](double E) { return E + F(1.0 - E); };
    auto df = [&](double E) { return 1.0 - dF(1.0 - E); };
    FiberSpectralResult r = solve_increasing(f, df, 0.0, 1.0, "renormalized_fiber_energy");
    r.route = FiberRoute::subtracted_quadrature;
    r.cross_check = std::abs(F(1.0 - r.energy) - fiber_finite_part(m, 1.0 - r.energy));
    return r;
}

}  // namespace detail

// Renormalized eigenvalue E = sqrt(1 - E) / (4 pi c2^{3/2}). Both routes are always
// solved; the requested one is returned after they are checked against each other.
inline FiberSpectralResult renormalized_fiber_energy(double m, FiberRoute route = FiberRoute::transcendental) {
    const auto t = detail::renormalized_transcendental(m);
    const auto q = detail::renormalized_quadrature(m);
    if (!(std::abs(t.energy - q.energy) <= 1e-6)) {
        std::ostringstream os;
        os.precision(17);
        os << "renormalized_fiber_energy: routes disagree, transcendental " << t.energy << " vs subtracted quadrature "
           << q.energy;
        throw ConsistencyError(os.str());
    }
    return route == FiberRoute::transcendental ? t : q;
}

// Finite parts I_L(a) - linear_counterterm(m, L) from unsubtracted quadrature.
inline CountertermReport counterterm_cancellation_check(double m, double a = 1.0,
                                                        const std::vector<double>& lambdas = {1e2, 1e3, 1e4, 1e5}) {
    if (!(a > 0.0)) throw DomainError("counterterm_cancellation_check: a must be > 0");
    if (lambdas.size() < 2) throw ConfigError("counterterm_cancellation_check: need at least two cutoffs");
    CountertermReport rep;
    rep.lambdas = lambdas;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        if (i > 0 && !(lambdas[i] > lambdas[i - 1])) throw ConfigError("counterterm_cancellation_check: cutoffs must increase");
        rep.finite_parts.push_back(detail::coupling_integral_quad(m, lambdas[i], a).value - linear_counterterm(m, lambdas[i]));
    }
    const std::size_t n = lambdas.size();
    rep.limit = detail::richardson(lambdas[n - 2], rep.finite_parts[n - 2], lambdas[n - 1], rep.finite_parts[n - 1]);
    const double tail_from = std::min(1e3, lambdas[n - 2]);
    double tmin = 1e300, tmax = -1e300, fmin = 1e300, fmax = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = rep.finite_parts[i];
        fmin = std::min(fmin, v);
        fmax = std::max(fmax, v);
        if (lambdas[i] >= tail_from) {
            tmin = std::min(tmin, v);
            tmax = std::max(tmax, v);
        }
    }
    rep.full_spread = fmax - fmin;
    rep.tail_spread = tmax - tmin;
    rep.converged = rep.tail_spread < 1e-3 * std::abs(rep.finite_parts.back());
    return rep;
}

}  // namespace ibclab
