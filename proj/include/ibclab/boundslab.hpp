#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ibclab/asym.hpp"
#include "ibclab/errors.hpp"
#include "ibclab/model.hpp"
#include "ibclab/quad.hpp"
#include "ibclab/testfn.hpp"

// Explicit bounding integrals of the G and T_od estimates and their n-scalings.
namespace ibclab {

struct BoundSweep {
    std::vector<int> n_values;
    std::vector<Estimate> values;
    double fitted_exponent = 0.0;
    double fit_residual = 0.0;
};

namespace detail {

inline constexpr double kBPi = std::numbers::pi;

inline QuadSpec bound_spec() {
    QuadSpec q;
    q.rel_tol = 1e-10;
    q.abs_tol = 1e-14;
    q.max_intervals = 4000;
    return q;
}

// log(t^2 + A) at t = e^v without overflow.
inline double log_sq_plus(double v, double A) {
    return v > 0.0 ? 2.0 * v + std::log1p(A * std::exp(-2.0 * v)) : std::log(std::exp(2.0 * v) + A);
}

// int_0^inf f(t) dt through t = e^v, given log_ft(v) = log(f(e^v) e^v). Power tails become
// exponential tails in v; a marginal tail stays constant and fails to converge.
template <class F>
Estimate log_radial_integral(F&& log_ft, const QuadSpec& q = bound_spec()) {
    QuadSpec s = q;
    s.scale = 4.0;
    return integrate_semi_infinite([&](double v) { return std::exp(log_ft(v)) + std::exp(log_ft(-v)); }, s);
}

// Maximum over a 17-point grid on [lo, hi] (geometric if requested), refined once with
// 17 points between the neighbours of the coarse maximum.
template <class F>
std::pair<double, double> grid_sup_1d(F&& f, double lo, double hi, bool geometric, int points = 17) {
    auto node = [&](double a, double b, int i) {
        const double t = static_cast<double>(i) / (points - 1);
        return geometric ? a * std::pow(b / a, t) : a + (b - a) * t;
    };
    double best_x = lo, best = -1e300;
    std::vector<double> xs(static_cast<std::size_t>(points));
    int arg = 0;
    for (int i = 0; i < points; ++i) {
        xs[i] = node(lo, hi, i);
        const double v = f(xs[i]);
        if (v > best) {
            best = v;
            best_x = xs[i];
            arg = i;
        }
    }
    const double a = xs[std::max(0, arg - 1)], b = xs[std::min(points - 1, arg + 1)];
    for (int i = 0; i < points; ++i) {
        const double x = node(a, b, i);
        const double v = f(x);
        if (v > best) {
            best = v;
            best_x = x;
        }
    }
    return {best_x, best};
}

// 4 pi int_0^inf k^2 (k^2 + A)^{-(2 - 2s)} dk, no range check.
inline Estimate gbound_first_term(int n, double s, const QuadSpec& q = bound_spec()) {
    const double A = n + 1.0, p = 2.0 - 2.0 * s;
    Estimate e = log_radial_integral([&](double v) { return 3.0 * v - p * log_sq_plus(v, A); }, q);
    return (4.0 * kBPi) * e;
}

// x 4 pi int_0^inf (x + k^2 + A)^{-(2 - 2s)} dk at K-hat^2 = x.
inline Estimate gbound_sup_integrand(int n, double s, double x, const QuadSpec& q = bound_spec()) {
    const double A = n + 1.0, p = 2.0 - 2.0 * s;
    Estimate e = log_radial_integral([&](double v) { return v - p * log_sq_plus(v, x + A); }, q);
    return (4.0 * kBPi * x) * e;
}

// Supremum over K-hat^2 of the second term; absent for n = 0, where K-hat is empty.
inline Estimate gbound_sup_term(int n, double s, const QuadSpec& q = bound_spec()) {
    if (n == 0) return closed_form(0.0);
    const double A = n + 1.0;
    Estimate at_best = closed_form(0.0);
    auto f = [&](double x) {
        Estimate e = gbound_sup_integrand(n, s, x, q);
        return e.value;
    };
    const auto [x, v] = grid_sup_1d(f, 1e-3 * A, 1e3 * A, true);
    at_best = gbound_sup_integrand(n, s, x, q);
    return at_best;
}

}  // namespace detail

// Sum of the two bounding integrals of || L^s G psi ||^2 / || psi ||^2, without the
// (2 pi)^{-3} prefactor.
inline Estimate gbound_constant(double m, int n, double s, const QuadSpec& q = detail::bound_spec()) {
    if (!(m > 0.0)) throw DomainError("gbound_constant: m must be > 0");
    if (n < 0) throw DomainError("gbound_constant: n must be >= 0");
    if (!(s >= 0.0 && s < 0.25)) throw DomainError("gbound_constant: s must lie in [0, 1/4)");
    Estimate e = detail::gbound_first_term(n, s, q);
    e += detail::gbound_sup_term(n, s, q);
    return e;
}

// Least-squares slope of log(value) against log(n + 1).
inline void fit_power_law(BoundSweep& sw) {
    const long k = static_cast<long>(sw.n_values.size());
    if (k < 3) throw FitError("power-law fit: need at least 3 sectors");
    Eigen::MatrixXd X(k, 2);
    Eigen::VectorXd y(k);
    for (long i = 0; i < k; ++i) {
        const double v = sw.values[static_cast<std::size_t>(i)].value;
        if (!(v > 0.0)) throw FitError("power-law fit: values must be positive");
        X(i, 0) = std::log(sw.n_values[static_cast<std::size_t>(i)] + 1.0);
        X(i, 1) = 1.0;
        y(i) = std::log(v);
    }
    const auto ls = weighted_least_squares(X, y, Eigen::VectorXd::Ones(k));
    sw.fitted_exponent = ls.coeffs(0);
    sw.fit_residual = ls.residual_rms;
}

inline BoundSweep gbound_sweep(double m, const std::vector<int>& ns, double s) {
    BoundSweep sw;
    for (std::size_t i = 0; i < ns.size(); ++i) {
        if (i > 0 && !(ns[i] > ns[i - 1])) throw ConfigError("gbound_sweep: n values must increase");
        sw.n_values.push_back(ns[i]);
        sw.values.push_back(gbound_constant(m, ns[i], s));
    }
    fit_power_law(sw);
    return sw;
}

// ---------------------------------------------------------------- Neumann series decay

namespace detail {

// Fourier transform of G^j psi for M = 1 starting in the zero-boson sector:
// F_j(p, K) = -(2 pi)^{-3/2} j^{-1/2} sum_i F_{j-1}(p + k_i, K-hat_i) / (p^2/2m + K^2 + j).
inline double iterated_kernel(double m, const RadialTestFunction& psi, const Vec3& p, const std::vector<Vec3>& K) {
    const std::size_t j = K.size();
    if (j == 0) return psi.fourier_radial(norm(p));
    double k2 = 0.0;
    for (const auto& k : K) k2 += norm2(k);
    const double L = norm2(p) / (2.0 * m) + k2 + static_cast<double>(j);
    std::vector<Vec3> rest(j - 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < j; ++i) {
        for (std::size_t a = 0, b = 0; a < j; ++a)
            if (a != i) rest[b++] = K[a];
        acc += iterated_kernel(m, psi, p + K[i], rest);
    }
    return -std::pow(2.0 * kBPi, -1.5) / std::sqrt(static_cast<double>(j)) * acc / L;
}

// Total momentum q ~ N(0, scale^2); boson momenta ~ 3D Cauchy.
struct NeumannSampler {
    double q_scale;
    void draw(SampleRng& rng, std::vector<double>& x, double& density) const {
        std::vector<double> a(3), b(x.size() - 3);
        double da = 1.0, db = 1.0;
        Sampler{SamplerKind::gaussian, q_scale}.draw(rng, a, da);
        if (!b.empty()) Sampler{SamplerKind::cauchy3, 1.0}.draw(rng, b, db);
        for (int i = 0; i < 3; ++i) x[i] = a[i];
        for (std::size_t i = 0; i < b.size(); ++i) x[3 + i] = b[i];
        density = da * db;
    }
};

}  // namespace detail

// || G psi || from the closed-form boson integral:
// || G psi ||^2 = (2 pi)^{-3} pi^2 c2^{-3/2} int |psi-hat(q)|^2 (1 + q^2/(2m+1))^{-1/2} dq.
inline Estimate g_norm_oracle(double m, const RadialTestFunction& psi, const QuadSpec& q = detail::bound_spec()) {
    const double c2 = (2.0 * m + 1.0) / (2.0 * m);
    QuadSpec s = q;
    s.scale = 1.0 / std::sqrt(psi.a);
    Estimate e = integrate_semi_infinite(
        [&](double k) {
            const double f = psi.fourier_radial(k);
            return 4.0 * detail::kBPi * k * k * f * f / std::sqrt(1.0 + k * k / (2.0 * m + 1.0));
        },
        s);
    e = (std::pow(2.0 * detail::kBPi, -3.0) * detail::kBPi * detail::kBPi * std::pow(c2, -1.5)) * e;
    const double v = std::sqrt(e.value);
    return {v, e.error / (2.0 * v), e.evaluations, e.method, 0.0};
}

// || G^j psi || for j = 0..j_max by Monte Carlo over the iterated kernels.
inline std::vector<Estimate> g_neumann_decay(double m, int j_max, long mc_samples, std::uint64_t seed,
                                             const RadialTestFunction& psi = RadialTestFunction{1.0}) {
    if (!(m > 0.0)) throw DomainError("g_neumann_decay: m must be > 0");
    if (j_max < 0 || j_max > 3) throw DomainError("g_neumann_decay: j_max must lie in [0, 3]");
    psi.validate();
    std::vector<Estimate> out;
    out.push_back(position_norm(psi));
    for (int j = 1; j <= j_max; ++j) {
        const int dim = 3 * (j + 1);
        auto f = [&](const std::vector<double>& x) {
            const Vec3 q{x[0], x[1], x[2]};
            std::vector<Vec3> K(static_cast<std::size_t>(j));
            Vec3 p = q;
            for (int i = 0; i < j; ++i) {
                K[i] = {x[3 + 3 * i], x[4 + 3 * i], x[5 + 3 * i]};
                p = p - K[i];
            }
            const double F = detail::iterated_kernel(m, psi, p, K);
            return F * F;
        };
        Estimate e = integrate_mc(f, dim, detail::NeumannSampler{1.0 / std::sqrt(2.0 * psi.a)}, mc_samples,
                                  seed + static_cast<std::uint64_t>(j));
        if (!(e.error < 0.5 * e.value))
            throw DiagnosticsError("g_neumann_decay: Monte Carlo error too large at j = " + std::to_string(j) +
                                   "; increase mc_samples");
        const double v = std::sqrt(e.value);
        out.push_back({v, e.error / (2.0 * v), e.evaluations, e.method, e.sigma_k});
    }
    return out;
}

// ---------------------------------------------------------------- Schur constants

struct SchurConstants {
    Estimate lambda;
    Estimate lambda_prime;
};

namespace detail {

// int_{R^3} (1 + eta^2)^{-(3/2 - eps)} |eta|^{-2(1 + eps)} d eta.
inline Estimate schur_eta_integral(double eps, const QuadSpec& q = bound_spec()) {
    Estimate e = log_radial_integral([&](double v) { return (1.0 - 2.0 * eps) * v - (1.5 - eps) * log_sq_plus(v, 1.0); }, q);
    return (4.0 * kBPi) * e;
}

// int_{R^3} (1 + eta^2)^{-(1/2 + eps)} |eta|^{-2} d eta; diverges at eps = 0.
inline Estimate schur_eta_integral_prime(double eps, const QuadSpec& q = bound_spec()) {
    Estimate e = log_radial_integral([&](double v) { return v - (0.5 + eps) * log_sq_plus(v, 1.0); }, q);
    return (4.0 * kBPi) * e;
}

// (n + x) int_{R^3} kappa^{3/2 - eps} (1/n + xi^2)^{-1 - eps} d xi at K^2 = x, kappa = 1/(n + 1 + K^2 + xi^2).
inline double schur_lambda_integrand(int n, double eps, double x, const QuadSpec& q = bound_spec()) {
    const double A = n + 1.0 + x, c = 1.0 / n;
    Estimate e = log_radial_integral(
        [&](double v) { return 3.0 * v - (1.5 - eps) * log_sq_plus(v, A) - (1.0 + eps) * log_sq_plus(v, c); }, q);
    return (n + x) * 4.0 * kBPi * e.value;
}

// sum_i (1/n + k_i^2)^{1+eps} / (1 + K^2) int_{R^3} kappa^{1/2 + eps} / (1 + eta^2) d eta, with
// K^2 = x split as k_1^2 = t x and the rest shared equally.
inline double schur_lambda_prime_integrand(int n, double eps, double x, double t, const QuadSpec& q = bound_spec()) {
    const double A = n + 1.0 + x, c = 1.0 / n;
    Estimate e = log_radial_integral([&](double v) { return 3.0 * v - (0.5 + eps) * log_sq_plus(v, A) - log_sq_plus(v, 1.0); }, q);
    double sum = std::pow(c + t * x, 1.0 + eps);
    if (n > 1) sum += (n - 1) * std::pow(c + (1.0 - t) * x / (n - 1), 1.0 + eps);
    return sum / (1.0 + x) * 4.0 * kBPi * e.value;
}

}  // namespace detail

// Grid surrogates of Lambda, Lambda' for the T_od sum over bosons (weight g(k) = 1 + k^2).
// Grid suprema are lower bounds of the true suprema.
inline SchurConstants schur_constants(double m, int M, int n, double eps) {
    if (!(m > 0.0)) throw DomainError("schur_constants: m must be > 0");
    if (M < 1) throw DomainError("schur_constants: M must be >= 1");
    if (n < 1 || n > 8) throw DomainError("schur_constants: n must lie in [1, 8]");
    if (!(eps > 0.0 && eps < 0.5)) throw DomainError("schur_constants: epsilon must lie in (0, 1/2)");
    SchurConstants out;
    const auto lam = detail::grid_sup_1d([&](double x) { return detail::schur_lambda_integrand(n, eps, x); }, 1e-3, 1e6, true);
    out.lambda = closed_form(lam.second);
    out.lambda.method = Method::adaptive;
    // Coarse 17 x 17 scan in (x, t), then one refinement around the best cell.
    auto g = [&](double x, double t) { return detail::schur_lambda_prime_integrand(n, eps, x, t); };
    const int P = 17;
    double bx = 1e-3, bt = 0.0, best = -1e300;
    std::vector<double> xs(P), ts(P);
    for (int i = 0; i < P; ++i) {
        xs[i] = 1e-3 * std::pow(1e9, static_cast<double>(i) / (P - 1));
        ts[i] = static_cast<double>(i) / (P - 1);
    }
    int ix = 0, it = 0;
    for (int i = 0; i < P; ++i)
        for (int k = 0; k < (n > 1 ? P : 1); ++k) {
            const double t = n > 1 ? ts[k] : 1.0;
            const double v = g(xs[i], t);
            if (v > best) {
                best = v;
                bx = xs[i];
                bt = t;
                ix = i;
                it = k;
            }
        }
    const double xa = xs[std::max(0, ix - 1)], xb = xs[std::min(P - 1, ix + 1)];
    const double ta = n > 1 ? ts[std::max(0, it - 1)] : 1.0, tb = n > 1 ? ts[std::min(P - 1, it + 1)] : 1.0;
    for (int i = 0; i < P; ++i)
        for (int k = 0; k < (n > 1 ? P : 1); ++k) {
            const double x = xa * std::pow(xb / xa, static_cast<double>(i) / (P - 1));
            const double t = ta + (tb - ta) * k / (P - 1);
            const double v = g(x, t);
            if (v > best) {
                best = v;
                bx = x;
                bt = t;
            }
        }
    out.lambda_prime = closed_form(best);
    out.lambda_prime.method = Method::adaptive;
    return out;
}

// ---------------------------------------------------------------- S_reg bound integrals

struct SBoundResult {
    Estimate integral;  // sqrt(n+1) (int (n+1+k^2)^{-2} dk)^{1/2}
    double envelope = 0.0;  // (n+1)^{1/4+s} / sqrt(s)
};

inline SBoundResult sbound_integrals(double m, int n, double s, const QuadSpec& q = detail::bound_spec()) {
    if (!(m > 0.0)) throw DomainError("sbound_integrals: m must be > 0");
    if (n < 0) throw DomainError("sbound_integrals: n must be >= 0");
    if (!(s > 0.0 && s <= 0.5)) throw DomainError("sbound_integrals: s must lie in (0, 1/2]");
    const double A = n + 1.0;
    Estimate I = detail::log_radial_integral([&](double v) { return 3.0 * v - 2.0 * detail::log_sq_plus(v, A); }, q);
    I = (4.0 * detail::kBPi) * I;
    SBoundResult out;
    const double v = std::sqrt(A) * std::sqrt(I.value);
    out.integral = {v, std::sqrt(A) * I.error / (2.0 * std::sqrt(I.value)), I.evaluations, I.method, 0.0};
    out.envelope = std::pow(A, 0.25 + s) / std::sqrt(s);
    return out;
}

// (n+1)^{-1/4} times the envelope at s = 1 / log(n+1)^2, i.e. e^{1/log(n+1)} log(n+1).
inline double sreg_log_envelope(int n) {
    if (n < 1) throw DomainError("sreg_log_envelope: n must be >= 1");
    const double l = std::log(n + 1.0);
    const double s = 1.0 / (l * l);
    return std::pow(n + 1.0, -0.25) * std::pow(n + 1.0, 0.25 + s) / std::sqrt(s);
}

struct LogEnvelopeFit {
    double C = 0.0;
    double max_relative_deviation = 0.0;
};

// Least-squares C in envelope(n) ~ C (1 + log(n+1)).
inline LogEnvelopeFit fit_log_envelope(const std::vector<int>& ns) {
    if (ns.empty()) throw ConfigError("fit_log_envelope: need at least one n");
    double num = 0.0, den = 0.0;
    for (int n : ns) {
        const double b = 1.0 + std::log(n + 1.0);
        num += b * sreg_log_envelope(n);
        den += b * b;
    }
    LogEnvelopeFit f;
    f.C = num / den;
    for (int n : ns) {
        const double b = 1.0 + std::log(n + 1.0);
        f.max_relative_deviation = std::max(f.max_relative_deviation, std::abs(sreg_log_envelope(n) / (f.C * b) - 1.0));
    }
    return f;
}

}  // namespace ibclab
