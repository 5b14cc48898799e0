#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "ibclab/boundslab.hpp"

using namespace ibclab;
using Catch::Approx;

namespace {
constexpr double pi = std::numbers::pi;

// int_0^inf k^2 (1 + k^2)^{-p} dk and int_0^inf (1 + k^2)^{-p} dk.
double beta_k2(double p) { return std::sqrt(pi) * std::tgamma(p - 1.5) / (4.0 * std::tgamma(p)); }
double beta_k0(double p) { return std::sqrt(pi) * std::tgamma(p - 0.5) / (2.0 * std::tgamma(p)); }

double gbound_closed(int n, double s) {
    const double A = n + 1.0, p = 2.0 - 2.0 * s;
    double v = 4.0 * pi * std::pow(A, 1.5 - p) * beta_k2(p);
    if (n > 0) {
        const double x = A / (0.5 - 2.0 * s);
        v += 4.0 * pi * x * std::pow(x + A, 0.5 - p) * beta_k0(p);
    }
    return v;
}
}  // namespace

TEST_CASE("gbound against Gamma-function closed forms", "[boundslab]") {
    for (double s : {0.0, 0.05, 0.1, 0.2})
        for (int n : {0, 1, 3, 8}) {
            // The grid supremum is a lower bound within one refined grid step of the true one.
            const double got = gbound_constant(0.5, n, s).value;
            CHECK(got <= gbound_closed(n, s) * (1.0 + 1e-9));
            CHECK(got == Approx(gbound_closed(n, s)).epsilon(1e-3));
        }
    CHECK(gbound_constant(0.5, 0, 0.0).value == Approx(pi * pi).epsilon(1e-9));
    CHECK(detail::gbound_first_term(5, 0.1).value == Approx(4.0 * pi * std::pow(6.0, -0.3) * beta_k2(1.8)).epsilon(1e-9));
}

TEST_CASE("gbound domain and divergence at s = 1/4", "[boundslab]") {
    CHECK_THROWS_AS(gbound_constant(0.5, 1, 0.25), DomainError);
    CHECK_THROWS_AS(gbound_constant(0.5, 1, -0.1), DomainError);
    CHECK_THROWS_AS(gbound_constant(0.5, -1, 0.1), DomainError);
    CHECK_THROWS_AS(gbound_constant(0.0, 1, 0.1), DomainError);
    CHECK_THROWS_AS(detail::gbound_first_term(1, 0.25), NonConvergenceError);
    // Only the first term is marginal at s = 1/4.
    CHECK(std::isfinite(detail::gbound_sup_integrand(1, 0.25, 1.0).value));
}

TEST_CASE("gbound decays like (n+1)^{2s-1/2}", "[boundslab][property]") {
    auto sw = gbound_sweep(0.5, {1, 2, 3, 4, 5, 6, 7, 8}, 0.1);
    CHECK(sw.fitted_exponent == Approx(-0.3).margin(1e-6));
    CHECK(sw.fit_residual < 1e-6);
    for (std::size_t i = 0; i + 1 < sw.values.size(); ++i) CHECK(sw.values[i + 1].value < sw.values[i].value);
    for (double s : {0.0, 0.2}) {
        auto t = gbound_sweep(0.5, {1, 2, 4, 8}, s);
        CHECK(t.fitted_exponent == Approx(2.0 * s - 0.5).margin(1e-6));
    }
    // Including the zero-boson sector, which has no K-hat term, bends the fit.
    auto with0 = gbound_sweep(0.5, {0, 1, 2, 3, 4, 5, 6, 7, 8}, 0.1);
    CHECK(with0.fitted_exponent > -0.3);
    CHECK(with0.fitted_exponent < 0.0);
    CHECK_THROWS_AS(gbound_sweep(0.5, {3, 2, 4}, 0.1), ConfigError);
    CHECK_THROWS_AS(gbound_sweep(0.5, {1, 2}, 0.1), FitError);
}

TEST_CASE("sup integrand peaks at the analytic argmax", "[boundslab]") {
    for (int n : {1, 4}) {
        const double A = n + 1.0, s = 0.1, xs = A / (0.5 - 2.0 * s);
        const double at = detail::gbound_sup_integrand(n, s, xs).value;
        CHECK(detail::gbound_sup_integrand(n, s, 0.9 * xs).value < at);
        CHECK(detail::gbound_sup_integrand(n, s, 1.1 * xs).value < at);
    }
    CHECK(detail::gbound_sup_term(0, 0.1).value == 0.0);
}

TEST_CASE("Neumann series terms against the closed-form first term", "[boundslab]") {
    const RadialTestFunction psi{1.0};
    auto d = g_neumann_decay(0.5, 3, 400000, 11, psi);
    REQUIRE(d.size() == 4);
    CHECK(d[0].value == Approx(1.0).epsilon(1e-10));
    const auto o = g_norm_oracle(0.5, psi);
    CHECK(std::abs(d[1].value - o.value) < 3.0 * d[1].error + o.error);
    for (std::size_t j = 1; j < d.size(); ++j) CHECK(d[j].value < d[j - 1].value);
    // || G^2 psi || / || G psi || stays below 2 * 2^{-1/4} || G psi || / || psi ||.
    CHECK(d[2].value / d[1].value <= 2.0 * std::pow(2.0, -0.25) * d[1].value / d[0].value);
    // Same seed, same answer.
    auto e = g_neumann_decay(0.5, 2, 50000, 11, psi);
    auto f = g_neumann_decay(0.5, 2, 50000, 11, psi);
    CHECK(e[2].value == f[2].value);
    CHECK_THROWS_AS(g_neumann_decay(0.5, 4, 1000, 1), DomainError);
    CHECK_THROWS_AS(g_neumann_decay(0.0, 1, 1000, 1), DomainError);
    CHECK_THROWS_AS(g_neumann_decay(0.5, 3, 4, 1), DiagnosticsError);
}

TEST_CASE("closed-form G norm for other masses and widths", "[boundslab]") {
    for (double m : {1.0, 2.0})
        for (double a : {0.5, 2.0}) {
            const RadialTestFunction psi{a};
            auto d = g_neumann_decay(m, 1, 200000, 3, psi);
            const auto o = g_norm_oracle(m, psi);
            CHECK(std::abs(d[1].value - o.value) < 3.0 * d[1].error + o.error);
        }
}

TEST_CASE("Schur eta integrals", "[boundslab]") {
    CHECK(detail::schur_eta_integral(1e-9).value == Approx(4.0 * pi).epsilon(1e-7));
    CHECK(detail::schur_eta_integral_prime(0.5).value == Approx(2.0 * pi * pi).epsilon(1e-9));
    CHECK(detail::schur_eta_integral(0.1).value == Approx(15.70796).epsilon(1e-6));
    CHECK(detail::schur_eta_integral_prime(0.1).value == Approx(71.14505).epsilon(1e-6));
    CHECK_THROWS_AS(detail::schur_eta_integral_prime(0.0), NonConvergenceError);
}

TEST_CASE("Schur constants are bounded uniformly in n", "[boundslab][property]") {
    const double i1 = detail::schur_eta_integral(0.1).value, i2 = detail::schur_eta_integral_prime(0.1).value;
    double lo = 1e300, hi = 0.0;
    for (int n = 1; n <= 8; ++n) {
        auto c = schur_constants(0.5, 1, n, 0.1);
        CHECK(c.lambda.value > 0.0);
        CHECK(c.lambda.value <= i1 * (1.0 + 1e-9));
        CHECK(c.lambda_prime.value <= i2 * (1.0 + 1e-9));
        CHECK(c.lambda_prime.value > 0.99 * i2);
        if (n >= 4) {
            lo = std::min(lo, c.lambda.value);
            hi = std::max(hi, c.lambda.value);
        }
    }
    CHECK((hi - lo) / lo < 0.2);
    CHECK_THROWS_AS(schur_constants(0.5, 1, 1, 0.0), DomainError);
    CHECK_THROWS_AS(schur_constants(0.5, 1, 1, 0.5), DomainError);
    CHECK_THROWS_AS(schur_constants(0.5, 1, 0, 0.1), DomainError);
    CHECK_THROWS_AS(schur_constants(0.5, 0, 1, 0.1), DomainError);
}

TEST_CASE("S bound integrals and log envelope", "[boundslab]") {
    for (int n : {0, 1, 3, 8}) {
        auto r = sbound_integrals(0.5, n, 0.2);
        CHECK(r.integral.value == Approx(pi * std::pow(n + 1.0, 0.25)).epsilon(1e-9));
        CHECK(r.envelope == Approx(std::pow(n + 1.0, 0.45) / std::sqrt(0.2)).epsilon(1e-14));
    }
    for (int n = 3; n <= 8; ++n) {
        const double l = std::log(n + 1.0);
        CHECK(sreg_log_envelope(n) == Approx(std::exp(1.0 / l) * l).epsilon(1e-12));
    }
    auto f = fit_log_envelope({3, 4, 5, 6, 7, 8});
    CHECK(f.max_relative_deviation < 0.1);
    CHECK(f.C > 0.0);
    CHECK_THROWS_AS(sbound_integrals(0.5, 1, 0.0), DomainError);
    CHECK_THROWS_AS(sbound_integrals(0.5, 1, 0.6), DomainError);
    CHECK_THROWS_AS(sreg_log_envelope(0), DomainError);
}
