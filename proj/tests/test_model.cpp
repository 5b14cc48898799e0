#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "ibclab/model.hpp"
#include "ibclab/quad.hpp"

using namespace ibclab;
using Catch::Approx;

namespace {

// Arctan form in long double without the small-argument series; accurate for moderate m.
double gamma_direct(double m) {
    const long double q = 2.0L * m + 1.0L;
    const long double p = 2.0L * std::sqrt(static_cast<long double>(m) * (m + 1.0L));
    const long double rmf = 2.0L * m / q;
    const long double tp = 2.0L * std::numbers::pi_v<long double>;
    return static_cast<double>(rmf * rmf * rmf * (p / q - q * std::atan(1.0L / p)) / (tp * tp * tp));
}

}  // namespace

TEST_CASE("free symbol", "[model]") {
    ModelParams p{0.5, 1, 3, 0.0, 1.0};
    CHECK(free_symbol(p, {{0, 0, 0}}, {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}}) == 3.0);
    ModelParams p0{0.5, 1, 0, 0.0, 1.0};
    CHECK(free_symbol(p0, {{1, 0, 0}}, {}) == Approx(1.0));
    ModelParams p1{1.0, 1, 1, 0.0, 1.0};
    CHECK(free_symbol(p1, {{1, 1, 1}}, {{2, 0, 0}}) == Approx(6.5));
    CHECK_THROWS_AS(free_symbol(p1, {{1, 1, 1}}, {}), ConfigError);
    CHECK_THROWS_AS(free_symbol(p1, {}, {{1, 0, 0}}), ConfigError);
}

TEST_CASE("free symbol is bounded below by the boson number", "[model][property]") {
    std::uint64_t s = 7;
    for (int trial = 0; trial < 200; ++trial) {
        detail::SampleRng rng(s, trial);
        ModelParams p{0.1 + 3 * rng.uniform(), 1 + trial % 2, trial % 4, 0.0, 1.0};
        std::vector<Vec3> P(p.M), K(p.n);
        for (auto& v : P) v = {rng.normal(), rng.normal(), rng.normal()};
        for (auto& v : K) v = {rng.normal(), rng.normal(), rng.normal()};
        CHECK(free_symbol(p, P, K) >= p.n);
    }
}

TEST_CASE("model params", "[model]") {
    for (double m : {0.1, 0.5, 1.0, 7.0}) {
        ModelParams p{m, 1, 0, 0, 1};
        CHECK(p.reduced_mass_factor() * p.c2() == Approx(1.0).epsilon(1e-15));
    }
    CHECK_THROWS_AS((ModelParams{-1, 1, 0, 0, 1}.validate()), ConfigError);
    CHECK_THROWS_AS((ModelParams{1, 0, 0, 0, 1}.validate()), ConfigError);
    CHECK_THROWS_AS((ModelParams{1, 1, 0, 0, 0}.validate()), ConfigError);
}

TEST_CASE("gamma_m values", "[model]") {
    CHECK(gamma_m(0.5) == Approx(-9.130e-5).margin(1e-8));
    CHECK(gamma_m(1.0) == Approx(-9.162e-5).margin(1e-8));
    CHECK(std::abs(gamma_m(1e6)) < 1e-12);
    for (double m : {0.3, 0.5, 1.0, 2.0, 5.0}) CHECK(gamma_m(m) == Approx(gamma_direct(m)).epsilon(1e-12));
    CHECK_THROWS_AS(gamma_m(0.0), DomainError);
}

TEST_CASE("gamma_m decays like m^-2", "[model][property]") {
    // Large-m asymptote: -(2pi)^-3 / (6 m^2).
    const double lead = -1.0 / (6.0 * std::pow(2 * std::numbers::pi, 3));
    for (double m : {10.0, 1e2, 1e3, 1e4}) {
        CHECK(std::abs(gamma_m(m) * m * m) < 1e-3);
        if (m >= 100.0) CHECK(gamma_m(m) * m * m == Approx(lead).epsilon(0.05));
    }
    // The series branch and the direct branch join continuously.
    CHECK(gamma_m(2500.0) * 2500.0 * 2500.0 == Approx(gamma_m(2499.0) * 2499.0 * 2499.0).epsilon(1e-3));
}

TEST_CASE("linear counterterm", "[model]") {
    CHECK(linear_counterterm(0.5, 0.0) == 0.0);
    CHECK(linear_counterterm(0.5, 100.0) == Approx(2.53303).margin(1e-5));
    CHECK(linear_counterterm(1.0, 3 * std::numbers::pi * std::numbers::pi) == Approx(1.0).epsilon(1e-15));
    for (double a : {0.5, 2.0, 10.0})
        CHECK(linear_counterterm(0.7, a * 3.0) == Approx(a * linear_counterterm(0.7, 3.0)).epsilon(1e-14));
}

TEST_CASE("b coefficient", "[model]") {
    CHECK(b_coefficient(0.5) == Approx(0.0397887).margin(1e-7));
    CHECK(b_coefficient(1e6) == Approx(1 / (4 * std::numbers::pi)).margin(1e-6));
    CHECK(b_coefficient(2.0) * (2 * std::numbers::pi * 5.0 / 2.0) == Approx(1.0).epsilon(1e-15));
}

TEST_CASE("singular profile", "[model]") {
    CHECK(singular_profile(0.5, 1, 1.0) == Approx(0.0397887).margin(1e-7));
    CHECK(singular_profile(0.5, 2, 1.0) == Approx(0.0198944).margin(1e-7));
    CHECK(singular_profile(0.5, 1, std::exp(1.0)) == Approx(0.0397887 / std::exp(1.0) - 9.130e-5).margin(1e-7));
    CHECK_THROWS_AS(singular_profile(0.5, 1, 0.0), DomainError);
}

TEST_CASE("arctan convolution closed form", "[model]") {
    CHECK(arctan_convolution(0.5, 1, 2, 1) == Approx(2.812).margin(0.003));
    CHECK(arctan_convolution(0.5, 1, 2, 1e-6) == Approx(arctan_convolution(0.5, 1, 2, 1e-8)).epsilon(1e-6));
    CHECK(arctan_convolution(0.5, 1, 2, 1) == arctan_convolution(0.5, 2, 1, 1));
    CHECK(arctan_convolution(1.3, 0.7, 2.1, 0.0) > 0.0);
}
