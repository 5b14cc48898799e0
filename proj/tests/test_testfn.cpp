#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "ibclab/testfn.hpp"

using namespace ibclab;
using Catch::Approx;

TEST_CASE("Gaussian point values", "[testfn]") {
    RadialTestFunction g{1.0, {0, 0, 0}, 1.0};
    CHECK(g.eval({0, 0, 0}) == Approx(0.42378).margin(1e-5));
    CHECK(std::pow(std::numbers::pi, -0.75) == Approx(g.eval({0, 0, 0})).epsilon(1e-15));
    CHECK(g.fourier_eval({0, 0, 0}).real() == Approx(0.42378).margin(1e-5));
    RadialTestFunction shifted{2.0, {0.5, -1.0, 0.3}, 1.0};
    CHECK(shifted.eval({0.5, -1.0, 0.3}) == Approx(std::pow(2 * std::numbers::pi, -0.75)));
    const Vec3 p{0.3, 0.2, -0.7};
    CHECK(std::abs(shifted.fourier_eval(p)) == Approx(shifted.fourier_radial(norm(p))));
    CHECK(std::arg(shifted.fourier_eval(p)) == Approx(-dot(p, shifted.center)));
}

TEST_CASE("Fourier partner by direct transform", "[testfn]") {
    // (2pi)^{-3/2} int e^{-ip.x} g(x) dx for a centered Gaussian reduces to
    // (2pi)^{-3/2} 4 pi int r^2 sinc(k r) g(r) dr.
    RadialTestFunction g{0.7, {0, 0, 0}, 1.3};
    for (double k : {0.0, 0.4, 1.5, 3.0}) {
        Estimate e = integrate_semi_infinite(
            [&](double r) {
                const double sinc = k == 0.0 ? 1.0 : std::sin(k * r) / (k * r);
                return 4 * std::numbers::pi * r * r * sinc * g.radial(r);
            },
            QuadSpec{});
        CHECK(e.value * std::pow(2 * std::numbers::pi, -1.5) == Approx(g.fourier_radial(k)).epsilon(1e-8).margin(1e-12));
    }
}

TEST_CASE("Parseval", "[testfn][property]") {
    for (double a : {0.1, 0.25, 1.0, 4.0, 30.0})
        for (double amp : {1.0, 0.5, 2.0}) {
            RadialTestFunction g{a, {0, 0, 0}, amp};
            auto x = position_norm(g), p = momentum_norm(g);
            CHECK(x.value == Approx(amp).epsilon(1e-9));
            CHECK(p.value == Approx(x.value).epsilon(1e-9));
        }
}

TEST_CASE("width scaling", "[testfn][property]") {
    RadialTestFunction g{0.8}, wide{3.2};
    CHECK(wide.momentum_width() == Approx(0.5 * g.momentum_width()).epsilon(1e-15));
    // ghat_{4a}(k) relates to ghat_a(2k) by the normalization factor 4^{3/4}.
    for (double k : {0.0, 0.3, 1.1})
        CHECK(wide.fourier_radial(k) == Approx(std::pow(4.0, 0.75) * g.fourier_radial(2 * k)).epsilon(1e-14));
}

TEST_CASE("Sobolev norms", "[testfn]") {
    ModelParams p{0.5, 1, 0, 0, 1};
    auto st = single_particle_state({1.0});
    CHECK(sobolev_norm(p, st, 0.0).value == Approx(1.0).epsilon(1e-10));
    const double h = sobolev_norm(p, st, 0.5).value;
    // Monte Carlo oracle sampling the momentum density |psi-hat|^2 exactly.
    auto mc = integrate_mc(
        [](const std::vector<double>& x) {
            const double k2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            const double dens = std::pow(std::numbers::pi, -1.5) * std::exp(-k2);
            return (1.0 + k2) * dens;
        },
        3, Sampler{SamplerKind::gaussian, std::sqrt(0.5)}, 200000, 9);
    CHECK(std::abs(h * h - mc.value) < mc.error);
    // closed form: 1 + <|p|^2> = 1 + 3/(2a) for m = 1/2.
    CHECK(h * h == Approx(2.5).epsilon(1e-9));
    const double one = sobolev_norm(p, st, 1.0).value;
    CHECK(one >= h);
    CHECK(h >= 1.0);
    CHECK_THROWS_AS(sobolev_norm(p, st, 2.5), DomainError);
}

TEST_CASE("Sobolev norms with bosons", "[testfn]") {
    ModelParams p{0.5, 1, 2, 0, 1};
    ProductState st{{RadialTestFunction{0.5}}, RadialTestFunction{2.0}, 2};
    // <L> = n + 3/(2 m 2 a_x) + 2 * 3/(2 a_y) = 2 + 3 + 1.5
    CHECK(sobolev_norm(p, st, 0.5).value == Approx(std::sqrt(7.5)).epsilon(1e-9));
    CHECK(sobolev_norm(p, st, 0.0).value == Approx(1.0).epsilon(1e-10));
    // Var of a Gamma(k, theta) term is k theta^2: theta_x = 1/(2 m a_x) = 2, theta_y = 1/a_y.
    Estimate l2 = symbol_expectation(p, st, [](double L) { return L * L; });
    const double vx = 1.5 * 2.0 * 2.0, vy = 2 * 1.5 * 0.5 * 0.5;
    CHECK(l2.value == Approx(6.5 * 6.5 + vx + vy).epsilon(1e-9));
    CHECK_THROWS_AS(sobolev_norm(ModelParams{0.5, 1, 1, 0, 1}, st, 0.5), ConfigError);
}
