#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "ibclab/asym.hpp"

using namespace ibclab;
using Catch::Approx;

namespace {
constexpr double pi = std::numbers::pi;
const ModelParams kSingle{0.5, 1, 0, 0.0, 1.0};
const Vec3 kOrigin{0, 0, 0};

// Every coefficient of the basis moves by less than its quoted uncertainty when the two
// largest-r samples are removed.
void check_stable(const ProbeSeries& s, unsigned basis) {
    const auto full = fit_singular(s, basis);
    const auto cut = fit_singular(s.drop_largest(2), basis);
    if (basis & kInvR) CHECK(std::abs(full.coeff_inv_r - cut.coeff_inv_r) < full.err_inv_r);
    if (basis & kLogR) CHECK(std::abs(full.coeff_log - cut.coeff_log) < full.err_log);
    if (basis & kConst) CHECK(std::abs(full.coeff_const - cut.coeff_const) < full.err_const);
    if (basis & kLinear) CHECK(std::abs(full.coeff_linear - cut.coeff_linear) < full.err_linear);
}
}  // namespace

TEST_CASE("probe grid", "[asym]") {
    auto r = ProbeGrid{}.values();
    REQUIRE(r.size() == 12);
    CHECK(r.front() == Approx(1e-1).epsilon(1e-15));
    CHECK(r.back() == 1e-4);
    for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i] / r[i - 1] == Approx(std::pow(1e-3, 1.0 / 11)).epsilon(1e-12));
    CHECK_THROWS_AS((ProbeGrid{1e-1, 1e-1, 12}.values()), ConfigError);
    CHECK_THROWS_AS((ProbeGrid{0.0, 1e-1, 12}.values()), ConfigError);
    CHECK_THROWS_AS((ProbeGrid{1e-4, 1e-1, 5}.values()), ConfigError);
}

TEST_CASE("collect_probe", "[asym]") {
    auto c = collect_probe([](double) { return closed_form(5.0); }, 1e-4, 1e-1, 12);
    for (const auto& e : c.samples) CHECK(e.value == 5.0);

    auto inv = collect_probe([](double r) { return closed_form(1.0 / r); }, 1e-3, 1e-1, 8);
    REQUIRE(inv.samples.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(inv.samples[i].value == 1.0 / inv.r_values[i]);

    // Single- and multi-threaded collection agree bitwise.
    auto f = [](double r) { return apply_G_probe(kSingle, RadialTestFunction{1.0}, kOrigin, r); };
    auto a = collect_probe(f, ProbeGrid{}, "G", 1);
    auto b = collect_probe(f, ProbeGrid{}, "G", 4);
    for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i].value == b.samples[i].value);

    try {
        collect_probe(
            [](double r) -> Estimate {
                if (r < 1e-3) throw DomainError("too close");
                return closed_form(r);
            },
            ProbeGrid{}, "failing");
        FAIL("expected an error");
    } catch (const DiagnosticsError& e) {
        CHECK(std::string(e.what()).find("r = 0.000") != std::string::npos);
    }
}

TEST_CASE("G probe series leading sample", "[asym]") {
    auto s = g_probe_series(kSingle, RadialTestFunction{1.0}, kOrigin);
    CHECK(-s.r_values.back() * s.samples.back().value == Approx(0.016864).epsilon(1e-3));
    for (const auto& e : s.samples) CHECK(e.error < 1e-8 * std::abs(e.value) + 1e-12);
}

TEST_CASE("fit_singular on synthetic data", "[asym]") {
    auto exact = collect_probe([](double r) { return closed_form(2.0 / r - 3.0 * std::log(r) + 5.0); }, ProbeGrid{});
    auto f = fit_singular(exact, kInvR | kLogR | kConst | kLinear);
    CHECK(f.coeff_inv_r == Approx(2.0).epsilon(1e-10));
    CHECK(f.coeff_log == Approx(-3.0).epsilon(1e-10));
    CHECK(f.coeff_const == Approx(5.0).epsilon(1e-10));
    CHECK(std::abs(f.coeff_linear) < 1e-6);
    CHECK(f.residual_rms < 1e-9);

    // Gaussian noise of known size 1e-6 on every sample.
    std::mt19937_64 gen(7);
    std::normal_distribution<double> noise(0.0, 1e-6);
    ProbeSeries noisy = exact;
    for (auto& e : noisy.samples) {
        e.value += noise(gen);
        e.error = 1e-6;
    }
    auto g = fit_singular(noisy, kInvR | kLogR | kConst | kLinear);
    CHECK(g.coeff_inv_r == Approx(2.0).margin(1e-4));
    CHECK(g.coeff_log == Approx(-3.0).margin(1e-4));
    CHECK(g.coeff_const == Approx(5.0).margin(1e-4));
    CHECK(g.coeff_linear == Approx(0.0).margin(1e-4));
    CHECK(g.err_log > 0.0);
}

TEST_CASE("fit guards", "[asym]") {
    auto s = collect_probe([](double r) { return closed_form(std::log(r)); }, ProbeGrid{});
    CHECK_THROWS_AS(fit_singular(s, 0u), FitError);
    ProbeSeries five = s.drop_largest(7);
    CHECK_THROWS_AS(fit_singular(five, kInvR | kLogR | kConst | kLinear), FitError);
    CHECK_NOTHROW(fit_singular(s.drop_largest(6), kInvR | kLogR | kConst | kLinear));
    // The default grid keeps the full basis well conditioned.
    CHECK(fit_singular(s, kLogR | kConst | kLinear).condition < 1e4);
    CHECK(fit_singular(s, kInvR | kConst | kLinear).condition < 1e4);
    // A grid too narrow to separate 1, r and r^2 log r behaviour is rejected.
    auto narrow = collect_probe([](double r) { return closed_form(1.0 + r); }, 1.0, 1.0 + 1e-6, 8);
    CHECK_THROWS_AS(fit_singular(narrow, kInvR | kConst | kLinear), FitError);
    ProbeSeries bad = s;
    std::swap(bad.r_values[0], bad.r_values[1]);
    CHECK_THROWS_AS(fit_singular(bad, kLogR | kConst), FitError);
}

TEST_CASE("B reproduces the probe point value", "[asym]") {
    for (double a : {0.5, 1.0, 2.0}) {
        RadialTestFunction psi{a};
        auto B = extract_B(kSingle, psi);
        CHECK(B.value == Approx(psi.eval(kOrigin)).epsilon(1e-2));
        CHECK(B.fit.condition < 1e4);
    }
    CHECK(extract_B(kSingle, RadialTestFunction{1.0}).value == Approx(0.42378).epsilon(1e-2));
    CHECK(extract_B(kSingle, RadialTestFunction{1.0}.scaled(2.0)).value == Approx(0.84756).epsilon(1e-2));
    // Off-centre probe point.
    RadialTestFunction psi{1.0};
    const Vec3 s{0.4, -0.2, 0.1};
    CHECK(extract_B(kSingle, psi, s).value == Approx(psi.eval(s)).epsilon(1e-2));
}

TEST_CASE("B vanishes on a smooth probe", "[asym]") {
    auto smooth = collect_probe([](double r) { return closed_form(0.3 * std::exp(-r * r)); }, ProbeGrid{});
    auto B = extract_B(0.5, smooth);
    CHECK(std::abs(B.value) < 3.0 * B.uncertainty);
    CHECK(std::abs(B.value) < 1e-5);
}

TEST_CASE("A reproduces T_d psi", "[asym]") {
    for (double a : {0.5, 1.0, 2.0}) {
        RadialTestFunction psi{a};
        auto A = extract_A(kSingle, psi);
        const double td = td_position_value(kSingle, psi, kOrigin).value;
        CHECK(A.value == Approx(td).epsilon(1e-2));
    }
    auto zero = extract_A(kSingle, RadialTestFunction{1.0}.scaled(0.0));
    CHECK(zero.value == 0.0);
}

TEST_CASE("B and A are linear", "[asym][property]") {
    RadialTestFunction psi{0.7}, phi{1.6};
    auto sp = g_probe_series(kSingle, psi, kOrigin);
    auto sf = g_probe_series(kSingle, phi.scaled(-0.5), kOrigin);
    auto sum = sp + sf;
    auto Bs = extract_B(0.5, sum), Bp = extract_B(0.5, sp), Bf = extract_B(0.5, sf);
    CHECK(std::abs(Bs.value - Bp.value - Bf.value) < Bs.uncertainty);
    CHECK(Bs.value == Approx(psi.eval(kOrigin) - 0.5 * phi.eval(kOrigin)).epsilon(1e-2));
    auto As = extract_A(sum), Ap = extract_A(sp), Af = extract_A(sf);
    CHECK(std::abs(As.value - Ap.value - Af.value) < As.uncertainty);
}

TEST_CASE("G probe fits are stable", "[asym][property]") {
    for (double a : {0.5, 1.0, 2.0}) check_stable(g_probe_series(kSingle, RadialTestFunction{a}, kOrigin), kInvR | kConst | kLinear);
}

TEST_CASE("per-piece log coefficients", "[asym]") {
    RadialTestFunction psi{1.0};
    const double psi0 = psi.eval(kOrigin);
    auto d = extract_log_coefficient(kSingle, psi, RPiece::diagonal);
    auto o = extract_log_coefficient(kSingle, psi, RPiece::off_diagonal);
    auto t = extract_log_coefficient(kSingle, psi, RPiece::total);
    CHECK(d.value == Approx(-1.850e-4).epsilon(0.1));
    CHECK(o.value == Approx(2.236e-4).epsilon(0.1));
    CHECK(t.value == Approx(3.869e-5).epsilon(0.15));
    CHECK(t.value == Approx(-gamma_m(0.5) * psi0).epsilon(0.15));
    CHECK(d.value == Approx(predicted_log_coefficient(0.5, RPiece::diagonal, psi0)).epsilon(0.01));
    CHECK(o.value == Approx(predicted_log_coefficient(0.5, RPiece::off_diagonal, psi0)).epsilon(0.01));
    CHECK(t.fit.condition < 1e4);
    // Additivity of the total probe.
    CHECK(std::abs(t.value - d.value - o.value) < d.uncertainty + o.uncertainty + t.uncertainty);
    // The closed-form pieces sum to -gamma_m.
    CHECK(predicted_log_coefficient(0.5, RPiece::diagonal, 1.0) + predicted_log_coefficient(0.5, RPiece::off_diagonal, 1.0) ==
          Approx(-gamma_m(0.5)).epsilon(1e-10));
}

TEST_CASE("R probe fits are stable", "[asym][property]") {
    for (double a : {0.5, 1.0, 2.0}) {
        RadialTestFunction psi{a};
        for (auto piece : {RPiece::diagonal, RPiece::off_diagonal, RPiece::total})
            check_stable(r_probe_series(kSingle, psi, piece), kLogR | kConst | kLinear);
    }
}

TEST_CASE("asymptotic diagonal kernel", "[asym]") {
    RadialTestFunction psi{1.0};
    auto exact = extract_log_coefficient(r_probe_series(kSingle, psi, RPiece::diagonal));
    auto asym = extract_log_coefficient(r_probe_series(kSingle, psi, RPiece::diagonal, {}, {}, RdKernel::asymptotic));
    CHECK(asym.value == Approx(exact.value).epsilon(1e-2));
}

TEST_CASE("R multiplier", "[asym][property]") {
    const double gamma = gamma_m(0.5);
    // Real, finite, with a sigma-independent log coefficient -gamma_m.
    for (int i = 0; i < 10; ++i) {
        const double sigma = 0.25 * i;
        auto s = collect_probe([&](double r) { return r_multiplier(kSingle, sigma, r, RPiece::total); }, ProbeGrid{});
        for (const auto& e : s.samples) CHECK(std::isfinite(e.value));
        CHECK(extract_log_coefficient(s).value == Approx(-gamma).epsilon(0.15));
    }
    // The multiplier reproduces the probe: (2 pi)^{-3/2} int psi-hat S_r = (R psi)(0, r).
    RadialTestFunction psi{1.0};
    const double r = 0.01;
    QuadSpec q;
    q.scale = 1.0;
    auto rep = integrate_semi_infinite(
        [&](double sig) {
            return 4.0 * pi * sig * sig * psi.fourier_radial(sig) * r_multiplier(kSingle, sig, r, RPiece::total).value;
        },
        q);
    auto probe = apply_Rd_probe(kSingle, psi, r) + apply_Rod_probe(kSingle, psi, r);
    CHECK(std::pow(2.0 * pi, -1.5) * rep.value == Approx(probe.value).epsilon(1e-6));
}

TEST_CASE("finite-part map is symmetric", "[asym][property]") {
    // Finite part S(sigma) of the multiplier, tabulated once on a trapezoid grid and
    // paired with two real radial Gaussians in both orders.
    RadialTestFunction psi{0.8}, phi{1.5};
    const int n = 121;
    const double h = 12.0 / (n - 1);
    std::vector<double> sig(n), S(n);
    for (int i = 0; i < n; ++i) {
        sig[i] = h * i;
        auto s = collect_probe([&](double r) { return r_multiplier(kSingle, sig[i], r, RPiece::total); }, ProbeGrid{});
        S[i] = fit_singular(s, kLogR | kConst | kLinear).coeff_const;
        CHECK(std::isfinite(S[i]));
    }
    auto pair = [&](const RadialTestFunction& u, const RadialTestFunction& v) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double w = (i == 0 || i == n - 1) ? 0.5 * h : h;
            acc += w * 4.0 * pi * sig[i] * sig[i] * u.fourier_radial(sig[i]) * (S[i] * v.fourier_radial(sig[i]));
        }
        return acc;
    };
    const double a = pair(phi, psi), b = pair(psi, phi);
    CHECK(a != 0.0);
    CHECK(a == Approx(b).epsilon(1e-12));
}

TEST_CASE("truncated resolvent series probe", "[asym]") {
    RadialTestFunction psi{1.0};
    const double r = 0.01;
    CHECK(gT_probe(kSingle, psi, kOrigin, r, 0).value == apply_G_probe(kSingle, psi, kOrigin, r).value);
    CHECK_THROWS_AS(gT_probe(kSingle, psi, kOrigin, r, 3), DomainError);

    std::vector<ProbeSeries> s;
    for (int K = 0; K <= 2; ++K)
        s.push_back(collect_probe([&](double rr) { return gT_probe(kSingle, psi, kOrigin, rr, K); }, ProbeGrid{}, "gT"));
    const unsigned full = kInvR | kLogR | kConst | kLinear;
    const double inv0 = fit_singular(s[0], full).coeff_inv_r;
    for (int K = 1; K <= 2; ++K) CHECK(fit_singular(s[K], full).coeff_inv_r == Approx(inv0).epsilon(1e-4));

    // The first-order increment carries the R-probe log coefficient.
    auto inc = extract_log_coefficient(s[1] - s[0]);
    auto R = extract_log_coefficient(kSingle, psi, RPiece::total);
    CHECK(std::abs(inc.value - R.value) < 3.0 * (inc.uncertainty + R.uncertainty));

    // The second-order increment has no 1/r term.
    auto second = fit_singular(s[2] - s[1], full);
    CHECK(std::abs(second.coeff_inv_r) < 3.0 * second.err_inv_r + 1e-8);
}

TEST_CASE("c0 term carries no log", "[asym]") {
    RadialTestFunction psi{1.0};
    const double scale = std::abs(gamma_m(0.5) * psi.eval(kOrigin));
    double logs[2];
    int i = 0;
    for (double c0 : {1.0, 2.0}) {
        ModelParams p = kSingle;
        p.c0 = c0;
        auto s1 = collect_probe([&](double r) { return gT_probe(p, psi, kOrigin, r, 1); }, ProbeGrid{});
        auto s0 = collect_probe([&](double r) { return gT_probe(p, psi, kOrigin, r, 0); }, ProbeGrid{});
        logs[i++] = extract_log_coefficient(s1 - s0).value;
    }
    CHECK(std::abs(logs[1] - logs[0]) < 0.1 * scale);
}

TEST_CASE("second-order Monte Carlo converges", "[asym]") {
    RadialTestFunction psi{1.0};
    auto a = apply_second_order_probe(kSingle, psi, 0.01, kOrigin, 50000, 3);
    auto b = apply_second_order_probe(kSingle, psi, 0.01, kOrigin, 400000, 5);
    CHECK(std::abs(a.value - b.value) < 3.0 * std::hypot(a.error, b.error));
    CHECK(b.error < 0.05 * std::abs(b.value));
    // Same seed, same value regardless of thread count.
    auto c = apply_second_order_probe(kSingle, psi, 0.01, kOrigin, 50000, 3);
    CHECK(a.value == c.value);
}
